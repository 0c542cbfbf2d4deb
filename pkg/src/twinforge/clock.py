"""Injectable time source so timer logic can run on virtual time in tests."""

from __future__ import annotations

import threading
import time


class SystemClock:
    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class VirtualClock:
    """Manually advanced clock; sleep() returns once time has been advanced."""

    def __init__(self, start: float = 0.0):
        self._now = start
        self._cond = threading.Condition()

    def now(self) -> float:
        with self._cond:
            return self._now

    def advance(self, seconds: float) -> None:
        with self._cond:
            self._now += seconds
            self._cond.notify_all()

    def set(self, t: float) -> None:
        with self._cond:
            if t < self._now:
                raise ValueError("virtual clock cannot go backwards")
            self._now = t
            self._cond.notify_all()

    def sleep(self, seconds: float) -> None:
        with self._cond:
            target = self._now + seconds
            while self._now < target:
                self._cond.wait()
