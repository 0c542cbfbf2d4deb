"""Process-wide operational counters with a plain-text exposition format."""

from __future__ import annotations

import threading
from collections import defaultdict


class Metrics:
    def __init__(self):
        self._lock = threading.Lock()
        self._counters: dict[str, int] = defaultdict(int)

    def inc(self, name: str, n: int = 1) -> None:
        with self._lock:
            self._counters[name] += n

    def get(self, name: str) -> int:
        with self._lock:
            return self._counters.get(name, 0)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counters)

    def render_text(self) -> str:
        with self._lock:
            lines = [f"{name} {value}" for name, value in sorted(self._counters.items())]
        return "\n".join(lines) + ("\n" if lines else "")
