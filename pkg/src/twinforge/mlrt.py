"""Model runtime: deployments that turn binary input topics into numeric
output topics.

A deployment names an input topic, an output topic, a fixed input schema
(the format list of the binary codec), and a builtin function with
parameters. One consumer loop per deployment decodes each input record,
applies the function, and publishes the result as a JSON number array.
Undecodable records go to the dead-letter topic and never stop the loop.
"""

from __future__ import annotations

import json
import threading
from collections import deque
from pathlib import Path

from .bus import Bus
from .codec import FORMATS, decode_values
from .errors import (
    DecodeError,
    DuplicateModel,
    InvalidSchema,
    NotFound,
    Unavailable,
)
from .metrics import Metrics
from .storage import KvLog

DEAD_LETTER_TOPIC = "dead-letter"


def fn_identity(values, params, state):
    return list(values)


def fn_linear(values, params, state):
    weights = params.get("weights", [])
    bias = params.get("bias", 0.0)
    if weights and isinstance(weights[0], list):
        biases = bias if isinstance(bias, list) else [bias] * len(weights)
        return [
            sum(w * v for w, v in zip(row, values)) + b
            for row, b in zip(weights, biases)
        ]
    return [sum(w * v for w, v in zip(weights, values)) + bias]


def fn_last_value_hold(values, params, state):
    state["last"] = list(values)
    return state["last"]


def fn_moving_average(values, params, state):
    window = int(params.get("window", 5))
    history = state.setdefault("history", deque(maxlen=window))
    history.append(list(values))
    n = len(history)
    return [sum(sample[i] for sample in history) / n for i in range(len(values))]


BUILTIN_FNS = {
    "identity": fn_identity,
    "linear": fn_linear,
    "last_value_hold": fn_last_value_hold,
    "moving_average": fn_moving_average,
}


def validate_deployment(doc: dict) -> dict:
    schema = doc.get("schema", [])
    if not schema or any(fmt not in FORMATS for fmt in schema):
        raise InvalidSchema(f"schema must be a non-empty list of formats: {schema!r}")
    if doc.get("fn") not in BUILTIN_FNS:
        raise InvalidSchema(f"unknown fn {doc.get('fn')!r}; have {sorted(BUILTIN_FNS)}")
    for field in ("modelId", "inputTopic", "outputTopic"):
        if not isinstance(doc.get(field), str) or not doc[field]:
            raise InvalidSchema(f"{field} must be a non-empty string")
    return {
        "modelId": doc["modelId"],
        "inputTopic": doc["inputTopic"],
        "outputTopic": doc["outputTopic"],
        "schema": list(schema),
        "fn": doc["fn"],
        "params": dict(doc.get("params", {})),
    }


class _InferLoop(threading.Thread):
    def __init__(self, runtime: "MlRuntime", doc: dict):
        super().__init__(name=f"ml-{doc['modelId']}", daemon=True)
        self.runtime = runtime
        self.doc = doc
        self.state: dict = {}
        self.stop_event = threading.Event()

    def run(self) -> None:
        bus = self.runtime.bus
        doc = self.doc
        fn = BUILTIN_FNS[doc["fn"]]
        consumer = None
        while not self.stop_event.is_set():
            try:
                if consumer is None:
                    consumer = bus.consumer(doc["inputTopic"], f"ml-{doc['modelId']}")
                msg = consumer.poll_one(timeout=0.25)
                if msg is None:
                    continue
                try:
                    values = decode_values(doc["schema"], msg.payload)
                    outputs = [float(v) for v in fn(values, doc["params"], self.state)]
                except DecodeError as exc:
                    bus.publish(
                        DEAD_LETTER_TOPIC,
                        {"reason": str(exc), "model": doc["modelId"]},
                        msg.payload,
                    )
                    self.runtime.metrics.inc("ml.dead_lettered")
                else:
                    headers = {"model": doc["modelId"]}
                    for key in ("device-id", "tenant"):
                        if key in msg.headers:
                            headers[key] = msg.headers[key]
                    bus.publish(
                        doc["outputTopic"], headers, json.dumps(outputs).encode("utf-8")
                    )
                    self.runtime.metrics.inc("ml.inferences")
                consumer.commit(msg.offset)
            except Unavailable:
                consumer = None
                self.stop_event.wait(0.2)

    def stop(self) -> None:
        self.stop_event.set()


class MlRuntime:
    def __init__(self, data_dir: str | Path, bus: Bus, metrics: Metrics | None = None):
        self.data_dir = Path(data_dir)
        self.bus = bus
        self.metrics = metrics or Metrics()
        self._lock = threading.RLock()
        self._crashed = False
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._store = KvLog(self.data_dir / "models.log")
        self._loops: dict[str, _InferLoop] = {}

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> None:
        with self._lock:
            self._check()
            for _, doc in self._store.items("model|"):
                self._start_loop(doc)

    def stop(self) -> None:
        with self._lock:
            loops = list(self._loops.values())
            self._loops.clear()
        for loop in loops:
            loop.stop()
        for loop in loops:
            loop.join(timeout=2.0)

    def crash(self) -> None:
        self.stop()
        with self._lock:
            self._crashed = True
            self._store.close()

    def restart(self) -> None:
        with self._lock:
            if not self._crashed:
                return
            self._store = KvLog(self.data_dir / "models.log")
            self._crashed = False
        self.start()

    def _check(self) -> None:
        if self._crashed:
            raise Unavailable("ml runtime is down")

    def _start_loop(self, doc: dict) -> None:
        if doc["modelId"] not in self._loops:
            loop = _InferLoop(self, doc)
            self._loops[doc["modelId"]] = loop
            loop.start()

    # -- deployment admin -----------------------------------------------------------

    def deploy(self, doc: dict) -> dict:
        clean = validate_deployment(doc)
        with self._lock:
            self._check()
            model_id = clean["modelId"]
            if self._store.get(f"model|{model_id}") is not None:
                raise DuplicateModel(f"model {model_id!r} already deployed")
            self._store.put(f"model|{model_id}", clean)
            self._start_loop(clean)
            return clean

    def undeploy(self, model_id: str) -> None:
        with self._lock:
            self._check()
            if self._store.get(f"model|{model_id}") is None:
                raise NotFound(f"no model {model_id!r}")
            self._store.delete(f"model|{model_id}")
            loop = self._loops.pop(model_id, None)
        if loop is not None:
            loop.stop()
            loop.join(timeout=2.0)

    def get(self, model_id: str) -> dict:
        with self._lock:
            self._check()
            doc = self._store.get(f"model|{model_id}")
            if doc is None:
                raise NotFound(f"no model {model_id!r}")
            return dict(doc)

    def list_models(self) -> list[dict]:
        with self._lock:
            self._check()
            return [dict(doc) for _, doc in self._store.items("model|")]
