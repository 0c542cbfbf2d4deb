"""Twin and type registry with hierarchy enforcement and change events.

Things come in two kinds, tracked by a managed `isType` attribute: twins
(concrete assets, at most one parent, forming a forest) and types
(templates, multiple parents allowed, forming a DAG with child
multiplicities). The four managed attributes (isType, type, parent,
children) are maintained exclusively by the registry; direct writes are
rejected. Every successful mutation emits one event envelope per affected
thing on the event topic. Reads hide isType.
"""

from __future__ import annotations

import copy
import threading
from pathlib import Path

from .bus import Bus
from .errors import (
    CascadeOnType,
    CycleCreated,
    DuplicateId,
    Forbidden,
    KindMismatch,
    ManagedAttributeViolation,
    NotAType,
    NotFound,
    TwinAlreadyHasParent,
    Unavailable,
    UnknownPolicy,
)
from .model import (
    MANAGED_ATTRIBUTES,
    Envelope,
    Policy,
    ThingId,
    TwinRecord,
    apply_envelope,
    event_topic,
    parse_thing_id,
)
from .storage import KvLog

EVENT_TOPIC = "twin-events"


def _public_view(record: TwinRecord) -> dict:
    """Wire form of a record with the isType marker hidden."""
    data = record.to_json()
    data["attributes"] = {k: v for k, v in data["attributes"].items() if k != "isType"}
    return data


class Registry:
    def __init__(self, data_dir: str | Path, bus: Bus, event_topic_name: str = EVENT_TOPIC):
        self.data_dir = Path(data_dir)
        self.bus = bus
        self.event_topic_name = event_topic_name
        self._lock = threading.RLock()
        self._crashed = False
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._store = KvLog(self.data_dir / "registry.log")

    # -- lifecycle -------------------------------------------------------------

    def crash(self) -> None:
        with self._lock:
            self._crashed = True
            self._store.close()

    def restart(self) -> None:
        with self._lock:
            if self._crashed:
                self._store = KvLog(self.data_dir / "registry.log")
                self._crashed = False

    def close(self) -> None:
        self.crash()

    def _check(self) -> None:
        if self._crashed:
            raise Unavailable("registry is down")

    # -- internal store access -------------------------------------------------

    def _load(self, thing_id: str) -> TwinRecord:
        raw = self._store.get(f"thing|{thing_id}")
        if raw is None:
            raise NotFound(f"no thing {thing_id!r}")
        return TwinRecord.from_json(raw)

    def _save(self, record: TwinRecord) -> None:
        self._store.put(f"thing|{record.thing_id.render()}", record.to_json())

    def _is_type(self, record: TwinRecord) -> bool:
        return bool(record.attributes.get("isType"))

    def _publish_event(self, action: str, thing_id: ThingId, path: str, value, headers: dict) -> None:
        envelope = Envelope(
            topic=event_topic(thing_id, action),
            path=path,
            value=value,
            headers=headers,
        )
        self.bus.publish(self.event_topic_name, envelope.headers, envelope.to_bytes())

    # -- policies ---------------------------------------------------------------

    def create_policy(self, policy_id: str, entries: dict[str, dict]) -> dict:
        """entries maps subject -> {"read": bool, "write": bool}."""
        with self._lock:
            self._check()
            if self._store.get(f"policy|{policy_id}") is not None:
                raise DuplicateId(f"policy {policy_id!r} exists")
            policy = Policy(policy_id, {k: dict(v) for k, v in entries.items()})
            self._store.put(f"policy|{policy_id}", policy.to_json())
            return policy.to_json()

    def get_policy(self, policy_id: str) -> dict:
        with self._lock:
            self._check()
            raw = self._store.get(f"policy|{policy_id}")
            if raw is None:
                raise NotFound(f"no policy {policy_id!r}")
            return copy.deepcopy(raw)

    def list_policies(self) -> list[dict]:
        with self._lock:
            self._check()
            return [copy.deepcopy(v) for _, v in self._store.items("policy|")]

    def delete_policy(self, policy_id: str) -> None:
        with self._lock:
            self._check()
            if self._store.get(f"policy|{policy_id}") is None:
                raise NotFound(f"no policy {policy_id!r}")
            self._store.delete(f"policy|{policy_id}")

    def _policy(self, policy_id: str) -> Policy:
        raw = self._store.get(f"policy|{policy_id}")
        if raw is None:
            raise UnknownPolicy(f"no policy {policy_id!r}")
        return Policy.from_json(raw)

    # -- creation ---------------------------------------------------------------

    def _create(
        self,
        thing_id: str,
        policy_id: str,
        attributes: dict,
        features: dict,
        managed: dict,
        subject: str,
    ) -> dict:
        tid = parse_thing_id(thing_id)
        if self._store.get(f"thing|{thing_id}") is not None:
            raise DuplicateId(f"thing {thing_id!r} exists")
        self._policy(policy_id)
        bad = MANAGED_ATTRIBUTES & set(attributes)
        if bad:
            raise ManagedAttributeViolation(f"managed attributes not writable: {sorted(bad)}")
        record = TwinRecord.from_json(
            {
                "thingId": thing_id,
                "policyId": policy_id,
                "attributes": {**attributes, **managed},
                "features": features,
            }
        )
        self._save(record)
        self._publish_event("create", tid, "/", _public_view(record), {"ditto-originator": subject})
        return _public_view(record)

    def create_twin(
        self,
        thing_id: str,
        policy_id: str,
        attributes: dict | None = None,
        features: dict | None = None,
        subject: str = "admin",
    ) -> dict:
        with self._lock:
            self._check()
            managed = {"isType": False, "parent": None, "children": {}}
            return self._create(thing_id, policy_id, attributes or {}, features or {}, managed, subject)

    def create_type(
        self,
        thing_id: str,
        policy_id: str,
        attributes: dict | None = None,
        features: dict | None = None,
        subject: str = "admin",
    ) -> dict:
        with self._lock:
            self._check()
            managed = {"isType": True, "parent": {}, "children": {}}
            return self._create(thing_id, policy_id, attributes or {}, features or {}, managed, subject)

    # -- reads ------------------------------------------------------------------

    def get(self, thing_id: str) -> dict:
        with self._lock:
            self._check()
            return _public_view(self._load(thing_id))

    def exists(self, thing_id: str) -> bool:
        with self._lock:
            self._check()
            return self._store.get(f"thing|{thing_id}") is not None

    def list_things(self, kind: str | None = None) -> list[str]:
        """Ids sorted lexicographically; kind filters to 'twin' or 'type'."""
        with self._lock:
            self._check()
            out = []
            for key, raw in self._store.items("thing|"):
                if kind is not None:
                    is_type = bool(raw["attributes"].get("isType"))
                    if (kind == "type") != is_type:
                        continue
                out.append(key.split("|", 1)[1])
            return out

    def list_children(self, thing_id: str) -> dict[str, int]:
        with self._lock:
            self._check()
            return dict(self._load(thing_id).attributes["children"])

    def list_parents(self, thing_id: str) -> list[str]:
        with self._lock:
            self._check()
            record = self._load(thing_id)
            parent = record.attributes["parent"]
            if self._is_type(record):
                return sorted(parent)
            return [parent] if parent else []

    # -- hierarchy ----------------------------------------------------------------

    def _ancestors(self, thing_id: str) -> set[str]:
        seen: set[str] = set()
        stack = [thing_id]
        while stack:
            record = self._load(stack.pop())
            parent = record.attributes["parent"]
            parents = sorted(parent) if self._is_type(record) else ([parent] if parent else [])
            for p in parents:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def link(self, parent_id: str, child_id: str, subject: str = "admin") -> None:
        with self._lock:
            self._check()
            parent = self._load(parent_id)
            child = self._load(child_id)
            parent_is_type = self._is_type(parent)
            if parent_is_type != self._is_type(child):
                raise KindMismatch("cannot link a twin with a type")
            if not parent_is_type and child.attributes["parent"] is not None:
                raise TwinAlreadyHasParent(f"{child_id!r} already has a parent")
            if child_id == parent_id or child_id in self._ancestors(parent_id):
                raise CycleCreated(f"linking {parent_id!r} -> {child_id!r} forms a cycle")

            parent = parent.copy()
            child = child.copy()
            if parent_is_type:
                children = parent.attributes["children"]
                children[child_id] = children.get(child_id, 0) + 1
                child.attributes["parent"][parent_id] = 1
            else:
                parent.attributes["children"][child_id] = 1
                child.attributes["parent"] = parent_id
            self._save(parent)
            self._save(child)
            headers = {"ditto-originator": subject}
            self._publish_event(
                "modify",
                parent.thing_id,
                "/attributes",
                {"children": dict(parent.attributes["children"])},
                headers,
            )
            self._publish_event(
                "modify",
                child.thing_id,
                "/attributes",
                {"parent": copy.deepcopy(child.attributes["parent"])},
                headers,
            )

    # -- instantiation -------------------------------------------------------------

    def instantiate_from_type(
        self, type_id: str, new_id: str, policy_id: str, subject: str = "admin"
    ) -> list[dict]:
        with self._lock:
            self._check()
            type_record = self._load(type_id)
            if not self._is_type(type_record):
                raise NotAType(f"{type_id!r} is not a type")
            self._policy(policy_id)
            new_tid = parse_thing_id(new_id)

            planned: list[TwinRecord] = []

            def expand(source: TwinRecord, twin_id: ThingId, parent: str | None) -> None:
                attributes = {
                    k: copy.deepcopy(v)
                    for k, v in source.attributes.items()
                    if k not in MANAGED_ATTRIBUTES
                }
                attributes.update(
                    {
                        "isType": False,
                        "type": source.thing_id.render(),
                        "parent": parent,
                        "children": {},
                    }
                )
                record = TwinRecord(
                    thing_id=twin_id,
                    policy_id=policy_id,
                    attributes=attributes,
                    features=copy.deepcopy(source.features),
                )
                planned.append(record)
                for child_type_id, multiplicity in sorted(source.attributes["children"].items()):
                    child_type = self._load(child_type_id)
                    for k in range(1, multiplicity + 1):
                        child_id = ThingId(
                            twin_id.namespace,
                            f"{twin_id.name}_{child_type.thing_id.name}_{k}",
                        )
                        record.attributes["children"][child_id.render()] = 1
                        expand(child_type, child_id, twin_id.render())

            expand(type_record, new_tid, None)

            ids = [r.thing_id.render() for r in planned]
            if len(set(ids)) != len(ids):
                raise DuplicateId("instantiation generates colliding ids")
            for an_id in ids:
                if self._store.get(f"thing|{an_id}") is not None:
                    raise DuplicateId(f"thing {an_id!r} exists")

            for record in planned:
                self._save(record)
            headers = {"ditto-originator": subject}
            for record in planned:
                self._publish_event("create", record.thing_id, "/", _public_view(record), headers)
            return [_public_view(r) for r in planned]

    # -- deletion -------------------------------------------------------------------

    def _detach_from_parent(self, record: TwinRecord, events: list) -> None:
        thing_id = record.thing_id.render()
        parent_ref = record.attributes["parent"]
        parent_ids = sorted(parent_ref) if self._is_type(record) else ([parent_ref] if parent_ref else [])
        for pid in parent_ids:
            parent = self._load(pid).copy()
            parent.attributes["children"].pop(thing_id, None)
            self._save(parent)
            events.append(
                ("modify", parent.thing_id, "/attributes",
                 {"children": dict(parent.attributes["children"])})
            )

    def delete(self, thing_id: str, mode: str = "orphan", subject: str = "admin") -> list[str]:
        with self._lock:
            self._check()
            record = self._load(thing_id)
            is_type = self._is_type(record)
            if mode not in ("orphan", "cascade"):
                raise ValueError(f"unknown delete mode {mode!r}")
            if mode == "cascade" and is_type:
                raise CascadeOnType("types can only be deleted in orphan mode")

            events: list = []
            if mode == "orphan":
                self._detach_from_parent(record, events)
                for child_id in sorted(record.attributes["children"]):
                    child = self._load(child_id).copy()
                    if self._is_type(child):
                        child.attributes["parent"].pop(thing_id, None)
                    else:
                        child.attributes["parent"] = None
                    self._save(child)
                    events.append(
                        ("modify", child.thing_id, "/attributes",
                         {"parent": copy.deepcopy(child.attributes["parent"])})
                    )
                self._store.delete(f"thing|{thing_id}")
                deleted = [thing_id]
            else:
                self._detach_from_parent(record, events)
                deleted = []
                stack = [thing_id]
                while stack:
                    current = stack.pop()
                    deleted.append(current)
                    stack.extend(sorted(self._load(current).attributes["children"]))
                for did in deleted:
                    self._store.delete(f"thing|{did}")

            headers = {"ditto-originator": subject}
            for action, tid, path, value in events:
                self._publish_event(action, tid, path, value, headers)
            for did in deleted:
                self._publish_event("delete", parse_thing_id(did), "/", None, headers)
            return deleted

    # -- generic update ----------------------------------------------------------------

    def update(self, envelope: Envelope, subject: str) -> dict:
        """Apply a modify command and publish the matching event."""
        with self._lock:
            self._check()
            thing_id = envelope.thing_id().render()
            record = self._load(thing_id)
            if not self._policy(record.policy_id).can_write(subject):
                raise Forbidden(f"{subject!r} cannot write {thing_id!r}")
            updated = apply_envelope(record, envelope)
            self._save(updated)
            headers = dict(envelope.headers)
            headers["ditto-originator"] = subject
            self._publish_event("modify", updated.thing_id, envelope.path, envelope.value, headers)
            return _public_view(updated)
