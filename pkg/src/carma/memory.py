"""Central instance store and triplet history.

One ``MemoryStore`` is shared by the perception, trigger and reasoner stages.
Writes are serialized behind a re-entrant lock and every read returns
immutable values, so readers on other threads never see a half-applied update.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import threading
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import LoadError, NotFound, OrderViolation
from .model import (
    ActionTriplet,
    ActorClass,
    ActorInstance,
    InstanceId,
    Kind,
    ObjectInstance,
    Point3,
)

FORMAT = "carma-mem/1"


class MemoryStore:
    def __init__(self):
        self._lock = threading.RLock()
        self._objects: dict[InstanceId, ObjectInstance] = {}
        self._actors: dict[InstanceId, ActorInstance] = {}
        self._triplets: list[ActionTriplet] = []
        self._next = {kind: 1 for kind in Kind}

    # -- ids -------------------------------------------------------------
    def _fresh(self, kind: Kind) -> InstanceId:
        iid = InstanceId(kind, self._next[kind])
        self._next[kind] += 1
        return iid

    # -- objects ---------------------------------------------------------
    def register_object(self, crop_ref: str, location: Point3, t: float,
                        embedding: Optional[Sequence[float]] = None) -> InstanceId:
        """Store a new object and return its fresh id. Never deduplicates."""
        if len(location) != 3 or not all(math.isfinite(float(c)) for c in location):
            raise ValueError(f"object location must be finite, got {location}")
        with self._lock:
            iid = self._fresh(Kind.OBJECT)
            self._objects[iid] = ObjectInstance(
                iid, crop_ref, tuple(location), float(t),
                None if embedding is None else tuple(embedding),
            )
            return iid

    def update_object(self, iid: InstanceId, t: float, location: Optional[Point3] = None,
                      crop_ref: Optional[str] = None,
                      embedding: Optional[Sequence[float]] = None) -> ObjectInstance:
        with self._lock:
            old = self._require_object(iid)
            new = ObjectInstance(
                iid,
                crop_ref if crop_ref is not None else old.crop_ref,
                tuple(location) if location is not None else old.location,
                float(t),
                tuple(embedding) if embedding is not None else old.embedding,
            )
            self._objects[iid] = new
            return new

    def get_object(self, iid: InstanceId) -> ObjectInstance:
        with self._lock:
            return self._require_object(iid)

    def has_object(self, iid: InstanceId) -> bool:
        with self._lock:
            return iid in self._objects

    def objects(self) -> list[ObjectInstance]:
        """All objects in ascending ordinal order."""
        with self._lock:
            return sorted(self._objects.values(), key=lambda o: o.id.ordinal)

    def _require_object(self, iid: InstanceId) -> ObjectInstance:
        try:
            return self._objects[iid]
        except KeyError:
            raise NotFound(f"unknown object {iid}") from None

    # -- actors ----------------------------------------------------------
    def register_actor(self, actor_class: ActorClass | str, t: float) -> InstanceId:
        actor_class = ActorClass(actor_class)
        kind = Kind.ROBOT_HAND if actor_class is ActorClass.ROBOT else Kind.PERSON
        with self._lock:
            iid = self._fresh(kind)
            self._actors[iid] = ActorInstance(iid, actor_class)
            return iid

    def append_person_crop(self, iid: InstanceId, crop_ref: str, t: float) -> ActorInstance:
        with self._lock:
            actor = self._require_actor(iid)
            if actor.crop_history and t <= actor.crop_history[-1][0]:
                raise OrderViolation(
                    f"crop for {iid} at t={t} does not follow t={actor.crop_history[-1][0]}"
                )
            new = ActorInstance(actor.id, actor.actor_class, actor.last_pose,
                                actor.crop_history + ((float(t), crop_ref),))
            self._actors[iid] = new
            return new

    def update_actor_pose(self, iid: InstanceId, pose: Iterable[Point3], t: float) -> ActorInstance:
        with self._lock:
            actor = self._require_actor(iid)
            if actor.crop_history and t < actor.crop_history[-1][0]:
                raise OrderViolation(f"pose for {iid} at t={t} is older than its latest crop")
            new = ActorInstance(actor.id, actor.actor_class, tuple(pose), actor.crop_history)
            self._actors[iid] = new
            return new

    def get_actor(self, iid: InstanceId) -> ActorInstance:
        with self._lock:
            return self._require_actor(iid)

    def has_actor(self, iid: InstanceId) -> bool:
        with self._lock:
            return iid in self._actors

    def actors(self) -> list[ActorInstance]:
        with self._lock:
            return sorted(self._actors.values(), key=lambda a: (a.id.kind.value, a.id.ordinal))

    def _require_actor(self, iid: InstanceId) -> ActorInstance:
        try:
            return self._actors[iid]
        except KeyError:
            raise NotFound(f"unknown actor {iid}") from None

    def recent_crops(self, iid: InstanceId, n: int) -> list[str]:
        """The ``n`` most recent crop references of an actor, oldest first."""
        with self._lock:
            history = self._require_actor(iid).crop_history
        if n <= 0:
            return []
        return [ref for _, ref in history[-n:]]

    # -- triplets --------------------------------------------------------
    def log_triplet(self, triplet: ActionTriplet) -> None:
        with self._lock:
            if self._triplets and triplet.t < self._triplets[-1].t:
                raise OrderViolation(
                    f"triplet at t={triplet.t} precedes the last logged t={self._triplets[-1].t}"
                )
            if not self.has_actor(triplet.actor):
                raise NotFound(f"unknown actor {triplet.actor}")
            for ref in (triplet.object, triplet.on):
                if ref is not None and ref not in self._objects:
                    raise NotFound(f"unknown object {ref}")
            self._triplets.append(triplet)

    def triplets(self) -> list[ActionTriplet]:
        with self._lock:
            return list(self._triplets)

    def previous_triplet(self, actor: InstanceId) -> Optional[ActionTriplet]:
        with self._lock:
            for triplet in reversed(self._triplets):
                if triplet.actor == actor:
                    return triplet
        return None

    # -- snapshots and equality -----------------------------------------
    def snapshot(self) -> dict:
        """A plain-data copy of the whole store, consistent at one instant."""
        with self._lock:
            return {
                "objects": [o.to_dict() for o in self.objects()],
                "actors": [a.to_dict() for a in self.actors()],
                "triplets": [t.to_dict() for t in self._triplets],
                "next_ordinal": {k.value: v for k, v in self._next.items()},
            }

    def __eq__(self, other):
        if not isinstance(other, MemoryStore):
            return NotImplemented
        return self.snapshot() == other.snapshot()

    def __repr__(self):
        with self._lock:
            return (f"MemoryStore(objects={len(self._objects)}, actors={len(self._actors)}, "
                    f"triplets={len(self._triplets)})")


def persist(store: MemoryStore, path: str | os.PathLike) -> None:
    """Write the store as one JSON record per line, behind a format header.

    The last line is an ``end`` record with the record count, so a file cut
    at a line boundary is still detected as truncated. The file is replaced
    atomically.
    """
    snap = store.snapshot()
    lines = [{"format": FORMAT}]
    lines.append({"type": "counters", "next_ordinal": snap["next_ordinal"]})
    lines += [{"type": "object", **o} for o in snap["objects"]]
    lines += [{"type": "actor", **a} for a in snap["actors"]]
    lines += [{"type": "triplet", **t} for t in snap["triplets"]]
    lines.append({"type": "end", "records": len(lines) - 1})

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for rec in lines:
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path: str | os.PathLike) -> MemoryStore:
    """Read a store written by :func:`persist`. Raises ``LoadError`` on any defect."""
    data = Path(path).read_bytes()
    offset = 0
    records = []
    for raw_line in data.splitlines(keepends=True):
        start = offset
        offset += len(raw_line)
        if not raw_line.endswith(b"\n"):
            raise LoadError("unterminated final record", start)
        try:
            records.append((start, json.loads(raw_line.decode("utf-8"))))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise LoadError(f"corrupt record: {exc}", start) from None

    if not records or records[0][1] != {"format": FORMAT}:
        raise LoadError(f"missing {FORMAT} header", 0)
    end_off, end = records[-1]
    if len(records) < 2 or not isinstance(end, dict) or end.get("type") != "end":
        raise LoadError("missing end record; file is truncated", len(data))
    if end.get("records") != len(records) - 2:
        raise LoadError("record count mismatch; file is truncated or padded", end_off)

    store = MemoryStore()
    counters = None
    for off, rec in records[1:-1]:
        try:
            kind = rec.pop("type")
            if kind == "counters":
                counters = {Kind(k): int(v) for k, v in rec["next_ordinal"].items()}
            elif kind == "object":
                obj = ObjectInstance.from_dict(rec)
                store._objects[obj.id] = obj
            elif kind == "actor":
                actor = ActorInstance.from_dict(rec)
                store._actors[actor.id] = actor
            elif kind == "triplet":
                store.log_triplet(ActionTriplet.from_dict(rec))
            else:
                raise ValueError(f"unknown record type {kind!r}")
        except Exception as exc:
            raise LoadError(f"invalid record: {exc}", off) from None
    if counters is None:
        raise LoadError("missing counters record", records[0][0])
    for kind in Kind:
        used = [i.ordinal for i in (*store._objects, *store._actors) if i.kind is kind]
        if counters.get(kind, 1) <= max(used, default=0):
            raise LoadError(f"ordinal counter for {kind.value} is behind stored ids", records[1][0])
    store._next = {kind: counters.get(kind, 1) for kind in Kind}
    return store
