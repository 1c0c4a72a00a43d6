"""Domain types shared by every module, plus pure operations on ids, labels and triplets.

All types are frozen dataclasses holding tuples, so values can be shared
between threads without copying. Each type has ``to_dict``/``from_dict`` for
the JSON documents used in scenario files, reports and persistence.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import InvalidLabel, ParseError

Point3 = tuple[float, float, float]


class Kind(str, enum.Enum):
    OBJECT = "object"
    PERSON = "person"
    ROBOT_HAND = "robot_hand"


class ActorClass(str, enum.Enum):
    HUMAN = "human"
    ROBOT = "robot"


class Mode(str, enum.Enum):
    """The four reasoner configurations."""

    DISCRETE_PREV = "discrete_prev"  # fixed-interval sampling, previous triplet in prompt
    TRIGGER_PREV = "trigger_prev"  # label-free trigger, previous triplet in prompt
    TRIGGER_ONLY = "trigger_only"  # label-free trigger, no previous triplet
    TRIGGER_LABEL_PREV = "trigger_label_prev"  # trigger carries the detector label

    @property
    def uses_previous_triplet(self) -> bool:
        return self is not Mode.TRIGGER_ONLY

    @property
    def uses_trigger(self) -> bool:
        return self is not Mode.DISCRETE_PREV

    @property
    def carries_label(self) -> bool:
        return self is Mode.TRIGGER_LABEL_PREV


_ID_RE = re.compile(r"^(object|person|robot_hand)_([1-9][0-9]*)$")
_LABEL_RE = re.compile(r"^[a-z][a-z0-9_]*$")


@dataclass(frozen=True, order=True)
class InstanceId:
    kind: Kind
    ordinal: int

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if isinstance(self.ordinal, bool) or not isinstance(self.ordinal, int) or self.ordinal < 1:
            raise ValueError(f"ordinal must be a positive integer, got {self.ordinal!r}")

    def __str__(self) -> str:
        return render_id(self)


def render_id(iid: InstanceId) -> str:
    return f"{iid.kind.value}_{iid.ordinal}"


def parse_id(s: str) -> InstanceId:
    if not isinstance(s, str):
        raise ParseError(f"instance id must be a string, got {type(s).__name__}")
    m = _ID_RE.match(s)
    if m is None:
        raise ParseError(f"malformed instance id {s!r}")
    return InstanceId(Kind(m.group(1)), int(m.group(2)))


def normalize_action_label(raw: str) -> str:
    """Lowercase, join words with single underscores and drop everything else.

    >>> normalize_action_label("hand-over!")
    'hand_over'
    """
    if raw is None:
        raise InvalidLabel("action label is missing")
    text = raw.strip().lower()
    text = re.sub(r"[\s\-_]+", "_", text)
    text = re.sub(r"[^a-z0-9_]", "", text)
    text = re.sub(r"_+", "_", text).strip("_")
    # labels must start with a letter
    text = re.sub(r"^[0-9_]+", "", text)
    if not text:
        raise InvalidLabel(f"label {raw!r} is empty after normalization")
    return text


def _point(p) -> Point3:
    x, y, z = (float(c) for c in p)
    return (x, y, z)


def _opt_id(s: Optional[str]) -> Optional[InstanceId]:
    return None if s is None else parse_id(s)


def _opt_str(iid: Optional[InstanceId]) -> Optional[str]:
    return None if iid is None else render_id(iid)


@dataclass(frozen=True)
class ObjectInstance:
    id: InstanceId
    crop_ref: str
    location: Point3
    last_seen: float
    embedding: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.id.kind is not Kind.OBJECT:
            raise ValueError(f"object instance needs an object id, got {self.id}")
        if not self.crop_ref:
            raise ValueError("every object needs a reference image")
        object.__setattr__(self, "location", _point(self.location))
        if self.embedding is not None:
            emb = tuple(float(v) for v in self.embedding)
            norm = math.sqrt(sum(v * v for v in emb))
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"embedding must have unit norm, got {norm:.8f}")
            object.__setattr__(self, "embedding", emb)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": render_id(self.id),
            "crop_ref": self.crop_ref,
            "location": list(self.location),
            "last_seen": self.last_seen,
            "embedding": None if self.embedding is None else list(self.embedding),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ObjectInstance":
        emb = d.get("embedding")
        return cls(
            id=parse_id(d["id"]),
            crop_ref=d["crop_ref"],
            location=_point(d["location"]),
            last_seen=float(d["last_seen"]),
            embedding=None if emb is None else tuple(emb),
        )


@dataclass(frozen=True)
class ActorInstance:
    id: InstanceId
    actor_class: ActorClass
    last_pose: Optional[tuple[Point3, ...]] = None
    crop_history: tuple[tuple[float, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "actor_class", ActorClass(self.actor_class))
        expected = Kind.ROBOT_HAND if self.actor_class is ActorClass.ROBOT else Kind.PERSON
        if self.id.kind is not expected:
            raise ValueError(f"{self.actor_class.value} actor needs a {expected.value} id, got {self.id}")
        if self.last_pose is not None:
            object.__setattr__(self, "last_pose", tuple(_point(j) for j in self.last_pose))
        times = [t for t, _ in self.crop_history]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("crop history timestamps must be strictly increasing")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": render_id(self.id),
            "actor_class": self.actor_class.value,
            "last_pose": None if self.last_pose is None else [list(j) for j in self.last_pose],
            "crop_history": [[t, ref] for t, ref in self.crop_history],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ActorInstance":
        pose = d.get("last_pose")
        return cls(
            id=parse_id(d["id"]),
            actor_class=ActorClass(d["actor_class"]),
            last_pose=None if pose is None else tuple(_point(j) for j in pose),
            crop_history=tuple((float(t), str(ref)) for t, ref in d.get("crop_history", [])),
        )


@dataclass(frozen=True)
class ActionTriplet:
    """Who did what with which object, and when."""

    actor: InstanceId
    action: str
    object: Optional[InstanceId] = None
    on: Optional[InstanceId] = None
    robot_interaction: bool = False
    t: float = 0.0

    def __post_init__(self):
        if not isinstance(self.action, str) or not _LABEL_RE.match(self.action):
            raise InvalidLabel(f"action {self.action!r} is not a normalized label")
        if self.actor.kind is Kind.OBJECT:
            raise ValueError("an object cannot be the actor of a triplet")
        for name in ("object", "on"):
            ref = getattr(self, name)
            if ref is not None and ref.kind is not Kind.OBJECT:
                raise ValueError(f"{name} must reference an object, got {ref}")
        if self.on is not None and self.on == self.object:
            raise ValueError("secondary object must differ from the primary object")
        object.__setattr__(self, "robot_interaction", bool(self.robot_interaction))
        object.__setattr__(self, "t", float(self.t))

    def to_dict(self) -> dict[str, Any]:
        return {
            "actor": render_id(self.actor),
            "action": self.action,
            "object": _opt_str(self.object),
            "on": _opt_str(self.on),
            "robot_interaction": self.robot_interaction,
            "t": self.t,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ActionTriplet":
        return cls(
            actor=parse_id(d["actor"]),
            action=d["action"],
            object=_opt_id(d.get("object")),
            on=_opt_id(d.get("on")),
            robot_interaction=bool(d.get("robot_interaction", False)),
            t=float(d.get("t", 0.0)),
        )


def triplet_equals(a: ActionTriplet, b: ActionTriplet) -> bool:
    """Field equality ignoring the timestamp; ordering is the aligner's job."""
    return (
        a.actor == b.actor
        and a.action == b.action
        and a.object == b.object
        and a.on == b.on
        and a.robot_interaction == b.robot_interaction
    )


@dataclass(frozen=True)
class ReasonerConfig:
    mode: Mode = Mode.TRIGGER_ONLY
    sample_interval: float = 2.0
    include_robot_hand: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.sample_interval <= 0:
            raise ValueError("sample_interval must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode.value,
            "sample_interval": self.sample_interval,
            "include_robot_hand": self.include_robot_hand,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ReasonerConfig":
        return cls(
            mode=Mode(d["mode"]),
            sample_interval=float(d.get("sample_interval", 2.0)),
            include_robot_hand=bool(d.get("include_robot_hand", True)),
        )
