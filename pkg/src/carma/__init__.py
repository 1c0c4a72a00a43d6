"""Instance-level situational grounding of actor-action-object triplets."""

from .memory import MemoryStore
from .model import (
    ActionTriplet,
    ActorClass,
    ActorInstance,
    InstanceId,
    Kind,
    Mode,
    ObjectInstance,
    ReasonerConfig,
    normalize_action_label,
    parse_id,
    render_id,
    triplet_equals,
)

__version__ = "0.1.0"

__all__ = [
    "ActionTriplet",
    "ActorClass",
    "ActorInstance",
    "InstanceId",
    "Kind",
    "MemoryStore",
    "Mode",
    "ObjectInstance",
    "ReasonerConfig",
    "normalize_action_label",
    "parse_id",
    "render_id",
    "triplet_equals",
]
