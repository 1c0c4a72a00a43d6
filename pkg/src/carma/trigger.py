"""Action-label streams to reasoning triggers.

Each actor has its own debounce automaton: a label becomes *stable* once
``k`` consecutive samples agree, and a trigger fires when the stable label
differs from the last one that fired. Every actor starts out as ``idle``, so
an initial run of idle samples does not fire but a first real action does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import OrderViolation
from .model import InstanceId, Mode

IDLE = "idle"


@dataclass(frozen=True)
class ActionLabelSample:
    actor: InstanceId
    label: str
    t: float
    window: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.window) > 4:
            raise ValueError("a classifier window holds at most 4 crops")


@dataclass(frozen=True)
class TriggerEvent:
    actor: InstanceId
    t: float
    label: Optional[str] = None


@dataclass(frozen=True)
class DebouncePolicy:
    k: int = 2
    fire_on_idle: bool = True
    initial_label: str = IDLE

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("debounce k must be at least 1")


@dataclass
class _ActorTrigger:
    last_t: float = -math.inf
    run_label: Optional[str] = None
    run_length: int = 0
    fired: Optional[str] = None


@dataclass
class TriggerState:
    """Per-actor automata. Actors never share state."""

    actors: dict[InstanceId, _ActorTrigger] = field(default_factory=dict)


def push_label(state: TriggerState, sample: ActionLabelSample,
               policy: DebouncePolicy = DebouncePolicy(),
               mode: Mode = Mode.TRIGGER_ONLY) -> Optional[TriggerEvent]:
    """Feed one sample; return a trigger when the actor's stable label changes.

    The trigger carries the label only when ``mode`` forwards labels.
    """
    st = state.actors.get(sample.actor)
    if st is None:
        st = state.actors[sample.actor] = _ActorTrigger(fired=policy.initial_label)
    if sample.t < st.last_t:
        raise OrderViolation(
            f"label sample for {sample.actor} at t={sample.t} is older than t={st.last_t}"
        )
    st.last_t = sample.t

    if sample.label == st.run_label:
        st.run_length += 1
    else:
        st.run_label, st.run_length = sample.label, 1

    if st.run_length != policy.k or st.run_label == st.fired:
        return None
    st.fired = st.run_label
    if st.run_label == IDLE and not policy.fire_on_idle:
        return None
    return TriggerEvent(sample.actor, sample.t, st.run_label if mode.carries_label else None)


def discrete_sampler(start: float, end: float, interval: float,
                     actors: Sequence[InstanceId]) -> list[TriggerEvent]:
    """Label-free triggers for every actor at ``start + k*interval`` (k >= 1) up to ``end``."""
    if interval <= 0:
        raise ValueError("interval must be positive")
    ticks = tick_times(start, end, interval)
    return [TriggerEvent(a, t) for t in ticks for a in actors]


def tick_times(start: float, end: float, interval: float) -> list[float]:
    if end <= start:
        return []
    # small epsilon so that e.g. 10.0 / 2.0 ticks at exactly t=10 is not lost to rounding
    n = math.floor((end - start) / interval + 1e-9)
    return [start + k * interval for k in range(1, n + 1)]


def count_triggers(labels: Iterable[str], policy: DebouncePolicy = DebouncePolicy()) -> int:
    """Convenience: run one actor's label list through a fresh automaton."""
    state = TriggerState()
    actor = InstanceId("person", 1)
    fired = 0
    for i, label in enumerate(labels):
        if push_label(state, ActionLabelSample(actor, label, float(i)), policy) is not None:
            fired += 1
    return fired
