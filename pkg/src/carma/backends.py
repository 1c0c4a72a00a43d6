"""Scripted reasoning backends used for replay and metric testing."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GroundingError
from .memory import MemoryStore
from .model import InstanceId, render_id
from .reasoner import PromptSpec, ReasonerOutput, parse_response, render_output

logger = logging.getLogger(__name__)

NO_OUTCOME = "No scripted outcome is available for this actor at this time."

# labels the noisy oracle flips to; never part of a scenario vocabulary
DISTRACTOR_LABELS = ("wave", "scratch_head", "look_around", "stretch", "point_at", "clap")


@dataclass(frozen=True)
class ScriptedOutcome:
    t: float
    actor_hint: str
    output: ReasonerOutput


class OracleBackend:
    """Answers with the latest scripted outcome for the prompt's actor.

    ``resolve`` maps scenario actor hints to ids and is consulted at dispatch
    time, so hints bound by the tracker after construction are honoured.
    """

    def __init__(self, outcomes: Sequence[ScriptedOutcome],
                 resolve: Callable[[str], Optional[InstanceId]]):
        self.outcomes = sorted(outcomes, key=lambda o: o.t)
        self.resolve = resolve
        self.calls = 0

    def lookup(self, actor: InstanceId, t: float) -> Optional[ReasonerOutput]:
        found = None
        for oc in self.outcomes:
            if oc.t > t:
                break
            if self.resolve(oc.actor_hint) == actor:
                found = oc.output
        return found

    def dispatch(self, prompt: PromptSpec) -> str:
        self.calls += 1
        out = self.lookup(prompt.actor, prompt.t)
        return NO_OUTCOME if out is None else render_output(out)


class NoisyOracleBackend(OracleBackend):
    """Oracle whose answers are perturbed with independent seeded probabilities.

    ``flip_prob`` replaces the action with a distractor label outside the
    scripted vocabulary, ``swap_prob`` swaps the primary object for another
    live object, ``toggle_prob`` inverts the robot-interaction flag. Each
    dispatch draws from its own generator keyed on (seed, call number).
    """

    def __init__(self, outcomes: Sequence[ScriptedOutcome],
                 resolve: Callable[[str], Optional[InstanceId]], mem: MemoryStore,
                 seed: int = 0, flip_prob: float = 0.0, swap_prob: float = 0.0,
                 toggle_prob: float = 0.0):
        super().__init__(outcomes, resolve)
        for name, p in (("flip_prob", flip_prob), ("swap_prob", swap_prob),
                        ("toggle_prob", toggle_prob)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        self.mem = mem
        self.seed = seed
        self.flip_prob, self.swap_prob, self.toggle_prob = flip_prob, swap_prob, toggle_prob
        vocab = {oc.output.action for oc in self.outcomes}
        self.distractors = [d for d in DISTRACTOR_LABELS if d not in vocab] or ["unscripted_action"]

    def dispatch(self, prompt: PromptSpec) -> str:
        raw = super().dispatch(prompt)
        try:
            out = parse_response(raw)
        except GroundingError:
            return raw
        rng = np.random.default_rng([self.seed, self.calls])
        u_flip, u_swap, u_toggle = rng.random(3)
        action, obj, flag = out.action, out.object, out.robot_interaction
        if u_flip < self.flip_prob:
            action = self.distractors[int(rng.integers(len(self.distractors)))]
        if u_swap < self.swap_prob and obj is not None:
            others = [render_id(o.id) for o in self.mem.objects()
                      if render_id(o.id) not in (obj, out.on)]
            if others:
                obj = others[int(rng.integers(len(others)))]
        if u_toggle < self.toggle_prob:
            flag = not flag
        return render_output(ReasonerOutput(action=action, object=obj, on=out.on,
                                            robot_interaction=flag))
