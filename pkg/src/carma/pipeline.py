"""Replay a scenario through perception, memory, triggering and reasoning.

Events are handled strictly in file order:

* ``point_cloud`` segments the workspace (once at start-up, again only after
  a ``resegment`` event) and registers or updates objects;
* ``pose_sample`` events sharing a timestamp form one tracker update; each
  pose yields a crop region that is appended to the actor's crop history;
* ``action_label`` feeds the actor's trigger automaton, and every trigger
  runs one reasoning cycle immediately;
* in the discrete-sampling mode labels are ignored and every live actor is
  reasoned about at fixed intervals instead.

Reasoning cycles run sequentially, so the triplet log is in trigger order.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .backends import NoisyOracleBackend, OracleBackend, ScriptedOutcome
from .errors import (
    BackendError,
    BackendUnavailable,
    BehindCamera,
    GroundingError,
    InvalidLabel,
    IoError,
    OrderViolation,
)
from .evaluation import TripletSequence, write_sequence
from .memory import MemoryStore, persist
from .model import ActorClass, InstanceId, Mode, ReasonerConfig, normalize_action_label, render_id
from .perception import (
    PerceptionParams,
    TrackState,
    associate_person_tracks,
    compute_crop_region,
    segment_workspace,
)
from .reasoner import Backend, run_reasoning_cycle
from .scenario import Scenario, ScenarioEvent
from .trigger import ActionLabelSample, DebouncePolicy, TriggerEvent, TriggerState, push_label, tick_times
from .vlm_client import EndpointConfig, VLMBackend

logger = logging.getLogger(__name__)

BACKENDS = ("oracle", "noisy_oracle", "vlm")


@dataclass(frozen=True)
class RunConfig:
    reasoner: ReasonerConfig = field(default_factory=ReasonerConfig)
    backend: str = "oracle"
    seed: int = 0
    flip_prob: float = 0.0
    swap_prob: float = 0.0
    toggle_prob: float = 0.0
    endpoint: Optional[EndpointConfig] = None
    perception: PerceptionParams = field(default_factory=PerceptionParams)
    debounce: DebouncePolicy = field(default_factory=DebouncePolicy)
    object_match_dist: float = 0.1

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.backend == "vlm" and self.endpoint is None:
            raise ValueError("the vlm backend needs an endpoint configuration")

    def describe(self) -> dict:
        d = {"mode": self.reasoner.mode.value, "backend": self.backend,
             "include_robot_hand": self.reasoner.include_robot_hand,
             "debounce_k": self.debounce.k}
        if self.reasoner.mode is Mode.DISCRETE_PREV:
            d["sample_interval"] = self.reasoner.sample_interval
        if self.backend == "noisy_oracle":
            d.update(seed=self.seed, flip_prob=self.flip_prob, swap_prob=self.swap_prob,
                     toggle_prob=self.toggle_prob)
        if self.backend == "vlm":
            d.update(model=self.endpoint.model, base_url=self.endpoint.base_url)
        return d


@dataclass
class RunReport:
    scenario: str
    config: dict
    events: int = 0
    label_samples: int = 0
    triggers: int = 0
    cycles: int = 0
    completed: int = 0
    grounding_errors: list = field(default_factory=list)
    backend_failures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    latencies: list = field(default_factory=list)

    @property
    def backend_unavailable(self) -> bool:
        return any(f["error"] == "BackendUnavailable" for f in self.backend_failures)

    def deterministic(self) -> dict:
        return {
            "format": "carma-run/1",
            "scenario": self.scenario,
            "config": self.config,
            "events": self.events,
            "label_samples": self.label_samples,
            "triggers": self.triggers,
            "cycles": self.cycles,
            "completed": self.completed,
            "grounding_errors": self.grounding_errors,
            "backend_failures": self.backend_failures,
            "warnings": self.warnings,
        }

    def timing(self) -> dict:
        lat = self.latencies
        return {
            "latency_s": lat,
            "mean_latency_s": sum(lat) / len(lat) if lat else None,
            "max_latency_s": max(lat) if lat else None,
        }


class _Run:
    def __init__(self, scn: Scenario, cfg: RunConfig, backend: Optional[Backend]):
        self.scn, self.cfg = scn, cfg
        self.mem = MemoryStore()
        self.tracks = TrackState(timeout=cfg.perception.track_timeout)
        self.triggers = TriggerState()
        self.hints: dict[str, InstanceId] = {}
        self.frame: Optional[str] = None
        self.segmented = False
        self.resegment_pending = False
        self.report = RunReport(scn.name, cfg.describe(), events=len(scn.events))
        self.backend = backend or self._make_backend()

    def _make_backend(self) -> Backend:
        outcomes = [ScriptedOutcome(ev.t, ev.actor, ev.output)
                    for ev in self.scn.events if ev.type == "oracle_outcome"]
        if self.cfg.backend == "oracle":
            return OracleBackend(outcomes, self.hints.get)
        if self.cfg.backend == "noisy_oracle":
            return NoisyOracleBackend(outcomes, self.hints.get, self.mem, seed=self.cfg.seed,
                                      flip_prob=self.cfg.flip_prob, swap_prob=self.cfg.swap_prob,
                                      toggle_prob=self.cfg.toggle_prob)
        return VLMBackend(self.cfg.endpoint, base=self.scn.base)

    def warn(self, t: float, msg: str) -> None:
        logger.warning("t=%.3f: %s", t, msg)
        self.report.warnings.append({"t": t, "message": msg})

    # -- event handlers -------------------------------------------------
    def on_point_cloud(self, ev: ScenarioEvent) -> None:
        if self.segmented and not self.resegment_pending:
            return
        params = self.cfg.perception
        candidates = segment_workspace(self.scn.load_points(ev), params)
        ref = (lambda c: f"{self.frame}#{c.region.as_fragment()}") if self.frame else \
              (lambda c: f"cloud@{ev.t:g}#{c.region.as_fragment()}")
        if not self.segmented:
            for c in candidates:
                self.mem.register_object(ref(c), c.centroid, ev.t)
        else:
            known = self.mem.objects()
            pairs = sorted(
                (math.dist(o.location, c.centroid), o.id.ordinal, k)
                for o in known for k, c in enumerate(candidates)
                if math.dist(o.location, c.centroid) <= self.cfg.object_match_dist
            )
            used_obj, matched = set(), {}
            for _, ordinal, k in pairs:
                if ordinal in used_obj or k in matched:
                    continue
                used_obj.add(ordinal)
                matched[k] = ordinal
            by_ordinal = {o.id.ordinal: o.id for o in known}
            for k, c in enumerate(candidates):
                if k in matched:
                    self.mem.update_object(by_ordinal[matched[k]], ev.t, location=c.centroid,
                                           crop_ref=ref(c))
                else:
                    self.mem.register_object(ref(c), c.centroid, ev.t)
        self.segmented = True
        self.resegment_pending = False

    def on_poses(self, batch: list[ScenarioEvent]) -> None:
        t = batch[0].t
        humans = [ev for ev in batch if ev.actor_class is ActorClass.HUMAN]
        if humans:
            centroids = [tuple(sum(c) / len(ev.joints) for c in zip(*ev.joints)) for ev in humans]
            assigned = associate_person_tracks(
                self.tracks, centroids, t, self.cfg.perception.gate,
                new_id=lambda: self.mem.register_actor(ActorClass.HUMAN, t))
            for ev, (iid, _) in zip(humans, assigned):
                self.hints[ev.actor] = iid
        for ev in batch:
            if ev.actor_class is ActorClass.ROBOT and ev.actor not in self.hints:
                self.hints[ev.actor] = self.mem.register_actor(ActorClass.ROBOT, t)
        for ev in batch:
            iid = self.hints[ev.actor]
            self.mem.update_actor_pose(iid, ev.joints, t)
            try:
                region = compute_crop_region(ev.joints, self.cfg.perception.intrinsics,
                                             self.cfg.perception.margin_frac)
            except BehindCamera:
                self.warn(t, f"pose of {ev.actor} does not project into the image; no crop")
                continue
            frame = self.frame or f"pose@{t:g}"
            try:
                self.mem.append_person_crop(iid, f"{frame}#{region.as_fragment()}", t)
            except OrderViolation as exc:
                self.warn(t, str(exc))

    def on_label(self, ev: ScenarioEvent) -> None:
        self.report.label_samples += 1
        iid = self.hints.get(ev.actor)
        if iid is None:
            self.warn(ev.t, f"label for {ev.actor} before any pose; ignored")
            return
        try:
            label = normalize_action_label(ev.label)
        except InvalidLabel as exc:
            self.warn(ev.t, str(exc))
            return
        if not self.cfg.reasoner.mode.uses_trigger:
            return
        sample = ActionLabelSample(iid, label, ev.t, tuple(self.mem.recent_crops(iid, 4)))
        trig = push_label(self.triggers, sample, self.cfg.debounce, self.cfg.reasoner.mode)
        if trig is not None:
            self.reason(trig)

    def live_actors(self) -> list[InstanceId]:
        live = []
        for actor in self.mem.actors():
            if not actor.crop_history:
                continue
            if actor.actor_class is ActorClass.HUMAN and actor.id not in self.tracks.tracks:
                continue
            live.append(actor.id)
        return live

    def reason(self, trig: TriggerEvent) -> None:
        self.report.triggers += 1
        self.report.cycles += 1
        started = time.perf_counter()
        entry = {"t": trig.t, "actor": render_id(trig.actor)}
        try:
            run_reasoning_cycle(trig, self.mem, self.cfg.reasoner, self.backend)
            self.report.completed += 1
        except GroundingError as exc:
            self.report.grounding_errors.append({**entry, "reason": exc.reason, "raw": exc.raw})
        except (BackendError, BackendUnavailable, IoError) as exc:
            self.report.backend_failures.append(
                {**entry, "error": type(exc).__name__, "message": str(exc)})
        finally:
            self.report.latencies.append(time.perf_counter() - started)

    # -- main loop ------------------------------------------------------
    def run(self) -> None:
        events = self.scn.events
        discrete = not self.cfg.reasoner.mode.uses_trigger
        ticks: list[float] = []
        if discrete and events:
            ticks = tick_times(events[0].t, events[-1].t, self.cfg.reasoner.sample_interval)
        tick_i = 0

        i = 0
        while i < len(events):
            ev = events[i]
            while tick_i < len(ticks) and ticks[tick_i] < ev.t:
                self.tick(ticks[tick_i])
                tick_i += 1
            if ev.type == "pose_sample":
                j = i
                while j < len(events) and events[j].type == "pose_sample" and events[j].t == ev.t:
                    j += 1
                self.on_poses(events[i:j])
                i = j
                continue
            if ev.type == "frame":
                self.frame = ev.path
            elif ev.type == "point_cloud":
                self.on_point_cloud(ev)
            elif ev.type == "resegment":
                self.resegment_pending = True
            elif ev.type == "action_label":
                self.on_label(ev)
            # oracle outcomes are read by the backend up front
            i += 1
        for t in ticks[tick_i:]:
            self.tick(t)

    def tick(self, t: float) -> None:
        for iid in self.live_actors():
            self.reason(TriggerEvent(iid, t))


def run_pipeline(scn: Scenario, cfg: RunConfig, backend: Optional[Backend] = None
                 ) -> tuple[MemoryStore, TripletSequence, RunReport]:
    """Replay ``scn`` under ``cfg``; returns memory, predicted sequence and run report.

    Backend failures are recorded per cycle and never abort the run.
    """
    run = _Run(scn, cfg, backend)
    try:
        run.run()
    finally:
        if isinstance(run.backend, VLMBackend) and backend is None:
            run.backend.close()
    pred = TripletSequence(tuple(run.mem.triplets()), scn.name,
                           scn.header.get("setting"), scn.header.get("scenario"))
    return run.mem, pred, run.report


def write_run_outputs(out_dir: str | Path, mem: MemoryStore, pred: TripletSequence,
                      report: RunReport) -> dict[str, Path]:
    """Write predictions, memory dump, deterministic report and timing into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "predictions": out / "predictions.jsonl",
        "memory": out / "memory.jsonl",
        "report": out / "report.json",
        "timing": out / "timing.json",
    }
    write_sequence(pred, paths["predictions"], config=report.config)
    persist(mem, paths["memory"])
    paths["report"].write_text(json.dumps(report.deterministic(), indent=2, sort_keys=True) + "\n")
    paths["timing"].write_text(json.dumps(report.timing(), indent=2, sort_keys=True) + "\n")
    return paths
