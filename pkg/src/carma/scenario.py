"""Replayable scenario files (``carma-scn/1``).

A scenario is a JSON header line followed by one JSON event per line, in
non-decreasing time order. Events at equal times are processed in file
order. Paths are relative to the scenario file. Actor references are
scenario-local hints such as ``@alice``; the tracker binds them to ids.

Event types::

    {"t": 0.0, "type": "frame", "path": "frames/f000.png"}
    {"t": 0.0, "type": "point_cloud", "path": "table.npy"}        # or "points": [x, y, z, ...]
    {"t": 0.5, "type": "pose_sample", "actor": "@alice", "joints": [[x, y, z], ...],
               "actor_class": "human"}
    {"t": 0.5, "type": "action_label", "actor": "@alice", "label": "pour"}
    {"t": 3.0, "type": "resegment"}
    {"t": 1.0, "type": "oracle_outcome", "actor": "@alice",
               "output": {"action": "pour", "object": "object_2", "robot_interaction": false}}
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import FormatError, IoError
from .model import ActorClass
from .perception import CameraIntrinsics
from .reasoner import ReasonerOutput

SCN_FORMAT = "carma-scn/1"
EVENT_TYPES = ("frame", "point_cloud", "pose_sample", "action_label", "resegment", "oracle_outcome")


@dataclass(frozen=True)
class ScenarioEvent:
    t: float
    type: str
    line: int
    actor: Optional[str] = None
    path: Optional[str] = None
    points: Optional[tuple[float, ...]] = None
    joints: Optional[tuple[tuple[float, float, float], ...]] = None
    actor_class: ActorClass = ActorClass.HUMAN
    label: Optional[str] = None
    output: Optional[ReasonerOutput] = None


@dataclass
class Scenario:
    path: Path
    header: dict[str, Any]
    events: list[ScenarioEvent] = field(default_factory=list)

    @property
    def base(self) -> Path:
        return self.path.parent

    @property
    def intrinsics(self) -> CameraIntrinsics:
        d = self.header.get("intrinsics")
        return CameraIntrinsics.from_dict(d) if d else CameraIntrinsics()

    @property
    def name(self) -> str:
        return self.header.get("recording") or self.path.stem

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base / p

    def load_points(self, ev: ScenarioEvent) -> np.ndarray:
        if ev.points is not None:
            return np.asarray(ev.points, dtype=float).reshape(-1, 3)
        path = self.resolve(ev.path)
        try:
            if path.suffix == ".npy":
                pts = np.load(path)
            else:
                pts = np.loadtxt(path, ndmin=2)
        except (OSError, ValueError) as exc:
            raise IoError(f"cannot read point cloud {path}: {exc}", str(path)) from None
        return np.asarray(pts, dtype=float).reshape(-1, 3)

    def ground_truth_path(self) -> Optional[Path]:
        gt = self.header.get("ground_truth")
        return None if gt is None else self.resolve(gt)


def _require(d: dict, key: str, line: int, kind=None):
    if key not in d:
        raise FormatError(f"event is missing {key!r}", line)
    value = d[key]
    if kind is not None and not isinstance(value, kind):
        raise FormatError(f"field {key!r} has the wrong type", line)
    return value


def _hint(d: dict, line: int) -> str:
    hint = _require(d, "actor", line, str)
    if not hint.startswith("@") or len(hint) < 2:
        raise FormatError(f"actor hint {hint!r} must look like '@name'", line)
    return hint


def _parse_event(d: Any, line: int) -> ScenarioEvent:
    if not isinstance(d, dict):
        raise FormatError("event must be a JSON object", line)
    t = _require(d, "t", line, (int, float))
    if isinstance(t, bool) or not math.isfinite(t):
        raise FormatError("event time must be a finite number", line)
    typ = _require(d, "type", line, str)
    t = float(t)
    if typ == "frame":
        return ScenarioEvent(t, typ, line, path=_require(d, "path", line, str))
    if typ == "point_cloud":
        if "points" in d:
            pts = d["points"]
            if not isinstance(pts, list) or len(pts) % 3:
                raise FormatError("inline points must be a flat list of x, y, z triples", line)
            try:
                flat = tuple(float(v) for v in pts)
            except (TypeError, ValueError):
                raise FormatError("inline points must be numbers", line) from None
            return ScenarioEvent(t, typ, line, points=flat)
        return ScenarioEvent(t, typ, line, path=_require(d, "path", line, str))
    if typ == "pose_sample":
        joints = _require(d, "joints", line, list)
        try:
            js = tuple(tuple(float(c) for c in j) for j in joints)
        except (TypeError, ValueError):
            raise FormatError("joints must be lists of numbers", line) from None
        if not js or any(len(j) != 3 or not all(map(math.isfinite, j)) for j in js):
            raise FormatError("joints must be a non-empty list of finite 3D points", line)
        try:
            cls = ActorClass(d.get("actor_class", "human"))
        except ValueError:
            raise FormatError(f"unknown actor_class {d.get('actor_class')!r}", line) from None
        return ScenarioEvent(t, typ, line, actor=_hint(d, line), joints=js, actor_class=cls)
    if typ == "action_label":
        label = _require(d, "label", line, str)
        if not label.strip():
            raise FormatError("empty action label", line)
        return ScenarioEvent(t, typ, line, actor=_hint(d, line), label=label)
    if typ == "resegment":
        return ScenarioEvent(t, typ, line)
    if typ == "oracle_outcome":
        out = _require(d, "output", line, dict)
        try:
            output = ReasonerOutput(
                action=out["action"], object=out.get("object"), on=out.get("on"),
                robot_interaction=bool(out.get("robot_interaction", False)))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad oracle output: {exc}", line) from None
        return ScenarioEvent(t, typ, line, actor=_hint(d, line), output=output)
    raise FormatError(f"unknown event type {typ!r}", line)


def load_scenario(path: str | os.PathLike, check_files: bool = True) -> Scenario:
    """Parse and validate a scenario file. Raises ``FormatError`` or ``IoError``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read scenario {path}: {exc}", str(path)) from None
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"missing {SCN_FORMAT} header", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise FormatError(f"missing {SCN_FORMAT} header", 1) from None
    if not isinstance(header, dict) or header.get("format") != SCN_FORMAT:
        raise FormatError(f"missing {SCN_FORMAT} header", 1)
    if header.get("intrinsics") is not None:
        try:
            CameraIntrinsics.from_dict(header["intrinsics"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad intrinsics: {exc}", 1) from None

    scn = Scenario(path, header)
    last_t = -math.inf
    for no, raw in enumerate(lines[1:], start=2):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        try:
            d = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", no) from None
        ev = _parse_event(d, no)
        if ev.t < last_t:
            raise FormatError(f"event at t={ev.t} is out of order (previous t={last_t})", no)
        last_t = ev.t
        scn.events.append(ev)

    if check_files:
        for ev in scn.events:
            if ev.path is not None and not scn.resolve(ev.path).is_file():
                raise IoError(f"line {ev.line}: referenced file {ev.path} does not exist",
                              str(scn.resolve(ev.path)))
    return scn
