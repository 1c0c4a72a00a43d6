"""Task success rate and per-role accuracy over triplet sequences.

TSR aligns predicted and ground-truth triplets with a longest common
subsequence under full-triplet equality (timestamps ignored) and divides the
match count by the ground-truth length. Predictions that match nothing are
reported as insertions instead of lowering TSR.

Role accuracy pairs the two sequences per actor by temporal index and
scores actions and (object, on) pairs separately; unpaired leftovers on
either side count as misses.
"""

from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Callable, Iterable, Optional, Sequence

from .errors import FormatError
from .model import ActionTriplet, InstanceId, triplet_equals

SEQ_FORMAT = "carma-seq/1"
SCENARIOS = ("sorting_fruits", "pouring", "handover")
SETTINGS = ("1P", "2P", "1P+R", "2P+R")


@dataclass(frozen=True)
class TripletSequence:
    triplets: tuple[ActionTriplet, ...] = ()
    recording: str = ""
    setting: Optional[str] = None
    scenario: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "triplets", tuple(self.triplets))
        times = [tr.t for tr in self.triplets]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("triplet sequence must be ordered by time")
        if self.setting is not None and self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.scenario is not None and self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")

    def __len__(self):
        return len(self.triplets)

    def __iter__(self):
        return iter(self.triplets)

    def __getitem__(self, i):
        return self.triplets[i]


def write_sequence(seq: TripletSequence, path: str | os.PathLike, **extra) -> None:
    header = {"format": SEQ_FORMAT, "recording": seq.recording, "scenario": seq.scenario,
              "setting": seq.setting, **extra}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for tr in seq.triplets:
            fh.write(json.dumps(tr.to_dict(), sort_keys=True) + "\n")


def read_sequence(path: str | os.PathLike) -> TripletSequence:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad header: {exc}", 1) from None
    if not isinstance(header, dict) or header.get("format") != SEQ_FORMAT:
        raise FormatError(f"{path}: expected a {SEQ_FORMAT} header", 1)
    triplets = []
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            triplets.append(ActionTriplet.from_dict(json.loads(line)))
        except Exception as exc:
            raise FormatError(f"{path}: bad triplet: {exc}", no) from None
    try:
        return TripletSequence(tuple(triplets), header.get("recording") or Path(path).stem,
                               header.get("setting"), header.get("scenario"))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# -- alignment ----------------------------------------------------------

def lcs_align(gt: Sequence, pred: Sequence,
              eq: Callable[[object, object], bool] = triplet_equals) -> list[tuple[int, int]]:
    """Maximum order-preserving matching; the lexicographically smallest one among ties."""
    gt, pred = list(gt), list(pred)
    n, m = len(gt), len(pred)
    match = [[eq(g, p) for p in pred] for g in gt]
    # suffix[i][j] = LCS length of gt[i:] and pred[j:]
    suffix = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, below = suffix[i], suffix[i + 1]
        for j in range(m - 1, -1, -1):
            if match[i][j]:
                row[j] = below[j + 1] + 1
            else:
                row[j] = max(below[j], row[j + 1])

    pairs = []
    i0, j0, need = 0, 0, suffix[0][0]
    while need:
        # smallest (i, j) from which the remaining matches are still reachable
        chosen = next((i, j) for i in range(i0, n) for j in range(j0, m)
                      if match[i][j] and suffix[i + 1][j + 1] == need - 1)
        pairs.append(chosen)
        i0, j0 = chosen[0] + 1, chosen[1] + 1
        need -= 1
    return pairs


@dataclass(frozen=True)
class TSRReport:
    tsr: float
    matched: int
    gt_len: int
    pred_len: int
    insertions: int
    pairs: tuple[tuple[int, int], ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {"tsr": self.tsr, "matched": self.matched, "gt_len": self.gt_len,
                "pred_len": self.pred_len, "insertions": self.insertions}


def compute_tsr(gt: Sequence[ActionTriplet], pred: Sequence[ActionTriplet]) -> TSRReport:
    pairs = lcs_align(gt, pred)
    matched, n, m = len(pairs), len(gt), len(pred)
    if n == 0:
        tsr = 1.0 if m == 0 else 0.0
    else:
        tsr = matched / n
    return TSRReport(tsr, matched, n, m, m - matched, tuple(pairs))


@dataclass(frozen=True)
class RoleAccuracyReport:
    action_acc: float
    object_acc: float
    pairs: int  # index-paired triplets
    total: int  # denominator, including unpaired leftovers

    def to_dict(self) -> dict:
        return {"action_acc": self.action_acc, "object_acc": self.object_acc,
                "pairs": self.pairs, "total": self.total}


def compute_role_accuracy(gt: Sequence[ActionTriplet],
                          pred: Sequence[ActionTriplet]) -> RoleAccuracyReport:
    by_actor_gt: dict[InstanceId, list[ActionTriplet]] = defaultdict(list)
    by_actor_pred: dict[InstanceId, list[ActionTriplet]] = defaultdict(list)
    for tr in gt:
        by_actor_gt[tr.actor].append(tr)
    for tr in pred:
        by_actor_pred[tr.actor].append(tr)

    pairs = total = action_ok = object_ok = 0
    for actor in set(by_actor_gt) | set(by_actor_pred):
        g, p = by_actor_gt.get(actor, []), by_actor_pred.get(actor, [])
        total += max(len(g), len(p))
        for a, b in zip(g, p):
            pairs += 1
            action_ok += a.action == b.action
            object_ok += (a.object, a.on) == (b.object, b.on)
    if total == 0:
        return RoleAccuracyReport(1.0, 1.0, 0, 0)
    return RoleAccuracyReport(action_ok / total, object_ok / total, pairs, total)


def evaluate(gt: TripletSequence, pred: TripletSequence) -> dict:
    """TSR and role accuracy in one report document."""
    return {
        "recording": gt.recording,
        "scenario": gt.scenario,
        "setting": gt.setting,
        "tsr": compute_tsr(gt, pred).to_dict(),
        "roles": compute_role_accuracy(gt, pred).to_dict(),
    }


# -- aggregate tables ---------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    recording: str
    scenario: str
    setting: str
    config: str
    tsr: float
    action_acc: float
    object_acc: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def report_table(results: Iterable[ResultRow]) -> dict:
    """Mean TSR per (scenario, setting, config) cell, per-config overall mean, role accuracies.

    The overall figure is the mean of a configuration's cell means. Cells
    without results are absent (``None``).
    """
    results = list(results)
    configs = sorted({r.config for r in results}, key=_config_order)
    columns = [(s, st) for s in SCENARIOS for st in SETTINGS
               if any(r.scenario == s and r.setting == st for r in results)]
    cells = defaultdict(list)
    roles = defaultdict(list)
    for r in results:
        cells[(r.config, r.scenario, r.setting)].append(r.tsr)
        roles[(r.config, r.scenario)].append((r.action_acc, r.object_acc))

    table = []
    for cfg in configs:
        row = {"config": cfg, "cells": {}, "roles": {}}
        means = []
        for scen, setting in columns:
            vals = cells.get((cfg, scen, setting))
            mean = fmean(vals) if vals else None
            row["cells"][f"{scen}/{setting}"] = mean
            if mean is not None:
                means.append(mean)
        row["overall"] = fmean(means) if means else None
        for scen in SCENARIOS:
            vals = roles.get((cfg, scen))
            row["roles"][scen] = None if not vals else {
                "actions": fmean(v[0] for v in vals), "objects": fmean(v[1] for v in vals)}
        table.append(row)
    return {
        "format": "carma-report/1",
        "columns": [f"{s}/{st}" for s, st in columns],
        "rows": table,
        "results": [r.to_dict() for r in results],
    }


_CONFIG_ORDER = ("discrete_prev", "trigger_prev", "trigger_only", "trigger_label_prev")


def _config_order(cfg: str):
    return (_CONFIG_ORDER.index(cfg), cfg) if cfg in _CONFIG_ORDER else (len(_CONFIG_ORDER), cfg)


def _fmt(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:.2f}"


def format_table(report: dict) -> str:
    """Aligned plain-text rendering of :func:`report_table` output (TSR, then role accuracy)."""
    cols = report["columns"]
    header = ["config"] + cols + ["all"]
    body = [[row["config"]] + [_fmt(row["cells"][c]) for c in cols] + [_fmt(row["overall"])]
            for row in report["rows"]]
    out = ["Task success rate", _align([header] + body), ""]

    role_header = ["config"]
    for scen in SCENARIOS:
        role_header += [f"{scen}/actions", f"{scen}/objects"]
    role_body = []
    for row in report["rows"]:
        line = [row["config"]]
        for scen in SCENARIOS:
            r = row["roles"][scen]
            line += [_fmt(None if r is None else r["actions"]), _fmt(None if r is None else r["objects"])]
        role_body.append(line)
    out += ["Role accuracy", _align([role_header] + role_body)]
    return "\n".join(out) + "\n"


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
