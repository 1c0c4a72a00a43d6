"""Synthetic tabletop scenes, walker trajectories and scenario fixtures.

Everything here is seeded and knows its own ground truth (blob memberships,
true identities, scripted triplets), which makes it usable as a test oracle
independent of the engine.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .perception import CameraIntrinsics

TABLE_Y = 0.35  # camera frame, y points down: the table is below the camera


def table_points(x_range=(-0.8, 0.8), z_range=(0.8, 1.4), y: float = TABLE_Y,
                 step: float = 0.04) -> np.ndarray:
    xs = np.arange(x_range[0], x_range[1] + 1e-9, step)
    zs = np.arange(z_range[0], z_range[1] + 1e-9, step)
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    return np.column_stack([gx.ravel(), np.full(gx.size, y), gz.ravel()])


def blob(rng: np.random.Generator, center: Sequence[float], n_side: int = 4,
         spacing: float = 0.015, jitter: float = 0.003) -> np.ndarray:
    """Jittered cubic grid; neighbouring points stay well inside a 0.03 m linkage radius."""
    offs = (np.arange(n_side) - (n_side - 1) / 2) * spacing
    g = np.stack(np.meshgrid(offs, offs, offs, indexing="ij"), -1).reshape(-1, 3)
    return np.asarray(center, dtype=float) + g + rng.uniform(-jitter, jitter, g.shape)


def object_center(x: float, z: float, n_side: int = 4, spacing: float = 0.015,
                  clearance: float = 0.02) -> tuple[float, float, float]:
    """Centre of a blob resting ``clearance`` above the table at (x, z)."""
    half = (n_side - 1) / 2 * spacing + 0.003
    return (x, TABLE_Y - clearance - half, z)


@dataclass
class TabletopScene:
    points: np.ndarray
    blobs: list[np.ndarray]  # indices into ``points`` per blob
    centers: list[tuple[float, float, float]]


def tabletop_scene(seed: int, k: int) -> TabletopScene:
    """Table plane plus ``k`` (1..6) separated blobs, shuffled."""
    if not 1 <= k <= 6:
        raise ValueError("k must lie in [1, 6]")
    rng = np.random.default_rng(seed)
    slots = [(x, z) for x in (-0.4, 0.0, 0.4) for z in (0.9, 1.3)]
    picked = rng.permutation(len(slots))[:k]
    table = table_points()
    parts, labels, centers = [table], [np.full(len(table), -1)], []
    for b, s in enumerate(picked):
        x, z = slots[s]
        c = object_center(x + rng.uniform(-0.03, 0.03), z + rng.uniform(-0.03, 0.03))
        pts = blob(rng, c)
        parts.append(pts)
        labels.append(np.full(len(pts), b))
        centers.append(c)
    points = np.concatenate(parts)
    lab = np.concatenate(labels)
    order = rng.permutation(len(points))
    points, lab = points[order], lab[order]
    return TabletopScene(points, [np.flatnonzero(lab == b) for b in range(k)], centers)


def crossing_walk(seed: int, steps: int = 40, step_len: float = 0.05,
                  lateral_gap: float = 0.3) -> tuple[np.ndarray, np.ndarray]:
    """Two people walking past each other in opposite directions.

    Returns arrays of shape (steps, 3) for walker A and walker B. The lateral
    offset keeps their distance above ``2 * step_len`` at all times.
    """
    rng = np.random.default_rng(seed)
    gap = lateral_gap + rng.uniform(0.0, 0.2)
    span = steps * step_len
    a0 = np.array([-span / 2, 0.0, 2.0])
    b0 = np.array([span / 2, 0.0, 2.0 + gap])
    a, b = [a0], [b0]
    for _ in range(steps - 1):
        # heading noise keeps each step shorter than step_len
        da = np.array([step_len * rng.uniform(0.6, 0.95), 0.0, step_len * rng.uniform(-0.2, 0.2)])
        db = np.array([-step_len * rng.uniform(0.6, 0.95), 0.0, step_len * rng.uniform(-0.2, 0.2)])
        a.append(a[-1] + da)
        b.append(b[-1] + db)
    return np.array(a), np.array(b)


def person_joints(center: Sequence[float]) -> list[list[float]]:
    """A coarse upper-body skeleton: head, shoulders, hands, hip."""
    x, y, z = center
    return [[x, y - 0.35, z], [x - 0.18, y - 0.2, z], [x + 0.18, y - 0.2, z],
            [x - 0.25, y + 0.1, z - 0.25], [x + 0.25, y + 0.1, z - 0.25], [x, y + 0.2, z]]


def robot_joints(center: Sequence[float]) -> list[list[float]]:
    x, y, z = center
    return [[x, y, z], [x + 0.04, y + 0.03, z], [x - 0.04, y + 0.03, z]]


# -- scenario fixtures --------------------------------------------------

@dataclass
class Step:
    """Actor ``hint`` switches to ``label`` at time ``t``; the scripted reasoner answer."""

    t: float
    hint: str
    label: str
    object: Optional[str] = None
    on: Optional[str] = None
    robot_interaction: bool = False


@dataclass
class Story:
    recording: str
    scenario: str
    setting: str
    objects: list[tuple[str, float, float]]  # (name, x, z), ids follow ascending x
    actors: dict[str, tuple[str, tuple[float, float, float]]]  # hint -> (class, position)
    steps: list[Step]
    duration: float
    cadence: float = 0.25
    resegment_at: Optional[float] = None
    moved: dict[str, tuple[float, float]] = field(default_factory=dict)


def _png(path: Path, intr: CameraIntrinsics, centers, colors) -> None:
    from PIL import Image, ImageDraw

    img = Image.new("RGB", (intr.width, intr.height), (205, 190, 160))
    draw = ImageDraw.Draw(img)
    for (x, y, z), col in zip(centers, colors):
        u, v = intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy
        draw.ellipse([u - 14, v - 14, u + 14, v + 14], fill=col)
    img.save(path, format="PNG", optimize=True)


def write_story(story: Story, out_dir: str | Path, seed: int = 0,
                intr: CameraIntrinsics = CameraIntrinsics()) -> dict[str, Path]:
    """Write ``<recording>.scn``, its ground truth and the referenced assets.

    The ground truth is derived from the storyline itself: each label change
    at ``t`` becomes stable one cadence later (debounce k=2), which is when
    the triplet is due.
    """
    out = Path(out_dir)
    assets = out / story.recording
    assets.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    xs = [x for _, x, _ in story.objects]
    if sorted(xs) != xs or len(set(xs)) != len(xs):
        raise ValueError("objects must be listed by strictly ascending x")
    ids = {name: f"object_{i + 1}" for i, (name, _, _) in enumerate(story.objects)}

    def cloud(moved: dict) -> np.ndarray:
        parts = [table_points()]
        for name, x, z in story.objects:
            x, z = moved.get(name, (x, z))
            parts.append(blob(rng, object_center(x, z)))
        return np.concatenate(parts)

    np.save(assets / "cloud_0.npy", cloud({}))
    palette = [(230, 200, 40), (200, 30, 30), (150, 20, 20), (240, 140, 20), (80, 80, 200),
               (230, 230, 230), (60, 160, 60), (120, 60, 160)]
    _png(assets / "frame.png", intr, [object_center(x, z) for _, x, z in story.objects], palette)
    if story.resegment_at is not None:
        np.save(assets / "cloud_1.npy", cloud(story.moved))

    rel = lambda p: f"{story.recording}/{p}"  # noqa: E731
    timeline: list[tuple[float, int, dict]] = []
    add = lambda t, prio, ev: timeline.append((t, prio, {"t": t, **ev}))  # noqa: E731
    add(0.0, 0, {"type": "frame", "path": rel("frame.png")})
    add(0.0, 1, {"type": "point_cloud", "path": rel("cloud_0.npy")})
    if story.resegment_at is not None:
        add(story.resegment_at, 1, {"type": "resegment"})
        add(story.resegment_at, 1, {"type": "point_cloud", "path": rel("cloud_1.npy")})

    hints = list(story.actors)
    steps_by_actor = {h: sorted((s for s in story.steps if s.hint == h), key=lambda s: s.t)
                      for h in hints}
    for s in story.steps:
        if round(s.t / story.cadence, 9) % 1:
            raise ValueError(f"step at t={s.t} is not on the label cadence")
        output = {"action": s.label, "robot_interaction": s.robot_interaction}
        if s.object:
            output["object"] = ids[s.object]
        if s.on:
            output["on"] = ids[s.on]
        add(s.t, 2, {"type": "oracle_outcome", "actor": s.hint, "output": output})

    n_ticks = int(round(story.duration / story.cadence))
    for k in range(1, n_ticks + 1):
        t = k * story.cadence
        for a, hint in enumerate(hints):
            cls, pos = story.actors[hint]
            sway = 0.02 * math.sin(t + a)
            centre = (pos[0] + sway, pos[1], pos[2])
            joints = robot_joints(centre) if cls == "robot" else person_joints(centre)
            add(t, 3, {"type": "pose_sample", "actor": hint, "actor_class": cls,
                       "joints": [[round(c, 4) for c in j] for j in joints]})
        for hint in hints:
            label = "idle"
            for s in steps_by_actor[hint]:
                if s.t <= t + 1e-9:
                    label = s.label
            add(t, 4, {"type": "action_label", "actor": hint, "label": label})

    timeline.sort(key=lambda e: (e[0], e[1]))
    header = {"format": "carma-scn/1", "recording": story.recording, "scenario": story.scenario,
              "setting": story.setting, "intrinsics": intr.to_dict(),
              "ground_truth": f"{story.recording}.gt.jsonl", "events": len(timeline),
              "objects": {ids[n]: n for n, _, _ in story.objects}}
    scn_path = out / f"{story.recording}.scn"
    with open(scn_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for _, _, ev in timeline:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")

    # ground truth: person ids in first-seen hint order, robot hands likewise
    person_ids, robot_ids = {}, {}
    for hint in hints:
        cls = story.actors[hint][0]
        table = robot_ids if cls == "robot" else person_ids
        table[hint] = f"{'robot_hand' if cls == 'robot' else 'person'}_{len(table) + 1}"
    actor_ids = {**person_ids, **robot_ids}
    gt = []
    for s in story.steps:
        gt.append((s.t + story.cadence, hints.index(s.hint), {
            "actor": actor_ids[s.hint], "action": s.label,
            "object": ids.get(s.object), "on": ids.get(s.on),
            "robot_interaction": s.robot_interaction, "t": s.t + story.cadence}))
    gt.sort(key=lambda g: (g[0], g[1]))
    gt_path = out / f"{story.recording}.gt.jsonl"
    with open(gt_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": "carma-seq/1", "recording": story.recording,
                             "scenario": story.scenario, "setting": story.setting},
                            sort_keys=True) + "\n")
        for _, _, tr in gt:
            fh.write(json.dumps(tr, sort_keys=True) + "\n")
    return {"scenario": scn_path, "ground_truth": gt_path}
