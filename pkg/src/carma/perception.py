"""Geometry kernels for object segmentation and person tracking.

Object candidates come from a tabletop point cloud: the support plane is
removed by seeded RANSAC, the rest is split by Euclidean single-linkage
clustering on a voxel hash grid. Person crops come from projecting 3D body
joints through a pinhole camera. Person identities are kept by greedy
nearest-neighbour association with a distance gate.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BehindCamera, DegenerateInput
from .model import InstanceId, Kind, Point3

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class CropRegion:
    x: int
    y: int
    w: int
    h: int

    def as_fragment(self) -> str:
        return f"{self.x},{self.y},{self.w},{self.h}"


@dataclass(frozen=True)
class PerceptionParams:
    """Tunable perception parameters (tabletop scale defaults)."""

    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    inlier_tol: float = 0.01
    ransac_iterations: int = 200
    seed: int = 0
    tolerance: float = 0.03
    min_points: int = 30
    max_points: int = 50000
    gate: float = 0.5
    track_timeout: float = 2.0
    margin_frac: float = 0.25
    object_margin_frac: float = 0.1


@dataclass(frozen=True)
class Cluster:
    centroid: Point3
    indices: tuple[int, ...]


@dataclass(frozen=True)
class ObjectCandidate:
    centroid: Point3
    indices: tuple[int, ...]  # into the input cloud, not the plane-free remainder
    region: CropRegion


def _as_cloud(cloud) -> np.ndarray:
    pts = np.asarray(cloud, dtype=float)
    if pts.size == 0:
        return pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"point cloud must have shape (n, 3), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("point cloud contains non-finite coordinates")
    return pts


# -- support plane ------------------------------------------------------

def _fit_plane_lsq(pts: np.ndarray) -> tuple[np.ndarray, float]:
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    normal = vt[-1]
    return normal, -float(normal @ centroid)


def remove_support_plane(cloud, inlier_tol: float = 0.01, iterations: int = 200,
                         seed: int = 0) -> tuple[tuple[float, float, float, float], np.ndarray, np.ndarray]:
    """Fit the dominant plane and drop it together with anything behind it.

    Returns ``(plane, remainder, remainder_indices)``. ``plane`` is
    ``(a, b, c, d)`` with unit normal pointing toward the camera, and the
    remainder holds points more than ``inlier_tol`` in front of the plane.
    """
    pts = _as_cloud(cloud)
    if len(pts) < 3:
        raise DegenerateInput(f"need at least 3 points to fit a plane, got {len(pts)}")
    spread = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if spread[1] <= 1e-12 * max(1.0, spread[0]):
        raise DegenerateInput("points are collinear; the plane is undetermined")

    rng = np.random.default_rng(seed)
    best_count, best = -1, None
    for _ in range(max(1, iterations)):
        a, b, c = pts[rng.choice(len(pts), 3, replace=False)]
        normal = np.cross(b - a, c - a)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal /= norm
        d = -float(normal @ a)
        count = int(np.count_nonzero(np.abs(pts @ normal + d) <= inlier_tol))
        if count > best_count:
            best_count, best = count, (normal, d)
    if best is None:
        raise DegenerateInput("no non-degenerate point triple found")

    normal, d = best
    inliers = np.abs(pts @ normal + d) <= inlier_tol
    if inliers.sum() >= 3:
        normal, d = _fit_plane_lsq(pts[inliers])

    signed = pts @ normal + d
    if abs(d) > 1e-9:
        if d < 0:  # camera (origin) must be on the positive side
            normal, d, signed = -normal, -d, -signed
    else:
        # camera lies on the plane; treat the side holding more off-plane points as the front
        if np.count_nonzero(signed < -inlier_tol) > np.count_nonzero(signed > inlier_tol):
            normal, d, signed = -normal, -d, -signed
    keep = np.flatnonzero(signed > inlier_tol)
    plane = (float(normal[0]), float(normal[1]), float(normal[2]), float(d))
    return plane, pts[keep], keep


# -- clustering ---------------------------------------------------------

class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb


def cluster_objects(cloud, tolerance: float = 0.03, min_points: int = 30,
                    max_points: int = 50000) -> list[Cluster]:
    """Euclidean single-linkage clustering.

    Two points share a cluster iff a chain of hops, each no longer than
    ``tolerance``, connects them. Clusters with a size outside
    ``[min_points, max_points]`` are dropped. Output is sorted by centroid
    (x, then y, then z).
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    pts = _as_cloud(cloud)
    n = len(pts)
    if n == 0:
        return []

    cells: dict[tuple[int, int, int], list[int]] = defaultdict(list)
    keys = np.floor(pts / tolerance).astype(np.int64)
    for i, key in enumerate(map(tuple, keys)):
        cells[key].append(i)

    uf = _UnionFind(n)
    tol2 = tolerance * tolerance
    offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
    for (kx, ky, kz), members in cells.items():
        here = np.asarray(members)
        for dx, dy, dz in offsets:
            other = cells.get((kx + dx, ky + dy, kz + dz))
            if other is None:
                continue
            # visit each unordered cell pair once
            if (dx, dy, dz) < (0, 0, 0):
                continue
            there = np.asarray(other)
            diff = pts[here][:, None, :] - pts[there][None, :, :]
            close = np.einsum("ijk,ijk->ij", diff, diff) <= tol2
            for a, b in zip(*np.nonzero(close)):
                uf.union(int(here[a]), int(there[b]))

    groups: dict[int, list[int]] = defaultdict(list)
    for i in range(n):
        groups[uf.find(i)].append(i)

    clusters = []
    for members in groups.values():
        if min_points <= len(members) <= max_points:
            c = pts[members].mean(axis=0)
            clusters.append(Cluster((float(c[0]), float(c[1]), float(c[2])), tuple(members)))
    clusters.sort(key=lambda cl: cl.centroid)
    return clusters


# -- projection ---------------------------------------------------------

def project_point(p: Sequence[float], intr: CameraIntrinsics) -> tuple[float, float]:
    x, y, z = (float(c) for c in p)
    if z <= 0:
        raise BehindCamera(f"point {p} is not in front of the camera")
    return intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy


def _region_from_pixels(us: Sequence[float], vs: Sequence[float], intr: CameraIntrinsics,
                        margin_frac: float) -> CropRegion:
    u0, u1, v0, v1 = min(us), max(us), min(vs), max(vs)
    mu, mv = margin_frac * (u1 - u0), margin_frac * (v1 - v0)
    x0 = min(max(math.floor(u0 - mu), 0), intr.width - 1)
    y0 = min(max(math.floor(v0 - mv), 0), intr.height - 1)
    x1 = min(max(math.ceil(u1 + mu), x0 + 1), intr.width)
    y1 = min(max(math.ceil(v1 + mv), y0 + 1), intr.height)
    return CropRegion(x0, y0, x1 - x0, y1 - y0)


def compute_crop_region(joints: Sequence[Point3], intr: CameraIntrinsics,
                        margin_frac: float = 0.25) -> CropRegion:
    """Bounding box of the projected joints grown by ``margin_frac`` per side, clamped to the image.

    Joints at or behind the camera plane are ignored.
    """
    pixels = [project_point(j, intr) for j in joints if float(j[2]) > 0]
    if not pixels:
        raise BehindCamera("no joint projects onto the image plane")
    us, vs = zip(*pixels)
    return _region_from_pixels(us, vs, intr, margin_frac)


def segment_workspace(cloud, params: PerceptionParams = PerceptionParams()) -> list[ObjectCandidate]:
    """Plane removal, clustering and per-cluster crop rectangle."""
    pts = _as_cloud(cloud)
    _, remainder, keep = remove_support_plane(pts, params.inlier_tol, params.ransac_iterations,
                                              params.seed)
    if len(remainder) == 0:
        return []
    candidates = []
    for cl in cluster_objects(remainder, params.tolerance, params.min_points, params.max_points):
        if cl.centroid[2] <= 0:
            logger.warning("dropping object candidate at %s: behind the camera", cl.centroid)
            continue
        members = remainder[list(cl.indices)]
        front = members[members[:, 2] > 0]
        us = params.intrinsics.fx * front[:, 0] / front[:, 2] + params.intrinsics.cx
        vs = params.intrinsics.fy * front[:, 1] / front[:, 2] + params.intrinsics.cy
        region = _region_from_pixels(us.tolist(), vs.tolist(), params.intrinsics,
                                     params.object_margin_frac)
        original = tuple(sorted(int(keep[i]) for i in cl.indices))
        candidates.append(ObjectCandidate(cl.centroid, original, region))
    return candidates


# -- person tracks ------------------------------------------------------

@dataclass
class Track:
    centroid: Point3
    last_seen: float


@dataclass
class TrackState:
    """Live person tracks keyed by id. Single writer."""

    tracks: dict[InstanceId, Track] = field(default_factory=dict)
    timeout: float = 2.0
    _counter: int = 0

    def fresh_id(self) -> InstanceId:
        self._counter += 1
        return InstanceId(Kind.PERSON, self._counter)


def associate_person_tracks(state: TrackState, detections: Sequence[Point3], t: float,
                            gate: float = 0.5,
                            new_id: Optional[Callable[[], InstanceId]] = None,
                            ) -> list[tuple[InstanceId, Point3]]:
    """Assign ids to detections by greedy nearest neighbour inside ``gate``.

    Candidate (track, detection) pairs are consumed in ascending
    (distance, track ordinal, detection index) order. A detection left
    without a track gets a fresh id from ``new_id`` (or the state's own
    counter). Tracks not seen for longer than ``state.timeout`` are retired
    first. ``state`` is updated in place; the result follows detection order.
    """
    if gate <= 0:
        raise ValueError("gate must be positive")
    for tid in [tid for tid, tr in state.tracks.items() if t - tr.last_seen > state.timeout]:
        del state.tracks[tid]

    dets = [tuple(float(c) for c in d) for d in detections]
    pairs = []
    for tid, tr in state.tracks.items():
        for j, d in enumerate(dets):
            dist = math.dist(tr.centroid, d)
            if dist <= gate:
                pairs.append((dist, tid.ordinal, j, tid))
    pairs.sort(key=lambda p: p[:3])

    assigned: dict[int, InstanceId] = {}
    used_tracks: set[InstanceId] = set()
    for _, _, j, tid in pairs:
        if j in assigned or tid in used_tracks:
            continue
        assigned[j] = tid
        used_tracks.add(tid)

    make = new_id or state.fresh_id
    out = []
    for j, d in enumerate(dets):
        tid = assigned.get(j)
        if tid is None:
            tid = make()
        state.tracks[tid] = Track(d, t)
        out.append((tid, d))
    return out
