"""Rig evaluation: skeleton chamfer variants, tolerance-matched joint scores,
tree edit distance, and skinning comparison.

Joint matching uses a per-reference-joint tolerance of half the local shape
diameter: rays cast from the joint perpendicular to its incident bones
measure how thick the surrounding part is, so thin parts demand tighter
placement than thick ones.  The same tolerance drives the relabel cost in
the tree edit distance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ShapeError, SkeletonError
from .joints import _perp_directions, ray_mesh_first_hit
from .mesh import Mesh
from .skeleton import Skeleton
from .skinning import Pose, lbs_deform, sample_random_pose
from .voxel import point_segment_distance

B2B_SAMPLES = 32
INFLUENCE_THRESHOLD = 1e-4
FALLBACK_TOLERANCE = 0.05


@dataclass
class SkeletonReport:
    cd_j2j: float
    cd_j2b: float
    cd_b2b: float
    iou: float
    precision: float
    recall: float
    tree_edit_distance: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SkinReport:
    precision: float
    recall: float
    avg_l1: float
    avg_dist: float
    max_dist: float

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------- chamfers

_ZERO_SNAP = 1e-12  # projection arithmetic noise floor; identical rigs score 0


def _snap(x: float) -> float:
    return 0.0 if abs(x) < _ZERO_SNAP else float(x)


def _min_dist_to_segments(points: np.ndarray, segments: np.ndarray) -> np.ndarray:
    d = np.stack([point_segment_distance(points, a, b) for a, b in segments], axis=1)
    return d.min(axis=1)


def cd_j2j(pred: Skeleton, ref: Skeleton) -> float:
    """Halved symmetric chamfer between the joint sets."""
    if pred.n_joints == 0 or ref.n_joints == 0:
        raise SkeletonError("chamfer of an empty skeleton")
    d = np.linalg.norm(pred.joints[:, None] - ref.joints[None, :], axis=2)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean()) / 2.0


def cd_j2b(pred: Skeleton, ref: Skeleton) -> float:
    """Joints of each skeleton against the other's bone segments, halved."""
    ps, rs = pred.bone_segments(), ref.bone_segments()
    if len(ps) == 0 or len(rs) == 0:
        raise SkeletonError("CD-J2B needs bones on both skeletons")
    fwd = _min_dist_to_segments(pred.joints, rs).mean()
    bwd = _min_dist_to_segments(ref.joints, ps).mean()
    return _snap(float(fwd + bwd) / 2.0)


def cd_b2b(pred: Skeleton, ref: Skeleton, samples: int = B2B_SAMPLES) -> float:
    """Bones sampled densely against the other skeleton's segments, halved."""
    ps, rs = pred.bone_segments(), ref.bone_segments()
    if len(ps) == 0 or len(rs) == 0:
        raise SkeletonError("CD-B2B needs bones on both skeletons")
    t = (np.arange(samples) + 0.5) / samples

    def direction(from_segs, to_segs):
        pts = (from_segs[:, None, 0, :] * (1 - t[None, :, None])
               + from_segs[:, None, 1, :] * t[None, :, None]).reshape(-1, 3)
        return _min_dist_to_segments(pts, to_segs).mean()

    return _snap(float(direction(ps, rs) + direction(rs, ps)) / 2.0)


# --------------------------------------------------- tolerance + matching

def local_shape_diameter(mesh: Mesh, skeleton: Skeleton, joint: int,
                         n_directions: int = 14) -> float:
    """Mean joint-to-surface distance along rays perpendicular to the joint's
    incident bones.  NaN when every ray misses."""
    incident = []
    for p, c in skeleton.bones():
        if p == joint:
            incident.append(skeleton.joints[c] - skeleton.joints[joint])
        elif c == joint:
            incident.append(skeleton.joints[p] - skeleton.joints[joint])
    if not incident:
        return float("nan")
    dists = []
    for d in _perp_directions(incident, n_directions):
        hit = ray_mesh_first_hit(mesh, skeleton.joints[joint], d)
        if hit is not None:
            dists.append(float(np.linalg.norm(hit - skeleton.joints[joint])))
    return float(np.mean(dists)) if dists else float("nan")


def match_tolerances(mesh: Mesh, ref: Skeleton) -> np.ndarray:
    """Half the local shape diameter per reference joint; joints whose rays
    miss fall back to the mean of the others (or a fixed default)."""
    tol = np.array([local_shape_diameter(mesh, ref, j) for j in range(ref.n_joints)]) / 2.0
    bad = ~np.isfinite(tol)
    if bad.all():
        tol[:] = FALLBACK_TOLERANCE
    elif bad.any():
        tol[bad] = tol[~bad].mean()
    return tol


def hungarian_match(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost assignment on a (possibly rectangular) cost matrix."""
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def iou_precision_recall(pred: Skeleton, ref: Skeleton, mesh: Mesh,
                         tolerances: np.ndarray | None = None) -> tuple[float, float, float]:
    """Joint-set agreement under tolerance-gated maximal matching.

    A matched pair counts when its distance is at most the tolerance at the
    reference joint.  Unmatched joints on either side count against.
    """
    if tolerances is None:
        tolerances = match_tolerances(mesh, ref)
    cost = np.linalg.norm(pred.joints[:, None] - ref.joints[None, :], axis=2)
    matched = 0
    for i, j in hungarian_match(cost):
        if cost[i, j] <= tolerances[j]:
            matched += 1
    n_pred, n_ref = pred.n_joints, ref.n_joints
    iou = matched / (n_pred + n_ref - matched)
    return iou, matched / n_pred, matched / n_ref


# ----------------------------------------------------- tree edit distance

class _OrderedTree:
    """Postorder arrays for the Zhang-Shasha DP, built with children in a
    canonical order (subtree size, then depth, then joint position)."""

    def __init__(self, skeleton: Skeleton):
        self.positions = skeleton.joints
        kids = {j: list(skeleton.children(j)) for j in range(skeleton.n_joints)}

        sizes: dict[int, int] = {}
        depths: dict[int, int] = {}

        def measure(j):
            size, depth = 1, 1
            for c in kids[j]:
                measure(c)
                size += sizes[c]
                depth = max(depth, depths[c] + 1)
            sizes[j], depths[j] = size, depth

        measure(skeleton.root)
        for j in kids:
            kids[j].sort(key=lambda c: (sizes[c], depths[c], tuple(self.positions[c])))

        self.post: list[int] = []  # joint index per postorder slot
        self.lml: list[int] = []  # postorder slot of leftmost leaf

        def walk(j):
            first = None
            for c in kids[j]:
                sub_first = walk(c)
                if first is None:
                    first = sub_first
            self.post.append(j)
            slot = len(self.post) - 1
            self.lml.append(slot if first is None else first)
            return self.lml[slot]

        walk(skeleton.root)

    def keyroots(self) -> list[int]:
        seen = set()
        roots = []
        for slot in range(len(self.post) - 1, -1, -1):
            if self.lml[slot] not in seen:
                roots.append(slot)
                seen.add(self.lml[slot])
        return sorted(roots)


def tree_edit_distance(pred: Skeleton, ref: Skeleton,
                       tolerances: np.ndarray | float = 0.0) -> int:
    """Minimum insertions, deletions, and relabels turning pred into ref.

    Children are ordered canonically so the ordered-tree DP is deterministic;
    a relabel is free when the two joints sit within the tolerance at the
    reference joint, else costs 1.
    """
    t1 = _OrderedTree(pred)
    t2 = _OrderedTree(ref)
    tol = np.broadcast_to(np.asarray(tolerances, dtype=np.float64), (ref.n_joints,))

    def relabel(slot1: int, slot2: int) -> int:
        j1, j2 = t1.post[slot1], t2.post[slot2]
        d = np.linalg.norm(t1.positions[j1] - t2.positions[j2])
        return 0 if d <= tol[j2] else 1

    n1, n2 = len(t1.post), len(t2.post)
    td = np.zeros((n1, n2), dtype=np.int64)
    for i in t1.keyroots():
        for j in t2.keyroots():
            li, lj = t1.lml[i], t2.lml[j]
            rows = i - li + 2
            cols = j - lj + 2
            fd = np.zeros((rows, cols), dtype=np.int64)
            fd[1:, 0] = np.arange(1, rows)
            fd[0, 1:] = np.arange(1, cols)
            for x in range(1, rows):
                for y in range(1, cols):
                    si, sj = li + x - 1, lj + y - 1
                    if t1.lml[si] == li and t2.lml[sj] == lj:
                        fd[x, y] = min(
                            fd[x - 1, y] + 1,
                            fd[x, y - 1] + 1,
                            fd[x - 1, y - 1] + relabel(si, sj),
                        )
                        td[si, sj] = fd[x, y]
                    else:
                        px = t1.lml[si] - li
                        py = t2.lml[sj] - lj
                        fd[x, y] = min(
                            fd[x - 1, y] + 1,
                            fd[x, y - 1] + 1,
                            fd[px, py] + td[si, sj],
                        )
    return int(td[n1 - 1, n2 - 1])


# ------------------------------------------------------------ full reports

def skeleton_report(pred: Skeleton, ref: Skeleton, mesh: Mesh) -> SkeletonReport:
    tol = match_tolerances(mesh, ref)
    iou, precision, recall = iou_precision_recall(pred, ref, mesh, tol)
    return SkeletonReport(
        cd_j2j=cd_j2j(pred, ref),
        cd_j2b=cd_j2b(pred, ref),
        cd_b2b=cd_b2b(pred, ref),
        iou=iou,
        precision=precision,
        recall=recall,
        tree_edit_distance=tree_edit_distance(pred, ref, tol),
    )


def skin_report(pred_weights: np.ndarray, ref_weights: np.ndarray, skeleton: Skeleton,
                mesh: Mesh, seed: int = 0, n_poses: int = 10,
                threshold: float = INFLUENCE_THRESHOLD) -> SkinReport:
    """Compare two dense weight matrices bound to the same skeleton."""
    if pred_weights.shape != ref_weights.shape:
        raise ShapeError(
            f"weight shapes differ: {pred_weights.shape} vs {ref_weights.shape}"
        )
    if pred_weights.shape[1] != len(skeleton.bones()):
        raise ShapeError("weight columns do not match the skeleton's bone count")

    pred_inf = pred_weights > threshold
    ref_inf = ref_weights > threshold
    inter = (pred_inf & ref_inf).sum(axis=1).astype(np.float64)
    n_pred = pred_inf.sum(axis=1)
    n_ref = ref_inf.sum(axis=1)
    precision = np.where(n_pred > 0, inter / np.maximum(n_pred, 1), (n_ref == 0) * 1.0)
    recall = np.where(n_ref > 0, inter / np.maximum(n_ref, 1), (n_pred == 0) * 1.0)
    avg_l1 = float(np.abs(pred_weights - ref_weights).sum(axis=1).mean())

    gaps = []
    for i in range(n_poses):
        pose = sample_random_pose(skeleton, seed=seed + i)
        a = lbs_deform(mesh, skeleton, pred_weights, pose)
        b = lbs_deform(mesh, skeleton, ref_weights, pose)
        gaps.append(np.linalg.norm(a - b, axis=1))
    gaps = np.stack(gaps)
    return SkinReport(
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        avg_l1=avg_l1,
        avg_dist=float(gaps.mean()),
        max_dist=float(gaps.max()),
    )
