"""Joint prediction: vertex displacement, mesh attention, attention-weighted
mean-shift clustering, mode extraction, and this stage's training loop.

Two backbone networks displace mesh vertices toward nearby joint locations
and score each vertex's usefulness for localization.  The displaced cloud is
clustered by mean shift under a quadratic compact-support kernel whose
bandwidth is itself a trainable parameter; cluster modes become joints.
Training differentiates through a fixed number of unrolled shift steps, so
the chamfer losses reach the displacement net, the attention net, and the
bandwidth together.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ShapeError
from .gmedge import (
    EdgeArrays,
    attention_spec,
    displacement_spec,
    edge_arrays,
    gmedgenet_forward,
    init_gmedgenet,
)
from .mesh import Mesh, SymmetryPlane, VertexGraph, reflect, sample_edge_dropout
from .params import ParamStore
from .skeleton import Skeleton

logger = logging.getLogger(__name__)

BANDWIDTH_MIN = 0.01
BANDWIDTH_MAX = 0.1
DEFAULT_BANDWIDTH = 0.057
MASK_RAY_DIRECTIONS = 14
_TINY_WEIGHT = 1e-12


@dataclass
class DisplacedCloud:
    points: np.ndarray  # (N, 3)
    attention: np.ndarray  # (N,) in [0, 1]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.attention = np.asarray(self.attention, dtype=np.float64).reshape(-1)
        if len(self.points) != len(self.attention):
            raise ShapeError("point and attention counts differ")


@dataclass
class JointSet:
    positions: np.ndarray  # (J, 3)
    densities: np.ndarray  # (J,)
    assignments: np.ndarray  # (N,) mode index per collapsed point


def init_joint_params(store: ParamStore):
    """Displacement and attention networks plus the log-bandwidth scalar.

    Output layers start at zero: an untrained displacement head leaves
    vertices in place and an untrained attention head scores 0.5 everywhere.
    """
    init_gmedgenet(store, "displace", displacement_spec())
    init_gmedgenet(store, "attn", attention_spec())
    store.add("bandwidth.log_h", np.array(np.log(DEFAULT_BANDWIDTH)))


def forward_displaced_cloud(tensors: dict[str, Tensor], tape: Tape, vertices: np.ndarray,
                            edges: EdgeArrays) -> tuple[Tensor, Tensor]:
    """Tape-recorded (q, a): q = v + displacement, a = attention in [0, 1]."""
    x0 = tape.leaf(vertices)
    disp, _ = gmedgenet_forward(tensors, "displace", displacement_spec(), x0, edges)
    q = ad.add(x0, disp)
    attn, _ = gmedgenet_forward(tensors, "attn", attention_spec(), x0, edges)
    a = ad.reshape(attn, (len(vertices),))
    return q, a


def predict_displaced_cloud(store: ParamStore, mesh: Mesh, graph: VertexGraph) -> DisplacedCloud:
    """Inference-time displaced cloud for a mesh."""
    tape = Tape()
    tensors = store.inject(tape, store.names("displace.") + store.names("attn."))
    q, a = forward_displaced_cloud(tensors, tape, mesh.vertices, edge_arrays(graph))
    return DisplacedCloud(q.values, a.values)


def symmetrize_cloud(cloud: DisplacedCloud, plane: SymmetryPlane) -> DisplacedCloud:
    """Append the mirror image of the cloud; attention values ride along."""
    pts = np.concatenate([cloud.points, reflect(cloud.points, plane)])
    att = np.concatenate([cloud.attention, cloud.attention])
    return DisplacedCloud(pts, att)


# ------------------------------------------------------------- mean shift

def epanechnikov(sq_dist: np.ndarray, h: float) -> np.ndarray:
    """Quadratic compact-support kernel max(1 - d^2/h^2, 0)."""
    return np.maximum(1.0 - sq_dist / (h * h), 0.0)


def _shift_targets(q: np.ndarray, a: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Weighted window means and window weights for every point."""
    sq = np.maximum(
        (q * q).sum(axis=1)[:, None] + (q * q).sum(axis=1)[None, :] - 2.0 * (q @ q.T), 0.0
    )
    k = epanechnikov(sq, h)
    w = k * a[None, :]
    denom = w.sum(axis=1)
    numer = w @ q
    return numer, denom


def mean_shift_step_numpy(q: np.ndarray, a: np.ndarray, h: float) -> np.ndarray:
    numer, denom = _shift_targets(q, a, h)
    out = q.copy()
    moved = denom > _TINY_WEIGHT
    out[moved] = numer[moved] / denom[moved, None]
    return out


def _mean_shift_step_sparse(q: np.ndarray, a: np.ndarray, h: float) -> np.ndarray:
    """Same update as the dense step, but only over point pairs within the
    kernel support (the kernel is zero beyond h, so the result is identical
    up to summation order).  Keeps converge-mode clustering fast on large
    clouds."""
    from scipy.spatial import cKDTree

    n = len(q)
    pairs = cKDTree(q).query_pairs(h, output_type="ndarray")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
    d2 = ((q[rows] - q[cols]) ** 2).sum(axis=1)
    w = np.maximum(1.0 - d2 / (h * h), 0.0) * a[cols]
    denom = np.bincount(rows, weights=w, minlength=n)
    out = q.copy()
    moved = denom > _TINY_WEIGHT
    numer = np.stack([np.bincount(rows, weights=w * q[cols, ax], minlength=n)
                      for ax in range(3)], axis=1)
    out[moved] = numer[moved] / denom[moved, None]
    return out


def _support_pairs(q: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Directed point pairs (v, u) within kernel support, self-pairs included."""
    from scipy.spatial import cKDTree

    n = len(q)
    pairs = cKDTree(q).query_pairs(h, output_type="ndarray")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
    return rows, cols


def mean_shift_step(q: Tensor, a: Tensor, h: Tensor) -> Tensor:
    """One differentiable shift of every point to its window's weighted mean.

    Points whose window weight is ~zero stay fixed.  A single fused op keeps
    the pairwise kernel off the tape entirely: forward and backward run over
    the sparse set of point pairs inside the compact kernel support, routing
    gradients to the points, the attention, and the bandwidth.
    """
    tape = q.tape
    qv, av = q.values, a.values
    hv = float(h.values)
    n = len(qv)
    rows, cols = _support_pairs(qv, hv)
    sq_e = ((qv[rows] - qv[cols]) ** 2).sum(axis=1)
    k_e = np.maximum(1.0 - sq_e / (hv * hv), 0.0)
    w_e = k_e * av[cols]
    denom = np.bincount(rows, weights=w_e, minlength=n)
    numer = np.stack([np.bincount(rows, weights=w_e * qv[cols, ax], minlength=n)
                      for ax in range(3)], axis=1)
    moved = denom > _TINY_WEIGHT
    out = qv.copy()
    out[moved] = numer[moved] / denom[moved, None]

    def bw(g):
        dq = np.zeros_like(qv)
        da = np.zeros_like(av)
        dh = 0.0
        dq[~moved] = g[~moved]
        if moved.any():
            gm = g.copy()
            gm[~moved] = 0.0
            safe = np.where(moved, denom, 1.0)
            dnumer = gm / safe[:, None]  # (n, 3)
            ddenom = -(gm * out).sum(axis=1) / safe  # (n,)
            # per pair e=(v,u): dL/dw_e = dnumer_v . q_u + ddenom_v
            dw_e = (dnumer[rows] * qv[cols]).sum(axis=1) + ddenom[rows]
            # direct dependence of numer_v on q_u
            for ax in range(3):
                dq[:, ax] += np.bincount(cols, weights=w_e * dnumer[rows, ax], minlength=n)
            da += np.bincount(cols, weights=k_e * dw_e, minlength=n)
            dk_e = np.where(k_e > 0.0, dw_e * av[cols], 0.0)
            dh += float((dk_e * sq_e).sum()) * 2.0 / hv**3
            dsq_e = -dk_e / (hv * hv)
            diff = qv[cols] - qv[rows]  # d(sq_e)/dq_u = 2 diff, /dq_v = -2 diff
            contrib = 2.0 * dsq_e[:, None] * diff
            for ax in range(3):
                dq[:, ax] += np.bincount(cols, weights=contrib[:, ax], minlength=n)
                dq[:, ax] -= np.bincount(rows, weights=contrib[:, ax], minlength=n)
        return dq, da, np.asarray(dh)

    return tape._emit("mean_shift_step", out, (q, a, h), bw)


def mean_shift(points: np.ndarray, attention: np.ndarray, h: float,
               mode: str = "converge", eps: float = 1e-3, steps: int = 10,
               max_iters: int = 1000) -> np.ndarray:
    """Run the clustering iteration.

    mode="train": exactly `steps` iterations.  mode="converge": iterate until
    the largest single shift drops below eps.
    """
    if h <= 0:
        raise ShapeError(f"bandwidth must be positive, got {h}")
    q = np.asarray(points, dtype=np.float64).copy()
    a = np.asarray(attention, dtype=np.float64)
    if mode == "train":
        if steps < 1:
            raise ShapeError("train mode needs at least one step")
        for _ in range(steps):
            q = mean_shift_step_numpy(q, a, h)
        return q
    if mode != "converge":
        raise ShapeError(f"unknown mean-shift mode {mode!r}")
    if eps <= 0:
        raise ShapeError("eps must be positive")
    step = _mean_shift_step_sparse if len(q) > 256 else mean_shift_step_numpy
    for _ in range(max_iters):
        nxt = step(q, a, h)
        delta = np.linalg.norm(nxt - q, axis=1).max() if len(q) else 0.0
        q = nxt
        if delta < eps:
            break
    return q


def extract_modes(collapsed: np.ndarray, attention: np.ndarray, h: float) -> JointSet:
    """Greedy density-ranked suppression of the collapsed points.

    The densest remaining point claims every point within the bandwidth;
    each emitted joint is the attention-weighted mean of its members.
    Equal densities resolve to the lower point index.
    """
    q = np.asarray(collapsed, dtype=np.float64).reshape(-1, 3)
    a = np.asarray(attention, dtype=np.float64).reshape(-1)
    if a.sum() <= _TINY_WEIGHT:
        logger.warning("all attention weights are zero; falling back to uniform attention")
        a = np.ones_like(a)
    sq = np.maximum(
        (q * q).sum(axis=1)[:, None] + (q * q).sum(axis=1)[None, :] - 2.0 * (q @ q.T), 0.0
    )
    density = epanechnikov(sq, h) @ a
    order = np.argsort(-density, kind="stable")

    alive = np.ones(len(q), dtype=bool)
    assignments = np.full(len(q), -1, dtype=np.int64)
    positions, densities = [], []
    h2 = h * h
    for v in order:
        if not alive[v]:
            continue
        members = alive & (sq[v] <= h2)
        wsum = a[members].sum()
        if wsum > _TINY_WEIGHT:
            pos = (a[members, None] * q[members]).sum(axis=0) / wsum
        else:
            pos = q[members].mean(axis=0)
        assignments[members] = len(positions)
        positions.append(pos)
        densities.append(density[v])
        alive[members] = False
    return JointSet(np.array(positions), np.array(densities), assignments)


# ---------------------------------------------------------------- chamfer

def chamfer_symmetric(A: np.ndarray, B: np.ndarray) -> float:
    """Mean nearest-neighbor distance from A to B plus the reverse."""
    A = np.asarray(A, dtype=np.float64).reshape(-1, 3)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 3)
    if len(A) == 0 or len(B) == 0:
        raise ShapeError("chamfer distance of an empty set")
    d = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def chamfer_loss(pts: Tensor, ref: np.ndarray, row_clip: float | None = None) -> Tensor:
    """Differentiable symmetric chamfer distance to a fixed reference set.

    row_clip, when set, caps each point's backward contribution at
    row_clip / len(pts).  The loss value is untouched; only the descent
    direction changes.  The reference-to-point term concentrates its whole
    1/|ref| mass on single points (hundreds of times the per-point weight of
    the forward term), and those spikes churn shared network weights badly
    enough to stall desk-scale training.  Leave it None for exact gradients.
    """
    ref = np.asarray(ref, dtype=np.float64).reshape(-1, 3)
    pv = pts.values
    if len(pv) == 0 or len(ref) == 0:
        raise ShapeError("chamfer distance of an empty set")
    diff = pv[:, None, :] - ref[None, :, :]
    d = np.linalg.norm(diff, axis=2)
    nn_a = d.argmin(axis=1)
    nn_b = d.argmin(axis=0)
    da = d[np.arange(len(pv)), nn_a]
    db = d[nn_b, np.arange(len(ref))]
    value = np.asarray(da.mean() + db.mean())
    n, m = len(pv), len(ref)

    def bw(g):
        gs = float(g)
        dp = np.zeros_like(pv)
        safe_a = da > 1e-12
        rows = np.flatnonzero(safe_a)
        dp[rows] += gs * (pv[rows] - ref[nn_a[rows]]) / (da[rows, None] * n)
        safe_b = db > 1e-12
        cols = np.flatnonzero(safe_b)
        np.add.at(dp, nn_b[cols], gs * (pv[nn_b[cols]] - ref[cols]) / (db[cols, None] * m))
        if row_clip is not None:
            cap = row_clip / n
            norms = np.linalg.norm(dp, axis=1, keepdims=True)
            scale = np.minimum(1.0, cap / np.maximum(norms, 1e-300))
            dp *= scale
        return (dp,)

    return pts.tape._emit("chamfer", value, (pts,), bw)


def binary_cross_entropy(a: Tensor, targets: np.ndarray) -> Tensor:
    """Mean BCE between probabilities and {0,1} targets, clamped for safety."""
    y = np.asarray(targets, dtype=np.float64).reshape(a.values.shape)
    p = np.clip(a.values, 1e-12, 1.0 - 1e-12)
    value = np.asarray(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())
    n = p.size

    def bw(g):
        return (float(g) * (p - y) / (p * (1 - p)) / n,)

    return a.tape._emit("bce", value, (a,), bw)


# --------------------------------------------------------- attention mask

def _perp_directions(bone_dirs: list[np.ndarray], total: int) -> np.ndarray:
    """`total` unit rays spread across the planes perpendicular to each bone."""
    dirs = []
    per = max(1, int(np.ceil(total / max(len(bone_dirs), 1))))
    for d in bone_dirs:
        d = d / np.linalg.norm(d)
        ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(d, ref)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(d, e1)
        for k in range(per):
            ang = 2 * np.pi * k / per
            dirs.append(np.cos(ang) * e1 + np.sin(ang) * e2)
    return np.array(dirs[:total])


def ray_mesh_first_hit(mesh: Mesh, origin: np.ndarray, direction: np.ndarray) -> np.ndarray | None:
    """First intersection point of a ray with the mesh, or None."""
    v = mesh.vertices
    tri = mesh.triangles
    a, b, c = v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
    e1 = b - a
    e2 = c - a
    p = np.cross(direction[None, :], e2)
    det = (e1 * p).sum(axis=1)
    ok = np.abs(det) > 1e-12
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin[None, :] - a
    u = (s * p).sum(axis=1) * inv
    qv = np.cross(s, e1)
    w = (direction[None, :] * qv).sum(axis=1) * inv
    t = (e2 * qv).sum(axis=1) * inv
    hit = ok & (u >= -1e-12) & (w >= -1e-12) & (u + w <= 1 + 1e-12) & (t > 1e-9)
    if not hit.any():
        return None
    tmin = t[hit].min()
    return origin + tmin * direction


def build_attention_mask(mesh: Mesh, skeleton: Skeleton,
                         n_directions: int = MASK_RAY_DIRECTIONS) -> np.ndarray:
    """Binary per-vertex mask of the surface points that pin down each joint.

    For every joint, rays fan out perpendicular to its incident bones; the
    mesh vertex nearest each first hit is marked.  Joints whose rays all miss
    contribute nothing (warned).
    """
    mask = np.zeros(mesh.n_vertices, dtype=bool)
    bones = skeleton.bones()
    for j in range(skeleton.n_joints):
        incident = []
        for p, c in bones:
            if p == j:
                incident.append(skeleton.joints[c] - skeleton.joints[j])
            elif c == j:
                incident.append(skeleton.joints[p] - skeleton.joints[j])
        if not incident:
            continue
        marked_any = False
        for d in _perp_directions(incident, n_directions):
            hit = ray_mesh_first_hit(mesh, skeleton.joints[j], d)
            if hit is None:
                continue
            mask[int(np.argmin(np.linalg.norm(mesh.vertices - hit, axis=1)))] = True
            marked_any = True
        if not marked_any:
            logger.warning("joint %d: every mask ray missed the mesh", j)
    return mask


# ---------------------------------------------------------------- training

@dataclass
class JointTrainItem:
    vertices: np.ndarray
    graph: VertexGraph
    ref_joints: np.ndarray
    mask: np.ndarray


def joints_from_cloud(cloud: DisplacedCloud, h: float, plane: SymmetryPlane | None,
                      ms_eps: float = 1e-3) -> JointSet:
    """Inference clustering: optional symmetrization, converge, extract."""
    work = symmetrize_cloud(cloud, plane) if plane is not None else cloud
    collapsed = mean_shift(work.points, work.attention, h, mode="converge", eps=ms_eps)
    return extract_modes(collapsed, work.attention, h)


def train_joint_stage(items: list[JointTrainItem], store: ParamStore, *,
                      attn_epochs: int = 50, attn_lr: float = 1e-4,
                      steps: int = 2000, lr: float = 1e-6, batch_size: int = 2,
                      unroll: int = 10, max_geo_edges: int = 15, seed: int = 0,
                      eval_every: int = 50, target_cd: float | None = None,
                      checkpoint_path=None, log_every: int = 25,
                      attn_lr_scale: float = 1.0, bandwidth_lr_scale: float = 1.0,
                      row_clip: float | None = 4.0, cosine_decay: bool = False) -> dict:
    """Two-phase training.

    Phase 1 fits the attention network alone against the ray masks.  Phase 2
    trains displacement, attention, and bandwidth jointly through `unroll`
    differentiable shift steps, with the cluster chamfer loss plus the
    displaced-point chamfer loss.  The attention and bandwidth rates can be
    scaled down relative to the displacement rate: aggressive shared rates
    let the cluster loss zero out the pretrained attention, which freezes
    clustering.  Divergence saves a checkpoint of the last finite parameters
    before re-raising.
    """
    from .errors import NonFiniteError

    rng = np.random.default_rng(seed)
    attn_names = store.names("attn.")
    displace_names = store.names("displace.")
    phase2_names = displace_names + attn_names + ["bandwidth.log_h"]
    history = {"phase1_loss": [], "phase2_loss": [], "cd_j2j": []}

    def batches(epoch_rng):
        idx = epoch_rng.permutation(len(items))
        for s in range(0, len(idx), batch_size):
            yield [items[i] for i in idx[s:s + batch_size]]

    def dropped_edges(item, sd):
        return edge_arrays(sample_edge_dropout(item.graph, max_geo_edges, seed=sd))

    try:
        for epoch in range(attn_epochs):
            for batch in batches(rng):
                tape = Tape()
                tensors = store.inject(tape, attn_names)
                losses = []
                for item in batch:
                    edges = dropped_edges(item, int(rng.integers(2**31)))
                    x0 = tape.leaf(item.vertices)
                    attn, _ = gmedgenet_forward(tensors, "attn", attention_spec(), x0, edges)
                    a = ad.reshape(attn, (len(item.vertices),))
                    losses.append(binary_cross_entropy(a, item.mask.astype(np.float64)))
                total = losses[0]
                for l in losses[1:]:
                    total = ad.add(total, l)
                total = ad.scale(total, 1.0 / len(losses))
                grads = store.collect_grads(tape, tensors, tape.backward(total))
                store.adam_step(grads, lr=attn_lr, names=attn_names)
                history["phase1_loss"].append(float(total.values))

        step = 0
        while step < steps:
            for batch in batches(rng):
                if step >= steps:
                    break
                tape = Tape()
                tensors = store.inject(tape, phase2_names)
                h = ad.exp(tensors["bandwidth.log_h"])
                losses = []
                for item in batch:
                    edges = dropped_edges(item, int(rng.integers(2**31)))
                    q, a = forward_displaced_cloud(tensors, tape, item.vertices, edges)
                    collapsed = q
                    for _ in range(unroll):
                        collapsed = mean_shift_step(collapsed, a, h)
                    l_cluster = chamfer_loss(collapsed, item.ref_joints, row_clip=row_clip)
                    l_vertex = chamfer_loss(q, item.ref_joints, row_clip=row_clip)
                    losses.append(ad.add(l_cluster, l_vertex))
                total = losses[0]
                for l in losses[1:]:
                    total = ad.add(total, l)
                total = ad.scale(total, 1.0 / len(losses))
                grads = store.collect_grads(tape, tensors, tape.backward(total))
                step_lr = lr
                if cosine_decay:
                    step_lr = lr * 0.5 * (1 + np.cos(np.pi * min(step / steps, 1.0))) + lr * 0.02
                store.adam_step(grads, lr=step_lr, names=displace_names)
                store.adam_step(grads, lr=step_lr * attn_lr_scale, names=attn_names)
                store.adam_step(grads, lr=step_lr * bandwidth_lr_scale,
                                names=["bandwidth.log_h"])
                history["phase2_loss"].append(float(total.values))
                step += 1
                if log_every and step % log_every == 0:
                    logger.info("joint stage step %d: loss %.5f, h %.4f", step,
                                float(total.values), float(np.exp(store.params["bandwidth.log_h"])))
                if eval_every and step % eval_every == 0:
                    cd = evaluate_joint_stage(items, store)
                    history["cd_j2j"].append((step, cd))
                    logger.info("joint stage step %d: train CD-J2J %.4f", step, cd)
                    if target_cd is not None and cd < target_cd:
                        return history
    except NonFiniteError:
        if checkpoint_path is not None:
            store.save(checkpoint_path)
            logger.error("joint training diverged; checkpoint written to %s", checkpoint_path)
        raise
    return history


def evaluate_joint_stage(items: list[JointTrainItem], store: ParamStore) -> float:
    """Mean halved symmetric chamfer between predicted and reference joints."""
    h = float(np.exp(store.params["bandwidth.log_h"]))
    total = 0.0
    for item in items:
        mesh = Mesh(item.vertices, np.zeros((0, 3), dtype=np.int64))
        cloud = predict_displaced_cloud(store, mesh, item.graph)
        modes = joints_from_cloud(cloud, h, plane=None)
        total += chamfer_symmetric(modes.positions, item.ref_joints) / 2.0
    return total / len(items)
