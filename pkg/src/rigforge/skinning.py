"""Skinning: skeleton-aware vertex features, the weight-prediction network,
its training, weight scatter, linear blend skinning, and pose sampling.

Each vertex is described by its position plus, for its K nearest bones under
volumetric geodesic distance, the bone's endpoint positions and the inverse
distance.  The network maps that description (with the mesh graph for
context) to a distribution over the K slots; scattering by the per-vertex
bone ranking turns slot weights into dense per-bone weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ShapeError, SkeletonError
from .gmedge import EdgeArrays, edge_arrays, gmedge_conv, init_conv, init_mlp, mlp_forward
from .mesh import Mesh, VertexGraph, sample_edge_dropout
from .params import ParamStore
from .skeleton import Skeleton
from .voxel import GeodesicField

logger = logging.getLogger(__name__)

K_NEAREST_BONES = 5
INV_DIST_FLOOR = 1e-4
FEATURE_WIDTH = 3 + K_NEAREST_BONES * 7  # position + K * (two joints + 1/D)

PRE_MLP = [38, 128, 64]
GLOBAL_MLP = [512, 512, 1024]
HEAD_MLP = [1280, 1024, 512, K_NEAREST_BONES]


@dataclass
class SkinFeatures:
    vectors: np.ndarray  # (V, 38)
    bone_order: np.ndarray  # (V, K) bone index per slot, nearest first


@dataclass
class SkinField:
    slot_weights: np.ndarray  # (V, K) nonnegative, rows sum to 1
    bone_order: np.ndarray  # (V, K)


@dataclass
class Pose:
    """Per-joint unit quaternions (x, y, z, w) in the parent frame plus a
    global root translation."""

    rotations: np.ndarray  # (J, 4)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.abs(norms - 1.0).max() > 1e-9:
            raise ShapeError("pose quaternions must be unit length")


def compute_skin_features(mesh: Mesh, skeleton: Skeleton, geo: GeodesicField,
                          k: int = K_NEAREST_BONES) -> SkinFeatures:
    """Rank bones per vertex by volumetric geodesic distance (ties by bone
    index) and pack the feature vectors.  Skeletons with fewer than k bones
    repeat their last-ranked bone; inverse distances are clamped at the floor."""
    segments = skeleton.bone_segments()
    n_bones = len(segments)
    if n_bones == 0:
        raise SkeletonError("skeleton has no bones to skin against")
    if geo.distances.shape != (mesh.n_vertices, n_bones):
        raise ShapeError(
            f"geodesic field {geo.distances.shape} does not match mesh/skeleton "
            f"({mesh.n_vertices}, {n_bones})"
        )
    order = np.argsort(geo.distances, axis=1, kind="stable")
    if n_bones >= k:
        order = order[:, :k]
    else:
        pad = np.repeat(order[:, -1:], k - n_bones, axis=1)
        order = np.concatenate([order, pad], axis=1)

    v = mesh.n_vertices
    feats = np.zeros((v, FEATURE_WIDTH))
    feats[:, :3] = mesh.vertices
    rows = np.arange(v)
    for slot in range(k):
        b = order[:, slot]
        d = geo.distances[rows, b]
        col = 3 + slot * 7
        feats[:, col:col + 3] = segments[b, 0]
        feats[:, col + 3:col + 6] = segments[b, 1]
        feats[:, col + 6] = 1.0 / np.maximum(d, INV_DIST_FLOOR)
    return SkinFeatures(feats, order)


def init_skinning_params(store: ParamStore):
    init_mlp(store, "skin.pre", PRE_MLP)
    init_conv(store, "skin.conv0", 64, 512)
    init_mlp(store, "skin.glb", GLOBAL_MLP)
    init_conv(store, "skin.conv1", 512, 256)
    init_conv(store, "skin.conv2", 256, 256)
    init_mlp(store, "skin.head", HEAD_MLP, zero_last=True)


def skinning_logits(tensors: dict[str, Tensor], tape: Tape, features: np.ndarray,
                    edges: EdgeArrays) -> Tensor:
    x0 = mlp_forward(tensors, "skin.pre", PRE_MLP, tape.leaf(features))
    x1 = gmedge_conv(tensors, "skin.conv0", x0, edges, 64, 512)
    pooled = ad.max_reduce(x1, axis=0)
    glb = mlp_forward(tensors, "skin.glb", GLOBAL_MLP,
                      ad.reshape(pooled, (1, GLOBAL_MLP[0])))
    x2 = gmedge_conv(tensors, "skin.conv1", x1, edges, 512, 256)
    x3 = gmedge_conv(tensors, "skin.conv2", x2, edges, 256, 256)
    tiled = ad.tile_rows(ad.reshape(glb, (GLOBAL_MLP[-1],)), edges.n_vertices)
    full = ad.concat([tiled, x3], axis=1)
    return mlp_forward(tensors, "skin.head", HEAD_MLP, full)


def skinning_forward(store: ParamStore, features: SkinFeatures, graph: VertexGraph) -> SkinField:
    """Inference: per-vertex softmax weights over the K ranked bones."""
    tape = Tape()
    tensors = store.inject(tape, store.names("skin."))
    logits = skinning_logits(tensors, tape, features.vectors, edge_arrays(graph))
    weights = ad.softmax(logits, axis=1).values
    return SkinField(weights, features.bone_order)


def scatter_weights(field: SkinField, n_bones: int) -> np.ndarray:
    """Dense (V, n_bones) weights; repeated slots merge by summation."""
    v, k = field.slot_weights.shape
    if field.bone_order.min() < 0 or field.bone_order.max() >= n_bones:
        raise ShapeError("bone index out of range in skin field")
    dense = np.zeros((v, n_bones))
    rows = np.repeat(np.arange(v), k)
    np.add.at(dense, (rows, field.bone_order.ravel()), field.slot_weights.ravel())
    return dense


# -------------------------------------------------------------------- LBS

def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def joint_world_transforms(skeleton: Skeleton, pose: Pose) -> np.ndarray:
    """(J, 3, 4) rigid transform per joint, composed root-down.  Each joint
    rotates its subtree about its own rest position."""
    n = skeleton.n_joints
    out = np.zeros((n, 3, 4))
    for j in skeleton.preorder():
        R = quat_to_matrix(pose.rotations[j])
        t = skeleton.joints[j] - R @ skeleton.joints[j]
        if j == skeleton.root:
            t = t + pose.translation
            out[j, :, :3] = R
            out[j, :, 3] = t
        else:
            p = skeleton.parents[j]
            out[j, :, :3] = out[p, :, :3] @ R
            out[j, :, 3] = out[p, :, :3] @ t + out[p, :, 3]
    return out


def lbs_deform(mesh: Mesh, skeleton: Skeleton, dense_weights: np.ndarray, pose: Pose) -> np.ndarray:
    """Deformed vertex positions: weights blend per-bone rigid transforms,
    where a bone moves with its parent joint's accumulated transform."""
    bones = skeleton.bones()
    if dense_weights.shape != (mesh.n_vertices, len(bones)):
        raise ShapeError(
            f"weights {dense_weights.shape} do not match ({mesh.n_vertices}, {len(bones)})"
        )
    transforms = joint_world_transforms(skeleton, pose)
    v = mesh.vertices
    out = np.zeros_like(v)
    for bi, (p, _c) in enumerate(bones):
        w = dense_weights[:, bi]
        if not w.any():
            continue
        moved = v @ transforms[p, :, :3].T + transforms[p, :, 3]
        out += w[:, None] * moved
    return out


def identity_pose(skeleton: Skeleton) -> Pose:
    q = np.zeros((skeleton.n_joints, 4))
    q[:, 3] = 1.0
    return Pose(q, np.zeros(3))


def sample_random_pose(skeleton: Skeleton, seed: int, max_angle_deg: float = 30.0) -> Pose:
    """Per-joint rotation about a uniformly random axis by an angle uniform in
    [-max_angle, +max_angle]; zero root translation.  Deterministic per seed."""
    rng = np.random.default_rng(seed)
    n = skeleton.n_joints
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = np.deg2rad(rng.uniform(-max_angle_deg, max_angle_deg, size=n))
    q = np.concatenate([axes * np.sin(angles / 2)[:, None], np.cos(angles / 2)[:, None]], axis=1)
    return Pose(q, np.zeros(3))


# --------------------------------------------------------------- training

@dataclass
class SkinTrainItem:
    features: SkinFeatures
    graph: VertexGraph
    ref_slots: np.ndarray  # (V, K) reference distribution over ranked slots
    loss_mask: np.ndarray  # (V,) False where the projection lost too much mass


def project_reference_weights(dense_ref: np.ndarray, bone_order: np.ndarray,
                              max_lost: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Restrict a dense reference distribution to each vertex's K ranked bones
    and renormalize.  Vertices losing more than `max_lost` of their mass are
    masked out of the loss (and counted by the caller via the mask)."""
    v, k = bone_order.shape
    rows = np.arange(v)[:, None]
    slots = dense_ref[rows, bone_order]
    # a bone repeated across slots must not be double-counted
    for s in range(1, k):
        dup = (bone_order[:, s:s + 1] == bone_order[:, :s]).any(axis=1)
        slots[dup, s] = 0.0
    kept = slots.sum(axis=1)
    mask = kept >= (1.0 - max_lost)
    safe = np.maximum(kept, 1e-12)
    return slots / safe[:, None], mask


def skin_cross_entropy(logits: Tensor, ref_slots: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean over unmasked vertices of the cross-entropy between the reference
    slot distribution and the predicted softmax."""
    if not mask.any():
        raise ShapeError("every vertex was masked out of the skinning loss")
    keep = np.flatnonzero(mask)
    ls = ad.log_softmax(logits, axis=1)
    picked = ad.gather(ls, keep)
    weighted = ad.mul(picked, picked.tape.const(ref_slots[keep]))
    return ad.scale(ad.mean_reduce(ad.sum_reduce(weighted, axis=1)), -1.0)


def train_skinning(items: list[SkinTrainItem], store: ParamStore, *,
                   steps: int = 1000, lr: float = 1e-4, batch_size: int = 2,
                   max_geo_edges: int = 15, seed: int = 0,
                   eval_every: int = 50, target_l1: float | None = None,
                   log_every: int = 25) -> dict:
    """Cross-entropy training on reference skeleton weights with edge dropout."""
    rng = np.random.default_rng(seed)
    names = store.names("skin.")
    history = {"loss": [], "l1": []}
    masked_out = sum(int((~it.loss_mask).sum()) for it in items)
    if masked_out:
        logger.warning("skinning: %d vertices lost >50%% reference mass and are skipped", masked_out)
    step = 0
    while step < steps:
        idx = rng.permutation(len(items))
        for s in range(0, len(idx), batch_size):
            if step >= steps:
                break
            batch = [items[i] for i in idx[s:s + batch_size]]
            tape = Tape()
            tensors = store.inject(tape, names)
            losses = []
            for item in batch:
                dropped = sample_edge_dropout(item.graph, max_geo_edges,
                                              seed=int(rng.integers(2**31)))
                logits = skinning_logits(tensors, tape, item.features.vectors,
                                         edge_arrays(dropped))
                losses.append(skin_cross_entropy(logits, item.ref_slots, item.loss_mask))
            total = losses[0]
            for l in losses[1:]:
                total = ad.add(total, l)
            total = ad.scale(total, 1.0 / len(losses))
            grads = store.collect_grads(tape, tensors, tape.backward(total))
            store.adam_step(grads, lr=lr, names=names)
            history["loss"].append(float(total.values))
            step += 1
            if log_every and step % log_every == 0:
                logger.info("skinning step %d: loss %.5f", step, float(total.values))
            if eval_every and step % eval_every == 0:
                l1 = evaluate_skinning(items, store)
                history["l1"].append((step, l1))
                logger.info("skinning step %d: train avg L1 %.4f", step, l1)
                if target_l1 is not None and l1 < target_l1:
                    return history
    return history


def evaluate_skinning(items: list[SkinTrainItem], store: ParamStore) -> float:
    """Mean per-vertex L1 gap between predicted and reference slot weights."""
    total, count = 0.0, 0
    for item in items:
        field = skinning_forward(store, item.features, item.graph)
        gap = np.abs(field.slot_weights - item.ref_slots).sum(axis=1)
        total += float(gap[item.loss_mask].sum())
        count += int(item.loss_mask.sum())
    return total / max(count, 1)
