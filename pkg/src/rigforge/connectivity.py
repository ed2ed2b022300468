"""Skeleton connectivity: pairwise bone probabilities, root selection, and
maximum-probability spanning-tree assembly.

Each unordered joint pair gets a probability from a small network fed with
the pair's raw geometry (positions, distance, fraction of the candidate bone
outside the shape) plus learned global codes for the shape and the joint
cloud.  Treating edge choices as independent, the most probable tree is the
minimum spanning tree under -log(p) edge costs; a second head picks the root
joint that orients the tree.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import SkeletonError, ShapeError
from .gmedge import (
    EdgeArrays,
    gmedgenet_forward,
    init_gmedgenet,
    init_mlp,
    mlp_forward,
    shape_encoder_spec,
)
from .mesh import SymmetryPlane
from .params import ParamStore
from .skeleton import Skeleton
from .voxel import VolumetricGrid, bone_exterior_ratio

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-6

JOINT_ENC_PRE = [3, 64, 128, 1024]
JOINT_ENC_POST = [1024, 256, 128]
PAIR_EMBED = [8, 32, 64, 128, 256]
BONE_HEAD = [512, 128, 32, 1]
ROOT_EMBED = [4, 32, 64, 128, 256]
ROOT_HEAD = [512, 128, 32, 1]


def init_connectivity_params(store: ParamStore):
    """Shape encoder, joint-set encoder, bone head, and root head.

    Final layers start at zero, so untrained pair probabilities are 0.5 and
    untrained root probabilities are uniform.
    """
    init_gmedgenet(store, "shape_enc", shape_encoder_spec())
    init_mlp(store, "joint_enc.pre", JOINT_ENC_PRE)
    init_mlp(store, "joint_enc.post", JOINT_ENC_POST)
    init_mlp(store, "bonenet.embed", PAIR_EMBED)
    init_mlp(store, "bonenet.head", BONE_HEAD, zero_last=True)
    init_mlp(store, "rootnet.embed", ROOT_EMBED)
    init_mlp(store, "rootnet.head", ROOT_HEAD, zero_last=True)


def encode_shape_and_skeleton(tensors: dict[str, Tensor], tape: Tape, vertices: np.ndarray,
                              edges: EdgeArrays, joints: np.ndarray) -> tuple[Tensor, Tensor]:
    """Global codes: g_s (128) from the mesh trunk, g_t (128) from the joint
    set treated as an unordered point cloud (pool over per-joint features)."""
    if len(joints) == 0:
        raise SkeletonError("cannot encode an empty joint set")
    _, g_s = gmedgenet_forward(tensors, "shape_enc", shape_encoder_spec(),
                               tape.leaf(vertices), edges)
    per_joint = mlp_forward(tensors, "joint_enc.pre", JOINT_ENC_PRE, tape.leaf(joints))
    pooled = ad.max_reduce(per_joint, axis=0)
    g_t = mlp_forward(tensors, "joint_enc.post", JOINT_ENC_POST,
                      ad.reshape(pooled, (1, JOINT_ENC_POST[0])))
    return g_s, ad.reshape(g_t, (JOINT_ENC_POST[-1],))


def candidate_pairs(n: int) -> np.ndarray:
    """All unordered joint pairs (i < j), lexicographic."""
    return np.array([(i, j) for i in range(n) for j in range(i + 1, n)], dtype=np.int64)


def pair_features(joints: np.ndarray, grid: VolumetricGrid | None) -> np.ndarray:
    """Raw 8-vector per pair: both positions, distance, exterior ratio."""
    pairs = candidate_pairs(len(joints))
    feats = np.zeros((len(pairs), 8))
    for row, (i, j) in enumerate(pairs):
        d = float(np.linalg.norm(joints[i] - joints[j]))
        o = bone_exterior_ratio(grid, joints[i], joints[j]) if grid is not None else 0.0
        feats[row] = [*joints[i], *joints[j], d, o]
    return feats


def bonenet_forward(tensors: dict[str, Tensor], tape: Tape, joints: np.ndarray,
                    raw_pairs: np.ndarray, g_s: Tensor, g_t: Tensor) -> Tensor:
    """Per-pair connection logits (pre-sigmoid), pairs ordered as candidate_pairs."""
    n = len(joints)
    if n < 2:
        raise SkeletonError("need at least 2 joints to score bones")
    n_pairs = len(raw_pairs)
    f_ij = mlp_forward(tensors, "bonenet.embed", PAIR_EMBED, tape.leaf(raw_pairs))
    gs_rows = ad.tile_rows(g_s, n_pairs)
    gt_rows = ad.tile_rows(g_t, n_pairs)
    full = ad.concat([f_ij, gs_rows, gt_rows], axis=1)
    logits = mlp_forward(tensors, "bonenet.head", BONE_HEAD, full)
    return ad.reshape(logits, (n_pairs,))


def root_features(joints: np.ndarray, plane: SymmetryPlane) -> np.ndarray:
    """Per-joint 4-vector: position and unsigned distance to the symmetry plane."""
    d = np.abs(plane.signed_distance(joints))
    return np.concatenate([joints, d[:, None]], axis=1)


def rootnet_forward(tensors: dict[str, Tensor], tape: Tape, joints: np.ndarray,
                    plane: SymmetryPlane, g_s: Tensor, g_t: Tensor) -> Tensor:
    """Per-joint root probabilities (softmax over joints)."""
    n = len(joints)
    feats = root_features(joints, plane)
    f_i = mlp_forward(tensors, "rootnet.embed", ROOT_EMBED, tape.leaf(feats))
    full = ad.concat([f_i, ad.tile_rows(g_s, n), ad.tile_rows(g_t, n)], axis=1)
    logits = mlp_forward(tensors, "rootnet.head", ROOT_HEAD, full)
    return ad.softmax(ad.reshape(logits, (n,)), axis=0)


@dataclass
class ConnectivityScores:
    prob_matrix: np.ndarray  # (J, J) symmetric, zero diagonal
    root_probs: np.ndarray  # (J,)


def score_connectivity(store: ParamStore, vertices: np.ndarray, edges: EdgeArrays,
                       joints: np.ndarray, grid: VolumetricGrid | None,
                       plane: SymmetryPlane) -> ConnectivityScores:
    """Inference pass: symmetric bone probability matrix plus root distribution."""
    joints = np.asarray(joints, dtype=np.float64).reshape(-1, 3)
    n = len(joints)
    tape = Tape()
    names = (store.names("shape_enc.") + store.names("joint_enc.")
             + store.names("bonenet.") + store.names("rootnet."))
    tensors = store.inject(tape, names)
    g_s, g_t = encode_shape_and_skeleton(tensors, tape, vertices, edges, joints)
    root = rootnet_forward(tensors, tape, joints, plane, g_s, g_t).values
    P = np.zeros((n, n))
    if n >= 2:
        logits = bonenet_forward(tensors, tape, joints, pair_features(joints, grid), g_s, g_t)
        probs = 1.0 / (1.0 + np.exp(-logits.values))
        for (i, j), p in zip(candidate_pairs(n), probs):
            P[i, j] = P[j, i] = p
    return ConnectivityScores(P, root)


# ----------------------------------------------------------------- MST

def prim_mst(costs: np.ndarray, root: int) -> np.ndarray:
    """Parent array of the minimum spanning tree grown from the root.

    Deterministic tie-break: smaller cost wins, then smaller child index;
    the first parent discovered at the winning cost is kept.
    """
    n = len(costs)
    parents = np.full(n, -1, dtype=np.int64)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[root] = True
    best = costs[root].copy()
    best_parent = np.full(n, root, dtype=np.int64)
    best[root] = np.inf
    for _ in range(n - 1):
        child = int(np.argmin(best))  # argmin takes the lowest index on ties
        parents[child] = best_parent[child]
        in_tree[child] = True
        improved = (~in_tree) & (costs[child] < best)
        best_parent[improved] = child
        best[improved] = costs[child][improved]
        best[child] = np.inf
    return parents


def extract_skeleton(joints: np.ndarray, prob_matrix: np.ndarray,
                     root_probs: np.ndarray, names=None) -> Skeleton:
    """Most probable tree: -log edge costs, grown from the argmax root."""
    joints = np.asarray(joints, dtype=np.float64).reshape(-1, 3)
    n = len(joints)
    if n == 0:
        raise SkeletonError("no joints to connect")
    root = int(np.argmax(root_probs))
    if n == 1:
        return Skeleton(joints, np.array([-1]), root=0, names=list(names) if names else [])
    p = np.clip(prob_matrix, PROB_CLAMP, 1.0 - PROB_CLAMP)
    costs = -np.log(p)
    np.fill_diagonal(costs, np.inf)
    parents = prim_mst(costs, root)
    skel = Skeleton(joints, parents, root, names=list(names) if names else [])
    skel.validate()
    return skel


def prob_matrix_csv(prob_matrix: np.ndarray) -> str:
    """Debug dump of the pairwise probabilities."""
    buf = io.StringIO()
    buf.write("i,j,p\n")
    n = len(prob_matrix)
    for i in range(n):
        for j in range(i + 1, n):
            buf.write(f"{i},{j},{float(prob_matrix[i, j])!r}\n")
    return buf.getvalue()


# ------------------------------------------------------------- training

def bce_logits_mean(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Numerically stable mean BCE on logits (fused forward/backward)."""
    z = logits.values
    y = np.asarray(targets, dtype=np.float64).reshape(z.shape)
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    value = np.asarray(per.mean())
    n = z.size

    def bw(g):
        sig = 1.0 / (1.0 + np.exp(-z))
        return (float(g) * (sig - y) / n,)

    return logits.tape._emit("bce_logits", value, (logits,), bw)


def ohem_select(per_pair_loss: np.ndarray, positives: np.ndarray, ratio: int = 3) -> np.ndarray:
    """Online hard-example mining: keep every positive pair plus the
    ratio-times-as-many negatives with the highest loss."""
    pos_idx = np.flatnonzero(positives)
    neg_idx = np.flatnonzero(~positives)
    keep_n = min(len(neg_idx), ratio * max(len(pos_idx), 1))
    order = np.argsort(-per_pair_loss[neg_idx], kind="stable")
    return np.concatenate([pos_idx, neg_idx[order[:keep_n]]])


@dataclass
class ConnectivityTrainItem:
    vertices: np.ndarray
    edges: EdgeArrays
    joints: np.ndarray  # reference joints
    adjacency: np.ndarray  # (J, J) bool
    root: int
    pair_feats: np.ndarray  # cached raw 8-vectors
    plane: SymmetryPlane


def make_connectivity_item(vertices, edges, skeleton: Skeleton, grid, plane) -> ConnectivityTrainItem:
    n = skeleton.n_joints
    adj = np.zeros((n, n), dtype=bool)
    for p, c in skeleton.bones():
        adj[p, c] = adj[c, p] = True
    return ConnectivityTrainItem(vertices, edges, skeleton.joints, adj, skeleton.root,
                                 pair_features(skeleton.joints, grid), plane)


def train_connectivity(items: list[ConnectivityTrainItem], store: ParamStore, *,
                       steps: int = 500, lr: float = 1e-3, batch_size: int = 12,
                       ohem_ratio: int = 3, seed: int = 0, log_every: int = 50) -> dict:
    """BCE on pair logits with hard-negative mining, plus root cross-entropy."""
    rng = np.random.default_rng(seed)
    usable = [it for it in items if len(it.joints) >= 2]
    skipped = len(items) - len(usable)
    if skipped:
        logger.warning("skipping %d rigs with fewer than 2 joints", skipped)
    if not usable:
        raise SkeletonError("no usable training rigs")
    names = (store.names("shape_enc.") + store.names("joint_enc.")
             + store.names("bonenet.") + store.names("rootnet."))
    history = {"loss": []}
    for step in range(steps):
        batch = [usable[i] for i in rng.integers(len(usable), size=min(batch_size, len(usable)))]
        tape = Tape()
        tensors = store.inject(tape, names)
        losses = []
        for item in batch:
            g_s, g_t = encode_shape_and_skeleton(tensors, tape, item.vertices,
                                                 item.edges, item.joints)
            logits = bonenet_forward(tensors, tape, item.joints, item.pair_feats, g_s, g_t)
            pairs = candidate_pairs(len(item.joints))
            y = item.adjacency[pairs[:, 0], pairs[:, 1]].astype(np.float64)
            z = logits.values
            per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
            keep = ohem_select(per, y > 0.5, ohem_ratio)
            bone_loss = bce_logits_mean(ad.gather(ad.reshape(logits, (len(z), 1)), keep),
                                        y[keep][:, None])
            root_probs = rootnet_forward(tensors, tape, item.joints, item.plane, g_s, g_t)
            picked = ad.gather(ad.reshape(root_probs, (len(item.joints), 1)),
                               np.array([item.root]))
            root_loss = ad.scale(ad.log(ad.add_const(picked, 1e-12)), -1.0)
            losses.append(ad.add(bone_loss, ad.reshape(root_loss, ())))
        total = losses[0]
        for l in losses[1:]:
            total = ad.add(total, l)
        total = ad.scale(total, 1.0 / len(losses))
        grads = store.collect_grads(tape, tensors, tape.backward(total))
        store.adam_step(grads, lr=lr, names=names)
        history["loss"].append(float(total.values))
        if log_every and (step + 1) % log_every == 0:
            logger.info("connectivity step %d: loss %.5f", step + 1, float(total.values))
    return history


def evaluate_connectivity(items: list[ConnectivityTrainItem], store: ParamStore,
                          grids: list | None = None) -> tuple[float, int]:
    """(pair classification accuracy, number of rigs with the root correct)."""
    correct_pairs = 0
    total_pairs = 0
    roots_right = 0
    for item in items:
        scores = score_connectivity_from_item(store, item)
        pairs = candidate_pairs(len(item.joints))
        pred = scores.prob_matrix[pairs[:, 0], pairs[:, 1]] > 0.5
        truth = item.adjacency[pairs[:, 0], pairs[:, 1]]
        correct_pairs += int((pred == truth).sum())
        total_pairs += len(pairs)
        if int(np.argmax(scores.root_probs)) == item.root:
            roots_right += 1
    return correct_pairs / max(total_pairs, 1), roots_right


def score_connectivity_from_item(store: ParamStore, item: ConnectivityTrainItem) -> ConnectivityScores:
    tape = Tape()
    names = (store.names("shape_enc.") + store.names("joint_enc.")
             + store.names("bonenet.") + store.names("rootnet."))
    tensors = store.inject(tape, names)
    g_s, g_t = encode_shape_and_skeleton(tensors, tape, item.vertices, item.edges, item.joints)
    root = rootnet_forward(tensors, tape, item.joints, item.plane, g_s, g_t).values
    logits = bonenet_forward(tensors, tape, item.joints, item.pair_feats, g_s, g_t)
    probs = 1.0 / (1.0 + np.exp(-logits.values))
    n = len(item.joints)
    P = np.zeros((n, n))
    for (i, j), p in zip(candidate_pairs(n), probs):
        P[i, j] = P[j, i] = p
    return ConnectivityScores(P, root)
