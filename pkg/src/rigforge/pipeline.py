"""End-to-end rigging: wire the trained stages into mesh -> rig, plus the
dataset preparation and per-stage training entry points used by the CLI.

Inference caches the expensive network forward pass (displaced cloud and
attention) per mesh; changing the clustering bandwidth only re-runs
mean-shift, mode extraction, and connectivity, which is what makes
interactive level-of-detail control responsive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .connectivity import (
    ConnectivityTrainItem,
    extract_skeleton,
    init_connectivity_params,
    make_connectivity_item,
    score_connectivity,
    train_connectivity,
)
from .errors import ConfigError, SkeletonError
from .gmedge import edge_arrays
from .joints import (
    DisplacedCloud,
    JointTrainItem,
    build_attention_mask,
    init_joint_params,
    joints_from_cloud,
    predict_displaced_cloud,
    train_joint_stage,
)
from .mesh import Mesh, SymmetryPlane, VertexGraph, bilateral_plane, build_vertex_graph
from .params import ParamStore
from .rigfile import RigFile, rig_from_prediction
from .skeleton import Skeleton
from .skinning import (
    SkinTrainItem,
    compute_skin_features,
    init_skinning_params,
    project_reference_weights,
    scatter_weights,
    skinning_forward,
    train_skinning,
)
from .voxel import VolumetricGrid, volumetric_geodesic, voxelize

logger = logging.getLogger(__name__)


def init_all_params(seed: int = 0) -> ParamStore:
    store = ParamStore(seed=seed)
    init_joint_params(store)
    init_connectivity_params(store)
    init_skinning_params(store)
    return store


@dataclass
class ModelContext:
    """Cached per-mesh state shared across interactive requests."""

    mesh: Mesh
    graph: VertexGraph
    plane: SymmetryPlane
    cloud: DisplacedCloud
    grid: VolumetricGrid
    skeleton: Skeleton | None = None


@dataclass
class RigPipeline:
    store: ParamStore
    cfg: RunConfig = field(default_factory=RunConfig)

    @classmethod
    def from_checkpoint(cls, path: str | Path | None, cfg: RunConfig | None = None,
                        seed: int = 0) -> "RigPipeline":
        cfg = cfg or RunConfig()
        store = ParamStore.load(path) if path else init_all_params(seed)
        return cls(store, cfg)

    @property
    def learned_bandwidth(self) -> float:
        return float(np.exp(self.store.params["bandwidth.log_h"]))

    def precompute(self, mesh: Mesh) -> ModelContext:
        graph = build_vertex_graph(mesh, radius=self.cfg.ball_radius)
        cloud = predict_displaced_cloud(self.store, mesh, graph)
        grid = voxelize(mesh, resolution=self.cfg.voxel_resolution)
        return ModelContext(mesh, graph, bilateral_plane(), cloud, grid)

    def predict_skeleton(self, ctx: ModelContext, bandwidth: float | None = None,
                         use_symmetry: bool | None = None) -> Skeleton:
        h = bandwidth if bandwidth is not None else (
            self.cfg.bandwidth_override or self.learned_bandwidth
        )
        symmetric = self.cfg.use_symmetry if use_symmetry is None else use_symmetry
        plane = ctx.plane if symmetric else None
        modes = joints_from_cloud(ctx.cloud, h, plane, ms_eps=self.cfg.ms_eps)
        scores = score_connectivity(self.store, ctx.mesh.vertices, edge_arrays(ctx.graph),
                                    modes.positions, ctx.grid, ctx.plane)
        skeleton = extract_skeleton(modes.positions, scores.prob_matrix, scores.root_probs)
        ctx.skeleton = skeleton
        return skeleton

    def predict_skin(self, ctx: ModelContext, skeleton: Skeleton) -> np.ndarray:
        segments = skeleton.bone_segments()
        if len(segments) == 0:
            raise SkeletonError("skeleton has no bones; nothing to skin")
        geo = volumetric_geodesic(ctx.grid, ctx.mesh, segments)
        feats = compute_skin_features(ctx.mesh, skeleton, geo, k=self.cfg.k_bones)
        fieldw = skinning_forward(self.store, feats, ctx.graph)
        return scatter_weights(fieldw, len(segments))

    def rig(self, mesh: Mesh, bandwidth: float | None = None,
            use_symmetry: bool | None = None) -> RigFile:
        ctx = self.precompute(mesh)
        skeleton = self.predict_skeleton(ctx, bandwidth, use_symmetry)
        weights = self.predict_skin(ctx, skeleton) if skeleton.n_joints > 1 else None
        return rig_from_prediction(skeleton, weights)


# ------------------------------------------------------------ training prep

@dataclass
class TrainCharacter:
    name: str
    mesh: Mesh
    graph: VertexGraph
    skeleton: Skeleton
    weights: np.ndarray
    grid: VolumetricGrid
    plane: SymmetryPlane


def prepare_characters(dataset: list[tuple[str, Mesh, RigFile]], cfg: RunConfig) -> list[TrainCharacter]:
    out = []
    for name, mesh, rig in dataset:
        skeleton = rig.skeleton()
        graph = build_vertex_graph(mesh, radius=cfg.ball_radius)
        grid = voxelize(mesh, resolution=cfg.voxel_resolution)
        weights = rig.dense_weights(mesh.n_vertices)
        out.append(TrainCharacter(name, mesh, graph, skeleton, weights, grid,
                                  bilateral_plane()))
    return out


def train_joints_stage(chars: list[TrainCharacter], store: ParamStore, cfg: RunConfig,
                       checkpoint_path=None) -> dict:
    items = [
        JointTrainItem(c.mesh.vertices, c.graph, c.skeleton.joints,
                       build_attention_mask(c.mesh, c.skeleton))
        for c in chars
    ]
    return train_joint_stage(
        items, store,
        attn_epochs=cfg.attn_epochs, attn_lr=cfg.attn_lr,
        steps=cfg.joint_steps, lr=cfg.joint_lr, batch_size=cfg.joint_batch,
        unroll=cfg.ms_train_iters, max_geo_edges=cfg.max_geo_edges,
        seed=cfg.seed, eval_every=cfg.eval_every, target_cd=cfg.joint_target_cd,
        checkpoint_path=checkpoint_path,
        attn_lr_scale=cfg.joint_attn_lr_scale, bandwidth_lr_scale=cfg.joint_bw_lr_scale,
        row_clip=cfg.joint_row_clip, cosine_decay=cfg.joint_cosine_decay,
    )


def connectivity_items(chars: list[TrainCharacter]) -> list[ConnectivityTrainItem]:
    return [
        make_connectivity_item(c.mesh.vertices, edge_arrays(c.graph), c.skeleton,
                               c.grid, c.plane)
        for c in chars
    ]


def train_connectivity_stage(chars: list[TrainCharacter], store: ParamStore,
                             cfg: RunConfig) -> dict:
    return train_connectivity(
        connectivity_items(chars), store,
        steps=cfg.conn_steps, lr=cfg.conn_lr, batch_size=cfg.conn_batch,
        ohem_ratio=cfg.ohem_ratio, seed=cfg.seed,
    )


def skinning_items(chars: list[TrainCharacter], cfg: RunConfig) -> list[SkinTrainItem]:
    items = []
    for c in chars:
        geo = volumetric_geodesic(c.grid, c.mesh, c.skeleton.bone_segments())
        feats = compute_skin_features(c.mesh, c.skeleton, geo, k=cfg.k_bones)
        slots, mask = project_reference_weights(c.weights, feats.bone_order)
        items.append(SkinTrainItem(feats, c.graph, slots, mask))
    return items


def train_skinning_stage(chars: list[TrainCharacter], store: ParamStore,
                         cfg: RunConfig) -> dict:
    return train_skinning(
        skinning_items(chars, cfg), store,
        steps=cfg.skin_steps, lr=cfg.skin_lr, batch_size=cfg.skin_batch,
        max_geo_edges=cfg.max_geo_edges, seed=cfg.seed,
        eval_every=cfg.eval_every, target_l1=cfg.skin_target_l1,
    )


STAGES = ("joints", "conn", "skin")


def train_stage(stage: str, chars: list[TrainCharacter], store: ParamStore,
                cfg: RunConfig, checkpoint_path=None) -> dict:
    if stage == "joints":
        return train_joints_stage(chars, store, cfg, checkpoint_path)
    if stage == "conn":
        return train_connectivity_stage(chars, store, cfg)
    if stage == "skin":
        return train_skinning_stage(chars, store, cfg)
    raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
