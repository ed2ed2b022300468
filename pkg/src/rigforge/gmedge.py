"""Graph convolution over dual mesh neighborhoods, and the shared backbone.

The convolution aggregates, separately over one-ring and geodesic-ball
neighbors, the max of a learned linear map of [x_v, x_u - x_v], then fuses
the two aggregates through a combine layer.  Because the map is linear and
LeakyReLU is monotonic, the per-edge activations never need materializing:
with P = X W_self and Q = X W_diff, the edge pre-activation is
P[v] + Q[u] - Q[v], and the segment max runs directly over that form.

The backbone stacks three convolutions, fuses their concatenated outputs
through an MLP, global-max-pools that into a shape code, and (for variants
with a head) feeds [x0, x1, x2, x3, pooled] through a final MLP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ShapeError
from .mesh import VertexGraph
from .params import ParamStore


@dataclass
class EdgeArrays:
    """Flattened neighbor lists grouped by destination vertex.  A vertex with
    an empty neighborhood contributes a self-loop so the segment max is total."""

    ring_src: np.ndarray
    ring_dst: np.ndarray
    geo_src: np.ndarray
    geo_dst: np.ndarray
    n_vertices: int


def edge_arrays(graph: VertexGraph) -> EdgeArrays:
    def flatten(lists):
        src, dst = [], []
        for v, nbrs in enumerate(lists):
            if len(nbrs) == 0:
                src.append(v)
                dst.append(v)
            else:
                src.extend(int(u) for u in nbrs)
                dst.extend([v] * len(nbrs))
        return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)

    rs, rd = flatten(graph.ring_neighbors)
    gs, gd = flatten(graph.geodesic_neighbors)
    return EdgeArrays(rs, rd, gs, gd, graph.n_vertices)


def init_conv(store: ParamStore, prefix: str, in_dim: int, out_dim: int):
    """Parameters for one convolution: mesh/geodesic edge layers with input
    width 2*in_dim, and a combine layer with input width 2*out_dim."""
    store.add_linear(f"{prefix}.mesh", 2 * in_dim, out_dim)
    store.add_linear(f"{prefix}.geo", 2 * in_dim, out_dim)
    store.add_linear(f"{prefix}.comb", 2 * out_dim, out_dim)


def gmedge_conv(tensors: dict[str, Tensor], prefix: str, X: Tensor, edges: EdgeArrays,
                in_dim: int, out_dim: int) -> Tensor:
    if X.values.shape != (edges.n_vertices, in_dim):
        raise ShapeError(f"conv {prefix}: features {X.values.shape} != ({edges.n_vertices}, {in_dim})")

    def branch(kind: str, src, dst) -> Tensor:
        W = tensors[f"{prefix}.{kind}.W"]
        if W.values.shape != (2 * in_dim, out_dim):
            raise ShapeError(f"conv {prefix}.{kind}: weight {W.values.shape} != {(2 * in_dim, out_dim)}")
        b = tensors[f"{prefix}.{kind}.b"]
        w_self = ad.slice_rows(W, 0, in_dim)
        w_diff = ad.slice_rows(W, in_dim, 2 * in_dim)
        P = ad.matmul(X, w_self)
        Q = ad.matmul(X, w_diff)
        m = ad.pair_scatter_max(P, Q, src, dst, edges.n_vertices)
        return ad.leaky_relu(ad.add(m, b))

    xm = branch("mesh", edges.ring_src, edges.ring_dst)
    xg = branch("geo", edges.geo_src, edges.geo_dst)
    fused = ad.concat([xm, xg], axis=1)
    pre = ad.add(ad.matmul(fused, tensors[f"{prefix}.comb.W"]), tensors[f"{prefix}.comb.b"])
    return ad.leaky_relu(pre)


def init_mlp(store: ParamStore, prefix: str, widths: list[int], zero_last: bool = False):
    for i in range(len(widths) - 1):
        last = i == len(widths) - 2
        store.add_linear(f"{prefix}.l{i}", widths[i], widths[i + 1], zero=zero_last and last)


def mlp_forward(tensors: dict[str, Tensor], prefix: str, widths: list[int], X: Tensor) -> Tensor:
    """LeakyReLU between layers, no activation after the last."""
    h = X
    for i in range(len(widths) - 1):
        h = ad.add(ad.matmul(h, tensors[f"{prefix}.l{i}.W"]), tensors[f"{prefix}.l{i}.b"])
        if i < len(widths) - 2:
            h = ad.leaky_relu(h)
    return h


@dataclass
class GMEdgeNetSpec:
    """Layer widths for one backbone variant."""

    conv_dims: list[tuple[int, int]]
    mid_mlp: list[int]
    head: list[int] | None
    sigmoid_head: bool = False

    @property
    def concat_width(self) -> int:
        return sum(out for _, out in self.conv_dims)

    @property
    def global_width(self) -> int:
        return self.mid_mlp[-1]

    def validate(self):
        if self.mid_mlp[0] != self.concat_width:
            raise ShapeError(
                f"mid MLP input {self.mid_mlp[0]} != conv concat width {self.concat_width}"
            )
        if self.head is not None:
            expected = self.conv_dims[0][0] + self.concat_width + self.global_width
            if self.head[0] != expected:
                raise ShapeError(f"head input {self.head[0]} != concat width {expected}")


def displacement_spec() -> GMEdgeNetSpec:
    return GMEdgeNetSpec([(3, 64), (64, 256), (256, 512)], [832, 1024], [1859, 1024, 256, 3])


def attention_spec() -> GMEdgeNetSpec:
    return GMEdgeNetSpec([(3, 64), (64, 256), (256, 512)], [832, 1024],
                         [1859, 1024, 256, 1], sigmoid_head=True)


def shape_encoder_spec() -> GMEdgeNetSpec:
    return GMEdgeNetSpec([(3, 64), (64, 128), (128, 256)], [448, 512, 256, 128], None)


def init_gmedgenet(store: ParamStore, prefix: str, spec: GMEdgeNetSpec, zero_head: bool = True):
    spec.validate()
    for i, (din, dout) in enumerate(spec.conv_dims):
        init_conv(store, f"{prefix}.conv{i}", din, dout)
    init_mlp(store, f"{prefix}.mid", spec.mid_mlp)
    if spec.head is not None:
        init_mlp(store, f"{prefix}.head", spec.head, zero_last=zero_head)


def gmedgenet_forward(tensors: dict[str, Tensor], prefix: str, spec: GMEdgeNetSpec,
                      X0: Tensor, edges: EdgeArrays) -> tuple[Tensor | None, Tensor]:
    """Returns (per-vertex head output or None, pooled global feature)."""
    xs = [X0]
    h = X0
    for i, (din, dout) in enumerate(spec.conv_dims):
        h = gmedge_conv(tensors, f"{prefix}.conv{i}", h, edges, din, dout)
        xs.append(h)
    fused = ad.concat(xs[1:], axis=1)
    mid = mlp_forward(tensors, f"{prefix}.mid", spec.mid_mlp, fused)
    pooled = ad.max_reduce(mid, axis=0)
    if spec.head is None:
        return None, pooled
    tiled = ad.tile_rows(pooled, edges.n_vertices)
    full = ad.concat(xs + [tiled], axis=1)
    out = mlp_forward(tensors, f"{prefix}.head", spec.head, full)
    if spec.sigmoid_head:
        out = ad.sigmoid(out)
    return out, pooled
