"""Binary voxelization and volumetric geodesic distance fields.

The grid is cubic (resolution^3 voxels) and covers the mesh bounding box with
a one-voxel empty margin, so exterior flood fill can always start from the
boundary.  Occupancy = surface voxels (triangle rasterization) plus interior
voxels (complement of the exterior flood fill).

Volumetric geodesics run multi-source Dijkstra over the 26-connected graph of
occupied voxels, seeded from the voxels a bone segment passes through.  This
measures path length through the shape's interior, which differs from the
straight-line distance whenever the shape bends.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse import hstack as sparse_hstack
from scipy.sparse import vstack as sparse_vstack
from scipy.sparse.csgraph import dijkstra

from .errors import MeshError, VoxelError
from .mesh import Mesh

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 88
RFVOX_MAGIC = b"RFVOX1"


@dataclass
class VolumetricGrid:
    occupancy: np.ndarray  # (n, n, n) bool
    origin: np.ndarray  # (3,) world position of voxel (0,0,0) corner
    voxel_size: float
    warnings: list[str] = field(default_factory=list)

    @property
    def resolution(self) -> int:
        return self.occupancy.shape[0]

    @property
    def diagonal(self) -> float:
        """Length of one voxel's space diagonal."""
        return self.voxel_size * np.sqrt(3.0)

    def world_to_voxel(self, points: np.ndarray) -> np.ndarray:
        """Integer voxel coordinates of world points (may be out of bounds)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.floor((pts - self.origin) / self.voxel_size).astype(np.int64)

    def voxel_centers(self, ijk: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(ijk, dtype=np.float64) + 0.5) * self.voxel_size

    def in_bounds(self, ijk: np.ndarray) -> np.ndarray:
        ijk = np.atleast_2d(ijk)
        n = self.resolution
        return ((ijk >= 0) & (ijk < n)).all(axis=1)

    def is_occupied(self, points: np.ndarray) -> np.ndarray:
        """Occupancy lookup for world points; outside the grid counts empty."""
        ijk = self.world_to_voxel(points)
        ok = self.in_bounds(ijk)
        out = np.zeros(len(ijk), dtype=bool)
        if ok.any():
            sel = ijk[ok]
            out[ok] = self.occupancy[sel[:, 0], sel[:, 1], sel[:, 2]]
        return out


def _rasterize_surface(mesh: Mesh, origin: np.ndarray, vs: float, n: int) -> np.ndarray:
    """Mark every voxel touched by a triangle, by dense barycentric sampling
    at half-voxel pitch."""
    occ = np.zeros((n, n, n), dtype=bool)
    v = mesh.vertices

    def mark(points: np.ndarray):
        ijk = np.floor((points - origin) / vs).astype(np.int64)
        np.clip(ijk, 0, n - 1, out=ijk)
        occ[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = True

    mark(v)
    step = vs * 0.5
    for tri in mesh.triangles:
        a, b, c = v[tri[0]], v[tri[1]], v[tri[2]]
        m = int(max(np.linalg.norm(b - a), np.linalg.norm(c - a), np.linalg.norm(c - b)) / step) + 1
        # barycentric lattice (i + j <= m) covers the triangle at <= step pitch
        i, j = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
        keep = (i + j) <= m
        s = i[keep] / m
        t = j[keep] / m
        pts = a[None, :] + np.outer(s, b - a) + np.outer(t, c - a)
        mark(pts)
    return occ


def _solid_fill(surface: np.ndarray) -> tuple[np.ndarray, bool]:
    """Occupancy = complement of the exterior flood fill (6-connected, from
    the grid boundary).  Returns (occupied, had_interior)."""
    free = ~surface
    labels, _ = ndimage.label(free)  # 6-connectivity by default
    boundary_labels = np.unique(
        np.concatenate(
            [
                labels[0, :, :].ravel(),
                labels[-1, :, :].ravel(),
                labels[:, 0, :].ravel(),
                labels[:, -1, :].ravel(),
                labels[:, :, 0].ravel(),
                labels[:, :, -1].ravel(),
            ]
        )
    )
    boundary_labels = boundary_labels[boundary_labels != 0]
    exterior = np.isin(labels, boundary_labels)
    occupied = ~exterior
    had_interior = int(occupied.sum() - surface.sum()) > 0
    if not had_interior:
        occupied = surface.copy()
    return occupied, had_interior


def voxelize(mesh: Mesh, resolution: int = DEFAULT_RESOLUTION) -> VolumetricGrid:
    """Binary solid voxelization: rasterized surface plus flood-filled interior.

    The crust and fill run at twice the requested resolution; each output
    voxel is occupied when at least half of its 8 children are.  This keeps
    the boundary at half-voxel precision instead of inflating the solid by a
    full rasterized shell.

    An open mesh lets the exterior fill leak inside, in which case occupancy
    degrades to the rasterized surface and a warning is recorded.
    """
    if resolution < 8:
        raise VoxelError(f"resolution must be >= 8, got {resolution}")
    v = mesh.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    span = float((hi - lo).max())
    if span <= 0:
        raise MeshError("zero-area bounding box")
    vs = span / (resolution - 2)
    center = (lo + hi) / 2.0
    origin = center - vs * resolution / 2.0

    fine = 2 * resolution
    surface = _rasterize_surface(mesh, origin, vs / 2.0, fine)
    occupied_fine, had_interior = _solid_fill(surface)

    children = occupied_fine.reshape(resolution, 2, resolution, 2, resolution, 2)
    counts = children.sum(axis=(1, 3, 5))
    occupied = counts >= 4

    warnings = []
    if not had_interior:
        warnings.append("no interior voxels found (open or degenerate mesh); occupancy is surface only")
        logger.warning(warnings[-1])
        # thin features can lose the majority vote; keep any touched voxel
        occupied = counts > 0
    return VolumetricGrid(occupied, origin, vs, warnings)


def write_rfvox(grid: VolumetricGrid) -> bytes:
    """Serialize occupancy: magic, three little-endian u32 dims, row-major {0,1} bytes."""
    nx, ny, nz = grid.occupancy.shape
    header = RFVOX_MAGIC + struct.pack("<III", nx, ny, nz)
    return header + np.ascontiguousarray(grid.occupancy, dtype=np.uint8).tobytes()


def read_rfvox(data: bytes) -> np.ndarray:
    if data[:6] != RFVOX_MAGIC:
        raise VoxelError("bad RFVOX magic")
    nx, ny, nz = struct.unpack("<III", data[6:18])
    body = np.frombuffer(data[18:], dtype=np.uint8)
    if body.size != nx * ny * nz:
        raise VoxelError("RFVOX payload size mismatch")
    return body.reshape(nx, ny, nz).astype(bool)


@dataclass
class GeodesicField:
    """Per-vertex volumetric geodesic distance to each bone.

    fallback[v, b] is True where the voxel path was unreachable and the
    straight-line point-to-segment distance was substituted.
    """

    distances: np.ndarray  # (V, B)
    fallback: np.ndarray  # (V, B) bool

    @property
    def n_bones(self) -> int:
        return self.distances.shape[1]


def point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to segment [a, b]."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-30:
        return np.linalg.norm(pts - a, axis=1)
    t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    proj = a[None, :] + t[:, None] * ab[None, :]
    return np.linalg.norm(pts - proj, axis=1)


_OFFSETS = np.array(
    [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1) if (dx, dy, dz) != (0, 0, 0)],
    dtype=np.int64,
)


def _occupied_graph(grid: VolumetricGrid) -> tuple[csr_matrix, np.ndarray, np.ndarray]:
    """26-connected graph over occupied voxels with Euclidean center-to-center
    weights.  Returns (graph, flat index -> compact id map, occupied flat indices)."""
    occ = grid.occupancy
    n = grid.resolution
    flat = np.flatnonzero(occ.ravel())
    compact = np.full(n * n * n, -1, dtype=np.int64)
    compact[flat] = np.arange(len(flat))

    coords = np.stack(np.unravel_index(flat, occ.shape), axis=1)
    rows, cols, vals = [], [], []
    for off in _OFFSETS:
        nbr = coords + off
        ok = ((nbr >= 0) & (nbr < n)).all(axis=1)
        src = np.flatnonzero(ok)
        nbr_flat = np.ravel_multi_index(tuple(nbr[ok].T), occ.shape)
        dst = compact[nbr_flat]
        hit = dst >= 0
        rows.append(src[hit])
        cols.append(dst[hit])
        w = grid.voxel_size * np.linalg.norm(off.astype(np.float64))
        vals.append(np.full(int(hit.sum()), w))
    m = len(flat)
    graph = csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
    )
    return graph, compact, flat


def _segment_seed_voxels(grid: VolumetricGrid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Flat indices of occupied voxels the segment [a, b] passes through."""
    length = float(np.linalg.norm(b - a))
    steps = max(int(length / (grid.voxel_size * 0.25)) + 1, 2)
    t = np.linspace(0.0, 1.0, steps)
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    ijk = grid.world_to_voxel(pts)
    ok = grid.in_bounds(ijk)
    ijk = ijk[ok]
    if len(ijk) == 0:
        return np.zeros(0, dtype=np.int64)
    n = grid.resolution
    flat = np.unique(np.ravel_multi_index(tuple(ijk.T), (n, n, n)))
    occ_flat = grid.occupancy.ravel()
    return flat[occ_flat[flat]]


def volumetric_geodesic(grid: VolumetricGrid, mesh: Mesh, bones: np.ndarray) -> GeodesicField:
    """Shortest-path distance from every vertex to every bone, constrained to
    the occupied volume.

    bones: (B, 2, 3) array of segment endpoints.  Per vertex, the reading is
    the Dijkstra distance at its containing occupied voxel (searched in the
    27-cell neighborhood if its own voxel is empty) plus the Euclidean
    remainder from the vertex to that voxel's center.  Unreachable vertices
    fall back to the straight-line point-to-segment distance and are flagged.
    """
    bones = np.asarray(bones, dtype=np.float64)
    if bones.size == 0:
        raise VoxelError("no bones given")
    graph, compact, flat = _occupied_graph(grid)
    m = len(flat)
    n = grid.resolution
    occ_coords = np.stack(np.unravel_index(flat, (n, n, n)), axis=1)
    centers = grid.voxel_centers(occ_coords)

    # candidate occupied voxels per vertex: its own cell and the 26 around it
    v = mesh.vertices
    V, B = len(v), len(bones)
    base = grid.world_to_voxel(v)
    all_offsets = np.concatenate([np.zeros((1, 3), dtype=np.int64), _OFFSETS])
    cand_ids = np.full((V, 27), -1, dtype=np.int64)
    cand_rem = np.full((V, 27), np.inf)
    for k, off in enumerate(all_offsets):
        cand = base + off
        ok = ((cand >= 0) & (cand < n)).all(axis=1)
        rows = np.flatnonzero(ok)
        cand_flat = np.ravel_multi_index(tuple(cand[ok].T), (n, n, n))
        cid = compact[cand_flat]
        good = cid >= 0
        rows = rows[good]
        cand_ids[rows, k] = cid[good]
        cand_rem[rows, k] = np.linalg.norm(v[rows] - centers[cid[good]], axis=1)

    dist = np.zeros((V, B))
    fallback = np.zeros((V, B), dtype=bool)
    for bi, (a, b) in enumerate(bones):
        seeds = _segment_seed_voxels(grid, a, b)
        euclid = point_segment_distance(v, a, b)
        if len(seeds) == 0:
            dist[:, bi] = euclid
            fallback[:, bi] = True
            continue
        seed_ids = compact[seeds]
        init = point_segment_distance(centers[seed_ids], a, b)
        # virtual source -> seed voxels, carrying center-to-segment offsets
        seed_row = csr_matrix(
            (np.maximum(init, 1e-300), (np.zeros(len(seed_ids), dtype=np.int64), seed_ids)),
            shape=(1, m),
        )
        aug = sparse_hstack(
            [sparse_vstack([graph, seed_row], format="csr"), csr_matrix((m + 1, 1))],
            format="csr",
        )
        d = dijkstra(aug, directed=True, indices=m, min_only=False)
        voxel_dist = np.append(d[:m], np.inf)  # id -1 indexes the inf pad

        total = np.min(voxel_dist[cand_ids] + cand_rem, axis=1)
        bad = ~np.isfinite(total)
        total[bad] = euclid[bad]
        fallback[:, bi] = bad
        dist[:, bi] = total

    if fallback.any():
        logger.warning(
            "volumetric geodesic: %d vertex-bone pairs used Euclidean fallback", int(fallback.sum())
        )
    return GeodesicField(dist, fallback)


def bone_exterior_ratio(grid: VolumetricGrid, a: np.ndarray, b: np.ndarray, samples: int = 64) -> float:
    """Fraction of the segment [a, b] lying outside the occupied volume,
    estimated at `samples` uniformly spaced midpoints."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise VoxelError("segment endpoints must be finite")
    t = (np.arange(samples) + 0.5) / samples
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    return float(1.0 - grid.is_occupied(pts).mean())
