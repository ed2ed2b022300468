"""Triangle meshes, OBJ ingestion, normalization, and vertex neighborhood graphs.

A mesh is normalized so its centroid sits at the origin and its longest
bounding-box extent equals 1.0.  Every downstream stage (graph convolutions,
clustering, voxelization, metrics) assumes this frame, so distances and radii
throughout the package are expressed in these normalized model units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import MeshError

logger = logging.getLogger(__name__)

MAX_VERTICES = 100_000
DEFAULT_BALL_RADIUS = 0.06
_NORMALIZED_TOL = 1e-12


@dataclass
class Mesh:
    """Triangle mesh with float64 vertices and integer triangle indices."""

    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as (E, 2) index pairs with e[0] < e[1]."""
        if self.n_triangles == 0:
            return np.zeros((0, 2), dtype=np.int64)
        t = self.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)

    def validate(self):
        v, t = self.vertices, self.triangles
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {v.shape}")
        if not (3 <= len(v) <= MAX_VERTICES):
            raise MeshError(f"vertex count {len(v)} outside [3, {MAX_VERTICES}]")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must be (T, 3), got {t.shape}")
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        if not np.isfinite(v).all():
            raise MeshError("non-finite vertex coordinate")


def parse_obj(data: bytes | str) -> Mesh:
    """Parse ASCII OBJ geometry: `v` and `f` records, 1-based indices.

    Polygon faces are fan-triangulated from their first vertex; zero-area
    triangles are dropped.  Normals, texture coordinates, and all other
    record types are ignored.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise MeshError(f"OBJ is not valid UTF-8: {e}") from e
    else:
        text = data

    verts: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError as e:
                raise MeshError(f"line {lineno}: bad vertex coordinate") from e
        elif tag == "f":
            idx = []
            for tok in parts[1:]:
                head = tok.split("/")[0]
                try:
                    i = int(head)
                except ValueError as e:
                    raise MeshError(f"line {lineno}: bad face index {tok!r}") from e
                if i < 0:
                    i = len(verts) + 1 + i
                if not (1 <= i <= len(verts)):
                    raise MeshError(f"line {lineno}: face index {i} out of range")
                idx.append(i - 1)
            if len(idx) < 3:
                raise MeshError(f"line {lineno}: face with fewer than 3 vertices")
            faces.append(idx)

    if len(verts) < 3:
        raise MeshError(f"OBJ contains {len(verts)} vertices; need at least 3")

    v = np.array(verts, dtype=np.float64)
    tris: list[tuple[int, int, int]] = []
    for idx in faces:
        for k in range(1, len(idx) - 1):
            tri = (idx[0], idx[k], idx[k + 1])
            if len(set(tri)) < 3:
                continue
            a, b, c = v[tri[0]], v[tri[1]], v[tri[2]]
            if np.linalg.norm(np.cross(b - a, c - a)) < 1e-14:
                continue
            tris.append(tri)

    mesh = Mesh(v, np.array(tris, dtype=np.int64).reshape(-1, 3))
    mesh.validate()
    return mesh


def normalize(mesh: Mesh) -> Mesh:
    """Center the vertex centroid at the origin and scale the longest
    bounding-box extent to exactly 1.0.

    Already-normalized meshes are returned unchanged (bit-for-bit), which
    makes the operation idempotent.
    """
    v = mesh.vertices
    centroid = v.mean(axis=0)
    extents = v.max(axis=0) - v.min(axis=0)
    longest = extents.max()
    if longest <= 0.0:
        raise MeshError("zero-area bounding box: all vertices coincide")
    if np.abs(centroid).max() <= _NORMALIZED_TOL and abs(longest - 1.0) <= _NORMALIZED_TOL:
        return Mesh(v.copy(), mesh.triangles.copy())
    shifted = v - centroid
    scale = (shifted.max(axis=0) - shifted.min(axis=0)).max()
    return Mesh(shifted / scale, mesh.triangles.copy())


def load_and_normalize(data: bytes | str) -> Mesh:
    """Parse OBJ bytes and normalize; the vertex order of the file is kept."""
    return normalize(parse_obj(data))


def write_obj(mesh: Mesh) -> str:
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    return "\n".join(lines) + "\n"


@dataclass
class VertexGraph:
    """Dual neighborhood structure: one-ring mesh adjacency plus the vertices
    inside a surface-geodesic ball of the given radius.

    Geodesic distance is measured along mesh edges weighted by Euclidean
    length.  A vertex never lists itself in either neighborhood.
    """

    ring_neighbors: list[np.ndarray]
    geodesic_neighbors: list[np.ndarray]
    radius: float
    isolated: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.ring_neighbors)


def _edge_graph(mesh: Mesh) -> csr_matrix:
    e = mesh.edges()
    n = mesh.n_vertices
    if len(e) == 0:
        return csr_matrix((n, n))
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    return csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n))


def build_vertex_graph(mesh: Mesh, radius: float = DEFAULT_BALL_RADIUS) -> VertexGraph:
    """Compute one-ring and geodesic-ball neighborhoods for every vertex.

    The geodesic ball holds all vertices whose shortest-path distance along
    mesh edges is <= radius, excluding the vertex itself.  Isolated vertices
    (no incident triangle) get empty lists and are reported.
    """
    if radius <= 0:
        raise MeshError(f"radius must be positive, got {radius}")
    n = mesh.n_vertices
    ring: list[list[int]] = [[] for _ in range(n)]
    for a, b in mesh.edges():
        ring[a].append(b)
        ring[b].append(a)
    ring_arr = [np.array(sorted(r), dtype=np.int64) for r in ring]

    graph = _edge_graph(mesh)
    geo: list[np.ndarray] = [np.zeros(0, dtype=np.int64)] * n
    chunk = 1024
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        dist = dijkstra(graph, directed=False, indices=idx, limit=radius)
        for row, v in enumerate(idx):
            near = np.flatnonzero(dist[row] <= radius)
            geo[v] = near[near != v]

    isolated = np.array([v for v in range(n) if len(ring_arr[v]) == 0], dtype=np.int64)
    if len(isolated):
        logger.warning("mesh has %d isolated vertices", len(isolated))
    return VertexGraph(ring_arr, geo, float(radius), isolated)


def sample_edge_dropout(graph: VertexGraph, max_edges: int = 15, seed: int = 0) -> VertexGraph:
    """Subsample each geodesic neighbor list to at most max_edges entries,
    uniformly without replacement.  Ring neighborhoods are untouched.
    Reproducible: the same seed yields the same subsampled graph.
    """
    if max_edges < 1:
        raise MeshError(f"max_edges must be >= 1, got {max_edges}")
    rng = np.random.default_rng(seed)
    geo = []
    for nbrs in graph.geodesic_neighbors:
        if len(nbrs) <= max_edges:
            geo.append(nbrs.copy())
        else:
            keep = rng.choice(len(nbrs), size=max_edges, replace=False)
            geo.append(np.sort(nbrs[keep]))
    return VertexGraph(
        [r.copy() for r in graph.ring_neighbors], geo, graph.radius, graph.isolated.copy()
    )


@dataclass
class SymmetryPlane:
    """Plane {x : normal . x = offset} with unit normal."""

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(self.normal)
        if abs(norm - 1.0) > 1e-9:
            if norm == 0:
                raise MeshError("symmetry plane normal must be nonzero")
            self.normal = self.normal / norm

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal - self.offset


def bilateral_plane() -> SymmetryPlane:
    """The x = 0 plane used for bilaterally symmetric characters."""
    return SymmetryPlane(np.array([1.0, 0.0, 0.0]), 0.0)


def reflect(points: np.ndarray, plane: SymmetryPlane) -> np.ndarray:
    """Mirror each point across the plane.  An isometry and an involution."""
    pts = np.asarray(points, dtype=np.float64)
    d = pts @ plane.normal - plane.offset
    return pts - 2.0 * d[:, None] * plane.normal[None, :]
