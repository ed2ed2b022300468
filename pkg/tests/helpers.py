"""Shared oracles and fixture geometry for the test suite.

Everything here is deliberately independent of the library code paths it
checks: brute-force shortest paths, finite differences, direct enumeration.
"""

from __future__ import annotations

import heapq

import numpy as np

from rigforge.mesh import Mesh, normalize


# ---------------------------------------------------------------- geometry

CUBE_OBJ = """\
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 2 3 4
f 5 8 7 6
f 1 5 6 2
f 2 6 7 3
f 3 7 8 4
f 4 8 5 1
"""


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> Mesh:
    """Icosahedron refined by midpoint subdivision, projected to the sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius
    return Mesh(v, np.array(faces, dtype=np.int64))


def tube_mesh(p0, p1, radius: float, n_radial: int = 12, n_axial: int = 9,
              close_caps: bool = True) -> Mesh:
    """Closed cylinder from p0 to p1."""
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    axis = axis / length
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)

    verts = []
    for i in range(n_axial):
        c = p0 + axis * (length * i / (n_axial - 1))
        for k in range(n_radial):
            ang = 2 * np.pi * k / n_radial
            verts.append(c + radius * (np.cos(ang) * e1 + np.sin(ang) * e2))
    tris = []
    for i in range(n_axial - 1):
        for k in range(n_radial):
            a = i * n_radial + k
            b = i * n_radial + (k + 1) % n_radial
            c = (i + 1) * n_radial + k
            d = (i + 1) * n_radial + (k + 1) % n_radial
            tris += [(a, b, c), (b, d, c)]
    if close_caps:
        bot = len(verts)
        verts.append(p0.copy())
        top = len(verts)
        verts.append(p1.copy())
        for k in range(n_radial):
            a, b = k, (k + 1) % n_radial
            tris.append((bot, b, a))
            a2 = (n_axial - 1) * n_radial + k
            b2 = (n_axial - 1) * n_radial + (k + 1) % n_radial
            tris.append((top, a2, b2))
    return Mesh(np.array(verts), np.array(tris, dtype=np.int64))


def grid_strip(n: int = 6, spacing: float = 1.0) -> Mesh:
    """Two rows of n vertices triangulated into a flat strip."""
    verts = []
    for r in range(2):
        for i in range(n):
            verts.append((i * spacing, r * spacing, 0.0))
    tris = []
    for i in range(n - 1):
        a, b, c, d = i, i + 1, n + i, n + i + 1
        tris += [(a, b, c), (b, d, c)]
    return Mesh(np.array(verts), np.array(tris, dtype=np.int64))


# ----------------------------------------------------------------- oracles

def dijkstra_brute(mesh: Mesh, source: int) -> np.ndarray:
    """Textbook heap Dijkstra over mesh edges, independent of scipy."""
    n = mesh.n_vertices
    adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for a, b in mesh.edges():
        w = float(np.linalg.norm(mesh.vertices[a] - mesh.vertices[b]))
        adj[a].append((b, w))
        adj[b].append((a, w))
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def prufer_to_edges(seq: tuple[int, ...], n: int) -> list[tuple[int, int]]:
    """Decode a Prüfer sequence into its labeled tree's edge list."""
    seq = list(seq)
    degree = [1] * n
    for s in seq:
        degree[s] += 1
    edges = []
    for s in seq:
        for leaf in range(n):
            if degree[leaf] == 1:
                edges.append((min(leaf, s), max(leaf, s)))
                degree[leaf] -= 1
                degree[s] -= 1
                break
    last = [i for i in range(n) if degree[i] == 1]
    edges.append((min(last), max(last)))
    return edges


def all_spanning_trees(n: int):
    """Every labeled tree on n nodes via Prüfer enumeration."""
    import itertools

    if n == 1:
        yield []
        return
    if n == 2:
        yield [(0, 1)]
        return
    for seq in itertools.product(range(n), repeat=n - 2):
        yield prufer_to_edges(seq, n)


def best_product_tree(probs: np.ndarray) -> frozenset:
    """Brute-force maximum-probability spanning tree edge set."""
    n = len(probs)
    best, best_score = None, -np.inf
    for edges in all_spanning_trees(n):
        score = float(np.sum([np.log(probs[i, j]) for i, j in edges]))
        if score > best_score:
            best_score = score
            best = frozenset(edges)
    return best


def finite_diff(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-5) -> float:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def normalized_cube() -> Mesh:
    from rigforge.mesh import parse_obj

    return normalize(parse_obj(CUBE_OBJ))
