import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rigforge.errors import MeshError
from rigforge.mesh import (
    Mesh,
    SymmetryPlane,
    bilateral_plane,
    build_vertex_graph,
    load_and_normalize,
    normalize,
    parse_obj,
    reflect,
    sample_edge_dropout,
)

from helpers import CUBE_OBJ, dijkstra_brute, grid_strip, icosphere


class TestParseAndNormalize:
    def test_unit_cube(self):
        mesh = load_and_normalize(CUBE_OBJ)
        assert mesh.n_vertices == 8
        ext = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
        assert ext.max() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(mesh.vertices.mean(axis=0), 0.0, atol=1e-12)

    def test_similarity_invariance(self):
        base = load_and_normalize(CUBE_OBJ)
        scaled = parse_obj(CUBE_OBJ)
        scaled.vertices = scaled.vertices * 7.0 + np.array([3.0, -2.0, 11.0])
        again = normalize(scaled)
        assert np.allclose(base.vertices, again.vertices, atol=1e-12)
        assert np.array_equal(base.triangles, again.triangles)

    def test_fan_triangulation_matches_reference(self):
        # independent fan triangulator for the same 5-gon
        pent = "\n".join(
            ["v 0 0 0", "v 1 0 0", "v 1.5 1 0", "v 0.5 2 0", "v -0.5 1 0", "f 1 2 3 4 5"]
        )
        mesh = parse_obj(pent)
        idx = [0, 1, 2, 3, 4]
        expected = [(idx[0], idx[k], idx[k + 1]) for k in range(1, 4)]
        assert mesh.n_triangles == 3
        assert [tuple(t) for t in mesh.triangles] == expected

    def test_vertex_order_preserved(self):
        mesh = parse_obj(CUBE_OBJ)
        assert np.allclose(mesh.vertices[1], [1, 0, 0])

    def test_normalize_idempotent_bit_for_bit(self):
        once = load_and_normalize(CUBE_OBJ)
        twice = normalize(once)
        assert twice.vertices.tobytes() == once.vertices.tobytes()

    def test_parse_failure(self):
        with pytest.raises(MeshError):
            parse_obj("v 1 2\nf 1 2 3\n")

    def test_zero_area_bbox(self):
        degenerate = "v 0 0 0\nv 0 0 0\nv 0 0 0\nf 1 2 3\n"
        with pytest.raises(MeshError):
            load_and_normalize(degenerate)

    def test_face_too_short(self):
        with pytest.raises(MeshError):
            parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n")

    def test_ignores_normals_and_uvs(self):
        obj = CUBE_OBJ + "vn 0 0 1\nvt 0.5 0.5\n"
        mesh = parse_obj(obj.replace("f 1 2 3 4", "f 1/1/1 2/1/1 3/1/1 4/1/1"))
        assert mesh.n_vertices == 8


class TestVertexGraph:
    def test_triangle_complete(self):
        mesh = Mesh(np.array([[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]]),
                    np.array([[0, 1, 2]]))
        g = build_vertex_graph(mesh, radius=10.0)
        for v in range(3):
            others = sorted(set(range(3)) - {v})
            assert list(g.ring_neighbors[v]) == others
            assert list(g.geodesic_neighbors[v]) == others

    def test_truncation_below_edge_length(self):
        mesh = grid_strip(n=6, spacing=1.0)
        g = build_vertex_graph(mesh, radius=0.5)
        assert all(len(nbrs) == 0 for nbrs in g.geodesic_neighbors)
        assert all(len(r) > 0 for r in g.ring_neighbors)

    def test_no_self_neighbors(self):
        g = build_vertex_graph(icosphere(1), radius=0.5)
        for v in range(g.n_vertices):
            assert v not in g.ring_neighbors[v]
            assert v not in g.geodesic_neighbors[v]

    def test_ring_symmetry(self):
        g = build_vertex_graph(icosphere(1), radius=0.3)
        for v in range(g.n_vertices):
            for u in g.ring_neighbors[v]:
                assert v in g.ring_neighbors[u]

    def test_geodesic_ball_matches_dijkstra_oracle(self):
        mesh = normalize(icosphere(3))  # 642 vertices
        assert mesh.n_vertices == 642
        radius = 0.06
        g = build_vertex_graph(mesh, radius=radius)
        rng = np.random.default_rng(7)
        for v in rng.choice(mesh.n_vertices, size=12, replace=False):
            dist = dijkstra_brute(mesh, int(v))
            expected = sorted(u for u in range(mesh.n_vertices)
                              if u != v and dist[u] <= radius)
            assert list(g.geodesic_neighbors[v]) == expected

    def test_geodesic_membership_symmetric(self):
        mesh = normalize(icosphere(2))
        g = build_vertex_graph(mesh, radius=0.07)
        sets = [set(nbrs) for nbrs in g.geodesic_neighbors]
        for v in range(mesh.n_vertices):
            for u in g.geodesic_neighbors[v]:
                assert v in sets[u]

    def test_isolated_vertex_reported(self):
        mesh = Mesh(
            np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5.0, 5.0, 5.0]]),
            np.array([[0, 1, 2]]),
        )
        g = build_vertex_graph(mesh, radius=0.5)
        assert list(g.isolated) == [3]
        assert len(g.ring_neighbors[3]) == 0


class TestEdgeDropout:
    def test_under_budget_kept(self):
        mesh = Mesh(np.array([[0, 0, 0], [1, 0, 0], [0.5, 1, 0]]), np.array([[0, 1, 2]]))
        g = build_vertex_graph(mesh, radius=10.0)
        out = sample_edge_dropout(g, max_edges=15, seed=0)
        for v in range(3):
            assert list(out.geodesic_neighbors[v]) == list(g.geodesic_neighbors[v])

    def test_subsample_to_budget(self):
        mesh = normalize(icosphere(2))
        g = build_vertex_graph(mesh, radius=0.45)
        assert max(len(n) for n in g.geodesic_neighbors) > 15
        out = sample_edge_dropout(g, max_edges=15, seed=3)
        for v in range(g.n_vertices):
            nbrs = out.geodesic_neighbors[v]
            assert len(nbrs) == min(len(g.geodesic_neighbors[v]), 15)
            assert set(nbrs) <= set(g.geodesic_neighbors[v])
            assert list(out.ring_neighbors[v]) == list(g.ring_neighbors[v])

    def test_deterministic_per_seed(self):
        g = build_vertex_graph(normalize(icosphere(2)), radius=0.45)
        a = sample_edge_dropout(g, max_edges=15, seed=11)
        b = sample_edge_dropout(g, max_edges=15, seed=11)
        c = sample_edge_dropout(g, max_edges=15, seed=12)
        assert all(np.array_equal(x, y)
                   for x, y in zip(a.geodesic_neighbors, b.geodesic_neighbors))
        assert any(not np.array_equal(x, y)
                   for x, y in zip(a.geodesic_neighbors, c.geodesic_neighbors))


class TestReflect:
    def test_point_on_plane_fixed(self):
        plane = bilateral_plane()
        p = np.array([[0.0, 0.3, -0.8]])
        assert np.allclose(reflect(p, plane), p)

    def test_axis_reflection(self):
        out = reflect(np.array([[0.3, 0.0, 0.0]]), bilateral_plane())
        assert np.allclose(out, [[-0.3, 0.0, 0.0]])

    def test_involution(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(50, 3))
        plane = SymmetryPlane(np.array([1.0, 2.0, -0.5]), offset=0.3)
        back = reflect(reflect(pts, plane), plane)
        assert np.abs(back - pts).max() < 1e-12

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_isometry(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-1, 1, size=(12, 3))
        plane = SymmetryPlane(rng.normal(size=3), offset=float(rng.normal()))
        ref = reflect(pts, plane)
        d0 = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        d1 = np.linalg.norm(ref[:, None] - ref[None, :], axis=-1)
        assert np.abs(d0 - d1).max() < 1e-12
