import itertools

import numpy as np
import pytest

from rigforge.errors import SkeletonError
from rigforge.mesh import Mesh, normalize
from rigforge.metrics import (
    cd_b2b,
    cd_j2b,
    cd_j2j,
    hungarian_match,
    iou_precision_recall,
    local_shape_diameter,
    skeleton_report,
    skin_report,
    tree_edit_distance,
)
from rigforge.skeleton import Skeleton
from rigforge.skinning import lbs_deform, sample_random_pose
from rigforge.voxel import point_segment_distance

from helpers import icosphere, tube_mesh


def chain(points, root=0):
    points = np.asarray(points, dtype=float)
    parents = np.arange(-1, len(points) - 1)
    return Skeleton(points, parents, root=root)


def random_tree(rng, n):
    parents = np.full(n, -1, dtype=np.int64)
    for j in range(1, n):
        parents[j] = rng.integers(0, j)
    return Skeleton(rng.uniform(-0.5, 0.5, size=(n, 3)), parents, root=0)


# --------------------------------------------------- oracle: mapping TED

def canonical_orders(skel):
    """Preorder/postorder slots with the same canonical child key the
    implementation documents, rebuilt independently here."""
    kids = {j: list(skel.children(j)) for j in range(skel.n_joints)}
    sizes, depths = {}, {}

    def measure(j):
        s, d = 1, 1
        for c in kids[j]:
            measure(c)
            s += sizes[c]
            d = max(d, depths[c] + 1)
        sizes[j], depths[j] = s, d

    measure(skel.root)
    for j in kids:
        kids[j].sort(key=lambda c: (sizes[c], depths[c], tuple(skel.joints[c])))
    pre, post = {}, {}

    def walk(j):
        pre[j] = len(pre)
        for c in kids[j]:
            walk(c)
        post[j] = len(post)

    walk(skel.root)
    return pre, post


def ted_mapping_oracle(a: Skeleton, b: Skeleton, relabel) -> int:
    """Exhaustive minimum-cost valid ordered mapping (Tai formulation)."""
    pre_a, post_a = canonical_orders(a)
    pre_b, post_b = canonical_orders(b)
    nodes_a = list(range(a.n_joints))
    nodes_b = list(range(b.n_joints))
    best = a.n_joints + b.n_joints

    def consistent(m, na, nb):
        for (xa, xb) in m:
            if (pre_a[na] < pre_a[xa]) != (pre_b[nb] < pre_b[xb]):
                return False
            if (post_a[na] < post_a[xa]) != (post_b[nb] < post_b[xb]):
                return False
        return True

    def recurse(i, mapping, used_b, cost):
        nonlocal best
        if cost - len(mapping) * 0 >= best:
            pass
        if i == len(nodes_a):
            total = cost + (a.n_joints - len(mapping)) + (b.n_joints - len(mapping))
            best = min(best, total)
            return
        na = nodes_a[i]
        recurse(i + 1, mapping, used_b, cost)  # delete na
        for nb in nodes_b:
            if nb in used_b or not consistent(mapping, na, nb):
                continue
            mapping.append((na, nb))
            used_b.add(nb)
            recurse(i + 1, mapping, used_b, cost + relabel(na, nb))
            mapping.pop()
            used_b.remove(nb)

    recurse(0, [], set(), 0)
    return best


class TestChamferVariants:
    def test_identical_all_zero(self):
        s = chain([[0, 0, 0], [0.3, 0, 0], [0.6, 0.1, 0]])
        assert cd_j2j(s, s) == 0.0
        assert cd_j2b(s, s) == 0.0
        assert cd_b2b(s, s) == 0.0

    def test_single_joints_distance(self):
        a = Skeleton(np.array([[0.0, 0, 0]]), np.array([-1]), root=0)
        b = Skeleton(np.array([[0.0, 0.7, 0]]), np.array([-1]), root=0)
        assert cd_j2j(a, b) == pytest.approx(0.7)

    def test_j2b_low_when_joint_slides_along_bone(self):
        ref = chain([[0, 0, 0], [0.5, 0, 0], [1.0, 0, 0]])
        pred = chain([[0, 0, 0], [0.73, 0, 0], [1.0, 0, 0]])  # middle joint slid
        j2j = cd_j2j(pred, ref)
        j2b = cd_j2b(pred, ref)
        assert j2j > 0.05
        assert j2b < 1e-12  # bones overlap exactly

    def test_b2b_matches_brute_force_samples(self):
        rng = np.random.default_rng(0)
        a = chain(rng.uniform(-0.4, 0.4, size=(4, 3)))
        b = chain(rng.uniform(-0.4, 0.4, size=(3, 3)))
        t = (np.arange(32) + 0.5) / 32
        vals_ab = []
        for s0, s1 in a.bone_segments():
            for tt in t:
                p = s0 * (1 - tt) + s1 * tt
                vals_ab.append(min(point_segment_distance(p[None], u, v)[0]
                                   for u, v in b.bone_segments()))
        vals_ba = []
        for s0, s1 in b.bone_segments():
            for tt in t:
                p = s0 * (1 - tt) + s1 * tt
                vals_ba.append(min(point_segment_distance(p[None], u, v)[0]
                                   for u, v in a.bone_segments()))
        expected = (np.mean(vals_ab) + np.mean(vals_ba)) / 2
        assert cd_b2b(a, b) == pytest.approx(expected, rel=1e-12)

    def test_symmetry_under_swap(self):
        rng = np.random.default_rng(1)
        a = chain(rng.uniform(-0.4, 0.4, size=(5, 3)))
        b = chain(rng.uniform(-0.4, 0.4, size=(4, 3)))
        assert cd_j2j(a, b) == pytest.approx(cd_j2j(b, a))
        assert cd_j2b(a, b) == pytest.approx(cd_j2b(b, a))
        assert cd_b2b(a, b) == pytest.approx(cd_b2b(b, a))

    def test_bonless_rejected(self):
        lone = Skeleton(np.zeros((1, 3)), np.array([-1]), root=0)
        full = chain([[0, 0, 0], [0.3, 0, 0]])
        with pytest.raises(SkeletonError):
            cd_j2b(lone, full)
        with pytest.raises(SkeletonError):
            cd_b2b(full, lone)


class TestMatching:
    def test_identical_perfect_scores(self):
        mesh = normalize(icosphere(2))
        s = chain([[0, 0, -0.2], [0, 0, 0], [0, 0, 0.2]])
        iou, prec, rec = iou_precision_recall(s, s, mesh)
        assert (iou, prec, rec) == (1.0, 1.0, 1.0)

    def test_extra_far_joint_counting(self):
        mesh = normalize(icosphere(2))
        ref = chain([[0, 0, -0.2], [0, 0, -0.05], [0, 0, 0.1], [0, 0, 0.25]])
        pred_joints = np.vstack([ref.joints, [[0.45, 0.45, 0.45]]])  # one far extra
        pred = chain(pred_joints)
        iou, prec, rec = iou_precision_recall(pred, ref, mesh)
        assert rec == 1.0
        assert prec == pytest.approx(4 / 5)
        assert iou == pytest.approx(4 / 5)

    def test_hungarian_equals_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(2, 7))
            m = int(rng.integers(2, 7))
            cost = rng.uniform(size=(n, m))
            pairs = hungarian_match(cost)
            got = sum(cost[i, j] for i, j in pairs)
            k = min(n, m)
            best = np.inf
            if n <= m:
                for cols in itertools.permutations(range(m), n):
                    best = min(best, sum(cost[i, c] for i, c in enumerate(cols)))
            else:
                for rows in itertools.permutations(range(n), m):
                    best = min(best, sum(cost[r, j] for j, r in enumerate(rows)))
            assert len(pairs) == k
            assert got == pytest.approx(best, rel=1e-12)

    def test_iou_bounded_by_precision_and_recall(self):
        rng = np.random.default_rng(3)
        mesh = normalize(icosphere(2))
        for _ in range(10):
            pred = random_tree(rng, int(rng.integers(2, 7)))
            ref = random_tree(rng, int(rng.integers(2, 7)))
            iou, prec, rec = iou_precision_recall(pred, ref, mesh)
            assert iou <= prec + 1e-12
            assert iou <= rec + 1e-12


class TestLocalShapeDiameter:
    def test_cylinder_radius(self):
        mesh = normalize(tube_mesh([0, 0, 0], [0, 0, 4.0], 0.6, n_radial=16, n_axial=17))
        v = mesh.vertices
        radius = np.sqrt(v[:, 0] ** 2 + v[:, 1] ** 2)[np.abs(v[:, 2]) < 0.1].mean()
        skel = chain([[0, 0, -0.3], [0, 0, 0.0], [0, 0, 0.3]])
        d = local_shape_diameter(mesh, skel, joint=1)
        assert d == pytest.approx(radius, rel=0.05)


class TestTreeEditDistance:
    def test_identical_zero(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            t = random_tree(rng, int(rng.integers(2, 6)))
            assert tree_edit_distance(t, t, 1e-9) == 0

    def test_one_extra_leaf(self):
        base = chain([[0, 0, 0], [0.2, 0, 0], [0.4, 0, 0]])
        bigger_joints = np.vstack([base.joints, [[0.4, 0.2, 0.0]]])
        bigger = Skeleton(bigger_joints, np.array([-1, 0, 1, 2]), root=0)
        assert tree_edit_distance(bigger, base, 1e-9) == 1
        assert tree_edit_distance(base, bigger, 1e-9) == 1

    def test_matches_mapping_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a = random_tree(rng, int(rng.integers(1, 6)))
            b = random_tree(rng, int(rng.integers(1, 6)))
            tol = float(rng.choice([0.0, 0.3, 10.0]))

            def relabel(i, j):
                return 0 if np.linalg.norm(a.joints[i] - b.joints[j]) <= tol else 1

            expected = ted_mapping_oracle(a, b, relabel)
            got = tree_edit_distance(a, b, tol)
            assert got == expected

    def test_triangle_inequality_spot(self):
        rng = np.random.default_rng(6)
        for _ in range(15):
            x = random_tree(rng, int(rng.integers(2, 7)))
            y = random_tree(rng, int(rng.integers(2, 7)))
            z = random_tree(rng, int(rng.integers(2, 7)))
            dxz = tree_edit_distance(x, z, 0.0)
            dxy = tree_edit_distance(x, y, 0.0)
            dyz = tree_edit_distance(y, z, 0.0)
            assert dxz <= dxy + dyz


class TestSkinReport:
    def test_identical_weights_perfect(self):
        mesh = normalize(icosphere(1))
        skel = chain([[0, 0, -0.2], [0, 0, 0.0], [0, 0, 0.2]])
        rng = np.random.default_rng(7)
        w = rng.dirichlet(np.ones(2), size=mesh.n_vertices)
        rep = skin_report(w, w, skel, mesh, seed=3)
        assert rep.precision == 1.0 and rep.recall == 1.0
        assert rep.avg_l1 == 0.0
        assert rep.avg_dist == 0.0 and rep.max_dist == 0.0

    def test_uniform_vs_onehot_l1(self):
        mesh = normalize(icosphere(1))
        skel = chain([[0, 0, -0.2], [0, 0, 0.0], [0, 0, 0.2]])
        pred = np.full((mesh.n_vertices, 2), 0.5)
        ref = np.zeros((mesh.n_vertices, 2))
        ref[:, 0] = 1.0
        rep = skin_report(pred, ref, skel, mesh, seed=0)
        assert rep.avg_l1 == pytest.approx(1.0)

    def test_matches_scripted_recomputation(self):
        # independent straight-line recomputation of every field
        mesh = normalize(icosphere(1))
        skel = chain([[0, 0, -0.25], [0, 0, 0.0], [0, 0, 0.25]])
        rng = np.random.default_rng(8)
        pred = rng.dirichlet(np.ones(2), size=mesh.n_vertices)
        ref = rng.dirichlet(np.ones(2), size=mesh.n_vertices)
        pred[pred < 5e-3] = 0.0  # exercise the influence threshold
        rep = skin_report(pred, ref, skel, mesh, seed=11, n_poses=4)

        thr = 1e-4
        precs, recs = [], []
        for v in range(mesh.n_vertices):
            pi = set(np.flatnonzero(pred[v] > thr))
            ri = set(np.flatnonzero(ref[v] > thr))
            inter = len(pi & ri)
            precs.append(inter / len(pi) if pi else (1.0 if not ri else 0.0))
            recs.append(inter / len(ri) if ri else (1.0 if not pi else 0.0))
        l1 = np.mean([np.abs(pred[v] - ref[v]).sum() for v in range(mesh.n_vertices)])
        gaps = []
        for i in range(4):
            pose = sample_random_pose(skel, seed=11 + i)
            a = lbs_deform(mesh, skel, pred, pose)
            b = lbs_deform(mesh, skel, ref, pose)
            gaps.append(np.linalg.norm(a - b, axis=1))
        gaps = np.stack(gaps)
        assert rep.precision == pytest.approx(np.mean(precs), rel=1e-12)
        assert rep.recall == pytest.approx(np.mean(recs), rel=1e-12)
        assert rep.avg_l1 == pytest.approx(l1, rel=1e-12)
        assert rep.avg_dist == pytest.approx(gaps.mean(), rel=1e-12)
        assert rep.max_dist == pytest.approx(gaps.max(), rel=1e-12)


class TestFullReport:
    def test_self_report_is_perfect(self):
        mesh = normalize(icosphere(2))
        skel = chain([[0, 0, -0.3], [0, 0, 0.0], [0, 0, 0.3]])
        rep = skeleton_report(skel, skel, mesh)
        assert rep.cd_j2j == 0.0 and rep.cd_j2b == 0.0 and rep.cd_b2b == 0.0
        assert rep.iou == 1.0 and rep.precision == 1.0 and rep.recall == 1.0
        assert rep.tree_edit_distance == 0
        assert set(rep.to_dict()) == {
            "cd_j2j", "cd_j2b", "cd_b2b", "iou", "precision", "recall",
            "tree_edit_distance",
        }
