import numpy as np
import pytest

from rigforge.config import RunConfig
from rigforge.errors import ConfigError, RigFileError
from rigforge.rigfile import parse_rig, rig_from_prediction, write_rig
from rigforge.skeleton import Skeleton

TWO_JOINT_RIG = """\
joints hip 0.0 0.0 0.0
joints head 0.0 0.0 0.4
root hip
skin 0 head 1.0
hier hip head
"""


class TestParse:
    def test_two_joint_rig(self):
        rig = parse_rig(TWO_JOINT_RIG)
        assert rig.n_joints == 2
        skel = rig.skeleton()
        assert len(skel.bones()) == 1
        assert rig.joint_names[rig.root] == "hip"
        assert rig.skin[0] == [("head", 1.0)]

    def test_round_trip_byte_identical(self):
        rig = parse_rig(TWO_JOINT_RIG)
        once = write_rig(rig)
        twice = write_rig(parse_rig(once))
        assert once == twice

    def test_round_trip_preserves_random_rig(self):
        rng = np.random.default_rng(0)
        n = 6
        parents = np.array([-1, 0, 0, 1, 2, 2])
        skel = Skeleton(rng.uniform(-0.5, 0.5, size=(n, 3)), parents, root=0,
                        names=[f"j{i}" for i in range(n)])
        weights = rng.dirichlet(np.ones(n - 1), size=10)
        rig = rig_from_prediction(skel, weights)
        text = write_rig(rig)
        again = parse_rig(text)
        assert write_rig(again) == text
        assert np.allclose(again.joint_positions[again.root], skel.joints[0])

    def test_renormalization_warning(self):
        text = TWO_JOINT_RIG.replace("skin 0 head 1.0", "skin 0 head 0.98")
        rig = parse_rig(text)
        assert rig.warnings
        assert rig.skin[0][0][1] == pytest.approx(1.0)

    def test_unknown_keyword(self):
        with pytest.raises(RigFileError):
            parse_rig(TWO_JOINT_RIG + "bogus 1 2 3\n")

    def test_dangling_hier(self):
        with pytest.raises(RigFileError):
            parse_rig(TWO_JOINT_RIG.replace("hier hip head", "hier hip knee"))

    def test_duplicate_root(self):
        with pytest.raises(RigFileError):
            parse_rig(TWO_JOINT_RIG + "root head\n")

    def test_two_parents_rejected(self):
        text = """\
joints a 0 0 0
joints b 0 0 1
joints c 0 0 2
root a
hier a b
hier a c
hier b c
"""
        with pytest.raises(RigFileError):
            parse_rig(text)

    def test_skin_on_non_bone_rejected(self):
        # root is not a bone name (bones are named by child joints)
        with pytest.raises(RigFileError):
            parse_rig(TWO_JOINT_RIG.replace("skin 0 head 1.0", "skin 0 hip 1.0"))

    def test_cycle_rejected(self):
        text = """\
joints a 0 0 0
joints b 0 0 1
root a
hier a b
hier b a
"""
        with pytest.raises(RigFileError):
            parse_rig(text)


class TestDenseWeights:
    def test_prune_and_renormalize(self):
        skel = Skeleton(np.array([[0, 0, 0], [0, 0, 0.5], [0, 0.5, 0]]),
                        np.array([-1, 0, 0]), root=0, names=["r", "a", "b"])
        w = np.array([[0.99995, 0.00005]])  # second bone below the 1e-4 prune
        rig = rig_from_prediction(skel, w)
        assert len(rig.skin[0]) == 1
        assert rig.skin[0][0][1] == pytest.approx(1.0)
        dense = rig.dense_weights(1)
        assert dense.shape == (1, 2)
        assert dense.sum() == pytest.approx(1.0)


class TestRunConfig:
    def test_round_trip(self):
        cfg = RunConfig(ball_radius=0.07, joint_steps=123, bandwidth_override=0.05,
                        use_symmetry=False, data_dir="/tmp/data")
        text = cfg.to_text()
        again = RunConfig.from_text(text)
        assert again == cfg

    def test_defaults_from_empty(self):
        assert RunConfig.from_text("") == RunConfig()

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig.from_text("nonsense=1\n")

    def test_bandwidth_range_enforced(self):
        with pytest.raises(ConfigError):
            RunConfig(bandwidth_override=0.5).validate()
        with pytest.raises(ConfigError):
            RunConfig.from_text("bandwidth_override=0.005")

    def test_bad_value_type(self):
        with pytest.raises(ConfigError):
            RunConfig.from_text("joint_steps=abc")


class TestBundledAssets:
    def test_five_characters_in_range(self):
        from rigforge.assets import bundled_characters

        chars = bundled_characters()
        assert len(chars) == 5
        for c in chars:
            assert 1000 <= c.mesh.n_vertices <= 5000
            c.skeleton.validate()
            assert np.abs(c.weights.sum(axis=1) - 1.0).max() < 1e-9
            ext = c.mesh.vertices.max(axis=0) - c.mesh.vertices.min(axis=0)
            assert ext.max() == pytest.approx(1.0, abs=1e-9)

    def test_dataset_round_trip(self, tmp_path):
        from rigforge.assets import load_dataset, save_dataset

        save_dataset(tmp_path)
        loaded = load_dataset(tmp_path)
        assert len(loaded) == 5
        for name, mesh, rig in loaded:
            skel = rig.skeleton()
            assert skel.n_joints >= 5
            dense = rig.dense_weights(mesh.n_vertices)
            assert np.abs(dense.sum(axis=1) - 1.0).max() < 2e-3
