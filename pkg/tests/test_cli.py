import json

import numpy as np
import pytest

from rigforge.assets import make_bird, save_dataset
from rigforge.cli import main
from rigforge.mesh import parse_obj, write_obj
from rigforge.rigfile import parse_rig


@pytest.fixture(scope="module")
def asset_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("assets")
    bird = make_bird()
    (d / "bird.obj").write_text(write_obj(bird.mesh))
    from rigforge.rigfile import write_rig

    (d / "bird.rig").write_text(write_rig(bird.rig_file()))
    return d


class TestRigCommand:
    def test_rig_output_passes_invariants(self, asset_dir, tmp_path):
        out = tmp_path / "pred.rig"
        code = main(["rig", str(asset_dir / "bird.obj"), "-o", str(out), "--seed", "3"])
        assert code == 0
        rig = parse_rig(out.read_text())
        rig.validate()
        skel = rig.skeleton()
        assert skel.n_joints >= 1
        assert len(skel.bones()) == skel.n_joints - 1
        for v, entries in rig.skin.items():
            assert abs(sum(w for _n, w in entries) - 1.0) < 1e-3

    def test_bandwidth_out_of_range_exits_2(self, asset_dir, tmp_path, capsys):
        code = main(["rig", str(asset_dir / "bird.obj"),
                     "-o", str(tmp_path / "x.rig"), "--bandwidth", "0.2"])
        assert code == 2
        err = capsys.readouterr().err
        assert "0.01" in err and "0.1" in err

    def test_seeded_determinism_byte_identical(self, asset_dir, tmp_path):
        a = tmp_path / "a.rig"
        b = tmp_path / "b.rig"
        assert main(["rig", str(asset_dir / "bird.obj"), "-o", str(a), "--seed", "7"]) == 0
        assert main(["rig", str(asset_dir / "bird.obj"), "-o", str(b), "--seed", "7"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_file_exits_2(self, tmp_path):
        assert main(["rig", str(tmp_path / "nope.obj"), "-o", str(tmp_path / "o.rig")]) == 2

    def test_dump_bones_csv(self, asset_dir, tmp_path):
        out = tmp_path / "p.rig"
        csv = tmp_path / "bones.csv"
        code = main(["rig", str(asset_dir / "bird.obj"), "-o", str(out),
                     "--dump-bones", str(csv), "--seed", "1"])
        assert code == 0
        assert csv.read_text().splitlines()[0] == "i,j,p"


class TestEvalCommand:
    def test_identical_rig_scores_perfect(self, asset_dir, capsys):
        code = main(["eval", "--pred", str(asset_dir / "bird.rig"),
                     "--ref", str(asset_dir / "bird.rig"),
                     "--mesh", str(asset_dir / "bird.obj")])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["skeleton"]["cd_j2j"] == 0.0
        assert out["skeleton"]["cd_j2b"] == 0.0
        assert out["skeleton"]["cd_b2b"] == 0.0
        assert out["skeleton"]["iou"] == 1.0
        assert out["skeleton"]["precision"] == 1.0
        assert out["skeleton"]["recall"] == 1.0
        assert out["skeleton"]["tree_edit_distance"] == 0
        assert out["skin"]["precision"] == 1.0
        assert out["skin"]["avg_l1"] == 0.0
        assert out["skin"]["max_dist"] == 0.0

    def test_csv_mode(self, asset_dir, capsys):
        code = main(["eval", "--pred", str(asset_dir / "bird.rig"),
                     "--ref", str(asset_dir / "bird.rig"),
                     "--mesh", str(asset_dir / "bird.obj"), "--csv"])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("skeleton_cd_j2j")
        assert len(lines) == 2


class TestDeformCommand:
    def test_identity_pose_reproduces_mesh(self, asset_dir, tmp_path):
        pose = tmp_path / "pose.json"
        pose.write_text(json.dumps({"rotations": {}, "translation": [0, 0, 0]}))
        out = tmp_path / "posed.obj"
        code = main(["deform", "--mesh", str(asset_dir / "bird.obj"),
                     "--rig", str(asset_dir / "bird.rig"),
                     "--pose", str(pose), "-o", str(out)])
        assert code == 0
        deformed = parse_obj(out.read_text())
        original = parse_obj((asset_dir / "bird.obj").read_text())
        assert np.abs(deformed.vertices - original.vertices).max() < 1e-9

    def test_rotation_bends_serpent_tail(self, tmp_path):
        from rigforge.assets import make_serpent
        from rigforge.mesh import write_obj as wo
        from rigforge.rigfile import write_rig

        serpent = make_serpent()
        (tmp_path / "serpent.obj").write_text(wo(serpent.mesh))
        (tmp_path / "serpent.rig").write_text(write_rig(serpent.rig_file()))
        q = [0, 0, np.sin(np.pi / 8), np.cos(np.pi / 8)]
        pose = tmp_path / "pose.json"
        # seg_3 is mid-chain: everything below it should swing, the head stay
        pose.write_text(json.dumps({"rotations": {"seg_3": [float(x) for x in q]}}))
        out = tmp_path / "posed.obj"
        code = main(["deform", "--mesh", str(tmp_path / "serpent.obj"),
                     "--rig", str(tmp_path / "serpent.rig"),
                     "--pose", str(pose), "-o", str(out)])
        assert code == 0
        deformed = parse_obj(out.read_text())
        original = serpent.mesh
        delta = np.linalg.norm(deformed.vertices - original.vertices, axis=1)
        head = original.vertices[:, 1] < -0.2  # far side of the rotated joint
        tail = original.vertices[:, 1] > 0.45
        assert delta[tail].max() > 1e-2
        assert delta[head].max() < 1e-9

    def test_unknown_joint_exits_2(self, asset_dir, tmp_path):
        pose = tmp_path / "pose.json"
        pose.write_text(json.dumps({"rotations": {"nonexistent": [0, 0, 0, 1]}}))
        code = main(["deform", "--mesh", str(asset_dir / "bird.obj"),
                     "--rig", str(asset_dir / "bird.rig"),
                     "--pose", str(pose), "-o", str(tmp_path / "x.obj")])
        assert code == 2


class TestTrainCommand:
    def test_train_smoke(self, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        from rigforge.assets import make_spider
        from rigforge.mesh import write_obj as wo
        from rigforge.rigfile import write_rig

        spider = make_spider()
        (data / "spider.obj").write_text(wo(spider.mesh))
        (data / "spider.rig").write_text(write_rig(spider.rig_file()))
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("conn_steps=3\nconn_batch=2\nvoxel_resolution=32\n")
        ckpt = tmp_path / "conn.rfckpt"
        code = main(["train", "conn", "--data", str(data), "--config", str(cfg),
                     "-o", str(ckpt), "--seed", "0"])
        assert code == 0
        from rigforge.params import ParamStore

        store = ParamStore.load(ckpt)
        assert "bonenet.head.l2.W" in store.params
        assert store.adam["bonenet.head.l2.W"].step == 3
