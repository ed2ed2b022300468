import json
import time
import urllib.error
import urllib.request

import numpy as np
import pytest

from rigforge.assets import make_bird
from rigforge.mesh import write_obj
from rigforge.pipeline import RigPipeline
from rigforge.server import RigServer


def request(port, method, path, body=None):
    url = f"http://127.0.0.1:{port}{path}"
    data = body if body is None or isinstance(body, bytes) else json.dumps(body).encode()
    req = urllib.request.Request(url, data=data, method=method)
    try:
        with urllib.request.urlopen(req, timeout=120) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


@pytest.fixture(scope="module")
def server():
    pipeline = RigPipeline.from_checkpoint(None, seed=0)
    srv = RigServer(pipeline)
    port = srv.start(0)
    yield srv, port
    srv.stop()


@pytest.fixture(scope="module")
def model_id(server):
    _, port = server
    obj = write_obj(make_bird().mesh).encode()
    status, payload = request(port, "POST", "/model", obj)
    assert status == 200
    return payload["model_id"]


class TestEndpoints:
    def test_mesh_roundtrip(self, server, model_id):
        _, port = server
        status, payload = request(port, "GET", f"/mesh/{model_id}")
        assert status == 200
        assert len(payload["vertices"]) == make_bird().mesh.n_vertices
        assert len(payload["triangles"]) == make_bird().mesh.n_triangles

    def test_skeleton_deterministic_and_fast_on_cached_path(self, server, model_id):
        _, port = server
        body = {"model_id": model_id, "bandwidth": 0.06}
        t0 = time.time()
        s1, p1 = request(port, "POST", "/skeleton", body)
        dt = time.time() - t0
        s2, p2 = request(port, "POST", "/skeleton", body)
        assert s1 == s2 == 200
        assert p1 == p2
        assert p1["joint_count"] == len(p1["joints"])
        assert dt < 2.0  # cached cloud: clustering + connectivity only

    def test_bandwidth_sweep_changes_detail(self, server, model_id):
        _, port = server
        counts = {}
        for bw in (0.02, 0.09):
            status, payload = request(port, "POST", "/skeleton",
                                      {"model_id": model_id, "bandwidth": bw})
            assert status == 200
            counts[bw] = payload["joint_count"]
        assert counts[0.02] >= counts[0.09]

    def test_bandwidth_out_of_range_422(self, server, model_id):
        _, port = server
        status, payload = request(port, "POST", "/skeleton",
                                  {"model_id": model_id, "bandwidth": 0.5})
        assert status == 422
        assert "0.1" in payload["error"]

    def test_unknown_model_404(self, server):
        _, port = server
        status, _ = request(port, "POST", "/skeleton",
                            {"model_id": "m999", "bandwidth": 0.05})
        assert status == 404
        status, _ = request(port, "GET", "/mesh/m999")
        assert status == 404

    def test_skin_after_skeleton(self, server, model_id):
        _, port = server
        status, skel = request(port, "POST", "/skeleton",
                               {"model_id": model_id, "bandwidth": 0.06})
        assert status == 200
        status, payload = request(port, "GET", f"/skin/{model_id}")
        assert status == 200
        w = np.array(payload["weights"])
        assert w.shape[1] == len(skel["bones"])
        assert np.abs(w.sum(axis=1) - 1.0).max() < 1e-6

    def test_skin_before_skeleton_409(self, server):
        _, port = server
        obj = write_obj(make_bird().mesh).encode()
        status, payload = request(port, "POST", "/model", obj)
        fresh = payload["model_id"]
        status, payload = request(port, "GET", f"/skin/{fresh}")
        assert status == 409

    def test_reupload_gets_new_id(self, server, model_id):
        _, port = server
        obj = write_obj(make_bird().mesh).encode()
        status, payload = request(port, "POST", "/model", obj)
        assert payload["model_id"] != model_id

    def test_malformed_obj_rejected(self, server):
        _, port = server
        status, payload = request(port, "POST", "/model", b"not an obj")
        assert status == 422

    def test_bandwidth_range_endpoint(self, server):
        _, port = server
        status, payload = request(port, "GET", "/bandwidth-range")
        assert status == 200
        assert payload["min"] == 0.01 and payload["max"] == 0.1
