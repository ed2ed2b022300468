"""Local HTTP service backing the interactive viewer.

Endpoints (JSON unless noted):

    POST /model              OBJ bytes -> {"model_id": ...}; precomputes the
                             displaced cloud, attention, and voxel grid once
    POST /skeleton           {"model_id", "bandwidth"} -> joints/bones/root,
                             re-running only clustering + connectivity
    GET  /skin/<model_id>    per-vertex weights for the last skeleton
    GET  /mesh/<model_id>    vertices and triangles
    GET  /...                static viewer files, when a directory is given

Errors: 404 unknown model, 422 bandwidth out of range, 409 skin requested
before any skeleton.  Requests for one model are serialized; distinct models
may run concurrently (thread count capped by RIGFORGE_THREADS).
"""

from __future__ import annotations

import json
import logging
import mimetypes
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .config import BANDWIDTH_MAX, BANDWIDTH_MIN
from .errors import RigforgeError
from .mesh import load_and_normalize
from .pipeline import ModelContext, RigPipeline

logger = logging.getLogger(__name__)


class RigServer:
    def __init__(self, pipeline: RigPipeline, static_dir: str | None = None):
        self.pipeline = pipeline
        self.static_dir = Path(static_dir) if static_dir else None
        self.models: dict[str, ModelContext] = {}
        self.locks: dict[str, threading.Lock] = {}
        self.registry_lock = threading.Lock()
        self.counter = 0
        max_workers = int(os.environ.get("RIGFORGE_THREADS", "4"))
        self.worker_gate = threading.BoundedSemaphore(max(1, max_workers))
        self.httpd: ThreadingHTTPServer | None = None

    # ------------------------------------------------------------- actions

    def add_model(self, obj_bytes: bytes) -> str:
        mesh = load_and_normalize(obj_bytes)
        ctx = self.pipeline.precompute(mesh)
        with self.registry_lock:
            self.counter += 1
            model_id = f"m{self.counter}"
            self.models[model_id] = ctx
            self.locks[model_id] = threading.Lock()
        return model_id

    def skeleton_response(self, model_id: str, bandwidth: float) -> dict:
        ctx = self.models[model_id]
        with self.locks[model_id]:
            skeleton = self.pipeline.predict_skeleton(ctx, bandwidth=bandwidth)
            return {
                "joints": [{"x": float(x), "y": float(y), "z": float(z)}
                           for x, y, z in skeleton.joints],
                "bones": [[int(p), int(c)] for p, c in skeleton.bones()],
                "root": int(skeleton.root),
                "joint_count": int(skeleton.n_joints),
                "bandwidth": bandwidth,
            }

    def skin_response(self, model_id: str) -> dict:
        ctx = self.models[model_id]
        with self.locks[model_id]:
            skeleton = ctx.skeleton
            if skeleton is None:
                raise _HttpError(409, "request a skeleton before skinning")
            if skeleton.n_joints < 2:
                raise _HttpError(409, "current skeleton has no bones to skin")
            weights = self.pipeline.predict_skin(ctx, skeleton)
            return {
                "bones": [[int(p), int(c)] for p, c in skeleton.bones()],
                "weights": [[float(w) for w in row] for row in weights],
            }

    def mesh_response(self, model_id: str) -> dict:
        ctx = self.models[model_id]
        return {
            "vertices": [[float(v) for v in row] for row in ctx.mesh.vertices],
            "triangles": [[int(i) for i in row] for row in ctx.mesh.triangles],
        }

    def bandwidth_range(self) -> dict:
        return {"min": BANDWIDTH_MIN, "max": BANDWIDTH_MAX,
                "default": self.pipeline.learned_bandwidth}

    # ------------------------------------------------------------ plumbing

    def make_handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                logger.debug("http: " + fmt, *args)

            def _send_json(self, code: int, payload: dict):
                body = json.dumps(payload).encode("utf-8")
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                self.wfile.write(body)

            def _guarded(self, fn):
                with server.worker_gate:
                    try:
                        code, payload = fn()
                        self._send_json(code, payload)
                    except _HttpError as e:
                        self._send_json(e.code, {"error": e.message})
                    except RigforgeError as e:
                        self._send_json(422, {"error": str(e)})
                    except Exception as e:  # pragma: no cover - defensive
                        logger.exception("request failed")
                        self._send_json(500, {"error": str(e)})

            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                body = self.rfile.read(length)
                if self.path == "/model":
                    self._guarded(lambda: (200, {"model_id": server.add_model(body)}))
                elif self.path == "/skeleton":
                    def run():
                        try:
                            req = json.loads(body)
                        except json.JSONDecodeError:
                            raise _HttpError(400, "body must be JSON")
                        model_id = req.get("model_id")
                        if model_id not in server.models:
                            raise _HttpError(404, f"unknown model {model_id!r}")
                        bw = req.get("bandwidth")
                        if bw is None:
                            bw = server.pipeline.learned_bandwidth
                        bw = float(bw)
                        if not (BANDWIDTH_MIN <= bw <= BANDWIDTH_MAX):
                            raise _HttpError(
                                422,
                                f"bandwidth {bw} outside [{BANDWIDTH_MIN}, {BANDWIDTH_MAX}]",
                            )
                        return 200, server.skeleton_response(model_id, bw)

                    self._guarded(run)
                else:
                    self._send_json(404, {"error": f"no such endpoint {self.path}"})

            def do_GET(self):
                parts = self.path.strip("/").split("/")
                if parts[0] == "skin" and len(parts) == 2:
                    def run():
                        if parts[1] not in server.models:
                            raise _HttpError(404, f"unknown model {parts[1]!r}")
                        return 200, server.skin_response(parts[1])

                    self._guarded(run)
                elif parts[0] == "mesh" and len(parts) == 2:
                    def run():
                        if parts[1] not in server.models:
                            raise _HttpError(404, f"unknown model {parts[1]!r}")
                        return 200, server.mesh_response(parts[1])

                    self._guarded(run)
                elif parts[0] == "bandwidth-range":
                    self._guarded(lambda: (200, server.bandwidth_range()))
                elif server.static_dir is not None:
                    self._serve_static(parts)
                else:
                    self._send_json(404, {"error": f"no such endpoint {self.path}"})

            def _serve_static(self, parts):
                rel = "/".join(p for p in parts if p) or "index.html"
                target = (server.static_dir / rel).resolve()
                if not str(target).startswith(str(server.static_dir.resolve())) \
                        or not target.is_file():
                    self._send_json(404, {"error": "not found"})
                    return
                body = target.read_bytes()
                ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
                self.send_response(200)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        return Handler

    def start(self, port: int) -> int:
        """Start on the given port (0 picks a free one); returns the port."""
        self.httpd = ThreadingHTTPServer(("127.0.0.1", port), self.make_handler())
        thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        thread.start()
        return self.httpd.server_address[1]

    def stop(self):
        if self.httpd is not None:
            self.httpd.shutdown()
            self.httpd.server_close()
            self.httpd = None

    def serve_forever(self, port: int):
        self.httpd = ThreadingHTTPServer(("127.0.0.1", port), self.make_handler())
        try:
            self.httpd.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            self.httpd.server_close()


class _HttpError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message
