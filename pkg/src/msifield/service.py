"""HTTP render service for fitted artifacts.

Plain HTTP/1.1: GET /meta (JSON), GET /render (PNG), POST /load.  Requests
render through the same deterministic pipeline as the CLI, so identical
requests return byte-identical PNGs.  The session state is swapped
atomically on load; in-flight renders keep the state object they started
with, and loads are serialized by a lock while reads stay lock-free.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import formats
from .field import FieldParams
from .geometry import OutOfVolumeError, Pose
from .render import EquirectTarget, PinholeTarget, render_view

DEFAULT_MAX_DIM = 1024
BIND_ENV_VAR = "MSIFIELD_BIND"


@dataclass
class SessionState:
    params: FieldParams
    images: Optional[list] = None
    cameras: Optional[list] = None
    max_dim: int = DEFAULT_MAX_DIM

    @property
    def grid(self):
        return self.params.grid


def load_session(artifact_path, bundle_path=None, max_dim: int = DEFAULT_MAX_DIM) -> SessionState:
    grid, mlp = formats.read_artifact(artifact_path)
    images = cameras = None
    if bundle_path:
        bundle, _ = formats.load_bundle(bundle_path)
        images, cameras = bundle.images, bundle.cameras
    backend = "mlp" if mlp is not None else "explicit"
    if backend == "mlp" and images is None:
        raise ValueError("MLP artifacts need a bundle for projected colors")
    params = FieldParams(backend=backend, grid=grid, mlp=mlp)
    return SessionState(params=params, images=images, cameras=cameras, max_dim=max_dim)


class RenderHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "msifield"

    def log_message(self, fmt, *args):  # quiet by default
        if os.environ.get("MSIFIELD_HTTP_LOG"):
            super().log_message(fmt, *args)

    # -- helpers ---------------------------------------------------------

    def _send(self, code: int, body: bytes, ctype: str):
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, code: int, obj):
        self._send(code, json.dumps(obj).encode(), "application/json")

    def _error(self, code: int, message: str):
        self._json(code, {"error": message})

    # -- routes ----------------------------------------------------------

    def do_GET(self):
        url = urlparse(self.path)
        if url.path == "/meta":
            self._meta()
        elif url.path == "/render":
            self._render(parse_qs(url.query))
        else:
            self._error(404, "unknown path")

    def do_POST(self):
        if urlparse(self.path).path != "/load":
            self._error(404, "unknown path")
            return
        self._load()

    def _meta(self):
        state = self.server.state
        if state is None:
            self._error(503, "no artifact loaded")
            return
        grid = state.grid
        self._json(200, {
            "n_layers": grid.n_layers,
            "msi_width": grid.width,
            "msi_height": grid.height,
            "d_inv_max": grid.schedule.d_inv_max,
            "eps_background": grid.schedule.eps_background,
            "background_radius": grid.schedule.background_radius,
            "pose_bounds_radius": grid.schedule.background_radius,
            "n_cameras": grid.n_cameras if grid.has_swept else (
                len(state.cameras) if state.cameras else 0),
            "backend": state.params.backend,
            "max_render_dim": state.max_dim,
        })

    def _render(self, q):
        state = self.server.state
        if state is None:
            self._error(503, "no artifact loaded")
            return
        try:
            pose_text = q.get("pose", ["0,0,0,1,0,0,0"])[0]
            parts = [float(x) for x in pose_text.split(",")]
            if len(parts) != 7:
                raise ValueError("pose must have 7 components")
            qn = np.array(parts[3:])
            norm = np.linalg.norm(qn)
            if norm < 1e-9:
                raise ValueError("zero quaternion")
            pose = Pose(position=np.array(parts[:3]), quat=qn / norm)
            w = int(q.get("w", ["256"])[0])
            h = int(q.get("h", ["256"])[0])
            mode = q.get("mode", ["color"])[0]
            target_kind = q.get("target", ["pinhole"])[0]
            fov = float(q.get("fov", ["90"])[0])
            if mode not in ("color", "inv_depth", "acc"):
                raise ValueError(f"unknown mode {mode!r}")
            if not (0 < w <= state.max_dim and 0 < h <= state.max_dim):
                raise ValueError(f"dimensions must be within {state.max_dim}")
            if target_kind == "pinhole":
                target = PinholeTarget(width=w, height=h, fov_deg=fov)
            elif target_kind == "equirect":
                target = EquirectTarget(width=w, height=h)
            else:
                raise ValueError(f"unknown target {target_kind!r}")
        except ValueError as e:
            self._error(400, str(e))
            return

        try:
            rgb, inv, acc = render_view(state.params, state.images, state.cameras,
                                        target, pose)
        except OutOfVolumeError as e:
            self._error(422, str(e))
            return
        if mode == "color":
            img = rgb
        elif mode == "inv_depth":
            img = np.clip(inv / state.grid.schedule.d_inv_max, 0.0, 1.0)
        else:
            img = np.clip(acc, 0.0, 1.0)
        self._send(200, formats.png_bytes(img), "image/png")

    def _load(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        ctype = self.headers.get("Content-Type", "")
        try:
            with self.server.load_lock:
                if ctype.startswith("application/json"):
                    req = json.loads(body)
                    state = load_session(req["path"], req.get("bundle"),
                                         max_dim=self.server.max_dim)
                else:
                    with tempfile.NamedTemporaryFile(suffix=".msi", delete=False) as tmp:
                        tmp.write(body)
                        tmp_path = tmp.name
                    try:
                        state = load_session(tmp_path, max_dim=self.server.max_dim)
                    finally:
                        os.unlink(tmp_path)
                self.server.state = state
        except (formats.ArtifactError, KeyError, ValueError, OSError,
                json.JSONDecodeError) as e:
            self._error(400, f"artifact load failed: {e}")
            return
        self._json(200, {"status": "loaded", "n_layers": state.grid.n_layers})


class RenderServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, state: Optional[SessionState],
                 max_dim: int = DEFAULT_MAX_DIM):
        super().__init__(addr, RenderHandler)
        self.state = state
        self.max_dim = max_dim
        self.load_lock = threading.Lock()


def start_server(artifact_path=None, bundle_path=None, host: Optional[str] = None,
                 port: int = 0, max_dim: int = DEFAULT_MAX_DIM):
    """Start serving in a background thread; returns (server, thread)."""
    host = host or os.environ.get(BIND_ENV_VAR, "127.0.0.1")
    state = load_session(artifact_path, bundle_path, max_dim) if artifact_path else None
    server = RenderServer((host, port), state, max_dim=max_dim)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread


def serve(artifact_path, host: Optional[str] = None, port: int = 8080,
          max_dim: int = DEFAULT_MAX_DIM):
    """Blocking entry point for the CLI."""
    host = host or os.environ.get(BIND_ENV_VAR, "127.0.0.1")
    state = load_session(artifact_path, max_dim=max_dim)
    server = RenderServer((host, port), state, max_dim=max_dim)
    print(f"serving {artifact_path} on http://{host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
