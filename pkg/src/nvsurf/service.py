"""HTTP render service: stateless request/response over an immutable model.

Protocol:
  GET  /healthz -> 200 "ok"
  GET  /info    -> JSON model/config summary
  POST /render  -> RenderRequest JSON in, PNG bytes out
"""

from __future__ import annotations

import io
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from .geometry import Camera
from .errors import ConfigurationError
from .pipeline import SceneModel, render_image

DEFAULT_PIXEL_BUDGET = 2_000_000


@dataclass
class RenderRequest:
    camera_to_world: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    gamma: int | None = None
    lighting: tuple | None = None      # (i, j, tau)
    appearance_id: int | None = None

    @classmethod
    def from_dict(cls, doc: dict,
                  pixel_budget: int = DEFAULT_PIXEL_BUDGET) -> "RenderRequest":
        missing = [k for k in ("camera_to_world", "fx", "fy", "cx", "cy",
                               "width", "height") if k not in doc]
        if missing:
            raise ValueError(f"missing fields: {', '.join(missing)}")
        c2w = np.asarray(doc["camera_to_world"], dtype=np.float64)
        if c2w.size != 16:
            raise ValueError("camera_to_world must contain 16 numbers")
        width, height = int(doc["width"]), int(doc["height"])
        if width < 1 or height < 1:
            raise ValueError("width and height must be positive")
        if width * height > pixel_budget:
            raise OverBudgetError(
                f"{width}x{height} exceeds the {pixel_budget}-pixel budget")
        lighting = None
        if doc.get("lighting") is not None:
            ld = doc["lighting"]
            tau = float(ld["tau"])
            if not 0.0 <= tau < 1.0:
                raise ValueError("lighting.tau must lie in [0, 1)")
            lighting = (int(ld["i"]), int(ld["j"]), tau)
        gamma = doc.get("gamma")
        if gamma is not None:
            gamma = int(gamma)
            if gamma < 1:
                raise ValueError("gamma must be >= 1")
        return cls(camera_to_world=c2w.reshape(4, 4),
                   fx=float(doc["fx"]), fy=float(doc["fy"]),
                   cx=float(doc["cx"]), cy=float(doc["cy"]),
                   width=width, height=height, gamma=gamma,
                   lighting=lighting,
                   appearance_id=(None if doc.get("appearance_id") is None
                                  else int(doc["appearance_id"])))

    def camera(self) -> Camera:
        return Camera(self.fx, self.fy, self.cx, self.cy,
                      self.width, self.height, self.camera_to_world)


class OverBudgetError(ValueError):
    pass


def render_request(model: SceneModel, req: RenderRequest) -> np.ndarray:
    image, _ = render_image(model, req.camera(), gamma=req.gamma,
                            appearance_id=req.appearance_id,
                            lighting=req.lighting)
    return image


def encode_png(image: np.ndarray) -> bytes:
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def model_info(model: SceneModel) -> dict:
    cfg = model.config
    return {
        "feature_width": cfg.main_encoding.feature_width,
        "levels": cfg.main_encoding.levels,
        "channels": cfg.main_encoding.channels,
        "gamma": cfg.effective_gamma,
        "deformation": cfg.deformation,
        "multisampling": cfg.multisampling,
        "appearance_count": cfg.appearance_count,
        "lighting_count": cfg.lighting_count,
        "parameters": int(sum(g.value.size for g in model.param_groups())),
        "pixel_budget": DEFAULT_PIXEL_BUDGET,
    }


def make_server(model: SceneModel, port: int,
                pixel_budget: int = DEFAULT_PIXEL_BUDGET) -> ThreadingHTTPServer:
    info_blob = json.dumps(model_info(model)).encode()

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):   # quiet by default
            pass

        def _send(self, code: int, body: bytes, ctype: str):
            self.send_response(code)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _json_error(self, code: int, message: str):
            self._send(code, json.dumps({"error": message}).encode(),
                       "application/json")

        def do_GET(self):
            if self.path == "/healthz":
                self._send(200, b"ok", "text/plain")
            elif self.path == "/info":
                self._send(200, info_blob, "application/json")
            else:
                self._json_error(404, f"no such endpoint: {self.path}")

        def do_POST(self):
            if self.path != "/render":
                self._json_error(404, f"no such endpoint: {self.path}")
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                doc = json.loads(self.rfile.read(length).decode())
                req = RenderRequest.from_dict(doc, pixel_budget)
                image = render_request(model, req)
            except OverBudgetError as exc:
                self._json_error(413, str(exc))
                return
            except (ValueError, KeyError, TypeError,
                    ConfigurationError) as exc:
                self._json_error(400, str(exc))
                return
            self._send(200, encode_png(image), "image/png")

    return ThreadingHTTPServer(("127.0.0.1", port), Handler)


def serve(model: SceneModel, port: int, background: bool = False):
    """Run the render service; returns the server (joinable when background)."""
    server = make_server(model, port)
    if background:
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        return server
    server.serve_forever()
    return server
