"""Spin up the HTTP render service on a freshly trained toy model and talk
to it like a client would: health check, model info, then a PNG render.

Run:  python3 demos/03_render_service.py
"""

import json
import urllib.request
from pathlib import Path
from tempfile import TemporaryDirectory

from nvsurf.dataset import SceneRecipe, generate_synthetic_scene, load_manifest
from nvsurf.encoding import EncodingConfig
from nvsurf.experiment import train_scene
from nvsurf.pipeline import ModelConfig, TrainConfig
from nvsurf.service import serve

with TemporaryDirectory() as tmp:
    tmp = Path(tmp)

    # a tiny model is enough to demonstrate the protocol
    print("training a toy model ...")
    recipe = SceneRecipe(view_count=8, resolution=32, mesh_resolution=16)
    generate_synthetic_scene(recipe, seed=3, out_dir=tmp / "scene")
    manifest = load_manifest(tmp / "scene" / "manifest.json")
    enc = EncodingConfig(levels=4, channels=2, table_size=2 ** 12,
                         coarsest=8, finest=64)
    model, _ = train_scene(manifest,
                           ModelConfig(main_encoding=enc, deform_encoding=enc),
                           TrainConfig(epochs=20, lr=5e-3,
                                       checkpoint_interval=0),
                           cache_dir=tmp / "cache")

    server = serve(model, port=0, background=True)
    base = f"http://127.0.0.1:{server.server_address[1]}"
    print("serving on", base)

    with urllib.request.urlopen(base + "/healthz") as resp:
        print("GET /healthz ->", resp.read().decode())

    with urllib.request.urlopen(base + "/info") as resp:
        info = json.loads(resp.read())
    print("GET /info ->", json.dumps(info, indent=2))

    # render the first training pose
    frame = json.loads((tmp / "scene" / "manifest.json").read_text())["frames"][0]
    request = {"camera_to_world": frame["camera_to_world"],
               "fx": frame["fx"], "fy": frame["fy"],
               "cx": frame["cx"], "cy": frame["cy"],
               "width": frame["w"], "height": frame["h"]}
    req = urllib.request.Request(base + "/render",
                                 data=json.dumps(request).encode(),
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as resp:
        png = resp.read()
    out = Path("service_render.png")
    out.write_bytes(png)
    print(f"POST /render -> {len(png)} bytes of PNG, saved to {out}")
    server.shutdown()
