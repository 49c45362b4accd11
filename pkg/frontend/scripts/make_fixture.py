"""Build a small trained checkpoint for the viewer integration test.

Generates a synthetic sphere scene, trains a tiny model briefly, and gives
the two lighting embedding rows clearly separated values so the two lighting
subsets are visually distinguishable (untrained rows would differ by less
than one 8-bit quantization step).  Writes <out_dir>/scene and
<out_dir>/checkpoint.xnvs.

Usage: python3 scripts/make_fixture.py <out_dir>
"""

import sys
from pathlib import Path

import numpy as np

from nvsurf.dataset import SceneRecipe, generate_synthetic_scene, load_manifest
from nvsurf.encoding import EncodingConfig
from nvsurf.experiment import train_scene
from nvsurf.pipeline import ModelConfig, TrainConfig, save_checkpoint

out = Path(sys.argv[1])
recipe = SceneRecipe(view_count=8, resolution=32, mesh_resolution=16)
generate_synthetic_scene(recipe, seed=5, out_dir=out / "scene")
manifest = load_manifest(out / "scene" / "manifest.json")

enc = EncodingConfig(levels=4, channels=2, table_size=2 ** 12,
                     coarsest=8, finest=64)
model, _ = train_scene(
    manifest,
    ModelConfig(main_encoding=enc, deform_encoding=enc, lighting_count=2),
    TrainConfig(epochs=10, lr=5e-3, checkpoint_interval=0),
    cache_dir=out / "cache")

model.lighting.param.value[0] = 0.5
model.lighting.param.value[1] = -0.5
save_checkpoint(model, out / "checkpoint.xnvs")
print(out / "checkpoint.xnvs")
