"""High-level workflows gluing dataset, caches, training and evaluation.

Appearance embeddings are per training view: train frame k (in train-split
order) owns appearance row k; held-out frames render with the zero vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import (Frame, SceneManifest, load_image, load_manifest,
                      split_train_test)
from .errors import CheckpointFormatError
from .geometry import foreground_mask, load_mesh, rasterize_view
from .metrics import psnr, ssim
from .pipeline import (ModelConfig, SceneModel, TrainConfig, ViewSamples,
                       build_zbuffer_cache, load_zbuffer,
                       prepare_view_samples, render_image, save_checkpoint,
                       train)


def build_model(manifest: SceneManifest, config: ModelConfig,
                dtype=np.float32) -> SceneModel:
    mesh = load_mesh(manifest.resolved_mesh_path)
    train_frames, _ = split_train_test(manifest)
    cfg_dict = config.to_dict()
    cfg_dict["appearance_count"] = len(train_frames)
    cfg_dict["mesh_path"] = str(manifest.resolved_mesh_path)
    cfg_dict["margin"] = manifest.margin
    lighting_ids = [fr.lighting_id for fr in manifest.frames
                    if fr.lighting_id >= 0]
    if lighting_ids and cfg_dict["lighting_count"] == 0:
        cfg_dict["lighting_count"] = max(lighting_ids) + 1
    config = ModelConfig.from_dict(cfg_dict)
    return SceneModel(config, mesh, dtype=dtype)


def cache_views(model: SceneModel, manifest: SceneManifest, gamma: int,
                out_dir) -> list[Path]:
    cams = [model.bounding_volume.apply_camera(fr.camera)
            for fr in manifest.frames]
    return build_zbuffer_cache(model.bvh, model.mesh, cams, gamma, out_dir)


def load_training_views(model: SceneModel, manifest: SceneManifest,
                        cache_dir) -> list[ViewSamples]:
    """One ViewSamples per train frame, sourced from the cache files."""
    cache_dir = Path(cache_dir)
    train_frames, _ = split_train_test(manifest)
    frame_index = {id(fr): i for i, fr in enumerate(manifest.frames)}
    views = []
    for k, fr in enumerate(train_frames):
        i = frame_index[id(fr)]
        path = cache_dir / f"view_{i:04d}.xzb"
        if not path.exists():
            raise CheckpointFormatError(f"missing cache file for view {i}")
        view_id, buffer = load_zbuffer(path)
        if view_id != i:
            raise CheckpointFormatError(
                f"{path}: cache holds view {view_id}, expected {i}")
        cam = model.bounding_volume.apply_camera(fr.camera)
        target = load_image(manifest.image_path(fr))
        vs = prepare_view_samples(model, buffer, cam, target,
                                  appearance_id=k,
                                  lighting_id=fr.lighting_id)
        if vs is not None:
            views.append(vs)
    return views


def train_scene(manifest: SceneManifest, model_config: ModelConfig,
                train_config: TrainConfig, cache_dir,
                checkpoint_dir=None, model: SceneModel | None = None):
    """Cache (if needed), train, and return (model, loss history)."""
    if model is None:
        model = build_model(manifest, model_config)
    cache_dir = Path(cache_dir)
    expected = [cache_dir / f"view_{i:04d}.xzb"
                for i in range(len(manifest.frames))]
    if not all(p.exists() for p in expected):
        cache_views(model, manifest, model.config.effective_gamma, cache_dir)
    views = load_training_views(model, manifest, cache_dir)
    history = train(model, views, train_config, checkpoint_dir)
    return model, history


@dataclass
class FrameReport:
    frame: str
    psnr: float
    ssim: float


def evaluate_frames(model: SceneModel, manifest: SceneManifest,
                    frames: list[Frame],
                    appearance_ids: list[int] | None = None):
    """Masked PSNR/SSIM of renders against the stored ground truth.

    The rasterized foreground mask is applied to both images, with the
    background forced to white on each, before computing the metrics.
    """
    reports = []
    for k, fr in enumerate(frames):
        app = appearance_ids[k] if appearance_ids is not None else None
        lighting = fr.lighting_id if fr.lighting_id >= 0 else None
        image, mask = render_image(model, fr.camera, appearance_id=app,
                                   lighting=lighting)
        target = load_image(manifest.image_path(fr))
        target = target.copy()
        target[~mask] = 1.0
        image = image.copy()
        image[~mask] = 1.0
        reports.append(FrameReport(frame=fr.file_path,
                                   psnr=psnr(image, target, mask),
                                   ssim=ssim(image, target, mask)))
    return reports


def mean_psnr(reports: list[FrameReport]) -> float:
    return float(np.mean([r.psnr for r in reports]))


def mean_ssim(reports: list[FrameReport]) -> float:
    return float(np.mean([r.ssim for r in reports]))
