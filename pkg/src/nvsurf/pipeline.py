"""End-to-end composition: z-buffer caching, multisample feature pooling,
feature deformation, shading, the L1 training loop, and checkpointing.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import geometry
from .encoding import (EncodingConfig, MultiResHashGrid, encode_backward,
                       encode_points, init_grid)
from .errors import (CheckpointFormatError, ConfigurationError,
                     DimensionError, TrainingDivergenceError)
from .geometry import (BACKGROUND, BVH, Camera, HitBuffer, TriangleMesh,
                       barycentric_points, build_bvh, foreground_mask,
                       load_mesh, normalize_scene, rasterize_view,
                       supersample_view)
from .numerics import ParamGroup, adam_step, l1_loss
from .shader import (DeferredShader, DeformationNet, EmbeddingTable,
                     SH_WIDTH, encode_direction, interpolate_lighting)

APPEARANCE_DIM = 8
LIGHTING_DIM = 8


@dataclass
class ModelConfig:
    main_encoding: EncodingConfig = field(default_factory=EncodingConfig)
    deform_encoding: EncodingConfig = field(default_factory=EncodingConfig)
    deformation: bool = True
    multisampling: bool = True
    gamma: int = 2
    appearance_count: int = 0
    lighting_count: int = 0
    activation: str = "relu"
    seed: int = 0
    mesh_path: str = ""
    margin: float = 0.05

    def __post_init__(self):
        if self.gamma < 1:
            raise ConfigurationError("gamma must be >= 1")
        if self.deformation and (
                self.main_encoding.feature_width
                != self.deform_encoding.feature_width):
            raise ConfigurationError(
                "main and deformation grids must share L*Z output width")

    @property
    def effective_gamma(self) -> int:
        return self.gamma if self.multisampling else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["main_encoding"] = self.main_encoding.to_dict()
        d["deform_encoding"] = self.deform_encoding.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["main_encoding"] = EncodingConfig.from_dict(d["main_encoding"])
        d["deform_encoding"] = EncodingConfig.from_dict(d["deform_encoding"])
        return cls(**d)


@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 1e-4
    views_per_batch: int = 4
    rays_per_batch: int = 1024
    checkpoint_interval: int = 50
    seed: int = 0
    deterministic: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


class SceneModel:
    """All trainable state plus the (immutable) geometry it shades."""

    def __init__(self, config: ModelConfig, mesh: TriangleMesh,
                 dtype=np.float32):
        self.config = config
        self.dtype = dtype
        norm_mesh, bv = normalize_scene(mesh, config.margin)
        self.mesh = norm_mesh
        self.bounding_volume = bv
        self.bvh = build_bvh(norm_mesh)

        # independent per-component streams: toggling one component (e.g. the
        # deformation net) must not shift any other component's initialization
        def stream(k: int) -> np.random.Generator:
            return np.random.default_rng([config.seed, k])

        self.main_grid = init_grid(config.main_encoding,
                                   seed=config.seed, name="main_grid",
                                   dtype=dtype)
        width = config.main_encoding.feature_width
        if config.deformation:
            self.deform_grid = init_grid(config.deform_encoding,
                                         seed=config.seed + 1,
                                         name="deform_grid", dtype=dtype)
            self.deform_net = DeformationNet(width, stream(1), dtype,
                                             config.activation)
        else:
            self.deform_grid = None
            self.deform_net = None
        base_width = SH_WIDTH + APPEARANCE_DIM
        if config.lighting_count > 0:
            base_width += LIGHTING_DIM
        self.shader = DeferredShader(width, base_width, stream(2), dtype,
                                     config.activation)
        self.appearance = EmbeddingTable("appearance", config.appearance_count,
                                         APPEARANCE_DIM, stream(3), dtype)
        self.lighting = EmbeddingTable("lighting", config.lighting_count,
                                       LIGHTING_DIM, stream(4), dtype)

    def param_groups(self) -> list[ParamGroup]:
        groups = list(self.main_grid.params())
        if self.deform_grid is not None:
            groups += self.deform_grid.params()
            groups += self.deform_net.params()
        groups += self.shader.params()
        if self.appearance.count > 0:
            groups.append(self.appearance.param)
        if self.lighting.count > 0:
            groups.append(self.lighting.param)
        return groups

    def zero_grads(self) -> None:
        for g in self.param_groups():
            g.zero_grad()

    # -- core differentiable path -------------------------------------------

    def forward_rays(self, points: np.ndarray, seg: np.ndarray, n_pixels: int,
                     dirs: np.ndarray, app_rows: np.ndarray,
                     light_rows: np.ndarray | None,
                     batch_invariant: bool = False):
        """Featurize + pool + shade a batch of pixels.

        ``points``: (M, 3) valid supersample hit points in [0,1]^3.
        ``seg``: (M,) pixel index of each supersample, values in [0, n_pixels).
        ``dirs``: (n_pixels, 3) unit view directions (central ray per pixel).
        ``app_rows``/``light_rows``: per-pixel embedding rows.
        ``batch_invariant``: use the batch-split-independent matmul path so a
        pixel's color does not depend on which batch it was rendered in.
        Returns (rgb, cache).
        """
        if len(points) == 0:
            raise DimensionError("forward_rays: empty point batch")
        counts = np.bincount(seg, minlength=n_pixels).astype(np.float64)
        if counts.min() < 1:
            raise DimensionError("forward_rays: pixel without valid hits")
        feats, main_trace = encode_points(self.main_grid, points)
        cache = {"seg": seg, "counts": counts, "n_pixels": n_pixels,
                 "main_trace": main_trace}
        sh_pix = encode_direction(dirs)
        if self.deform_grid is not None:
            dfeats, dtrace = encode_points(self.deform_grid, points)
            delta, dcache = self.deform_net.forward(dfeats, sh_pix[seg],
                                                    batch_invariant)
            feats = feats + delta
            cache["deform_trace"] = dtrace
            cache["deform_cache"] = dcache
        pooled = np.zeros((n_pixels, feats.shape[1]))
        np.add.at(pooled, seg, feats)
        pooled /= counts[:, None]
        parts = [sh_pix, np.atleast_2d(app_rows)]
        if light_rows is not None:
            parts.append(np.atleast_2d(light_rows))
        base = np.concatenate(parts, axis=1)
        rgb, shader_cache = self.shader.forward(pooled, base, batch_invariant)
        cache["shader_cache"] = shader_cache
        return rgb, cache

    def backward_rays(self, cache, grad_rgb: np.ndarray,
                      app_ids: np.ndarray | None = None,
                      light_ids: np.ndarray | None = None) -> None:
        """Accumulate gradients for every parameter group from d(loss)/d(rgb)."""
        grad_pooled, grad_base = self.shader.backward(cache["shader_cache"],
                                                      grad_rgb)
        seg = cache["seg"]
        grad_feats = grad_pooled[seg] / cache["counts"][seg][:, None]
        if self.deform_grid is not None:
            grad_dfeats = self.deform_net.backward(cache["deform_cache"],
                                                   grad_feats)
            encode_backward(self.deform_grid, cache["deform_trace"],
                            grad_dfeats)
        encode_backward(self.main_grid, cache["main_trace"], grad_feats)
        # base layout: [SH | appearance | lighting]
        g_app = grad_base[:, SH_WIDTH:SH_WIDTH + APPEARANCE_DIM]
        if app_ids is not None and self.appearance.count > 0:
            valid = app_ids >= 0
            if valid.any():
                self.appearance.scatter_grad(app_ids[valid], g_app[valid])
        if light_ids is not None and self.lighting.count > 0:
            g_light = grad_base[:, SH_WIDTH + APPEARANCE_DIM:
                                SH_WIDTH + APPEARANCE_DIM + LIGHTING_DIM]
            self.lighting.scatter_grad(light_ids, g_light)

    def embedding_rows(self, n_pixels: int,
                       appearance_id: int | None = None,
                       lighting=None):
        """Per-pixel appearance/lighting rows for rendering or training.

        ``lighting`` is an int subset id or an (i, j, tau) interpolation
        triple; None uses zeros when the lighting path is enabled.
        """
        if appearance_id is None or self.appearance.count == 0:
            app = np.zeros((n_pixels, APPEARANCE_DIM))
        else:
            app = np.repeat(self.appearance.lookup(
                np.asarray([appearance_id])), n_pixels, axis=0)
        if self.lighting.count == 0:
            return app, None
        if lighting is None:
            row = np.zeros(LIGHTING_DIM)
        elif isinstance(lighting, (int, np.integer)):
            row = self.lighting.lookup(np.asarray([lighting]))[0]
        else:
            i, j, tau = lighting
            row = interpolate_lighting(self.lighting, int(i), int(j),
                                       float(tau))
        return app, np.repeat(np.atleast_2d(row), n_pixels, axis=0)


# ---------------------------------------------------------------------------
# pixel featurization and rendering

def featurize_pixel(model: SceneModel, hits: list[geometry.HitRecord],
                    d: np.ndarray) -> np.ndarray | None:
    """Pooled feature for one pixel's supersample hits; None if all missed."""
    valid = [h for h in hits if not h.is_background]
    if not valid:
        return None
    points = np.stack([h.point for h in valid])
    feats, _ = encode_points(model.main_grid, points)
    if model.deform_grid is not None:
        dfeats, _ = encode_points(model.deform_grid, points)
        sh = np.repeat(np.atleast_2d(encode_direction(d)), len(points), axis=0)
        delta, _ = model.deform_net.forward(dfeats, sh, batch_invariant=True)
        feats = feats + delta
    # pool exactly like the batched path: sequential scatter-add, then divide
    pooled = np.zeros((1, feats.shape[1]))
    np.add.at(pooled, np.zeros(len(feats), dtype=np.int64), feats)
    return (pooled / float(len(feats)))[0]


def pixels_from_buffer(model: SceneModel, buffer: HitBuffer):
    """Flatten a hit buffer into the batched forward_rays layout.

    Returns (fg_index, points, seg, hit_counts) where fg_index are the flat
    pixel indices with at least one hit.
    """
    fid, b0, b1, _ = supersample_view(buffer)
    H, W, g2 = fid.shape
    fid = fid.reshape(-1, g2)
    valid = fid != BACKGROUND
    hit_counts = valid.sum(axis=1)
    fg = np.where(hit_counts > 0)[0]
    vmask = valid[fg]
    rows = np.repeat(np.arange(len(fg)), vmask.sum(axis=1))
    flat_fid = fid[fg][vmask]
    flat_b0 = b0.reshape(-1, g2)[fg][vmask].astype(np.float64)
    flat_b1 = b1.reshape(-1, g2)[fg][vmask].astype(np.float64)
    points = barycentric_points(model.mesh, flat_fid, flat_b0, flat_b1)
    return fg, points, rows, hit_counts


RENDER_CHUNK = 16384


def render_image(model: SceneModel, camera: Camera, gamma: int | None = None,
                 appearance_id: int | None = None, lighting=None,
                 normalized_camera: bool = False):
    """Render an RGB image and its foreground mask.

    Background pixels are pure white.  The camera is given in original scene
    coordinates unless ``normalized_camera`` is set.
    """
    if gamma is None:
        gamma = model.config.effective_gamma
    cam = camera if normalized_camera else \
        model.bounding_volume.apply_camera(camera)
    buffer = rasterize_view(model.bvh, model.mesh, cam, gamma)
    mask = foreground_mask(buffer)
    H, W = cam.height, cam.width
    image = np.ones((H * W, 3))
    fg, points, seg, _ = pixels_from_buffer(model, buffer)
    if len(fg):
        dirs = cam.pixel_center_dirs()[fg]
        for lo in range(0, len(fg), RENDER_CHUNK):
            sl = slice(lo, min(lo + RENDER_CHUNK, len(fg)))
            in_chunk = (seg >= sl.start) & (seg < sl.stop)
            pts = points[in_chunk]
            seg_local = seg[in_chunk] - sl.start
            n_pix = sl.stop - sl.start
            app, light = model.embedding_rows(n_pix, appearance_id, lighting)
            rgb, _ = model.forward_rays(pts, seg_local, n_pix,
                                        dirs[sl], app, light,
                                        batch_invariant=True)
            image[fg[sl]] = rgb
    return image.reshape(H, W, 3), mask


# ---------------------------------------------------------------------------
# z-buffer cache files

CACHE_MAGIC = b"XZBF"
CACHE_VERSION = 1
_BG_U32 = 0xFFFFFFFF
_RECORD_DTYPE = np.dtype([("face", "<u4"), ("b0", "<f4"), ("b1", "<f4"),
                          ("depth", "<f4")])


def save_zbuffer(path, view_id: int, buffer: HitBuffer) -> None:
    H, W = buffer.face_id.shape
    rec = np.empty(H * W, dtype=_RECORD_DTYPE)
    fid = buffer.face_id.reshape(-1)
    rec["face"] = np.where(fid == BACKGROUND, _BG_U32, fid).astype(np.uint32)
    rec["b0"] = buffer.b0.reshape(-1)
    rec["b1"] = buffer.b1.reshape(-1)
    rec["depth"] = buffer.depth.reshape(-1)
    head = CACHE_MAGIC + struct.pack("<IIIII", CACHE_VERSION, view_id,
                                     buffer.gamma, H, W)
    body = rec.tobytes()
    crc = zlib.crc32(head + body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(body)
        fh.write(struct.pack("<I", crc))


def load_zbuffer(path):
    """Returns (view_id, HitBuffer); raises on any integrity failure."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 28 or data[:4] != CACHE_MAGIC:
        raise CheckpointFormatError(f"{path}: not a z-buffer cache")
    version, view_id, gamma, H, W = struct.unpack_from("<IIIII", data, 4)
    if version != CACHE_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    expected = 24 + H * W * _RECORD_DTYPE.itemsize + 4
    if len(data) != expected:
        raise CheckpointFormatError(
            f"{path}: truncated cache for view {view_id}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointFormatError(
            f"{path}: checksum mismatch for view {view_id}")
    rec = np.frombuffer(data[24:-4], dtype=_RECORD_DTYPE)
    fid = rec["face"].astype(np.int64)
    fid[rec["face"] == _BG_U32] = BACKGROUND
    if H % gamma or W % gamma:
        raise CheckpointFormatError(f"{path}: extents not divisible by gamma")
    return view_id, HitBuffer(
        face_id=fid.reshape(H, W),
        b0=rec["b0"].reshape(H, W).copy(),
        b1=rec["b1"].reshape(H, W).copy(),
        depth=rec["depth"].reshape(H, W).copy(),
        gamma=gamma, width=W // gamma, height=H // gamma)


def build_zbuffer_cache(bvh: BVH, mesh: TriangleMesh, cameras: list[Camera],
                        gamma: int, out_dir) -> list[Path]:
    """Pre-rasterize every view into one cache file per view."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, cam in enumerate(cameras):
        buffer = rasterize_view(bvh, mesh, cam, gamma)
        path = out_dir / f"view_{i:04d}.xzb"
        try:
            save_zbuffer(path, i, buffer)
        except OSError as exc:
            raise CheckpointFormatError(
                f"failed writing cache for view {i}: {exc}")
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# training

@dataclass
class ViewSamples:
    """Trainable pixels of one view, derived from its cached hit buffer.

    Only pixels where a strict majority of supersamples hit the mesh are
    trainable; partially covered edge pixels pool their valid hits only.
    """
    points: np.ndarray       # (M, 3) valid supersample hit points
    seg: np.ndarray          # (M,) local pixel index
    n_pixels: int
    dirs: np.ndarray         # (P, 3) central-ray directions
    targets: np.ndarray      # (P, 3)
    pixel_offsets: np.ndarray  # (P+1,) CSR offsets into points/seg
    appearance_id: int
    lighting_id: int


def prepare_view_samples(model: SceneModel, buffer: HitBuffer,
                         camera: Camera, target: np.ndarray,
                         appearance_id: int = -1,
                         lighting_id: int = -1) -> ViewSamples | None:
    g2 = buffer.gamma * buffer.gamma
    fid, b0, b1, _ = supersample_view(buffer)
    valid = (fid != BACKGROUND).reshape(-1, g2)
    hit_counts = valid.sum(axis=1)
    trainable = np.where(2 * hit_counts > g2)[0]
    if len(trainable) == 0:
        return None
    vmask = valid[trainable]
    seg = np.repeat(np.arange(len(trainable)), vmask.sum(axis=1))
    flat_fid = fid.reshape(-1, g2)[trainable][vmask]
    flat_b0 = b0.reshape(-1, g2)[trainable][vmask].astype(np.float64)
    flat_b1 = b1.reshape(-1, g2)[trainable][vmask].astype(np.float64)
    points = barycentric_points(model.mesh, flat_fid, flat_b0, flat_b1)
    dirs = camera.pixel_center_dirs()[trainable]
    offsets = np.zeros(len(trainable) + 1, dtype=np.int64)
    np.cumsum(vmask.sum(axis=1), out=offsets[1:])
    return ViewSamples(points=points, seg=seg, n_pixels=len(trainable),
                       dirs=dirs, targets=target.reshape(-1, 3)[trainable],
                       pixel_offsets=offsets,
                       appearance_id=appearance_id, lighting_id=lighting_id)


@dataclass
class RayBatch:
    points: np.ndarray
    seg: np.ndarray
    n_pixels: int
    dirs: np.ndarray
    targets: np.ndarray
    app_ids: np.ndarray
    light_ids: np.ndarray | None


def sample_ray_batch(views: list[ViewSamples], rng: np.random.Generator,
                     rays_per_batch: int) -> RayBatch:
    per_view = max(1, rays_per_batch // max(1, len(views)))
    pts, segs, dirs, targets, app_ids, light_ids = [], [], [], [], [], []
    offset = 0
    for vs in views:
        pick = rng.integers(0, vs.n_pixels, size=min(per_view, vs.n_pixels))
        for p in pick:
            lo, hi = vs.pixel_offsets[p], vs.pixel_offsets[p + 1]
            pts.append(vs.points[lo:hi])
            segs.append(np.full(hi - lo, offset, dtype=np.int64))
            offset += 1
        dirs.append(vs.dirs[pick])
        targets.append(vs.targets[pick])
        app_ids.append(np.full(len(pick), vs.appearance_id, dtype=np.int64))
        light_ids.append(np.full(len(pick), vs.lighting_id, dtype=np.int64))
    return RayBatch(points=np.concatenate(pts), seg=np.concatenate(segs),
                    n_pixels=offset, dirs=np.concatenate(dirs),
                    targets=np.concatenate(targets),
                    app_ids=np.concatenate(app_ids),
                    light_ids=np.concatenate(light_ids))


def train_step(model: SceneModel, batch: RayBatch, lr: float) -> float | None:
    """One forward/backward/Adam step; returns the loss, or None for an
    empty batch (all rays background)."""
    if batch.n_pixels == 0:
        return None
    app_rows = np.zeros((batch.n_pixels, APPEARANCE_DIM))
    if model.appearance.count > 0:
        has = batch.app_ids >= 0
        if has.any():
            app_rows[has] = model.appearance.lookup(batch.app_ids[has])
    light_rows = None
    light_ids = None
    if model.lighting.count > 0:
        light_ids = np.maximum(batch.light_ids, 0)
        light_rows = model.lighting.lookup(light_ids)
    rgb, cache = model.forward_rays(batch.points, batch.seg, batch.n_pixels,
                                    batch.dirs, app_rows, light_rows)
    loss, grad = l1_loss(rgb, batch.targets)
    if not np.isfinite(loss):
        raise TrainingDivergenceError(
            f"non-finite loss over {batch.n_pixels} rays")
    model.backward_rays(cache, grad, app_ids=batch.app_ids,
                        light_ids=light_ids)
    for group in model.param_groups():
        adam_step(group, lr)
    return loss


def train(model: SceneModel, views: list[ViewSamples], config: TrainConfig,
          checkpoint_dir=None) -> list[float]:
    """Seeded epoch loop over cached views; returns the loss history."""
    rng = np.random.default_rng(config.seed)
    history: list[float] = []
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    if not views:
        return history
    vpb = max(1, min(config.views_per_batch, len(views)))
    for epoch in range(config.epochs):
        order = rng.permutation(len(views))
        for lo in range(0, len(order), vpb):
            chunk = [views[i] for i in order[lo:lo + vpb]]
            batch = sample_ray_batch(chunk, rng, config.rays_per_batch)
            loss = train_step(model, batch, config.lr)
            if loss is not None:
                history.append(loss)
        if checkpoint_dir is not None and config.checkpoint_interval > 0 \
                and (epoch + 1) % config.checkpoint_interval == 0:
            save_checkpoint(model,
                            Path(checkpoint_dir) / f"epoch_{epoch + 1:05d}.xnvs")
    if checkpoint_dir is not None:
        save_checkpoint(model, Path(checkpoint_dir) / "final.xnvs")
    return history


# ---------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"XNVS"
CKPT_VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def canonical_config_blob(model: SceneModel) -> bytes:
    doc = {"model": model.config.to_dict(),
           "bounding_volume": model.bounding_volume.to_dict()}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def checkpoint_byte_size(model: SceneModel) -> int:
    """Exact on-disk size predicted from the declared tensor shapes."""
    size = 4 + 4 + 4 + len(canonical_config_blob(model)) + 4
    for g in model.param_groups():
        size += 2 + len(g.name.encode()) + 1 + 1 + 8 * g.value.ndim
        size += g.value.nbytes + 4
    return size


def save_checkpoint(model: SceneModel, path) -> None:
    groups = model.param_groups()
    blob = canonical_config_blob(model)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(groups)))
        for g in groups:
            name = g.name.encode()
            arr = np.ascontiguousarray(g.value)
            tag = _DTYPE_TAGS[np.dtype(arr.dtype.str.replace(">", "<"))]
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<BB", tag, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            payload = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def read_checkpoint(path):
    """Returns (config dict, bounding-volume dict, {name: array})."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != CKPT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CKPT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    (blob_len,) = struct.unpack_from("<I", data, 8)
    off = 12
    try:
        doc = json.loads(data[off:off + blob_len].decode())
        off += blob_len
        (n_sections,) = struct.unpack_from("<I", data, off)
        off += 4
        tensors = {}
        for _ in range(n_sections):
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + name_len].decode()
            off += name_len
            tag, ndim = struct.unpack_from("<BB", data, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}Q", data, off)
            off += 8 * ndim
            dtype = _TAG_DTYPES[tag]
            nbytes = int(np.prod(shape)) * dtype.itemsize
            payload = data[off:off + nbytes]
            off += nbytes
            (crc,) = struct.unpack_from("<I", data, off)
            off += 4
            if len(payload) != nbytes or \
                    zlib.crc32(payload) & 0xFFFFFFFF != crc:
                raise CheckpointFormatError(
                    f"{path}: checksum failure in section {name!r}")
            tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: truncated checkpoint ({exc})")
    return doc["model"], doc["bounding_volume"], tensors


def load_checkpoint(path, mesh: TriangleMesh | None = None,
                    mesh_path: str | None = None,
                    expected_config: ModelConfig | None = None) -> SceneModel:
    cfg_dict, _, tensors = read_checkpoint(path)
    config = ModelConfig.from_dict(cfg_dict)
    if expected_config is not None and \
            expected_config.to_dict() != config.to_dict():
        raise CheckpointFormatError(
            f"{path}: checkpoint config conflicts with the requested config")
    if mesh is None:
        mesh = load_mesh(mesh_path or config.mesh_path)
    dtype = np.dtype("<f8") if any(t.dtype == np.float64
                                   for t in tensors.values()) else np.float32
    model = SceneModel(config, mesh, dtype=dtype)
    for g in model.param_groups():
        if g.name not in tensors:
            raise CheckpointFormatError(f"{path}: missing section {g.name!r}")
        stored = tensors[g.name]
        if stored.shape != g.value.shape:
            raise CheckpointFormatError(
                f"{path}: shape mismatch in {g.name!r} "
                f"({stored.shape} vs {g.value.shape})")
        g.value[...] = stored
    return model
