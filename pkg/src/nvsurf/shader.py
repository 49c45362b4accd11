"""Deferred neural shader: a FiLM-conditioned MLP decoding pooled surface
features into view-dependent RGB, the residual feature-deformation network,
and the appearance/lighting embedding tables.

Wiring: the pooled hash features drive the FiLM generator (per-hidden-layer
scale and shift); the base MLP input is the spherical-harmonics direction
encoding concatenated with the appearance and (optional) lighting rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmbeddingLookupError
from .numerics import LinearLayer, ParamGroup, linear_apply, linear_forward

HIDDEN = 64
N_SHADER_LAYERS = 4
N_DEFORM_LAYERS = 2
SH_WIDTH = 16

# real spherical harmonics constants, bands 0..3
_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
       1.0925484305920792, 0.5462742152960396)
_C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658,
       0.3731763325901154, 0.4570457994644658, 1.445305721320277,
       0.5900435899266435)


def encode_direction(d: np.ndarray) -> np.ndarray:
    """Degree-4 (bands 0..3) real SH basis, 16 values per direction.

    Accepts (3,) or (N, 3).  Non-unit inputs are normalized.
    """
    d = np.asarray(d, dtype=np.float64)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    d = d / np.where(norm > 0, norm, 1.0)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    out = np.empty((len(d), SH_WIDTH))
    out[:, 0] = _C0
    out[:, 1] = -_C1 * y
    out[:, 2] = _C1 * z
    out[:, 3] = -_C1 * x
    out[:, 4] = _C2[0] * x * y
    out[:, 5] = -_C2[1] * y * z
    out[:, 6] = _C2[2] * (3.0 * zz - 1.0)
    out[:, 7] = -_C2[3] * x * z
    out[:, 8] = _C2[4] * (xx - yy)
    out[:, 9] = -_C3[0] * y * (3.0 * xx - yy)
    out[:, 10] = _C3[1] * x * y * z
    out[:, 11] = -_C3[2] * y * (5.0 * zz - 1.0)
    out[:, 12] = _C3[3] * z * (5.0 * zz - 3.0)
    out[:, 13] = -_C3[4] * x * (5.0 * zz - 1.0)
    out[:, 14] = _C3[5] * z * (xx - yy)
    out[:, 15] = -_C3[6] * x * (xx - 3.0 * yy)
    return out[0] if single else out


class EmbeddingTable:
    """K learnable rows of dimension E; row 0..K-1 addressable by id."""

    def __init__(self, name: str, count: int, dim: int,
                 rng: np.random.Generator | None = None, dtype=np.float32,
                 init_scale: float = 1e-2):
        if rng is not None and count > 0:
            rows = (rng.standard_normal((count, dim)) * init_scale).astype(dtype)
        else:
            rows = np.zeros((count, dim), dtype=dtype)
        self.count = count
        self.dim = dim
        self.param = ParamGroup.create(name, rows)

    def lookup(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        if self.count == 0:
            raise EmbeddingLookupError("lookup on an empty embedding table")
        if ids.min() < 0 or ids.max() >= self.count:
            raise EmbeddingLookupError(
                f"{self.param.name}: id out of range [0, {self.count})")
        return self.param.value[ids]

    def scatter_grad(self, ids: np.ndarray, grads: np.ndarray) -> None:
        for c in range(self.dim):
            self.param.grad[:, c] += np.bincount(
                ids, weights=grads[:, c].astype(np.float64),
                minlength=self.count).astype(self.param.grad.dtype)


def interpolate_lighting(table: EmbeddingTable, i: int, j: int,
                         tau: float) -> np.ndarray:
    """tau * row_i + (1 - tau) * row_j."""
    row_i = table.lookup(np.asarray([i]))[0]
    row_j = table.lookup(np.asarray([j]))[0]
    return tau * row_i + (1.0 - tau) * row_j


def _act(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    return np.sin(x)


def _act_grad(pre: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (pre > 0.0).astype(pre.dtype)
    return np.cos(pre)


class DeferredShader:
    """4-layer, 64-wide MLP with FiLM modulation on every hidden layer."""

    def __init__(self, feature_width: int, base_width: int,
                 rng: np.random.Generator, dtype=np.float32,
                 activation: str = "relu", name: str = "shader"):
        if activation not in ("relu", "sine"):
            raise ValueError(f"unknown activation {activation!r}")
        self.feature_width = feature_width
        self.base_width = base_width
        self.activation = activation
        self.layers = []
        w = base_width
        for i in range(N_SHADER_LAYERS):
            self.layers.append(LinearLayer(f"{name}.layer{i}", w, HIDDEN,
                                           rng, dtype))
            w = HIDDEN
        # scale halves biased to 1, shift halves to 0: identity FiLM at init
        film_bias = np.concatenate([
            np.concatenate([np.ones(HIDDEN), np.zeros(HIDDEN)])
            for _ in range(N_SHADER_LAYERS)])
        self.film = LinearLayer(f"{name}.film", feature_width,
                                2 * HIDDEN * N_SHADER_LAYERS, rng, dtype,
                                bias_init=film_bias)
        self.out = LinearLayer(f"{name}.out", HIDDEN, 3, rng, dtype)

    def params(self) -> list[ParamGroup]:
        ps = []
        for layer in self.layers:
            ps += layer.params()
        return ps + self.film.params() + self.out.params()

    def forward(self, features: np.ndarray, base: np.ndarray,
                batch_invariant: bool = False):
        """RGB in (0,1)^3 for pooled features and pre-built base inputs."""
        features = np.atleast_2d(features)
        base = np.atleast_2d(base)
        if features.shape[1] != self.feature_width:
            raise DimensionError("shader: feature width mismatch")
        if base.shape[1] != self.base_width:
            raise DimensionError("shader: base input width mismatch")
        film = linear_forward(self.film, features, batch_invariant)
        film = film.reshape(len(base), N_SHADER_LAYERS, 2, HIDDEN)
        scales, shifts = film[:, :, 0, :], film[:, :, 1, :]
        h = base
        cache = {"features": features, "base": base, "scales": scales,
                 "inputs": [], "pre": [], "mod": []}
        for i, layer in enumerate(self.layers):
            cache["inputs"].append(h)
            pre = linear_forward(layer, h, batch_invariant)
            mod = scales[:, i, :] * pre + shifts[:, i, :]
            cache["pre"].append(pre)
            cache["mod"].append(mod)
            h = _act(mod, self.activation)
        cache["last_hidden"] = h
        logits = linear_forward(self.out, h, batch_invariant)
        rgb = 1.0 / (1.0 + np.exp(-logits))
        cache["rgb"] = rgb
        return rgb, cache

    def backward(self, cache, grad_rgb: np.ndarray):
        """Accumulates parameter grads; returns (grad_features, grad_base)."""
        rgb = cache["rgb"]
        grad_logits = grad_rgb * rgb * (1.0 - rgb)
        gh = linear_apply(self.out, cache["last_hidden"], grad_logits)
        scales = cache["scales"]
        grad_film = np.zeros((len(rgb), N_SHADER_LAYERS, 2, HIDDEN))
        for i in reversed(range(N_SHADER_LAYERS)):
            gmod = gh * _act_grad(cache["mod"][i], self.activation)
            grad_film[:, i, 0, :] = gmod * cache["pre"][i]
            grad_film[:, i, 1, :] = gmod
            gpre = gmod * scales[:, i, :]
            gh = linear_apply(self.layers[i], cache["inputs"][i], gpre)
        grad_base = gh
        grad_features = linear_apply(
            self.film, cache["features"], grad_film.reshape(len(rgb), -1))
        return grad_features, grad_base


class DeformationNet:
    """Tiny 2-layer MLP producing a residual in hash-feature space.

    The output head is zero-initialized so the residual vanishes at init.
    """

    def __init__(self, feature_width: int, rng: np.random.Generator,
                 dtype=np.float32, activation: str = "relu",
                 name: str = "deform"):
        self.feature_width = feature_width
        self.activation = activation
        in_w = feature_width + SH_WIDTH
        self.layers = [
            LinearLayer(f"{name}.layer0", in_w, HIDDEN, rng, dtype),
            LinearLayer(f"{name}.layer1", HIDDEN, HIDDEN, rng, dtype),
        ]
        self.head = LinearLayer(f"{name}.head", HIDDEN, feature_width,
                                dtype=dtype, zero_init=True)

    def params(self) -> list[ParamGroup]:
        ps = []
        for layer in self.layers:
            ps += layer.params()
        return ps + self.head.params()

    def forward(self, deform_features: np.ndarray, sh_dirs: np.ndarray,
                batch_invariant: bool = False):
        deform_features = np.atleast_2d(deform_features)
        if deform_features.shape[1] != self.feature_width:
            raise DimensionError("deformation net: feature width mismatch")
        h = np.concatenate([deform_features, np.atleast_2d(sh_dirs)], axis=1)
        cache = {"inputs": [], "pre": []}
        for layer in self.layers:
            cache["inputs"].append(h)
            pre = linear_forward(layer, h, batch_invariant)
            cache["pre"].append(pre)
            h = _act(pre, self.activation)
        cache["last_hidden"] = h
        delta = linear_forward(self.head, h, batch_invariant)
        return delta, cache

    def backward(self, cache, grad_delta: np.ndarray) -> np.ndarray:
        """Returns the gradient w.r.t. the deformation-grid features."""
        gh = linear_apply(self.head, cache["last_hidden"], grad_delta)
        for i in reversed(range(len(self.layers))):
            gpre = gh * _act_grad(cache["pre"][i], self.activation)
            gh = linear_apply(self.layers[i], cache["inputs"][i], gpre)
        return gh[:, :self.feature_width]


def deform_features(net: DeformationNet, deform_feature: np.ndarray,
                    d: np.ndarray, main_feature: np.ndarray) -> np.ndarray:
    """Residual correction: main_feature + net(deform_feature, SH(d))."""
    deform_feature = np.atleast_2d(deform_feature)
    sh = np.atleast_2d(encode_direction(d))
    if len(sh) == 1 and len(deform_feature) > 1:
        sh = np.repeat(sh, len(deform_feature), axis=0)
    delta, _ = net.forward(deform_feature, sh)
    return np.atleast_2d(main_feature) + delta


def shade(shader: DeferredShader, feature: np.ndarray, d: np.ndarray,
          appearance_row: np.ndarray,
          lighting_row: np.ndarray | None = None,
          batch_invariant: bool = False) -> np.ndarray:
    """Single-call shading: builds the base input and runs the MLP."""
    feature = np.atleast_2d(feature)
    sh = np.atleast_2d(encode_direction(d))
    if len(sh) == 1 and len(feature) > 1:
        sh = np.repeat(sh, len(feature), axis=0)
    parts = [sh, np.atleast_2d(appearance_row)]
    if lighting_row is not None:
        parts.append(np.atleast_2d(lighting_row))
    parts = [np.broadcast_to(p, (len(feature), p.shape[1])) for p in parts]
    base = np.concatenate(parts, axis=1)
    rgb, _ = shader.forward(feature, base, batch_invariant)
    return rgb
