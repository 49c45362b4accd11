"""Multi-resolution volumetric hash encoding with trainable feature tables.

Each level conceptually covers [0,1]^3 with an (N+1)^3 vertex grid; coarse
levels whose grids fit in the table are stored densely, finer levels share a
fixed-size hash table.  Queries trilinearly interpolate the 8 cell corners
per level and concatenate across levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NvsurfError
from .numerics import ParamGroup

HASH_PRIMES = np.array([1, 2654435761, 805459861], dtype=np.uint64)

# the 8 cell-corner offsets in z-major bit order: corner k = (k&1, k>>1&1, k>>2&1)
_CORNERS = np.array([[(k >> a) & 1 for a in range(3)] for k in range(8)],
                    dtype=np.int64)


@dataclass(frozen=True)
class EncodingConfig:
    levels: int = 8
    channels: int = 4
    table_size: int = 2 ** 16          # must be a power of two
    coarsest: int = 16
    finest: int = 2 ** 9

    def __post_init__(self):
        if self.levels < 1 or self.channels < 1:
            raise ConfigurationError("levels and channels must be >= 1")
        if self.table_size & (self.table_size - 1):
            raise ConfigurationError("table_size must be a power of two")
        if self.coarsest > self.finest:
            raise ConfigurationError("coarsest resolution exceeds finest")
        if self.levels == 1 and self.coarsest != self.finest:
            raise ConfigurationError(
                "a single level requires coarsest == finest")

    @property
    def feature_width(self) -> int:
        return self.levels * self.channels

    def to_dict(self) -> dict:
        return {"levels": self.levels, "channels": self.channels,
                "table_size": self.table_size, "coarsest": self.coarsest,
                "finest": self.finest}

    @classmethod
    def from_dict(cls, d: dict) -> "EncodingConfig":
        return cls(**d)


def level_resolutions(config: EncodingConfig) -> list[int]:
    """Geometric resolution schedule N_l = floor(N_min * b**(l-1))."""
    L = config.levels
    if L == 1:
        return [config.coarsest]
    b = np.exp((np.log(config.finest) - np.log(config.coarsest)) / (L - 1))
    res = [int(np.floor(config.coarsest * b ** i + 1e-9)) for i in range(L)]
    res[0] = config.coarsest
    res[-1] = config.finest
    return res


@dataclass
class HashGridLevel:
    resolution: int
    dense: bool
    entry_count: int
    param: ParamGroup


class MultiResHashGrid:
    def __init__(self, config: EncodingConfig, levels: list[HashGridLevel],
                 name: str):
        self.config = config
        self.levels = levels
        self.name = name
        self.clamped_queries = 0

    @property
    def feature_width(self) -> int:
        return self.config.feature_width

    def params(self) -> list[ParamGroup]:
        return [lvl.param for lvl in self.levels]


def init_grid(config: EncodingConfig, seed: int, name: str = "grid",
              dtype=np.float32) -> MultiResHashGrid:
    """Tables i.i.d. uniform in [-1e-4, 1e-4], reproducible from the seed."""
    rng = np.random.default_rng(seed)
    levels = []
    for i, res in enumerate(level_resolutions(config)):
        dense = (res + 1) ** 3 <= config.table_size
        entries = (res + 1) ** 3 if dense else config.table_size
        table = rng.uniform(-1e-4, 1e-4,
                            size=(entries, config.channels)).astype(dtype)
        levels.append(HashGridLevel(
            resolution=res, dense=dense, entry_count=entries,
            param=ParamGroup.create(f"{name}.level{i}", table)))
    return MultiResHashGrid(config, levels, name)


def hash_index(coords: np.ndarray, level: HashGridLevel) -> np.ndarray:
    """Table index for integer grid coordinates, shape (..., 3).

    Dense levels use row-major indexing; hashed levels XOR the coordinates
    multiplied by fixed primes in wrapping uint32 arithmetic, modulo the
    table size.
    """
    coords = np.asarray(coords, dtype=np.int64)
    n = level.resolution
    if coords.min() < 0 or coords.max() > n:
        raise NvsurfError("grid coordinate out of range (caller must clamp)")
    if level.dense:
        return (coords[..., 0] + (n + 1) * coords[..., 1]
                + (n + 1) ** 2 * coords[..., 2])
    c = coords.astype(np.uint64)
    h = ((c[..., 0] * HASH_PRIMES[0])
         ^ (c[..., 1] * HASH_PRIMES[1])
         ^ (c[..., 2] * HASH_PRIMES[2])) & np.uint64(0xFFFFFFFF)
    return (h % np.uint64(level.entry_count)).astype(np.int64)


@dataclass
class EncodeTrace:
    """Corner indices and trilinear weights recorded for the backward pass."""
    indices: list[np.ndarray]   # per level: (N, 8) int64
    weights: list[np.ndarray]   # per level: (N, 8) float
    count: int


def encode_points(grid: MultiResHashGrid, xs: np.ndarray):
    """Features for points in [0,1]^3, shape (N, L*Z), plus the trace.

    Out-of-range coordinates are clamped and counted on the grid.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    clamped = np.clip(xs, 0.0, 1.0)
    n_clamped = int((clamped != xs).any(axis=1).sum())
    grid.clamped_queries += n_clamped
    N = len(clamped)
    Z = grid.config.channels
    out = np.empty((N, grid.feature_width), dtype=grid.levels[0].param.value.dtype)
    indices, weights = [], []
    for li, lvl in enumerate(grid.levels):
        res = lvl.resolution
        scaled = clamped * res
        cell = np.minimum(np.floor(scaled).astype(np.int64), res - 1)
        cell = np.maximum(cell, 0)
        f = scaled - cell                                   # (N, 3) in [0, 1]
        corners = cell[:, None, :] + _CORNERS[None, :, :]   # (N, 8, 3)
        idx = hash_index(corners, lvl)                      # (N, 8)
        w = np.ones((N, 8), dtype=np.float64)
        for axis in range(3):
            fa = f[:, axis][:, None]
            bit = _CORNERS[:, axis][None, :]
            w *= np.where(bit == 1, fa, 1.0 - fa)
        feat = (lvl.param.value[idx].astype(np.float64) * w[:, :, None]).sum(axis=1)
        out[:, li * Z:(li + 1) * Z] = feat
        indices.append(idx)
        weights.append(w)
    return out, EncodeTrace(indices, weights, N)


def encode_point(grid: MultiResHashGrid, x) -> np.ndarray:
    feat, _ = encode_points(grid, np.asarray(x).reshape(1, 3))
    return feat[0]


def encode_backward(grid: MultiResHashGrid, trace: EncodeTrace,
                    grad_out: np.ndarray) -> None:
    """Scatter d(loss)/d(features) into the level tables' grads.

    Accumulation uses per-channel bincount, which reduces in a fixed order
    and is bit-reproducible.
    """
    grad_out = np.atleast_2d(grad_out)
    if grad_out.shape != (trace.count, grid.feature_width):
        raise NvsurfError("encode_backward: trace does not match grad_out")
    Z = grid.config.channels
    for li, lvl in enumerate(grid.levels):
        idx = trace.indices[li].reshape(-1)                 # (N*8,)
        w = trace.weights[li].reshape(-1)
        g = grad_out[:, li * Z:(li + 1) * Z]                # (N, Z)
        contrib = np.repeat(g, 8, axis=0) * w[:, None]      # (N*8, Z)
        for c in range(Z):
            lvl.param.grad[:, c] += np.bincount(
                idx, weights=contrib[:, c],
                minlength=lvl.entry_count).astype(lvl.param.grad.dtype)
