"""Mesh ingestion, BVH acceleration, ray-surface intersection and
supersampled rasterization.

Rasterization is organized ray casting against the BVH: the per-supersample
hit points feed the surface featurization directly, so exact intersections
are required and scanline approximations buy nothing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .errors import (ConfigurationError, EmptySceneError, MeshFormatError)

BACKGROUND = -1
_EPS_DET = 1e-12
_EPS_T = 1e-7


@dataclass
class TriangleMesh:
    vertices: np.ndarray          # (V, 3) float64
    faces: np.ndarray             # (F, 3) int64
    degenerate_dropped: int = 0

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if len(self.faces) and self.faces.max() >= len(self.vertices):
            raise MeshFormatError("face index out of range")


def _drop_degenerate(vertices: np.ndarray, faces: np.ndarray):
    v = vertices
    a, b, c = v[faces[:, 0]], v[faces[:, 1]], v[faces[:, 2]]
    area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
    keep = area2 > 1e-14
    return faces[keep], int((~keep).sum())


def load_mesh(path) -> TriangleMesh:
    path = str(path)
    if path.lower().endswith(".obj"):
        verts, faces = _parse_obj(path)
    elif path.lower().endswith(".ply"):
        verts, faces = _parse_ply(path)
    else:
        raise MeshFormatError(f"unsupported mesh extension: {path}")
    if len(verts) == 0 or len(faces) == 0:
        raise EmptySceneError(f"mesh has no geometry: {path}")
    faces = np.asarray(faces, dtype=np.int64)
    verts = np.asarray(verts, dtype=np.float64)
    if faces.max() >= len(verts) or faces.min() < 0:
        raise MeshFormatError(f"face references missing vertex in {path}")
    faces, dropped = _drop_degenerate(verts, faces)
    if len(faces) == 0:
        raise EmptySceneError(f"all faces degenerate: {path}")
    return TriangleMesh(verts, faces, degenerate_dropped=dropped)


def _parse_obj(path):
    verts, faces = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except (ValueError, IndexError):
                    raise MeshFormatError(f"{path}:{lineno}: bad vertex record")
            elif parts[0] == "f":
                try:
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                except ValueError:
                    raise MeshFormatError(f"{path}:{lineno}: bad face record")
                if len(idx) < 3:
                    raise MeshFormatError(f"{path}:{lineno}: face with <3 vertices")
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                # fan triangulation for polygons
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return verts, faces


def _parse_ply(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"ply"):
        raise MeshFormatError(f"{path}: not a PLY file")
    end = data.find(b"end_header\n")
    if end < 0:
        raise MeshFormatError(f"{path}: missing end_header")
    header = data[:end].decode("ascii", "replace").splitlines()
    body = data[end + len(b"end_header\n"):]
    n_vert = n_face = 0
    binary = False
    current = None
    vert_props = []
    for line in header:
        toks = line.split()
        if not toks:
            continue
        if toks[0] == "format":
            binary = toks[1] == "binary_little_endian"
        elif toks[0] == "element":
            current = toks[1]
            if toks[1] == "vertex":
                n_vert = int(toks[2])
            elif toks[1] == "face":
                n_face = int(toks[2])
        elif toks[0] == "property" and current == "vertex":
            vert_props.append((toks[1], toks[-1]))
    if not binary:
        raise MeshFormatError(f"{path}: only binary little-endian PLY supported")
    if vert_props[:3] != [("float", "x"), ("float", "y"), ("float", "z")] and \
       [p[1] for p in vert_props[:3]] != ["x", "y", "z"]:
        raise MeshFormatError(f"{path}: vertex layout must start with x,y,z")
    sizes = {"float": 4, "float32": 4, "double": 8, "uchar": 1, "uint8": 1,
             "int": 4, "int32": 4, "uint": 4, "uint32": 4, "short": 2, "ushort": 2}
    stride = sum(sizes[t] for t, _ in vert_props)
    try:
        raw = np.frombuffer(body, dtype=np.uint8, count=n_vert * stride)
        raw = raw.reshape(n_vert, stride)
        verts = raw[:, :12].copy().view("<f4").astype(np.float64)
        off = n_vert * stride
        faces = []
        for _ in range(n_face):
            (cnt,) = struct.unpack_from("<B", body, off)
            off += 1
            idx = struct.unpack_from(f"<{cnt}i", body, off)
            off += 4 * cnt
            for k in range(1, cnt - 1):
                faces.append((idx[0], idx[k], idx[k + 1]))
    except (struct.error, ValueError) as exc:
        raise MeshFormatError(f"{path}: truncated PLY body ({exc})")
    return verts, faces


def save_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# cameras

@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    camera_to_world: np.ndarray   # (4, 4)

    def __post_init__(self):
        self.camera_to_world = np.asarray(self.camera_to_world, dtype=np.float64)
        if self.camera_to_world.shape != (4, 4):
            raise ConfigurationError("camera_to_world must be 4x4")
        R = self.camera_to_world[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-3):
            raise ConfigurationError("rotation block is not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError("principal point outside the image")

    @property
    def origin(self) -> np.ndarray:
        return self.camera_to_world[:3, 3]

    def ray_grid(self, gamma: int = 1):
        """Rays through the centers of the gamma-supersampled pixel grid.

        Convention: +x right, +y down, +z forward (camera looks down +z).
        Returns (origins, dirs) of shape (gamma*H*gamma*W, 3), row-major over
        the gamma*H x gamma*W buffer.
        """
        if gamma < 1:
            raise ConfigurationError("gamma must be >= 1")
        H, W = self.height * gamma, self.width * gamma
        px = (np.arange(W) + 0.5) / gamma
        py = (np.arange(H) + 0.5) / gamma
        u, v = np.meshgrid(px, py)
        dirs_cam = np.stack([(u - self.cx) / self.fx,
                             (v - self.cy) / self.fy,
                             np.ones_like(u)], axis=-1).reshape(-1, 3)
        dirs = dirs_cam @ self.camera_to_world[:3, :3].T
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(self.origin, dirs.shape)
        return np.ascontiguousarray(origins), np.ascontiguousarray(dirs)

    def pixel_ray(self, u: float, v: float):
        """Ray through pixel-space coordinates (u, v) in [0,W)x[0,H)."""
        d = np.array([(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0])
        d = self.camera_to_world[:3, :3] @ d
        return self.origin.copy(), d / np.linalg.norm(d)

    def pixel_center_dirs(self):
        """Unit view directions through all pixel centers, shape (H*W, 3)."""
        _, dirs = self.ray_grid(gamma=1)
        return dirs

    def scaled(self, factor: float) -> "Camera":
        return Camera(self.fx * factor, self.fy * factor,
                      self.cx * factor, self.cy * factor,
                      int(round(self.width * factor)),
                      int(round(self.height * factor)),
                      self.camera_to_world.copy())


# ---------------------------------------------------------------------------
# scene normalization

@dataclass
class BoundingVolume:
    """Uniform scale + offset mapping scene coordinates into [0,1]^3."""
    vmin: np.ndarray
    vmax: np.ndarray
    scale: float
    offset: np.ndarray

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        return pts * self.scale + self.offset

    def invert_points(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.offset) / self.scale

    def apply_camera(self, camera: Camera) -> Camera:
        c2w = camera.camera_to_world.copy()
        c2w[:3, 3] = self.apply_points(c2w[:3, 3])
        return Camera(camera.fx, camera.fy, camera.cx, camera.cy,
                      camera.width, camera.height, c2w)

    def to_dict(self) -> dict:
        return {"vmin": self.vmin.tolist(), "vmax": self.vmax.tolist(),
                "scale": self.scale, "offset": self.offset.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingVolume":
        return cls(np.asarray(d["vmin"]), np.asarray(d["vmax"]),
                   float(d["scale"]), np.asarray(d["offset"]))


def normalize_scene(mesh: TriangleMesh, margin: float = 0.05):
    """Map the mesh bounds into [margin, 1-margin]^3 with a uniform scale."""
    if not 0 <= margin < 0.5:
        raise ConfigurationError("margin must be in [0, 0.5)")
    vmin = mesh.vertices.min(axis=0)
    vmax = mesh.vertices.max(axis=0)
    extent = float((vmax - vmin).max())
    if extent <= 0:
        raise EmptySceneError("mesh has zero extent")
    scale = (1.0 - 2.0 * margin) / extent
    center = 0.5 * (vmin + vmax)
    offset = 0.5 - center * scale
    bv = BoundingVolume(vmin, vmax, scale, offset)
    out = TriangleMesh(bv.apply_points(mesh.vertices), mesh.faces.copy(),
                       degenerate_dropped=mesh.degenerate_dropped)
    return out, bv


# ---------------------------------------------------------------------------
# BVH

@dataclass
class BVH:
    """Flat-array BVH; median split over the longest axis, leaf size <= 4."""
    node_min: np.ndarray      # (n_nodes, 3)
    node_max: np.ndarray
    node_left: np.ndarray     # child index, or -1 for leaves
    node_right: np.ndarray
    node_start: np.ndarray    # leaf range into tri_order
    node_count: np.ndarray
    tri_order: np.ndarray     # permutation of face indices
    v0: np.ndarray            # per original face: vertex 0
    e1: np.ndarray            # v1 - v0
    e2: np.ndarray            # v2 - v0

    @property
    def n_nodes(self) -> int:
        return len(self.node_left)


LEAF_SIZE = 4


def build_bvh(mesh: TriangleMesh) -> BVH:
    if len(mesh.faces) == 0:
        raise EmptySceneError("cannot build a BVH over an empty mesh")
    v = mesh.vertices
    f = mesh.faces
    tri_min = np.minimum(np.minimum(v[f[:, 0]], v[f[:, 1]]), v[f[:, 2]])
    tri_max = np.maximum(np.maximum(v[f[:, 0]], v[f[:, 1]]), v[f[:, 2]])
    centroids = 0.5 * (tri_min + tri_max)

    order = np.arange(len(f), dtype=np.int64)
    node_min, node_max = [], []
    node_left, node_right, node_start, node_count = [], [], [], []

    def new_node():
        node_min.append(None)
        node_max.append(None)
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(0)
        node_count.append(0)
        return len(node_left) - 1

    # iterative build to avoid recursion limits on skewed meshes
    root = new_node()
    stack = [(root, 0, len(f))]
    while stack:
        node, lo, hi = stack.pop()
        idx = order[lo:hi]
        node_min[node] = tri_min[idx].min(axis=0)
        node_max[node] = tri_max[idx].max(axis=0)
        if hi - lo <= LEAF_SIZE:
            node_start[node] = lo
            node_count[node] = hi - lo
            continue
        extent = node_max[node] - node_min[node]
        axis = int(np.argmax(extent))
        mid = (hi - lo) // 2
        # argpartition by centroid gives the median split deterministically
        part = np.argsort(centroids[idx, axis], kind="stable")
        order[lo:hi] = idx[part]
        left = new_node()
        right = new_node()
        node_left[node] = left
        node_right[node] = right
        stack.append((left, lo, lo + mid))
        stack.append((right, lo + mid, hi))

    return BVH(
        node_min=np.asarray(node_min, dtype=np.float64),
        node_max=np.asarray(node_max, dtype=np.float64),
        node_left=np.asarray(node_left, dtype=np.int64),
        node_right=np.asarray(node_right, dtype=np.int64),
        node_start=np.asarray(node_start, dtype=np.int64),
        node_count=np.asarray(node_count, dtype=np.int64),
        tri_order=order,
        v0=np.ascontiguousarray(v[f[:, 0]]),
        e1=np.ascontiguousarray(v[f[:, 1]] - v[f[:, 0]]),
        e2=np.ascontiguousarray(v[f[:, 2]] - v[f[:, 0]]),
    )


@njit(cache=True, inline="always")
def _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, fid):
    # Moller-Trumbore, double sided
    px = dy * e2[fid, 2] - dz * e2[fid, 1]
    py = dz * e2[fid, 0] - dx * e2[fid, 2]
    pz = dx * e2[fid, 1] - dy * e2[fid, 0]
    det = e1[fid, 0] * px + e1[fid, 1] * py + e1[fid, 2] * pz
    if abs(det) < _EPS_DET:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    tx = ox - v0[fid, 0]
    ty = oy - v0[fid, 1]
    tz = oz - v0[fid, 2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return -1.0, 0.0, 0.0
    qx = ty * e1[fid, 2] - tz * e1[fid, 1]
    qy = tz * e1[fid, 0] - tx * e1[fid, 2]
    qz = tx * e1[fid, 1] - ty * e1[fid, 0]
    w = (dx * qx + dy * qy + dz * qz) * inv
    if w < 0.0 or u + w > 1.0:
        return -1.0, 0.0, 0.0
    t = (e2[fid, 0] * qx + e2[fid, 1] * qy + e2[fid, 2] * qz) * inv
    if t <= _EPS_T:
        return -1.0, 0.0, 0.0
    return t, u, w


@njit(cache=True, parallel=True)
def _traverse(origins, dirs, node_min, node_max, node_left, node_right,
              node_start, node_count, tri_order, v0, e1, e2,
              out_fid, out_t, out_b1, out_b2):
    n = origins.shape[0]
    for r in prange(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix = 1.0 / dx if dx != 0.0 else np.inf
        iy = 1.0 / dy if dy != 0.0 else np.inf
        iz = 1.0 / dz if dz != 0.0 else np.inf
        best_t = np.inf
        best_fid = -1
        best_u = 0.0
        best_w = 0.0
        stack = np.empty(128, dtype=np.int64)
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            # slab test
            t0 = (node_min[node, 0] - ox) * ix
            t1 = (node_max[node, 0] - ox) * ix
            tmin = min(t0, t1)
            tmax = max(t0, t1)
            t0 = (node_min[node, 1] - oy) * iy
            t1 = (node_max[node, 1] - oy) * iy
            tmin = max(tmin, min(t0, t1))
            tmax = min(tmax, max(t0, t1))
            t0 = (node_min[node, 2] - oz) * iz
            t1 = (node_max[node, 2] - oz) * iz
            tmin = max(tmin, min(t0, t1))
            tmax = min(tmax, max(t0, t1))
            if tmax < tmin or tmax < _EPS_T or tmin > best_t:
                continue
            if node_left[node] < 0:
                s = node_start[node]
                for k in range(node_count[node]):
                    fid = tri_order[s + k]
                    t, u, w = _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, fid)
                    if t > 0.0 and (t < best_t or (t == best_t and fid < best_fid)):
                        best_t = t
                        best_fid = fid
                        best_u = u
                        best_w = w
            else:
                stack[sp] = node_left[node]
                sp += 1
                stack[sp] = node_right[node]
                sp += 1
        out_fid[r] = best_fid
        if best_fid >= 0:
            out_t[r] = best_t
            # barycentrics: point = b0*v0 + b1*v1 + b2*v2 with b1=u, b2=w
            out_b1[r] = best_u
            out_b2[r] = best_w
        else:
            out_t[r] = 0.0
            out_b1[r] = 0.0
            out_b2[r] = 0.0


def intersect_rays(bvh: BVH, origins: np.ndarray, dirs: np.ndarray):
    """Nearest double-sided hits for a batch of rays.

    Returns (face_id, b0, b1, depth); face_id is BACKGROUND (-1) on a miss.
    b0/b1 are the barycentric weights of the face's first two vertices.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n = origins.shape[0]
    fid = np.empty(n, dtype=np.int64)
    t = np.empty(n, dtype=np.float64)
    b1 = np.empty(n, dtype=np.float64)
    b2 = np.empty(n, dtype=np.float64)
    _traverse(origins, dirs, bvh.node_min, bvh.node_max, bvh.node_left,
              bvh.node_right, bvh.node_start, bvh.node_count, bvh.tri_order,
              bvh.v0, bvh.e1, bvh.e2, fid, t, b1, b2)
    b0 = np.where(fid >= 0, 1.0 - b1 - b2, 0.0)
    return fid, b0, b1, t


def intersect_rays_exhaustive(mesh: TriangleMesh, origins: np.ndarray,
                              dirs: np.ndarray):
    """Brute-force scan over every triangle; the oracle for BVH traversal."""
    v = mesh.vertices
    f = mesh.faces
    v0 = v[f[:, 0]]
    e1 = v[f[:, 1]] - v0
    e2 = v[f[:, 2]] - v0
    n = len(origins)
    fid = np.full(n, BACKGROUND, dtype=np.int64)
    tt = np.zeros(n)
    bb1 = np.zeros(n)
    bb2 = np.zeros(n)
    for r in range(n):
        o, d = origins[r], dirs[r]
        p = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, p)
        ok = np.abs(det) >= _EPS_DET
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = o - v0
        u = np.einsum("ij,ij->i", tvec, p) * inv
        q = np.cross(tvec, e1)
        w = (q @ d) * inv
        t = np.einsum("ij,ij->i", e2, q) * inv
        valid = ok & (u >= 0) & (u <= 1) & (w >= 0) & (u + w <= 1) & (t > _EPS_T)
        if not valid.any():
            continue
        cand = np.where(valid)[0]
        tmin = t[cand].min()
        winners = cand[t[cand] == tmin]
        best = int(winners.min())   # lowest face id at equal depth
        fid[r] = best
        tt[r] = t[best]
        bb1[r] = u[best]
        bb2[r] = w[best]
    b0 = np.where(fid >= 0, 1.0 - bb1 - bb2, 0.0)
    return fid, b0, bb1, tt


@dataclass
class HitRecord:
    face_id: int
    b0: float
    b1: float
    point: np.ndarray
    depth: float

    @property
    def is_background(self) -> bool:
        return self.face_id == BACKGROUND

    @property
    def b2(self) -> float:
        return 1.0 - self.b0 - self.b1


def intersect_ray(bvh: BVH, mesh: TriangleMesh, origin, direction) -> HitRecord:
    origin = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    direction = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    fid, b0, b1, t = intersect_rays(bvh, origin, direction)
    if fid[0] == BACKGROUND:
        return HitRecord(BACKGROUND, 0.0, 0.0, np.zeros(3), 0.0)
    # barycentrics are canonically float32 (the hit-buffer precision) so that
    # points re-derived from cached buffers match single-ray queries exactly
    b0 = b0.astype(np.float32)
    b1 = b1.astype(np.float32)
    pt = barycentric_points(mesh, fid[:1], b0[:1], b1[:1])[0]
    return HitRecord(int(fid[0]), float(b0[0]), float(b1[0]), pt, float(t[0]))


def barycentric_points(mesh: TriangleMesh, fid, b0, b1) -> np.ndarray:
    """Reconstruct hit points from barycentrics (the canonical definition of
    a hit's position; identical for live and cached buffers)."""
    fid = np.asarray(fid)
    b0 = np.asarray(b0, dtype=np.float64)
    b1 = np.asarray(b1, dtype=np.float64)
    f = mesh.faces[np.maximum(fid, 0)]
    v = mesh.vertices
    b2 = 1.0 - b0 - b1
    pts = (b0[:, None] * v[f[:, 0]] + b1[:, None] * v[f[:, 1]]
           + b2[:, None] * v[f[:, 2]])
    pts[fid < 0] = 0.0
    return pts


# ---------------------------------------------------------------------------
# rasterization

@dataclass
class HitBuffer:
    """Per-supersample hit records for one view, shape (gamma*H, gamma*W)."""
    face_id: np.ndarray   # int64, BACKGROUND on miss
    b0: np.ndarray        # float32
    b1: np.ndarray        # float32
    depth: np.ndarray     # float32
    gamma: int
    width: int            # base (pre-supersampling) view width
    height: int

    @property
    def valid(self) -> np.ndarray:
        return self.face_id != BACKGROUND


# incremented on every full-view rasterization; lets callers verify that
# cached z-buffers are actually reused instead of re-rasterized
RASTERIZE_CALLS = 0


def rasterize_view(bvh: BVH, mesh: TriangleMesh, camera: Camera,
                   gamma: int = 1) -> HitBuffer:
    global RASTERIZE_CALLS
    RASTERIZE_CALLS += 1
    if gamma < 1:
        raise ConfigurationError("gamma must be >= 1")
    origins, dirs = camera.ray_grid(gamma)
    fid, b0, b1, t = intersect_rays(bvh, origins, dirs)
    H, W = camera.height * gamma, camera.width * gamma
    return HitBuffer(
        face_id=fid.reshape(H, W),
        b0=b0.astype(np.float32).reshape(H, W),
        b1=b1.astype(np.float32).reshape(H, W),
        depth=t.astype(np.float32).reshape(H, W),
        gamma=gamma, width=camera.width, height=camera.height)


def supersample_view(buffer: HitBuffer):
    """Reshape the buffer into (H, W, gamma^2) pixel-major supersamples."""
    g = buffer.gamma
    H, W = buffer.height, buffer.width

    def regroup(a):
        return a.reshape(H, g, W, g).transpose(0, 2, 1, 3).reshape(H, W, g * g)

    return (regroup(buffer.face_id), regroup(buffer.b0),
            regroup(buffer.b1), regroup(buffer.depth))


def foreground_mask(buffer: HitBuffer) -> np.ndarray:
    """A pixel is foreground iff at least one of its supersamples hit."""
    fid, _, _, _ = supersample_view(buffer)
    return (fid != BACKGROUND).any(axis=2)
