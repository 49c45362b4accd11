"""Scene manifests, image IO, the train/test split, and a synthetic scene
generator whose ground truth comes from an analytic reference renderer that
shares no code with the neural shader.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, MeshFormatError, NvsurfError
from .geometry import (BACKGROUND, Camera, TriangleMesh, build_bvh,
                       intersect_rays, save_obj)


@dataclass
class Frame:
    file_path: str
    camera: Camera
    appearance_id: int = -1
    lighting_id: int = -1


@dataclass
class SceneManifest:
    mesh_path: str
    frames: list[Frame]
    margin: float = 0.05
    root: Path = field(default_factory=Path)

    def image_path(self, frame: Frame) -> Path:
        return self.root / frame.file_path

    @property
    def resolved_mesh_path(self) -> Path:
        return self.root / self.mesh_path


def load_manifest(path) -> SceneManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise NvsurfError(f"cannot read manifest {path}: {exc}")
    root = path.parent
    mesh_path = doc["mesh"]
    if not (root / mesh_path).exists():
        raise NvsurfError(f"manifest references missing mesh {mesh_path!r}")
    frames = []
    for k, fr in enumerate(doc["frames"]):
        c2w = np.asarray(fr["camera_to_world"], dtype=np.float64)
        if c2w.size != 16:
            raise NvsurfError(f"frame {k}: camera_to_world must have 16 numbers")
        c2w = c2w.reshape(4, 4)
        R = c2w[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-3):
            raise NvsurfError(f"frame {k}: non-orthonormal rotation")
        cam = Camera(fr["fx"], fr["fy"], fr["cx"], fr["cy"],
                     int(fr["w"]), int(fr["h"]), c2w)
        if not (root / fr["file_path"]).exists():
            raise NvsurfError(
                f"frame {k}: missing image {fr['file_path']!r}")
        frames.append(Frame(fr["file_path"], cam,
                            int(fr.get("appearance_id", -1)),
                            int(fr.get("lighting_id", -1))))
    return SceneManifest(mesh_path=mesh_path, frames=frames,
                         margin=float(doc.get("margin", 0.05)), root=root)


def save_manifest(path, manifest: SceneManifest) -> None:
    doc = {"mesh": manifest.mesh_path, "margin": manifest.margin,
           "frames": []}
    for fr in manifest.frames:
        cam = fr.camera
        doc["frames"].append({
            "file_path": fr.file_path,
            "camera_to_world": [float(x) for x in
                                cam.camera_to_world.reshape(-1)],
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "w": cam.width, "h": cam.height,
            "appearance_id": fr.appearance_id,
            "lighting_id": fr.lighting_id,
        })
    Path(path).write_text(json.dumps(doc, indent=1))


def split_train_test(manifest: SceneManifest):
    """Every 7th frame (indices 0, 7, 14, ...) is held out for testing."""
    test = [fr for i, fr in enumerate(manifest.frames) if i % 7 == 0]
    train = [fr for i, fr in enumerate(manifest.frames) if i % 7 != 0]
    if not train:
        import warnings
        warnings.warn("train split is empty; all frames fell into the test set")
    return train, test


# ---------------------------------------------------------------------------
# image IO

def load_image(path) -> np.ndarray:
    """8-bit PNG or binary PPM (P6) as float RGB in [0,1]."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return _load_ppm(path)
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return np.clip(img / 255.0, 0.0, 1.0)


def save_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def _load_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P6"):
        raise NvsurfError(f"{path}: not a P6 PPM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    w, h, maxval = fields
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return np.clip(raw.reshape(h, w, 3).astype(np.float64) / maxval, 0.0, 1.0)


# ---------------------------------------------------------------------------
# synthetic scene generation

@dataclass
class SceneRecipe:
    shape: str = "sphere"            # sphere | cube | plane
    texture: str = "sinusoid"        # sinusoid | checker
    texture_frequency: float = 4.0
    view_count: int = 28
    resolution: int = 96
    distances: tuple = (2.0, 4.0, 8.0)   # multiples of the object radius
    mesh_resolution: int = 48        # tessellation density
    supersampling: int = 4           # reference renderer uses s*s rays/pixel
    fill_fraction: float = 0.8


_LIGHT_DIR = np.array([0.35, -0.5, -0.75])
_LIGHT_DIR = _LIGHT_DIR / np.linalg.norm(_LIGHT_DIR)


def analytic_albedo(points: np.ndarray, recipe: SceneRecipe) -> np.ndarray:
    """Closed-form RGB texture over 3D position; unbounded resolution."""
    p = np.atleast_2d(points)
    f = recipe.texture_frequency
    if recipe.texture == "checker":
        if f <= 0:
            return np.full((len(p), 3), 0.6)
        cells = np.floor(p * f).astype(np.int64).sum(axis=1) % 2
        base = np.where(cells == 0, 0.15, 0.9)
        return np.stack([base, base, base], axis=1)
    if f <= 0:
        return np.full((len(p), 3), 0.6)
    two_pi_f = 2.0 * np.pi * f
    sx = np.sin(two_pi_f * p[:, 0])
    sy = np.sin(two_pi_f * p[:, 1] + 1.3)
    sz = np.sin(two_pi_f * p[:, 2] + 2.1)
    prod = sx * sy * sz
    r = 0.55 + 0.35 * prod
    g = 0.5 + 0.35 * np.sin(two_pi_f * (p[:, 0] + p[:, 1]))
    b = 0.5 + 0.35 * np.sin(two_pi_f * (p[:, 1] + p[:, 2]) + 0.7)
    return np.clip(np.stack([r, g, b], axis=1), 0.0, 1.0)


def analytic_shade(points, normals, view_dirs, recipe: SceneRecipe):
    """Lambertian + Blinn specular with the closed-form albedo."""
    albedo = analytic_albedo(points, recipe)
    n = normals
    ndotl = np.abs(n @ (-_LIGHT_DIR))
    half = -(view_dirs + _LIGHT_DIR)
    half /= np.maximum(np.linalg.norm(half, axis=1, keepdims=True), 1e-12)
    spec_term = np.abs(np.einsum("ij,ij->i", n, half)) ** 16
    color = albedo * (0.35 + 0.6 * ndotl[:, None]) \
        + 0.15 * spec_term[:, None]
    return np.clip(color, 0.0, 1.0)


def _sphere_mesh(n: int) -> TriangleMesh:
    """UV sphere of radius 1 with n latitude x 2n longitude bands."""
    lat = np.linspace(0, np.pi, n + 1)
    lon = np.linspace(0, 2 * np.pi, 2 * n, endpoint=False)
    verts = [np.array([0.0, 0.0, 1.0])]
    rows = []
    for t in lat[1:-1]:
        row = []
        for p in lon:
            row.append(len(verts))
            verts.append(np.array([np.sin(t) * np.cos(p),
                                   np.sin(t) * np.sin(p), np.cos(t)]))
        rows.append(row)
    south = len(verts)
    verts.append(np.array([0.0, 0.0, -1.0]))
    faces = []
    m = len(lon)
    for j in range(m):
        faces.append([0, rows[0][j], rows[0][(j + 1) % m]])
    for i in range(len(rows) - 1):
        for j in range(m):
            a, b = rows[i][j], rows[i][(j + 1) % m]
            c, d = rows[i + 1][j], rows[i + 1][(j + 1) % m]
            faces.append([a, c, b])
            faces.append([b, c, d])
    for j in range(m):
        faces.append([south, rows[-1][(j + 1) % m], rows[-1][j]])
    return TriangleMesh(np.stack(verts), np.asarray(faces, dtype=np.int64))


def _grid_patch(n: int):
    """Vertex grid + triangulation of an (n+1)^2 patch over [-1,1]^2."""
    lin = np.linspace(-1.0, 1.0, n + 1)
    u, v = np.meshgrid(lin, lin)
    faces = []
    for i in range(n):
        for j in range(n):
            a = i * (n + 1) + j
            b = a + 1
            c = a + (n + 1)
            d = c + 1
            faces.append([a, c, b])
            faces.append([b, c, d])
    return u.reshape(-1), v.reshape(-1), np.asarray(faces, dtype=np.int64)


def _cube_mesh(n: int) -> TriangleMesh:
    verts, faces = [], []
    u, v, patch = _grid_patch(n)
    axes = [(0, 1, 2, 1.0), (0, 1, 2, -1.0), (1, 2, 0, 1.0),
            (1, 2, 0, -1.0), (2, 0, 1, 1.0), (2, 0, 1, -1.0)]
    for a, b, c, sign in axes:
        base = len(verts)
        pts = np.zeros((len(u), 3))
        pts[:, a] = u
        pts[:, b] = v * sign    # flip one axis so outward windings alternate
        pts[:, c] = sign
        verts.extend(pts)
        faces.extend(patch + base)
    return TriangleMesh(np.stack(verts), np.asarray(faces, dtype=np.int64))


def _plane_mesh(n: int, displacement: float = 0.08) -> TriangleMesh:
    u, v, patch = _grid_patch(n)
    z = displacement * np.sin(2.5 * u) * np.cos(2.5 * v)
    verts = np.stack([u, v, z], axis=1)
    return TriangleMesh(verts, patch)


def make_shape(recipe: SceneRecipe) -> TriangleMesh:
    if recipe.shape == "sphere":
        return _sphere_mesh(recipe.mesh_resolution)
    if recipe.shape == "cube":
        return _cube_mesh(recipe.mesh_resolution)
    if recipe.shape == "plane":
        return _plane_mesh(recipe.mesh_resolution)
    raise ConfigurationError(f"unknown synthetic shape {recipe.shape!r}")


def _look_at(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    """camera_to_world with +z forward, +y down (right-handed)."""
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    world_up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ world_up) > 0.999:
        world_up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, world_up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    c2w = np.eye(4)
    c2w[:3, 0] = right
    c2w[:3, 1] = down
    c2w[:3, 2] = fwd
    c2w[:3, 3] = eye
    return c2w


def synthetic_cameras(recipe: SceneRecipe, radius: float,
                      rng: np.random.Generator) -> list[Camera]:
    """Cameras at mixed distances orbiting the origin, zoomed so the object
    fills a constant image fraction (emulating cross-scale capture)."""
    res = recipe.resolution
    cams = []
    for k in range(recipe.view_count):
        dist = recipe.distances[k % len(recipe.distances)] * radius
        az = rng.uniform(0, 2 * np.pi)
        el = rng.uniform(-0.9, 0.9)
        eye = dist * np.array([np.cos(el) * np.cos(az),
                               np.cos(el) * np.sin(az), np.sin(el)])
        f = recipe.fill_fraction * res * dist / (2.0 * radius)
        cams.append(Camera(f, f, res / 2.0, res / 2.0, res, res,
                           _look_at(eye, np.zeros(3))))
    return cams


def reference_render(mesh: TriangleMesh, camera: Camera,
                     recipe: SceneRecipe) -> np.ndarray:
    """Analytic ground-truth image: s x s supersampled ray casting with the
    closed-form texture.  Foreground pixels average their hit samples only;
    pixels with no hits are pure white.
    """
    bvh = build_bvh(mesh)
    s = recipe.supersampling
    origins, dirs = camera.ray_grid(gamma=s)
    fid, b0, b1, _ = intersect_rays(bvh, origins, dirs)
    H, W = camera.height, camera.width
    valid = fid != BACKGROUND
    colors = np.zeros((len(fid), 3))
    if valid.any():
        f = mesh.faces[fid[valid]]
        v = mesh.vertices
        pts = (b0[valid, None] * v[f[:, 0]] + b1[valid, None] * v[f[:, 1]]
               + (1 - b0 - b1)[valid, None] * v[f[:, 2]])
        normals = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True),
                              1e-12)
        colors[valid] = analytic_shade(pts, normals, dirs[valid], recipe)
    # pixel-major regrouping, average over hit samples only
    vm = valid.reshape(H, s, W, s).transpose(0, 2, 1, 3).reshape(H * W, s * s)
    cm = colors.reshape(H, s, W, s, 3).transpose(0, 2, 1, 3, 4) \
        .reshape(H * W, s * s, 3)
    counts = vm.sum(axis=1)
    image = np.ones((H * W, 3))
    fg = counts > 0
    image[fg] = (cm[fg] * vm[fg, :, None]).sum(axis=1) / counts[fg, None]
    return image.reshape(H, W, 3)


def generate_synthetic_scene(recipe: SceneRecipe, seed: int,
                             out_dir) -> SceneManifest:
    """Write mesh, ground-truth images and manifest; reproducible from seed."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    mesh = make_shape(recipe)
    save_obj(out_dir / "mesh.obj", mesh)
    radius = float(np.linalg.norm(mesh.vertices, axis=1).max())
    cams = synthetic_cameras(recipe, radius, rng)
    frames = []
    for i, cam in enumerate(cams):
        image = reference_render(mesh, cam, recipe)
        rel = f"images/frame_{i:04d}.png"
        save_image(out_dir / rel, image)
        frames.append(Frame(rel, cam, appearance_id=-1, lighting_id=-1))
    manifest = SceneManifest(mesh_path="mesh.obj", frames=frames,
                             margin=0.05, root=out_dir)
    save_manifest(out_dir / "manifest.json", manifest)
    return manifest
