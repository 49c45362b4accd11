"""Command-line entry points: cache, train, render, eval, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dataset import load_manifest, save_image
from .encoding import EncodingConfig
from .errors import NvsurfError
from .experiment import (build_model, cache_views, evaluate_frames,
                         mean_psnr, mean_ssim, train_scene)
from .dataset import split_train_test
from .pipeline import (ModelConfig, TrainConfig, load_checkpoint,
                       save_checkpoint)
from .service import RenderRequest, make_server, render_request


def _encoding_from(doc: dict, base: EncodingConfig) -> EncodingConfig:
    d = base.to_dict()
    d.update(doc)
    return EncodingConfig.from_dict(d)


def parse_model_config(doc: dict, seed: int = 0) -> ModelConfig:
    base = ModelConfig(seed=seed)
    d = base.to_dict()
    for key in ("deformation", "multisampling", "gamma", "lighting_count",
                "activation", "margin", "seed"):
        if key in doc:
            d[key] = doc[key]
    d["main_encoding"] = _encoding_from(doc.get("main_encoding", {}),
                                        base.main_encoding).to_dict()
    d["deform_encoding"] = _encoding_from(
        doc.get("deform_encoding", doc.get("main_encoding", {})),
        base.deform_encoding).to_dict()
    return ModelConfig.from_dict(d)


def parse_train_config(doc: dict, seed: int = 0,
                       deterministic: bool = True) -> TrainConfig:
    base = TrainConfig(seed=seed, deterministic=deterministic)
    d = base.to_dict()
    for key in d:
        if key in doc:
            d[key] = doc[key]
    return TrainConfig.from_dict(d)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def cmd_cache(args) -> int:
    manifest = load_manifest(args.manifest)
    doc = _load_config_file(args.config)
    model_cfg = parse_model_config(doc.get("model", {}), seed=args.seed)
    model = build_model(manifest, model_cfg)
    paths = cache_views(model, manifest, args.gamma, args.out)
    print(json.dumps({"cached_views": len(paths), "gamma": args.gamma,
                      "out": str(args.out)}))
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    doc = _load_config_file(args.config)
    model_cfg = parse_model_config(doc.get("model", {}), seed=args.seed)
    train_cfg = parse_train_config(doc.get("train", {}), seed=args.seed,
                                   deterministic=args.deterministic)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = Path(args.cache_dir) if args.cache_dir else out / "cache"
    model, history = train_scene(manifest, model_cfg, train_cfg, cache_dir,
                                 checkpoint_dir=out)
    (out / "loss_log.json").write_text(json.dumps(history))
    save_checkpoint(model, out / "checkpoint.xnvs")
    print(json.dumps({"steps": len(history),
                      "final_loss": history[-1] if history else None,
                      "checkpoint": str(out / "checkpoint.xnvs")}))
    return 0


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    model = load_checkpoint(args.checkpoint,
                            mesh_path=str(manifest.resolved_mesh_path))
    train_frames, test_frames = split_train_test(manifest)
    report = {}
    if args.split in ("train", "all"):
        reps = evaluate_frames(model, manifest, train_frames,
                               appearance_ids=list(range(len(train_frames))))
        report["train"] = {
            "frames": [{"frame": r.frame, "psnr": r.psnr, "ssim": r.ssim}
                       for r in reps],
            "mean_psnr": mean_psnr(reps), "mean_ssim": mean_ssim(reps)}
    if args.split in ("test", "all"):
        reps = evaluate_frames(model, manifest, test_frames)
        report["test"] = {
            "frames": [{"frame": r.frame, "psnr": r.psnr, "ssim": r.ssim}
                       for r in reps],
            "mean_psnr": mean_psnr(reps), "mean_ssim": mean_ssim(reps)}
    print(json.dumps(report, indent=1))
    return 0


def cmd_render(args) -> int:
    model = load_checkpoint(args.checkpoint, mesh_path=args.mesh)
    poses = json.loads(Path(args.poses).read_text())
    if not isinstance(poses, list):
        raise NvsurfError("pose file must contain a JSON list of requests")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for k, doc in enumerate(poses):
        try:
            req = RenderRequest.from_dict(doc)
        except ValueError as exc:
            raise NvsurfError(f"pose {k}: {exc}")
        image = render_request(model, req)
        path = out / f"frame_{k:04d}.png"
        save_image(path, image)
        written.append(str(path))
    print(json.dumps({"rendered": len(written), "out": str(out)}))
    return 0


def _warm_up(model) -> None:
    """Render one small frame so the first request pays no one-time costs
    (JIT compilation, lazy allocations)."""
    from .geometry import Camera
    from .pipeline import render_image
    v = model.mesh.vertices
    center = v.mean(axis=0)
    radius = float(np.linalg.norm(v - center, axis=1).max())
    pose = np.eye(4)
    pose[:3, 3] = center + np.array([0.0, 0.0, 2.5 * radius])
    pose[:3, :3] = np.diag([1.0, -1.0, -1.0])   # look back toward the center
    camera = Camera(fx=16.0, fy=16.0, cx=8.0, cy=8.0, width=16, height=16,
                    camera_to_world=pose)
    render_image(model, camera)


def cmd_serve(args) -> int:
    model = load_checkpoint(args.checkpoint, mesh_path=args.mesh)
    _warm_up(model)
    server = make_server(model, args.port)
    print(json.dumps({"serving": True, "port": server.server_address[1]}),
          flush=True)
    server.serve_forever()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvsurf",
        description="Deferred neural rendering on hash-featurized meshes")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--deterministic", action="store_true", default=True)
    parser.add_argument("--fast", dest="deterministic", action="store_false",
                        help="allow unordered gradient accumulation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cache", help="pre-rasterize z-buffer caches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--gamma", type=int, default=2)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_cache)

    p = sub.add_parser("train", help="train a scene model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="JSON file with model/train sections")
    p.add_argument("--cache-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="masked PSNR/SSIM against a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "test", "all"),
                   default="all")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a camera-path file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mesh", help="override the checkpoint's mesh path")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("serve", help="run the HTTP render service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8590)
    p.add_argument("--mesh", help="override the checkpoint's mesh path")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NvsurfError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
