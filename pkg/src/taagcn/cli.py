"""Command-line entry point exposing each pipeline stage.

Stages communicate only via files; every run prints the resolved config and
sha256 hashes of its inputs before acting, and all outputs are written
atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import tempfile

import numpy as np

from .config import TrainConfig
from .data import SynthSpec, load_manifest, synth_generate
from .graphs import build_adjacency
from .gradcheck import run_toy_gradcheck
from .keypoints import compute_selection, default_hierarchy, generate_sc, save_selection
from .train import evaluate, prepare_dataset, run_ablation, train


def _file_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write_text(path: str, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".",
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def resolve_config(args: argparse.Namespace) -> TrainConfig:
    """Precedence: explicit CLI flag > config file > built-in default."""
    if getattr(args, "config", None):
        cfg = TrainConfig.from_json(open(args.config).read())
    else:
        cfg = TrainConfig()
    overrides = {}
    for f in dataclasses.fields(TrainConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    return cfg.replace(**overrides) if overrides else cfg


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with a full TrainConfig")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            parser.add_argument(flag, type=lambda s: s.lower() in ("1", "true", "yes"),
                                default=None, metavar="BOOL")
        elif f.name == "agcl_channels":
            parser.add_argument(flag, type=lambda s: tuple(int(x) for x in s.split(",")),
                                default=None, metavar="C1,C2,...")
        elif f.name == "age_group_bounds":
            parser.add_argument(flag, type=lambda s: [int(x) for x in s.split(",")],
                                default=None, metavar="B1,B2,...")
        elif isinstance(f.default, int):
            parser.add_argument(flag, type=int, default=None)
        elif isinstance(f.default, float):
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, type=str, default=None)


def _announce(cfg: TrainConfig, inputs: list[str]) -> None:
    print("resolved config:", cfg.to_json(), file=sys.stderr)
    for path in inputs:
        print(f"input {path}: sha256={_file_hash(path)}", file=sys.stderr)


def cmd_synth(args) -> int:
    spec = SynthSpec(q_toy=args.q_toy, samples_per_age=args.samples_per_age,
                     jitter_px=args.jitter_px, drift_px=args.drift_px,
                     texture_rate=args.texture_rate, patch_size=args.patch_size,
                     joint_dropout=args.joint_dropout)
    manifest = synth_generate(spec, seed=args.seed, out_dir=args.out)
    print(json.dumps({"manifest": manifest.path, "samples": len(manifest),
                      "hash": manifest.content_hash()}))
    return 0


def cmd_select_keypoints(args) -> int:
    cfg = resolve_config(args)
    _announce(cfg, [args.manifest])
    manifest = load_manifest(args.manifest)
    samples = [manifest.load_sample(i) for i in range(len(manifest))]
    stats = compute_selection(samples, K=cfg.num_neighbors, eta=cfg.eta,
                              n_select=cfg.n_select, root=cfg.root_keypoint)
    save_selection(args.out, stats.R)
    print(json.dumps({"selected": stats.R}))
    return 0


def cmd_gen_sc(args) -> int:
    cfg = resolve_config(args)
    _announce(cfg, [args.manifest])
    manifest = load_manifest(args.manifest)
    hierarchy = default_hierarchy()
    out = []
    for i in range(len(manifest)):
        s = manifest.load_sample(i)
        sc = generate_sc(s.skeleton_joints, hierarchy)
        out.append({"id": s.id, "points": sc.points.tolist(),
                    "provenance": sc.provenance})
    _atomic_write_text(args.out, json.dumps(out, indent=2))
    print(json.dumps({"samples": len(out), "out": args.out}))
    return 0


def cmd_build_adjacency(args) -> int:
    cfg = resolve_config(args)
    _announce(cfg, [args.manifest])
    manifest = load_manifest(args.manifest)
    data = prepare_dataset(manifest, cfg)
    _atomic_write_text(args.out, data.adjacency.to_json())
    print(json.dumps({"out": args.out, "hash": data.adjacency.content_hash()}))
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    _announce(cfg, [args.manifest])
    manifest = load_manifest(args.manifest)
    summary = train(manifest, cfg, args.out, resume_from=args.resume_from)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_eval(args) -> int:
    _announce(TrainConfig(), [args.manifest, args.checkpoint])
    manifest = load_manifest(args.manifest)
    metrics = evaluate(manifest, args.checkpoint)
    print(json.dumps(metrics, indent=2))
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    _announce(cfg, [args.manifest])
    manifest = load_manifest(args.manifest)
    modalities = tuple(args.modalities.split(",")) if args.modalities else ("all",)
    rows = run_ablation(manifest, cfg, args.out, modalities=modalities)
    print(json.dumps(rows, indent=2))
    return 0


def cmd_gradcheck(args) -> int:
    report = run_toy_gradcheck(seed=args.seed)
    worst = max(report.values())
    for name in sorted(report):
        print(f"{name}: {report[name]:.3e}")
    print(f"max relative error: {worst:.3e}")
    return 0 if worst < 1e-5 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taagcn",
                                     description="Graph-based age estimation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--q-toy", type=int, default=10)
    p.add_argument("--samples-per-age", type=int, default=20)
    p.add_argument("--jitter-px", type=float, default=0.5)
    p.add_argument("--drift-px", type=float, default=6.0)
    p.add_argument("--texture-rate", type=float, default=12.0)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--joint-dropout", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("select-keypoints", help="facial keypoint selection")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_select_keypoints)

    p = sub.add_parser("gen-sc", help="SC keypoint generation for every sample")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_sc)

    p = sub.add_parser("build-adjacency", help="correlation-based adjacency")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_build_adjacency)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume-from", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the variant/selection ablation grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--modalities", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--scale", default="toy", choices=["toy"])
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
