"""Command-line entry point wiring data generation, pretraining, training,
and the evaluation protocols.

Exit codes: 0 success, 2 usage, 3 config validation, 4 runtime failure.
Every subcommand writes one run_manifest.json under its output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

PROFILES = {
    "tiny": {"identities": 20, "epochs": 2},
    "desk": {"identities": 200, "epochs": 30},
}


class ConfigError(Exception):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


def _load_config(path):
    if not os.path.exists(path):
        raise ConfigError("config-not-found", f"config-not-found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("config-invalid", f"config-invalid: {path}: {exc}") from exc


def _write_manifest(out_dir, command, config, seed, outputs, started):
    os.makedirs(out_dir, exist_ok=True)
    blob = json.dumps(config, sort_keys=True).encode()
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "outputs": outputs,
        "wall_seconds": round(time.time() - started, 3),
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def cmd_generate_data(args):
    from .data import build_dataset

    started = time.time()
    profile = PROFILES.get(args.profile, {})
    identities = args.identities or profile.get("identities") or 20
    manifest = build_dataset(
        args.out, identities=identities, m=args.m, seed=args.seed, hold_out=args.hold_out
    )
    cfg = {
        "identities": identities,
        "m": args.m,
        "hold_out": args.hold_out,
        "seed": args.seed,
    }
    _write_manifest(args.out, "generate-data", cfg, args.seed,
                    ["manifest.tsv", "dataset.json"], started)
    print(json.dumps(manifest.counts, sort_keys=True))
    return 0


def cmd_pretrain_real(args):
    from .data import generate_real
    from .models import pretrain_real_encoder
    from .train import save_real_encoder

    started = time.time()
    # dedicated identity-classification corpus, disjoint from the benchmark
    # (the seed offset puts it in a different procedural-identity world)
    reals = generate_real(args.identities, args.images_per_identity,
                          seed=args.seed * 1009 + 999)
    encoder, acc = pretrain_real_encoder(reals, epochs=args.epochs, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "real_encoder.pt")
    save_real_encoder(path, encoder, acc, args.seed)
    cfg = {"identities": args.identities,
           "images_per_identity": args.images_per_identity,
           "epochs": args.epochs, "seed": args.seed}
    _write_manifest(args.out, "pretrain-real", cfg, args.seed, [path], started)
    print(f"pretrained real encoder, identity accuracy {acc:.3f} -> {path}")
    return 0


def _train_config_from_file(path):
    from .train import TrainConfig

    raw = _load_config(path)
    try:
        return TrainConfig.from_dict(raw)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError("config-invalid", f"config-invalid: {exc}") from exc


def cmd_train(args):
    from .train import Trainer

    started = time.time()
    config = _train_config_from_file(args.config)
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError("config-invalid", f"config-invalid: {exc}") from exc
    trainer = Trainer(config)
    ckpt = trainer.fit(args.out)
    _write_manifest(args.out, "train", config.to_dict(), config.seed,
                    [ckpt, os.path.join(args.out, "metrics.jsonl")], started)
    print(f"trained {trainer.step} steps -> {ckpt}")
    return 0


def cmd_infer(args):
    from .data import _load_png
    from .train import infer

    paths = sorted(
        os.path.join(args.images, f)
        for f in os.listdir(args.images)
        if f.endswith(".png")
    )
    if not paths:
        raise ConfigError("config-invalid", f"config-invalid: no .png files in {args.images}")
    images = np.stack([_load_png(p) for p in paths])
    probs = infer(args.ckpt, images)
    for path, p in zip(paths, probs):
        print(f"{os.path.basename(path)}\t{p:.6f}")
    return 0


def cmd_evaluate(args):
    from .evalproto import evaluate_held_out

    started = time.time()
    frame, group = evaluate_held_out(args.ckpt, args.manifest, args.hold_out)
    out = args.out or os.path.dirname(args.ckpt) or "."
    cfg = {"ckpt": args.ckpt, "manifest": args.manifest, "hold_out": args.hold_out}
    _write_manifest(out, "evaluate", cfg, 0, [], started)
    with open(os.path.join(out, "evaluation.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(frame.to_dict()) + "\n")
        fh.write(json.dumps(group.to_dict()) + "\n")
    print(f"frame AUC {frame.auc:.3f}  AP {frame.ap:.3f}  EER {frame.eer:.3f}")
    print(f"group AUC {group.auc:.3f}")
    return 0


def cmd_perturb_eval(args):
    from .evalproto import robustness_sweep

    started = time.time()
    rows = robustness_sweep(args.ckpt, args.manifest, args.hold_out, seed=args.seed)
    out = args.out or os.path.dirname(args.ckpt) or "."
    cfg = {"ckpt": args.ckpt, "manifest": args.manifest, "hold_out": args.hold_out}
    _write_manifest(out, "perturb-eval", cfg, args.seed, [], started)
    with open(os.path.join(out, "robustness.jsonl"), "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row.to_dict()) + "\n")
    for row in rows:
        print(f"{row.perturbation:<20} AUC {row.auc:.3f}")
    return 0


def cmd_ablate(args):
    from .evalproto import ablate, ablation_table

    started = time.time()
    config = _train_config_from_file(args.config)
    seeds = [int(s) for s in args.seeds.split(",")]
    results = ablate(config, args.hold_out, seeds, args.out)
    _write_manifest(args.out, "ablate",
                    {"config": config.to_dict(), "seeds": seeds,
                     "hold_out": args.hold_out},
                    config.seed, [os.path.join(args.out, "ablation.json")], started)
    print(ablation_table(results))
    return 0


def cmd_export_embeddings(args):
    from .data import BenchmarkDataset
    from .evalproto import export_embeddings

    started = time.time()
    ds = BenchmarkDataset(args.manifest)
    samples = ds.samples(args.split)
    out_dir = os.path.dirname(args.out) or "."
    path = export_embeddings(args.ckpt, samples, args.out)
    _write_manifest(out_dir, "export-embeddings",
                    {"ckpt": args.ckpt, "manifest": args.manifest, "split": args.split},
                    0, [path], started)
    print(f"wrote {len(samples)} embeddings -> {path}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="latentaug")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("generate-data", help="generate the synthetic benchmark")
    g.add_argument("--out", required=True)
    g.add_argument("--identities", type=int, default=None)
    g.add_argument("--m", type=int, default=5)
    g.add_argument("--hold-out", dest="hold_out", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--profile", choices=sorted(PROFILES), default="tiny")
    g.set_defaults(func=cmd_generate_data)

    g = sub.add_parser("pretrain-real", help="pretrain + freeze the real encoder")
    g.add_argument("--out", required=True)
    g.add_argument("--identities", type=int, default=30)
    g.add_argument("--images-per-identity", dest="images_per_identity",
                   type=int, default=8)
    g.add_argument("--epochs", type=int, default=40)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_pretrain_real)

    g = sub.add_parser("train", help="train from a config file")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("infer", help="score images with a trained student")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--images", required=True)
    g.set_defaults(func=cmd_infer)

    g = sub.add_parser("evaluate", help="held-out-domain evaluation")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--manifest", required=True)
    g.add_argument("--hold-out", dest="hold_out", type=int, required=True)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("perturb-eval", help="robustness sweep over perturbations")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--manifest", required=True)
    g.add_argument("--hold-out", dest="hold_out", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_perturb_eval)

    g = sub.add_parser("ablate", help="WD/CD ablation grid")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--hold-out", dest="hold_out", type=int, required=True)
    g.add_argument("--seeds", default="0,1,2")
    g.set_defaults(func=cmd_ablate)

    g = sub.add_parser("export-embeddings", help="dump student features + 2-D projection")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--manifest", required=True)
    g.add_argument("--split", default="test")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_export_embeddings)

    return p


def dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime-error: {exc}", file=sys.stderr)
        return 4


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
