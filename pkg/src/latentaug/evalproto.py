"""Evaluation protocols: held-out-domain scoring, robustness sweeps,
embedding export, and the augmentation ablation grid.
"""

from __future__ import annotations

import copy
import json
import os

import numpy as np

from . import metrics
from .data import PERTURB_KINDS, BenchmarkDataset, images_to_array, perturb
from .train import Trainer, TrainConfig, infer


def _scored(checkpoint, samples):
    probs = infer(checkpoint, images_to_array(samples))
    labels = np.array([0 if s.domain == 0 else 1 for s in samples])
    groups = np.array([s.group_id for s in samples])
    return probs, labels, groups


def evaluate_held_out(checkpoint: str, data_dir: str, hold_out: int):
    """Score test reals vs held-out fakes; returns (frame, group) reports."""
    ds = BenchmarkDataset(data_dir)
    if hold_out in ds.train_domains:
        raise ValueError(f"domain {hold_out} is present in the training split")
    samples = ds.samples("test", domains={0, hold_out})
    if not samples:
        raise ValueError(f"no test samples for domains {{0, {hold_out}}}")
    probs, labels, groups = _scored(checkpoint, samples)
    frame = metrics.report(probs, labels, split=f"test/hold_out={hold_out}")
    group = metrics.MetricsReport(
        auc=metrics.group_auc(probs, labels, groups),
        ap=float("nan"),
        eer=float("nan"),
        n_pos=len(set(groups[labels == 1])),
        n_neg=len(set(groups[labels == 0])),
        split=f"test-group/hold_out={hold_out}",
    )
    return frame, group


def evaluate_split(checkpoint: str, data_dir: str, split: str, domains=None):
    """Frame-level report over an arbitrary split/domain subset."""
    ds = BenchmarkDataset(data_dir)
    samples = ds.samples(split, domains=domains)
    probs, labels, _ = _scored(checkpoint, samples)
    return metrics.report(probs, labels, split=split)


def robustness_sweep(checkpoint: str, data_dir: str, hold_out: int,
                     kinds=PERTURB_KINDS, severities=(1, 2, 3, 4, 5), seed: int = 0):
    """Held-out AUC per (kind, severity) plus one clean row."""
    ds = BenchmarkDataset(data_dir)
    if hold_out in ds.train_domains:
        raise ValueError(f"domain {hold_out} is present in the training split")
    samples = ds.samples("test", domains={0, hold_out})
    rows = []
    frame, _ = evaluate_held_out(checkpoint, data_dir, hold_out)
    rows.append(frame)
    for kind in kinds:
        for severity in severities:
            perturbed = [perturb(s, kind, severity, seed=seed) for s in samples]
            probs, labels, _ = _scored(checkpoint, perturbed)
            rows.append(
                metrics.report(
                    probs,
                    labels,
                    split=f"test/hold_out={hold_out}",
                    perturbation=f"{kind}/{severity}",
                )
            )
    return rows


def export_embeddings(checkpoint: str, samples, out_path: str):
    """Flattened student features + labels + 2-D principal-component projection."""
    import torch

    from .models import ConvEncoder, EncoderSpec, images_to_tensor
    from .train import _load_checkpoint

    blob = _load_checkpoint(checkpoint)
    spec = EncoderSpec.from_dict(blob["spec"])
    student = ConvEncoder(spec)
    student.load_state_dict(blob["student"])
    student.eval()
    with torch.no_grad():
        feats = student(images_to_tensor(images_to_array(samples)))
    flat = feats.flatten(1).numpy().astype(np.float64)
    labels = np.array([s.domain for s in samples])
    mean = flat.mean(axis=0)
    centered = flat - mean
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    proj = centered @ components.T
    np.savez(
        out_path,
        features=flat,
        labels=labels,
        mean=mean,
        components=components,
        projection=proj,
    )
    return out_path


ABLATION_CELLS = (
    ("baseline", None, None),
    ("wd_only", True, False),
    ("cd_only", False, True),
    ("wd_cd", True, True),
)


def ablate(base_config: TrainConfig, hold_out: int, seeds, out_dir: str,
           real_encoder=None):
    """Train {baseline, WD, CD, WD+CD} per seed and report held-out metrics.

    The baseline cell trains the student alone with the binary loss. Returns
    {cell: {"auc": [...], "ap": [...], "eer": [...]}} plus a rendered table.
    """
    results = {name: {"auc": [], "ap": [], "eer": []} for name, _, _ in ABLATION_CELLS}
    for name, wd, cd in ABLATION_CELLS:
        for seed in seeds:
            cfg = copy.deepcopy(base_config)
            cfg.seed = seed
            if name == "baseline":
                cfg.student_only = True
            else:
                cfg.augment.wd_enabled = wd
                cfg.augment.cd_enabled = cd
            run_dir = os.path.join(out_dir, f"{name}_seed{seed}")
            trainer = Trainer(cfg, real_encoder=real_encoder)
            ckpt = trainer.fit(run_dir)
            frame, _ = evaluate_held_out(ckpt, cfg.data_dir, hold_out)
            results[name]["auc"].append(frame.auc)
            results[name]["ap"].append(frame.ap)
            results[name]["eer"].append(frame.eer)
    with open(os.path.join(out_dir, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
    return results


def ablation_table(results) -> str:
    lines = ["cell      AUC             AP              EER"]
    for name, _, _ in ABLATION_CELLS:
        cells = []
        for metric in ("auc", "ap", "eer"):
            vals = np.array(results[name][metric])
            cells.append(f"{vals.mean():.3f}+-{vals.std():.3f}")
        lines.append(f"{name:<9} " + "  ".join(f"{c:<14}" for c in cells))
    return "\n".join(lines)
