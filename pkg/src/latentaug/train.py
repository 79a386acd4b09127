"""Joint end-to-end training of teachers, fusion, heads, and student.

Each step: (1) teacher forward per domain + domain loss, (2) latent
augmentation + fusion to build fake distillation targets (the real target
comes from the frozen pretrained real encoder), (3) student forward with
distillation + binary losses, (4) one optimizer update over every trainable
parameter. A `student_only` mode trains just the student with the binary
loss, serving as the no-augmentation baseline. By default the student and
teachers start from the frozen pretrained real encoder's weights
(`warm_start`), the desk-scale analogue of pretrained backbones.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .augment import AugmentConfig, FusionLayers, augment_domain_batch
from .data import BenchmarkDataset, images_to_array
from .losses import LossWeights, binary_loss, distill_loss, domain_loss, total_loss
from .models import ConvEncoder, EncoderSpec, PooledHead, images_to_tensor

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    data_dir: str
    real_encoder_path: str | None = None
    epochs: int = 30
    batch_identities: int = 8
    lr: float = 2e-4
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    detach_targets: bool = False
    checkpoint_every: int = 0  # epochs between checkpoints; 0 = final only
    student_only: bool = False
    alternate_phases: bool = False
    # initialize teachers and student from the pretrained real encoder (the
    # desk-scale analogue of starting from pretrained backbones); each teacher
    # gets a small seeded perturbation so the per-domain paths are not
    # identical at step 0
    warm_start: bool = True

    def validate(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_identities < 2:
            raise ValueError("batch_identities must be >= 2")
        self.augment.validate()
        if not self.student_only and self.real_encoder_path is None:
            raise ValueError("training needs a pretrained real encoder")

    def to_dict(self):
        return {
            "data_dir": self.data_dir,
            "real_encoder_path": self.real_encoder_path,
            "epochs": self.epochs,
            "batch_identities": self.batch_identities,
            "lr": self.lr,
            "seed": self.seed,
            "weights": self.weights.to_dict(),
            "augment": self.augment.to_dict(),
            "detach_targets": self.detach_targets,
            "checkpoint_every": self.checkpoint_every,
            "student_only": self.student_only,
            "alternate_phases": self.alternate_phases,
            "warm_start": self.warm_start,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            data_dir=d["data_dir"],
            real_encoder_path=d.get("real_encoder_path"),
            epochs=d["epochs"],
            batch_identities=d["batch_identities"],
            lr=d["lr"],
            seed=d["seed"],
            weights=LossWeights.from_dict(d["weights"]),
            augment=AugmentConfig.from_dict(d["augment"]),
            detach_targets=d["detach_targets"],
            checkpoint_every=d["checkpoint_every"],
            student_only=d["student_only"],
            alternate_phases=d["alternate_phases"],
            warm_start=d.get("warm_start", True),
        )

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def save_real_encoder(path, encoder: ConvEncoder, accuracy: float, seed: int):
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "spec": encoder.spec.to_dict(),
            "state": encoder.state_dict(),
            "accuracy": accuracy,
            "seed": seed,
        },
        path,
    )


def load_real_encoder(path) -> ConvEncoder:
    blob = torch.load(path, weights_only=False)
    enc = ConvEncoder(EncoderSpec.from_dict(blob["spec"]))
    enc.load_state_dict(blob["state"])
    enc.eval()
    for p in enc.parameters():
        p.requires_grad_(False)
    return enc


class Trainer:
    def __init__(self, config: TrainConfig, real_encoder: ConvEncoder | None = None):
        config.validate()
        self.config = config
        self.dataset = BenchmarkDataset(config.data_dir)
        self.train_domains = self.dataset.train_domains
        if 0 not in self.train_domains:
            raise RuntimeError("training split has no real domain")
        self.domain_to_class = {d: i for i, d in enumerate(self.train_domains)}
        spec = EncoderSpec(image_size=self.dataset.manifest.image_size,
                           init_seed=config.seed)
        self.spec = spec
        c = spec.latent_channels

        self.student = ConvEncoder(spec, seed_offset=100)
        self.binary_head = PooledHead(c, 1, seed=config.seed * 13 + 5)
        if config.student_only:
            self.teachers = None
            self.real_encoder = None
            self.fusion = None
            self.domain_head = None
        else:
            self.teachers = torch.nn.ModuleDict(
                {str(d): ConvEncoder(spec, seed_offset=d + 1) for d in self.train_domains}
            )
            self.real_encoder = real_encoder or load_real_encoder(config.real_encoder_path)
            if real_encoder is not None:
                self.real_encoder.eval()
                for p in self.real_encoder.parameters():
                    p.requires_grad_(False)
            with torch.random.fork_rng():
                torch.manual_seed(config.seed * 13 + 3)
                self.fusion = FusionLayers(c)
            self.domain_head = PooledHead(c, len(self.train_domains),
                                          seed=config.seed * 13 + 4)
            if config.warm_start:
                self._warm_start_encoders()
            self._assert_disjoint_parameters()

        self.optimizer = torch.optim.Adam(self.trainable_parameters(), lr=config.lr)
        self.batch_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([config.seed, 11]))
        )
        self.aug_rng = torch.Generator()
        self.aug_rng.manual_seed(config.seed * 1000003 + 17)
        self.step = 0
        self.epoch = 0

    def _warm_start_encoders(self):
        """Copy the frozen real encoder's weights into the student and each
        teacher, with a small seeded perturbation per teacher to break the
        symmetry between domain paths."""
        state = self.real_encoder.state_dict()
        self.student.load_state_dict(state)
        g = torch.Generator()
        for d, teacher in self.teachers.items():
            teacher.load_state_dict(state)
            g.manual_seed(self.config.seed * 1000003 + 29 * (int(d) + 1))
            with torch.no_grad():
                for p in teacher.parameters():
                    p.add_(torch.randn(p.shape, generator=g) * 0.01)

    # -- parameter bookkeeping -------------------------------------------------

    def trainable_modules(self):
        mods = [self.student, self.binary_head]
        if not self.config.student_only:
            mods += [self.teachers, self.fusion, self.domain_head]
        return mods

    def trainable_parameters(self):
        params = []
        for m in self.trainable_modules():
            params += list(m.parameters())
        return params

    def _assert_disjoint_parameters(self):
        seen = set()
        for m in self.trainable_modules():
            for p in m.parameters():
                if id(p) in seen:
                    raise RuntimeError("parameter shared between modules")
                seen.add(id(p))

    # -- single step -----------------------------------------------------------

    def train_step(self, batch=None):
        """One optimizer update; returns the loss breakdown."""
        cfg = self.config
        if batch is None:
            batch = self.dataset.sample_identity_batch(cfg.batch_identities, self.batch_rng)
        images = {
            d: images_to_tensor(images_to_array(batch[d])) for d in batch
        }
        assert 0 in images, "batch must contain real-domain samples"

        if cfg.student_only:
            scores, labels = [], []
            for d, x in images.items():
                feats = self.student(x)
                scores.append(self.binary_head(feats).squeeze(1))
                labels.append(torch.full((x.shape[0],), 0 if d == 0 else 1))
            l_bin = binary_loss(torch.cat(scores), torch.cat(labels))
            breakdown = total_loss(l_bin, torch.zeros(()), torch.zeros(()), cfg.weights)
            self.optimizer.zero_grad()
            breakdown.total.backward()
            self.optimizer.step()
            self.step += 1
            return breakdown

        # (1) teacher features + domain loss
        z = {d: self.teachers[str(d)](images[d]) for d in self.train_domains}
        dscores = torch.cat([self.domain_head(z[d]) for d in self.train_domains])
        dlabels = torch.cat(
            [
                torch.full((images[d].shape[0],), self.domain_to_class[d])
                for d in self.train_domains
            ]
        )
        l_domain = domain_loss(dscores, dlabels)

        # (2) latent augmentation + fusion -> fake targets; frozen real target
        fake_feats = {d: z[d] for d in self.train_domains if d != 0}
        fused = augment_domain_batch(fake_feats, cfg.augment, self.fusion, self.aug_rng)
        with torch.no_grad():
            f0 = self.real_encoder(images[0])
        targets = {0: f0, **fused}
        if cfg.detach_targets:
            targets = {d: t.detach() for d, t in targets.items()}

        # (3) student forward: distillation + binary losses
        student_feats = {d: self.student(images[d]) for d in self.train_domains}
        l_distill = distill_loss(student_feats, targets)
        bscores = torch.cat(
            [self.binary_head(student_feats[d]).squeeze(1) for d in self.train_domains]
        )
        blabels = torch.cat(
            [
                torch.full((images[d].shape[0],), 0 if d == 0 else 1)
                for d in self.train_domains
            ]
        )
        l_binary = binary_loss(bscores, blabels)

        breakdown = total_loss(l_binary, l_domain, l_distill, cfg.weights)

        # (4) one joint update (or alternating phase update)
        self.optimizer.zero_grad()
        breakdown.total.backward()
        if cfg.alternate_phases:
            student_side = {id(p) for m in (self.student, self.binary_head)
                            for p in m.parameters()}
            keep_student = self.step % 2 == 1
            for p in self.trainable_parameters():
                if (id(p) in student_side) != keep_student and p.grad is not None:
                    p.grad.zero_()
        for p in self.real_encoder.parameters():
            assert p.grad is None or float(p.grad.abs().max()) == 0.0
        self.optimizer.step()
        self.step += 1
        return breakdown

    # -- full runs -------------------------------------------------------------

    def steps_per_epoch(self):
        n = len(self.dataset.identities("train"))
        return max(1, n // self.config.batch_identities)

    def fit(self, out_dir: str, log_name: str = "metrics.jsonl"):
        """Run the configured number of epochs; returns final checkpoint path."""
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, log_name)
        ckpt_path = os.path.join(out_dir, "checkpoint.pt")
        with open(log_path, "w", encoding="utf-8") as log:
            self._fit_loop(log, out_dir, ckpt_path)
        return ckpt_path

    def _fit_loop(self, log, out_dir, ckpt_path):
        cfg = self.config
        val = self.dataset.samples("val")
        spe = self.steps_per_epoch()
        while self.epoch < cfg.epochs:
            for _ in range(spe):
                breakdown = self.train_step()
                rec = {"step": self.step, **breakdown.floats()}
                log.write(json.dumps(rec) + "\n")
            self.epoch += 1
            if val:
                probs = self.predict(images_to_array(val))
                labels = [0 if s.domain == 0 else 1 for s in val]
                from .metrics import auc  # local import avoids cycle at module load

                rec = {"epoch": self.epoch, "val_auc": auc(probs, labels)}
                log.write(json.dumps(rec) + "\n")
            if cfg.checkpoint_every and self.epoch % cfg.checkpoint_every == 0:
                self.save_checkpoint(
                    os.path.join(out_dir, f"checkpoint_ep{self.epoch:03d}.pt")
                )
        self.save_checkpoint(ckpt_path)

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Fake probability per image via the student path only."""
        x = images_to_tensor(images)
        with torch.no_grad():
            scores = self.binary_head(self.student(x)).squeeze(1)
        return torch.sigmoid(scores).numpy()

    # -- checkpointing ---------------------------------------------------------

    def save_checkpoint(self, path):
        blob = {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "spec": self.spec.to_dict(),
            "train_domains": self.train_domains,
            "step": self.step,
            "epoch": self.epoch,
            "student": self.student.state_dict(),
            "binary_head": self.binary_head.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "batch_rng": self.batch_rng.bit_generator.state,
            "aug_rng": self.aug_rng.get_state(),
        }
        if not self.config.student_only:
            blob["teachers"] = self.teachers.state_dict()
            blob["fusion"] = self.fusion.state_dict()
            blob["domain_head"] = self.domain_head.state_dict()
        torch.save(blob, path)

    @classmethod
    def resume(cls, path, real_encoder=None):
        blob = _load_checkpoint(path)
        config = TrainConfig.from_dict(blob["config"])
        if config.hash() != blob["config_hash"]:
            raise RuntimeError("checkpoint config hash mismatch")
        trainer = cls(config, real_encoder=real_encoder)
        trainer.student.load_state_dict(blob["student"])
        trainer.binary_head.load_state_dict(blob["binary_head"])
        if not config.student_only:
            trainer.teachers.load_state_dict(blob["teachers"])
            trainer.fusion.load_state_dict(blob["fusion"])
            trainer.domain_head.load_state_dict(blob["domain_head"])
        trainer.optimizer.load_state_dict(blob["optimizer"])
        trainer.batch_rng.bit_generator.state = blob["batch_rng"]
        trainer.aug_rng.set_state(blob["aug_rng"])
        trainer.step = blob["step"]
        trainer.epoch = blob["epoch"]
        return trainer


def _load_checkpoint(path):
    try:
        blob = torch.load(path, weights_only=False)
    except Exception as exc:
        raise RuntimeError(f"corrupt or unreadable checkpoint: {path}") from exc
    if blob.get("version") != CHECKPOINT_VERSION:
        raise RuntimeError(f"unsupported checkpoint version in {path}")
    return blob


def infer(checkpoint_path: str, images: np.ndarray) -> np.ndarray:
    """Fake probability per image; loads only the student and binary head."""
    blob = _load_checkpoint(checkpoint_path)
    spec = EncoderSpec.from_dict(blob["spec"])
    student = ConvEncoder(spec)
    student.load_state_dict(blob["student"])
    head = PooledHead(spec.latent_channels, 1)
    head.load_state_dict(blob["binary_head"])
    student.eval()
    x = images_to_tensor(images)
    with torch.no_grad():
        scores = head(student(x)).squeeze(1)
    return torch.sigmoid(scores).numpy()
