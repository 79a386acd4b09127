"""Encoders and classification heads.

All encoders (per-domain teachers, the frozen real encoder, the student)
share one trunk architecture and emit a common latent shape C x h x w, so
fusion outputs and distillation targets are shape-compatible by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from . import data as datamod


@dataclass
class EncoderSpec:
    image_size: int = 32
    widths: tuple = (16, 32, 32)
    init_seed: int = 0

    @property
    def latent_channels(self):
        return self.widths[-1]

    @property
    def latent_hw(self):
        return self.image_size // (2 ** len(self.widths))

    def to_dict(self):
        return {"image_size": self.image_size, "widths": list(self.widths),
                "init_seed": self.init_seed}

    @classmethod
    def from_dict(cls, d):
        return cls(image_size=d["image_size"], widths=tuple(d["widths"]),
                   init_seed=d["init_seed"])


class ConvEncoder(nn.Module):
    """Stride-2 conv trunk: 3 -> widths, spatial /2 per block."""

    def __init__(self, spec: EncoderSpec, seed_offset: int = 0):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(spec.init_seed * 1000003 + seed_offset)
            blocks = []
            in_ch = 3
            for w in spec.widths:
                # smooth activation keeps finite-difference gradient checks clean
                blocks += [nn.Conv2d(in_ch, w, 3, stride=2, padding=1), nn.GELU()]
                in_ch = w
            # parameter-free normalization pins the latent scale so the
            # feature-alignment MSE cannot drown the classification losses
            blocks.append(nn.GroupNorm(1, in_ch, affine=False))
            self.trunk = nn.Sequential(*blocks)
        self.spec = spec

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected B x 3 x H x W images, got {tuple(x.shape)}")
        z = self.trunk(x)
        c, s = self.spec.latent_channels, self.spec.latent_hw
        assert z.shape[1:] == (c, s, s), f"latent shape drifted: {tuple(z.shape)}"
        return z


class PooledHead(nn.Module):
    """Global-average-pool then affine map on the latent."""

    def __init__(self, channels: int, out_dim: int, seed: int = 0):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.fc = nn.Linear(channels, out_dim)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        if feats.dim() != 4:
            raise ValueError(f"expected B x C x h x w features, got {tuple(feats.shape)}")
        return self.fc(feats.mean(dim=(2, 3)))


def images_to_tensor(images: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """B x H x W x 3 float array in [0,1] -> B x 3 x H x W tensor."""
    if images.ndim == 3:
        images = images[None]
    t = torch.from_numpy(np.ascontiguousarray(images)).to(dtype)
    return t.permute(0, 3, 1, 2).contiguous()


def pretrain_real_encoder(samples, epochs: int = 40, seed: int = 0,
                          lr: float = 2e-3, batch_size: int = 32,
                          spec: EncoderSpec | None = None):
    """Train an encoder to classify identity from real images, then freeze it.

    Returns (encoder, held_out_accuracy). The last image of each identity is
    held out for the accuracy probe.
    """
    reals = [s for s in samples if s.domain == 0]
    identities = sorted({s.identity_id for s in reals})
    if len(identities) < 2:
        raise ValueError("need at least 2 identities to pretrain the real encoder")
    id_index = {ident: i for i, ident in enumerate(identities)}

    by_ident = {}
    for s in reals:
        by_ident.setdefault(s.identity_id, []).append(s)
    train_s, held_s = [], []
    for ident in identities:
        group = by_ident[ident]
        if len(group) > 1:
            held_s.append(group[-1])
            train_s.extend(group[:-1])
        else:
            train_s.extend(group)

    spec = spec or EncoderSpec(image_size=reals[0].image.shape[0], init_seed=seed)
    enc = ConvEncoder(spec, seed_offset=900)
    head = PooledHead(spec.latent_channels, len(identities), seed=seed * 7 + 901)
    opt = torch.optim.Adam(list(enc.parameters()) + list(head.parameters()), lr=lr)

    x = images_to_tensor(datamod.images_to_array(train_s))
    y = torch.tensor([id_index[s.identity_id] for s in train_s])
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 77])))
    n = len(train_s)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = torch.from_numpy(order[start : start + batch_size].copy())
            logits = head(enc(x[idx]))
            loss = nn.functional.cross_entropy(logits, y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()

    if held_s:
        xh = images_to_tensor(datamod.images_to_array(held_s))
        yh = torch.tensor([id_index[s.identity_id] for s in held_s])
        with torch.no_grad():
            acc = float((head(enc(xh)).argmax(dim=1) == yh).float().mean())
    else:
        acc = float("nan")

    enc.eval()
    for p in enc.parameters():
        p.requires_grad_(False)
    return enc, acc
