"""Latent-space augmentation on feature maps.

Within-domain ops: centrifugal (direct / indirect), spatial rotation,
additive gaussian-mixture noise. Cross-domain op: feature mixup between two
fake domains. A pair of learnable 1x1 fusion convolutions combines the
augmented and original features into the distillation target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn

WD_OPS = ("centrifugal_direct", "centrifugal_indirect", "affine", "additive")


@dataclass
class AugmentConfig:
    wd_enabled: bool = True
    cd_enabled: bool = True
    wd_ops: tuple = WD_OPS
    theta_max: float = math.pi / 6
    gmm_weights: tuple = (1 / 3, 1 / 3, 1 / 3)
    gmm_sigmas: tuple = (0.05, 0.1, 0.2)
    gmm_scale_by_batch_std: bool = True
    detach_centroid: bool = False
    # channel-concat the untouched features into the final fusion; when
    # False, the WD-augmented features are concatenated instead
    fuse_original: bool = True
    trace: list | None = None

    def validate(self):
        if abs(sum(self.gmm_weights) - 1.0) > 1e-9 or any(w < 0 for w in self.gmm_weights):
            raise ValueError(f"gmm weights must be a distribution, got {self.gmm_weights}")
        if any(s <= 0 for s in self.gmm_sigmas):
            raise ValueError(f"gmm sigmas must be positive, got {self.gmm_sigmas}")
        if len(self.gmm_weights) != len(self.gmm_sigmas):
            raise ValueError("gmm weights and sigmas must have equal length")
        unknown = set(self.wd_ops) - set(WD_OPS)
        if unknown:
            raise ValueError(f"unknown wd ops: {sorted(unknown)}")

    def to_dict(self):
        return {
            "wd_enabled": self.wd_enabled,
            "cd_enabled": self.cd_enabled,
            "wd_ops": list(self.wd_ops),
            "theta_max": self.theta_max,
            "gmm_weights": list(self.gmm_weights),
            "gmm_sigmas": list(self.gmm_sigmas),
            "gmm_scale_by_batch_std": self.gmm_scale_by_batch_std,
            "detach_centroid": self.detach_centroid,
            "fuse_original": self.fuse_original,
        }

    @classmethod
    def from_dict(cls, d):
        cfg = cls(
            wd_enabled=d["wd_enabled"],
            cd_enabled=d["cd_enabled"],
            wd_ops=tuple(d["wd_ops"]),
            theta_max=d["theta_max"],
            gmm_weights=tuple(d["gmm_weights"]),
            gmm_sigmas=tuple(d["gmm_sigmas"]),
            gmm_scale_by_batch_std=d["gmm_scale_by_batch_std"],
            detach_centroid=d["detach_centroid"],
            fuse_original=d["fuse_original"],
        )
        cfg.validate()
        return cfg


def _as_sample_factor(beta, z):
    """Broadcast a scalar or per-sample (B,) factor over a B x C x h x w map."""
    if torch.is_tensor(beta) and beta.dim() == 1:
        return beta.view(-1, *([1] * (z.dim() - 1)))
    return beta


def centroid(z: torch.Tensor) -> torch.Tensor:
    """Batch mean feature map, shape C x h x w."""
    if z.shape[0] == 0:
        raise ValueError("cannot take centroid of an empty batch")
    return z.mean(dim=0)


def centrifugal_direct(z, mu, beta):
    """Push each sample away from the centroid: z + beta * (z - mu)."""
    if mu.shape != z.shape[1:]:
        raise ValueError(f"centroid shape {tuple(mu.shape)} != feature shape {tuple(z.shape[1:])}")
    return z + _as_sample_factor(beta, z) * (z - mu)


def hardest_example(z, mu):
    """Batch element farthest (euclidean, flattened) from mu; ties -> lowest index."""
    if z.shape[0] == 0:
        raise ValueError("empty batch")
    d = (z - mu).flatten(1).pow(2).sum(dim=1)
    return z[int(torch.argmax(d))]


def centrifugal_indirect(z, a, beta):
    """Pull each sample toward the hard example: z + beta * (a - z)."""
    if a.shape != z.shape[1:]:
        raise ValueError(f"anchor shape {tuple(a.shape)} != feature shape {tuple(z.shape[1:])}")
    return z + _as_sample_factor(beta, z) * (a - z)


def affine_rotate(z: torch.Tensor, theta: float) -> torch.Tensor:
    """Rotate the spatial grid by theta radians about its midpoint.

    Nearest-integer source lookup (no interpolation); sources outside the
    grid contribute zero. Batch and channel axes untouched.
    """
    h, w = z.shape[-2], z.shape[-1]
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rows = torch.arange(h, dtype=torch.float64) - cr
    cols = torch.arange(w, dtype=torch.float64) - cc
    u = rows.view(-1, 1).expand(h, w)
    v = cols.view(1, -1).expand(h, w)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    src_r = torch.round(u * cos_t + v * sin_t + cr).long()
    src_c = torch.round(-u * sin_t + v * cos_t + cc).long()
    valid = (src_r >= 0) & (src_r < h) & (src_c >= 0) & (src_c < w)
    src_r = src_r.clamp(0, h - 1)
    src_c = src_c.clamp(0, w - 1)
    flat = z.flatten(start_dim=-2)
    idx = (src_r * w + src_c).flatten()
    out = flat[..., idx].reshape(z.shape)
    return out * valid.to(z.dtype)


def additive_gmm(z, beta, weights, sigmas, rng: torch.Generator):
    """Add zero-mean gaussian-mixture noise scaled by beta.

    One mixture component per batch element; noise is elementwise
    N(0, sigma_k^2).
    """
    w = torch.as_tensor(weights, dtype=torch.float64)
    if abs(float(w.sum()) - 1.0) > 1e-9 or bool((w < 0).any()):
        raise ValueError("gmm weights must be a distribution")
    sig = torch.as_tensor(sigmas, dtype=z.dtype)
    if bool((sig <= 0).any()):
        raise ValueError("gmm sigmas must be positive")
    b = z.shape[0]
    comp = torch.multinomial(w, b, replacement=True, generator=rng)
    per_sample_sigma = sig[comp].view(-1, *([1] * (z.dim() - 1)))
    eps = torch.randn(z.shape, generator=rng, dtype=z.dtype) * per_sample_sigma
    return z + _as_sample_factor(beta, z) * eps


def mixup_cross(z_i, z_k, alpha):
    """Feature mixup between two distinct fake domains: alpha*z_i + (1-alpha)*z_k."""
    if z_i.shape != z_k.shape:
        raise ValueError(f"shape mismatch: {tuple(z_i.shape)} vs {tuple(z_k.shape)}")
    a = _as_sample_factor(alpha, z_i)
    return a * z_i + (1 - a) * z_k


class FusionLayers(nn.Module):
    """Two learnable 1x1 convolutions, 2C -> C channels each, shared across domains."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv_aug = nn.Conv2d(2 * channels, channels, kernel_size=1)
        self.conv_final = nn.Conv2d(2 * channels, channels, kernel_size=1)


def fuse(z, z_wd, z_cd, layers: FusionLayers, fuse_original: bool = True):
    """Combine WD- and CD-augmented features with the originals.

    aug = conv_aug(cat(z_wd, z_cd)); out = conv_final(cat(aug, z)) by
    default, or conv_final(cat(aug, z_wd)) when fuse_original is False.
    """
    for t in (z_wd, z_cd):
        if t.shape != z.shape:
            raise ValueError("all fusion inputs must share one shape")
    aug = layers.conv_aug(torch.cat([z_wd, z_cd], dim=1))
    second = z if fuse_original else z_wd
    return layers.conv_final(torch.cat([aug, second], dim=1))


def _uniform(rng, low, high, shape=()):
    u = torch.rand(shape, generator=rng, dtype=torch.float64)
    return low + (high - low) * u


def augment_domain_batch(feats: dict, config: AugmentConfig, layers: FusionLayers,
                         rng: torch.Generator) -> dict:
    """Produce the fused distillation target per fake domain.

    `feats` maps fake-domain id -> B x C x h x w features; domain 0 must not
    appear here. Per domain: one WD op is drawn uniformly for the batch with
    per-sample beta, and one mixup partner k != i with a shared alpha.
    """
    config.validate()
    if 0 in feats:
        raise ValueError("real-domain features must not be augmented")
    domains = sorted(feats)
    if config.cd_enabled and len(domains) < 2:
        raise ValueError("cross-domain mixup needs at least 2 fake domains")
    out = {}
    for i in domains:
        z = feats[i]
        b = z.shape[0]
        if config.wd_enabled:
            op = config.wd_ops[int(torch.randint(len(config.wd_ops), (1,), generator=rng))]
            if op == "affine":
                theta = float(_uniform(rng, -config.theta_max, config.theta_max))
                z_wd = affine_rotate(z, theta)
                drawn = {"op": op, "theta": theta}
            else:
                beta = _uniform(rng, 0.0, 1.0, (b,)).to(z.dtype)
                if op == "centrifugal_direct":
                    mu = centroid(z.detach() if config.detach_centroid else z)
                    z_wd = centrifugal_direct(z, mu, beta)
                elif op == "centrifugal_indirect":
                    mu = centroid(z.detach() if config.detach_centroid else z)
                    z_wd = centrifugal_indirect(z, hardest_example(z, mu), beta)
                else:
                    sigmas = config.gmm_sigmas
                    if config.gmm_scale_by_batch_std:
                        scale = float(z.detach().std())
                        sigmas = tuple(s * scale for s in sigmas)
                    z_wd = additive_gmm(z, beta, config.gmm_weights, sigmas, rng)
                drawn = {"op": op, "beta": beta.tolist()}
        else:
            z_wd = z
            drawn = {"op": None}
        if config.cd_enabled:
            partners = [k for k in domains if k != i]
            k = partners[int(torch.randint(len(partners), (1,), generator=rng))]
            alpha = float(_uniform(rng, 0.0, 1.0))
            z_cd = mixup_cross(z, feats[k], alpha)
            drawn.update({"partner": k, "alpha": alpha})
        else:
            z_cd = z
        if config.trace is not None:
            config.trace.append({"domain": i, **drawn})
        out[i] = fuse(z, z_wd, z_cd, layers, config.fuse_original)
    return out
