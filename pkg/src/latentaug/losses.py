"""Training objectives: domain, distillation, and binary losses plus their
weighted sum.

The domain loss is plain multi-class cross-entropy over the per-domain
confidence scores. Probabilities inside the binary loss are clamped to
[1e-7, 1 - 1e-7] so the loss stays finite for any finite scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

_P_EPS = 1e-7


class TrainingDivergence(RuntimeError):
    """Raised when a loss component stops being finite."""


@dataclass
class LossWeights:
    binary: float = 0.5
    domain: float = 1.0
    distill: float = 1.0

    def __post_init__(self):
        if min(self.binary, self.domain, self.distill) < 0:
            raise ValueError("loss weights must be nonnegative")

    def to_dict(self):
        return {"binary": self.binary, "domain": self.domain, "distill": self.distill}

    @classmethod
    def from_dict(cls, d):
        return cls(binary=d["binary"], domain=d["domain"], distill=d["distill"])


@dataclass
class LossBreakdown:
    binary: torch.Tensor
    domain: torch.Tensor
    distill: torch.Tensor
    total: torch.Tensor

    def floats(self):
        return {
            "binary": float(self.binary.detach()),
            "domain": float(self.domain.detach()),
            "distill": float(self.distill.detach()),
            "total": float(self.total.detach()),
        }


def domain_loss(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of domain scores (N x K) against labels in 0..K-1."""
    if scores.dim() != 2:
        raise ValueError(f"scores must be N x K, got shape {tuple(scores.shape)}")
    if labels.min() < 0 or labels.max() >= scores.shape[1]:
        raise ValueError("domain label out of range")
    logp = F.log_softmax(scores, dim=1)
    return -logp.gather(1, labels.view(-1, 1)).mean()


def binary_loss(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy on pre-sigmoid scores; labels 0=real, 1=fake."""
    p = torch.sigmoid(scores).clamp(_P_EPS, 1.0 - _P_EPS)
    y = labels.to(p.dtype)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


def distill_loss(student: dict, targets: dict) -> torch.Tensor:
    """Sum over domains of mean squared feature error (mean within a domain)."""
    if set(student) != set(targets):
        raise ValueError(f"domain mismatch: {sorted(student)} vs {sorted(targets)}")
    total = None
    for d in sorted(student):
        if student[d].shape != targets[d].shape:
            raise ValueError(f"shape mismatch in domain {d}")
        mse = (student[d] - targets[d]).pow(2).mean()
        total = mse if total is None else total + mse
    if total is None:
        raise ValueError("no domains to distill")
    return total


def total_loss(binary, domain, distill, weights: LossWeights) -> LossBreakdown:
    """Weighted sum of the three components."""
    for name, term in (("binary", binary), ("domain", domain), ("distill", distill)):
        if not torch.isfinite(torch.as_tensor(term)).all():
            raise TrainingDivergence(f"{name} loss is not finite: {term}")
    total = weights.binary * binary + weights.domain * domain + weights.distill * distill
    return LossBreakdown(binary=binary, domain=domain, distill=distill, total=total)
