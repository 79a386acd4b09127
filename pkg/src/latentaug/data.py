"""Synthetic multi-domain forgery benchmark: generation, persistence, loading.

Domain 0 is pristine ("real"); domains 1..m are forgery methods. Every
random draw is derived from a root seed through named SeedSequence streams,
so output is byte-identical regardless of generation order.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

IMAGE_SIZE = 32
GROUP_SIZE = 4
STRIPE_CYCLES = 6  # periodic-noise cycles across the forgery region

# stream tags keep per-purpose RNGs independent of call order
_STREAM_IDENTITY = 1
_STREAM_JITTER = 2
_STREAM_FORGERY = 3
_STREAM_SPLIT = 4
_STREAM_PERTURB = 5

MANIFEST_SCHEMA = "latentaug-manifest\tv1"
MANIFEST_FIELDS = ("path", "identity_id", "domain", "group_id", "split")

PERTURB_KINDS = ("blur", "gaussian_noise", "block_quantize", "rescale", "contrast")

PERTURB_SCHEDULES = {
    "blur": [0.4, 0.8, 1.2, 1.8, 2.5],          # gaussian sigma
    "gaussian_noise": [0.02, 0.05, 0.09, 0.14, 0.2],  # noise sigma
    "block_quantize": [2, 4, 8, 16, 32],         # block edge in px
    "rescale": [24, 16, 12, 8, 6],               # intermediate edge in px
    "contrast": [0.75, 0.55, 0.4, 0.28, 0.18],   # contrast retention factor
}


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3 float32 in [0, 1]
    identity_id: int
    domain: int
    group_id: int
    split: str = "train"


@dataclass
class DatasetManifest:
    m: int
    image_size: int
    seed: int
    hold_out: int | None
    counts: dict = field(default_factory=dict)  # "split/domain" -> count
    perturbations: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "m": self.m,
            "image_size": self.image_size,
            "seed": self.seed,
            "hold_out": self.hold_out,
            "counts": self.counts,
            "perturbations": self.perturbations,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            m=d["m"],
            image_size=d["image_size"],
            seed=d["seed"],
            hold_out=d["hold_out"],
            counts=dict(d["counts"]),
            perturbations=dict(d["perturbations"]),
        )


def _rng(*entropy):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def _gaussian_blur(img, sigma):
    """Separable gaussian blur with reflect padding, channels-last."""
    radius = max(1, int(3 * sigma + 0.5))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    out = img.astype(np.float64)
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="reflect")
        out = np.apply_along_axis(
            lambda v: np.convolve(v, kernel, mode="valid"), axis, padded
        )
    return out.astype(np.float32)


def identity_pattern(identity_id: int, seed: int, size: int = IMAGE_SIZE) -> np.ndarray:
    """Procedural base pattern, fixed per (seed, identity_id)."""
    rng = _rng(seed, _STREAM_IDENTITY, identity_id)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.zeros((size, size, 3), dtype=np.float64)
    # identity-specific oriented sinusoids per channel
    for ch in range(3):
        for _ in range(2):
            freq = rng.uniform(1.5, 5.0)
            angle = rng.uniform(0, np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            proj = xx * np.cos(angle) + yy * np.sin(angle)
            img[:, :, ch] += rng.uniform(0.1, 0.25) * np.sin(
                2 * np.pi * freq * proj + phase
            )
    # identity-specific radial blob (face stand-in)
    cx, cy = rng.uniform(0.35, 0.65, size=2)
    rad = rng.uniform(0.18, 0.3)
    blob = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * rad**2)))
    tint = rng.uniform(0.2, 0.5, size=3)
    img += blob[:, :, None] * tint[None, None, :]
    img += rng.uniform(0.25, 0.45)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _jitter(pattern, rng):
    dy, dx = rng.integers(-2, 3, size=2)
    img = np.roll(pattern, (dy, dx), axis=(0, 1))
    img = img * rng.uniform(0.9, 1.1) + rng.uniform(-0.04, 0.04)
    img += rng.normal(0.0, 0.015, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_real(identity_count: int, images_per_identity: int, seed: int,
                  size: int = IMAGE_SIZE) -> list[Sample]:
    """Domain-0 samples: per-identity base pattern plus small per-image jitter."""
    if identity_count < 2:
        raise ValueError(f"identity_count must be >= 2, got {identity_count}")
    if images_per_identity < 1:
        raise ValueError(f"images_per_identity must be >= 1, got {images_per_identity}")
    samples = []
    for ident in range(identity_count):
        pattern = identity_pattern(ident, seed, size)
        for j in range(images_per_identity):
            rng = _rng(seed, _STREAM_JITTER, ident, j)
            samples.append(
                Sample(
                    image=_jitter(pattern, rng),
                    identity_id=ident,
                    domain=0,
                    group_id=j // GROUP_SIZE,
                )
            )
    return samples


def _forgery_region(size):
    lo, hi = size // 4, size - size // 4
    return lo, hi


def _artifact_blend_seam(region, rng, seed):
    donor_id = int(rng.integers(10_000, 20_000))  # outside real identity range
    donor = identity_pattern(donor_id, seed, region.shape[0])
    cell = max(2, region.shape[0] // 4)
    yy, xx = np.mgrid[0 : region.shape[0], 0 : region.shape[1]]
    checker = ((yy // cell + xx // cell) % 2).astype(np.float32)
    weight = 0.18 + 0.22 * checker  # checkerboard-weighted paste
    return (1 - weight[:, :, None]) * region + weight[:, :, None] * donor


def _artifact_blur(region, rng, seed):
    return _gaussian_blur(region, sigma=1.1)


def _artifact_stripes(region, rng, seed):
    h, w = region.shape[:2]
    phase = rng.uniform(0, 2 * np.pi)
    xx = np.arange(w, dtype=np.float64)
    stripe = 0.1 * np.sin(2 * np.pi * STRIPE_CYCLES * xx / w + phase)
    return region + stripe[None, :, None].astype(np.float32)


def _artifact_channel_perm(region, rng, seed):
    perms = [(1, 2, 0), (2, 0, 1), (0, 2, 1), (1, 0, 2), (2, 1, 0)]
    perm = perms[int(rng.integers(len(perms)))]
    permuted = region[:, :, list(perm)]
    return 0.5 * region + 0.5 * permuted


_ARTIFACTS = {
    1: _artifact_blend_seam,
    2: _artifact_blur,
    3: _artifact_stripes,
    4: _artifact_channel_perm,
}


def apply_forgery(sample: Sample, method: int, seed: int) -> Sample:
    """Apply forgery `method` to a real sample's central region.

    Methods 1..4 are distinct artifact families; method 5 composes two of
    them at half strength (the held-out composite).
    """
    if sample.domain != 0:
        raise ValueError(f"sample is already fake (domain={sample.domain})")
    if method < 1 or method > 5:
        raise ValueError(f"forgery method must be in 1..5, got {method}")
    rng = _rng(seed, _STREAM_FORGERY, sample.identity_id, sample.group_id, method)
    img = sample.image.copy()
    lo, hi = _forgery_region(img.shape[0])
    region = img[lo:hi, lo:hi, :]
    if method in _ARTIFACTS:
        forged = _ARTIFACTS[method](region, rng, seed)
    else:
        # composite: two distinct base artifacts at half strength
        picks = rng.choice(4, size=2, replace=False) + 1
        forged = region
        for p in picks:
            full = _ARTIFACTS[int(p)](forged, rng, seed)
            forged = forged + 0.5 * (full - forged)
    img[lo:hi, lo:hi, :] = np.clip(forged, 0.0, 1.0)
    return Sample(
        image=img,
        identity_id=sample.identity_id,
        domain=method,
        group_id=sample.group_id,
        split=sample.split,
    )


def perturb(sample: Sample, kind: str, severity: int, seed: int = 0) -> Sample:
    """Degrade a sample at one of 5 monotone severity levels."""
    if kind not in PERTURB_SCHEDULES:
        raise ValueError(f"unknown perturbation kind: {kind!r}")
    if not 1 <= severity <= 5:
        raise ValueError(f"severity must be in 1..5, got {severity}")
    param = PERTURB_SCHEDULES[kind][severity - 1]
    img = sample.image.astype(np.float64)
    size = img.shape[0]
    if kind == "blur":
        img = _gaussian_blur(img, param)
    elif kind == "gaussian_noise":
        rng = _rng(seed, _STREAM_PERTURB, sample.identity_id, sample.group_id,
                   sample.domain, severity)
        img = img + rng.normal(0.0, param, size=img.shape)
    elif kind == "block_quantize":
        b = int(param)
        pooled = img.reshape(size // b, b, size // b, b, 3).mean(axis=(1, 3))
        img = np.repeat(np.repeat(pooled, b, axis=0), b, axis=1)
    elif kind == "rescale":
        t = int(param)
        im = Image.fromarray((np.clip(img, 0, 1) * 255).astype(np.uint8))
        im = im.resize((t, t), Image.BILINEAR).resize((size, size), Image.BILINEAR)
        img = np.asarray(im, dtype=np.float64) / 255.0
    elif kind == "contrast":
        mean = img.mean()
        img = mean + param * (img - mean)
    return Sample(
        image=np.clip(img, 0.0, 1.0).astype(np.float32),
        identity_id=sample.identity_id,
        domain=sample.domain,
        group_id=sample.group_id,
        split=sample.split,
    )


def _split_identities(n_identities, seed):
    rng = _rng(seed, _STREAM_SPLIT)
    ids = rng.permutation(n_identities)
    n_train = max(2, int(round(n_identities * 0.6)))
    n_val = max(1, int(round(n_identities * 0.2)))
    return {
        "train": sorted(int(i) for i in ids[:n_train]),
        "val": sorted(int(i) for i in ids[n_train : n_train + n_val]),
        "test": sorted(int(i) for i in ids[n_train + n_val :]),
    }


def build_dataset(out_dir: str, identities: int, m: int, seed: int,
                  hold_out: int | None = None, image_size: int = IMAGE_SIZE):
    """Generate and persist the benchmark; returns the DatasetManifest.

    Train/val identities get exactly one image per available domain
    (identity alignment); test identities get one GROUP_SIZE-image group per
    test domain. When hold_out=j, train/val exclude domain j and test
    contains only domains {0, j}.
    """
    if m < 2:
        raise ValueError(f"need at least 2 forgery domains for cross-domain mixup, got m={m}")
    if hold_out is not None and not 1 <= hold_out <= m:
        raise ValueError(f"hold_out must be in 1..{m}, got {hold_out}")
    splits = _split_identities(identities, seed)
    seen = {}
    for split, ids in splits.items():
        for i in ids:
            if i in seen:
                raise RuntimeError(
                    f"identity {i} assigned to both {seen[i]} and {split}"
                )
            seen[i] = split

    trainval_domains = [d for d in range(m + 1) if d != hold_out]
    test_domains = [0, hold_out] if hold_out is not None else list(range(m + 1))

    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    records = []
    counts = {}
    group_counter = 0
    for split in ("train", "val", "test"):
        domains = test_domains if split == "test" else trainval_domains
        per_domain_images = GROUP_SIZE if split == "test" else 1
        for ident in splits[split]:
            pattern = identity_pattern(ident, seed, image_size)
            reals = []
            for j in range(per_domain_images):
                rng = _rng(seed, _STREAM_JITTER, ident, j)
                reals.append(Sample(_jitter(pattern, rng), ident, 0, 0, split))
            for domain in domains:
                gid = group_counter
                group_counter += 1
                for j, real in enumerate(reals):
                    if domain == 0:
                        img = real.image
                    else:
                        forged = apply_forgery(
                            Sample(real.image, ident, 0, j, split), domain, seed
                        )
                        img = forged.image
                    rel = f"images/{split}_id{ident:05d}_d{domain}_g{gid:06d}_{j}.png"
                    _save_png(os.path.join(out_dir, rel), img)
                    records.append((rel, ident, domain, gid, split))
                    key = f"{split}/{domain}"
                    counts[key] = counts.get(key, 0) + 1

    manifest = DatasetManifest(
        m=m,
        image_size=image_size,
        seed=seed,
        hold_out=hold_out,
        counts=counts,
        perturbations={k: list(v) for k, v in PERTURB_SCHEDULES.items()},
    )
    with open(os.path.join(out_dir, "manifest.tsv"), "w", encoding="utf-8") as fh:
        fh.write(MANIFEST_SCHEMA + "\n")
        fh.write("\t".join(MANIFEST_FIELDS) + "\n")
        for rec in records:
            fh.write("\t".join(str(x) for x in rec) + "\n")
    with open(os.path.join(out_dir, "dataset.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
    return manifest


def manifest_checksum(data_dir: str) -> str:
    h = hashlib.sha256()
    with open(os.path.join(data_dir, "manifest.tsv"), "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _save_png(path, img):
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def _load_png(path):
    return np.asarray(Image.open(path), dtype=np.float32) / 255.0


class BenchmarkDataset:
    """Read-only loader over a persisted benchmark directory."""

    def __init__(self, data_dir: str):
        self.data_dir = data_dir
        with open(os.path.join(data_dir, "dataset.json"), "r", encoding="utf-8") as fh:
            self.manifest = DatasetManifest.from_dict(json.load(fh))
        self.records = []
        with open(os.path.join(data_dir, "manifest.tsv"), "r", encoding="utf-8") as fh:
            schema = fh.readline().rstrip("\n")
            if schema != MANIFEST_SCHEMA:
                raise ValueError(f"unsupported manifest schema: {schema!r}")
            fh.readline()  # field header
            for line in fh:
                path, ident, domain, gid, split = line.rstrip("\n").split("\t")
                self.records.append((path, int(ident), int(domain), int(gid), split))
        on_disk = {f"{r[4]}/{r[2]}": 0 for r in self.records}
        for r in self.records:
            on_disk[f"{r[4]}/{r[2]}"] += 1
        if on_disk != self.manifest.counts:
            raise RuntimeError("manifest counts disagree with records on disk")
        self._check_split_hygiene()

    def _check_split_hygiene(self):
        by_split = {}
        for _, ident, _, _, split in self.records:
            by_split.setdefault(split, set()).add(ident)
        splits = list(by_split)
        for i, a in enumerate(splits):
            for b in splits[i + 1 :]:
                overlap = by_split[a] & by_split[b]
                if overlap:
                    raise RuntimeError(
                        f"identity leakage between {a} and {b}: {sorted(overlap)}"
                    )

    def domains(self, split):
        return sorted({r[2] for r in self.records if r[4] == split})

    @property
    def train_domains(self):
        return self.domains("train")

    def identities(self, split):
        return sorted({r[1] for r in self.records if r[4] == split})

    def load_sample(self, record) -> Sample:
        path, ident, domain, gid, split = record
        return Sample(_load_png(os.path.join(self.data_dir, path)),
                      ident, domain, gid, split)

    def samples(self, split, domains=None) -> list[Sample]:
        out = []
        for rec in self.records:
            if rec[4] != split:
                continue
            if domains is not None and rec[2] not in domains:
                continue
            out.append(self.load_sample(rec))
        return out

    def sample_identity_batch(self, batch_identities: int, rng: np.random.Generator):
        """Draw B distinct train identities; return {domain: [Sample]*B} aligned."""
        if batch_identities < 2:
            raise ValueError("batch must contain at least 2 identities")
        train_ids = self.identities("train")
        if batch_identities > len(train_ids):
            raise ValueError(
                f"batch of {batch_identities} exceeds {len(train_ids)} train identities"
            )
        chosen = rng.choice(len(train_ids), size=batch_identities, replace=False)
        chosen = [train_ids[int(i)] for i in chosen]
        index = {
            (r[1], r[2]): r
            for r in self.records
            if r[4] == "train"
        }
        batch = {}
        for domain in self.train_domains:
            batch[domain] = [self.load_sample(index[(i, domain)]) for i in chosen]
        return batch


def images_to_array(samples) -> np.ndarray:
    return np.stack([s.image for s in samples], axis=0)
