"""Quantitative evaluation: swap-MSE heatmaps, region statistics, Frechet distance.

Swap experiments resample a single part's latent and measure per-pixel
squared change; region statistics aggregate those maps over the
inside / interlocking / outside pixel classes of the part. The Frechet
distance compares Gaussian summaries of pluggable feature embeddings.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg

from . import containers
from .errors import NumericalError, ValidationError
from .influence import RegionMasks, classify_regions, symbolic_influence
from .latent import resample_part, sample_bundle
from .model import Discriminator, Generator, generate_batch, image_batch_tensor

logger = logging.getLogger(__name__)

HEATMAP_KIND = "mse_heatmap"
FEATURES_KIND = "feature_summary"
REGION_NAMES = ("inside", "interlocking", "outside")
EXTRACTORS = ("pixel_downsample", "discriminator_penultimate", "external")


@dataclass(frozen=True)
class MseHeatmap:
    """Per-pixel mean squared swap difference, averaged over color channels."""

    part: int
    resolution: int
    values: np.ndarray  # (resolution, resolution) float32
    sample_count: int

    def __post_init__(self) -> None:
        if self.values.shape != (self.resolution, self.resolution):
            raise ValidationError(
                f"heatmap shape {self.values.shape} does not match resolution {self.resolution}"
            )
        if self.sample_count < 1:
            raise ValidationError(f"sample_count must be >= 1, got {self.sample_count}")
        if np.any(self.values < 0):
            raise ValidationError("heatmap values must be non-negative")
        self.values.setflags(write=False)


@dataclass(frozen=True)
class RegionSummary:
    mean: float
    median: float
    q1: float
    q3: float
    count: int


@dataclass(frozen=True)
class RegionStats:
    """Summary of per-image region-mean MSE; None where the mask is empty."""

    part: int
    inside: RegionSummary | None
    interlocking: RegionSummary | None
    outside: RegionSummary | None

    def region(self, name: str) -> RegionSummary | None:
        if name not in REGION_NAMES:
            raise ValidationError(f"unknown region {name!r}")
        return getattr(self, name)


def swap_mse(
    generator: Generator,
    part: int,
    n: int = 500,
    seed: int = 0,
    control: bool = False,
    batch: int = 32,
) -> tuple[MseHeatmap, np.ndarray]:
    """Mean per-pixel squared change from resampling one part's latent.

    Returns the heatmap plus the per-image maps (n, H, W) that region
    statistics are computed from. ``control`` keeps the probe bundle
    equal to the base bundle, which must produce an all-zero heatmap.

    Base and probe images come from separate forward passes over
    identical non-swapped latents, so pixels with no dependency path to
    the swapped part repeat the exact same arithmetic and differ by
    exactly zero.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if not (1 <= part <= generator.prior.num_parts):
        raise ValidationError(f"part id {part} out of range 1..{generator.prior.num_parts}")
    layout = generator.spec.layout
    res = generator.spec.out_resolution
    rng = np.random.default_rng(seed)
    per_image = np.empty((n, res, res), dtype=np.float32)
    done = 0
    while done < n:
        k = min(batch, n - done)
        bundles = [sample_bundle(generator.prior, layout, rng=rng) for _ in range(k)]
        if control:
            probes = bundles
        else:
            probes = [resample_part(b, generator.prior, part, rng) for b in bundles]
        base = generate_batch(generator, bundles)
        swapped = generate_batch(generator, probes)
        per_image[done : done + k] = ((base - swapped) ** 2).mean(axis=3)
        done += k
    heatmap = MseHeatmap(
        part=part, resolution=res, values=per_image.mean(axis=0), sample_count=n
    )
    return heatmap, per_image


def _summary(values: np.ndarray) -> RegionSummary:
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    return RegionSummary(
        mean=float(values.mean()),
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        count=int(values.size),
    )


def region_stats(per_image: np.ndarray, masks: RegionMasks) -> RegionStats:
    """Per-image mean MSE within each region, summarized across images."""
    if per_image.ndim != 3:
        raise ValidationError(f"expected (n, H, W) per-image maps, got shape {per_image.shape}")
    shape = per_image.shape[1:]
    for name in REGION_NAMES:
        if getattr(masks, name).shape != shape:
            raise ValidationError(f"{name} mask shape does not match maps {shape}")
    cover = (
        masks.inside.astype(np.int64)
        + masks.interlocking.astype(np.int64)
        + masks.outside.astype(np.int64)
    )
    if not np.all(cover == 1):
        raise ValidationError("region masks must partition the image")
    summaries: dict[str, RegionSummary | None] = {}
    for name in REGION_NAMES:
        mask = getattr(masks, name)
        if not mask.any():
            summaries[name] = None  # absent statistic, not zero
        else:
            summaries[name] = _summary(per_image[:, mask].mean(axis=1))
    return RegionStats(part=masks.part, **summaries)


def eval_regions(
    generator: Generator, part: int, n: int = 500, seed: int = 0
) -> tuple[MseHeatmap, RegionStats]:
    """Swap experiment plus region summary against the symbolic region masks."""
    heatmap, per_image = swap_mse(generator, part, n=n, seed=seed)
    masks = classify_regions(symbolic_influence(generator.spec), part)
    return heatmap, region_stats(per_image, masks)


def format_region_stats(stats: RegionStats) -> str:
    """Plain text table, one row per region."""
    header = f"part {stats.part}  (per-image region-mean MSE)"
    lines = [header, f"{'region':<13}{'mean':>12}{'median':>12}{'q1':>12}{'q3':>12}{'n':>8}"]
    for name in REGION_NAMES:
        s = stats.region(name)
        if s is None:
            lines.append(f"{name:<13}{'-':>12}{'-':>12}{'-':>12}{'-':>12}{0:>8}")
        else:
            lines.append(
                f"{name:<13}{s.mean:>12.6f}{s.median:>12.6f}{s.q1:>12.6f}{s.q3:>12.6f}{s.count:>8}"
            )
    return "\n".join(lines)


def heatmap_image(heatmap: MseHeatmap) -> np.ndarray:
    """Grayscale uint8 rendering, scaled so the hottest pixel is white."""
    peak = float(heatmap.values.max())
    if peak == 0.0:
        return np.zeros_like(heatmap.values, dtype=np.uint8)
    return np.round(heatmap.values * (255.0 / peak)).astype(np.uint8)


def save_heatmap(heatmap: MseHeatmap, path: str | Path) -> Path:
    meta = {
        "part": heatmap.part,
        "resolution": heatmap.resolution,
        "sample_count": heatmap.sample_count,
    }
    return containers.write_container(path, HEATMAP_KIND, meta, {"values": heatmap.values})


def load_heatmap(path: str | Path) -> MseHeatmap:
    meta, arrays = containers.read_container(path, expected_kind=HEATMAP_KIND)
    return MseHeatmap(
        part=int(meta["part"]),
        resolution=int(meta["resolution"]),
        values=arrays["values"],
        sample_count=int(meta["sample_count"]),
    )


@dataclass(frozen=True)
class FeatureSummary:
    """Gaussian summary (mean, covariance) of an image embedding."""

    mean: np.ndarray  # (d,) float64
    cov: np.ndarray  # (d, d) float64
    count: int
    extractor: str

    def __post_init__(self) -> None:
        if self.mean.ndim != 1:
            raise ValidationError(f"mean must be a vector, got shape {self.mean.shape}")
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValidationError(f"cov shape {self.cov.shape} does not match dimension {d}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-10):
            raise ValidationError("covariance must be symmetric")
        if self.count < 2:
            raise ValidationError(f"count must be >= 2, got {self.count}")
        self.mean.setflags(write=False)
        self.cov.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def summarize_features(features: np.ndarray, extractor: str, count: int | None = None) -> FeatureSummary:
    """Mean/covariance of raw (n, d) feature rows."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ValidationError(f"need at least 2 feature rows of equal dimension, got shape {feats.shape}")
    n, d = feats.shape
    if n <= d:
        logger.warning(
            "feature count %d is not above dimension %d; covariance estimate is degenerate", n, d
        )
    cov = np.atleast_2d(np.cov(feats, rowvar=False))
    return FeatureSummary(
        mean=feats.mean(axis=0), cov=cov, count=count if count is not None else n, extractor=extractor
    )


def _pixel_downsample(images: np.ndarray, target: int = 8) -> np.ndarray:
    n, h, w, ch = images.shape
    if h % target or w % target:
        raise ValidationError(f"resolution {h}x{w} is not divisible by downsample target {target}")
    blocks = images.reshape(n, target, h // target, target, w // target, ch)
    return blocks.mean(axis=(2, 4)).reshape(n, target * target * ch)


def extract_features(
    images: np.ndarray,
    extractor: str = "pixel_downsample",
    *,
    discriminator: Discriminator | None = None,
    external_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    batch: int = 64,
) -> FeatureSummary:
    """Embed (n, H, W, 3) images in [-1, 1] and summarize as a Gaussian.

    pixel_downsample: 8x8 block means per channel (no learned weights).
    discriminator_penultimate: globally pooled final conv activations.
    external: any callable mapping images to (n, d) rows.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or images.shape[3] != 3:
        raise ValidationError(f"expected (n, H, W, 3) images, got shape {images.shape}")
    if images.shape[0] < 2:
        raise ValidationError(f"need at least 2 images, got {images.shape[0]}")
    if extractor == "pixel_downsample":
        feats = _pixel_downsample(images)
    elif extractor == "discriminator_penultimate":
        if discriminator is None:
            raise ValidationError("discriminator_penultimate extractor needs a discriminator")
        chunks = []
        for start in range(0, images.shape[0], batch):
            x = image_batch_tensor(images[start : start + batch])
            chunks.append(discriminator.features(x).detach().numpy())
        feats = np.concatenate(chunks, axis=0)
    elif extractor == "external":
        if external_fn is None:
            raise ValidationError("external extractor needs a callable")
        feats = np.asarray(external_fn(images))
        if feats.ndim != 2 or feats.shape[0] != images.shape[0]:
            raise ValidationError(
                f"external extractor must return (n, d) rows, got shape {feats.shape}"
            )
    else:
        raise ValidationError(f"extractor must be one of {EXTRACTORS}, got {extractor!r}")
    return summarize_features(feats, extractor)


def _clipped_psd_eigs(matrix: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a nominally PSD symmetric matrix.

    Small negative eigenvalues (rounding artifacts of rank-deficient
    covariances) are clipped to zero within ``tol`` relative to the
    largest eigenvalue; anything more negative raises.
    """
    w, v = scipy.linalg.eigh(matrix)
    bound = tol * max(1.0, float(w[-1]))
    if w[0] < -bound:
        raise NumericalError(
            f"matrix has negative eigenvalue {w[0]:.3e} beyond clipping tolerance"
        )
    return np.clip(w, 0.0, None), v


def frechet_distance(a: FeatureSummary, b: FeatureSummary, tol: float = 1e-8) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The product square-root trace is computed as
    tr((S_a^(1/2) S_b S_a^(1/2))^(1/2)) so every eigendecomposition acts
    on a symmetric matrix and stays in real arithmetic; small negative
    eigenvalues are clipped within ``tol``, anything larger raises.
    """
    if a.extractor != b.extractor:
        raise ValidationError(
            f"feature summaries use different extractors: {a.extractor!r} vs {b.extractor!r}"
        )
    if a.dim != b.dim:
        raise ValidationError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    w_a, v_a = _clipped_psd_eigs(a.cov, tol)
    root_a = (v_a * np.sqrt(w_a)) @ v_a.T
    inner = root_a @ b.cov @ root_a
    w_inner, _ = _clipped_psd_eigs((inner + inner.T) / 2.0, tol)
    trace_root = float(np.sqrt(w_inner).sum())
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_root)
    if value < 0:
        # clipping eigenvalues within tol perturbs the root trace by about
        # sqrt(tol) per near-zero mode, so rank-deficient covariances need a
        # correspondingly looser clip on the assembled value
        scale = max(1.0, float(np.trace(a.cov) + np.trace(b.cov)))
        if value < -math.sqrt(tol) * scale:
            raise NumericalError(f"Frechet distance {value:.3e} is negative beyond tolerance")
        value = 0.0
    return value


def save_features(summary: FeatureSummary, path: str | Path) -> Path:
    meta = {"count": summary.count, "extractor": summary.extractor}
    arrays = {"mean": summary.mean, "cov": summary.cov}
    return containers.write_container(path, FEATURES_KIND, meta, arrays)


def load_features(path: str | Path) -> FeatureSummary:
    meta, arrays = containers.read_container(path, expected_kind=FEATURES_KIND)
    return FeatureSummary(
        mean=arrays["mean"],
        cov=arrays["cov"],
        count=int(meta["count"]),
        extractor=str(meta["extractor"]),
    )


def features_equal(a: FeatureSummary, b: FeatureSummary) -> bool:
    return (
        a.extractor == b.extractor
        and a.count == b.count
        and np.array_equal(a.mean, b.mean)
        and np.array_equal(a.cov, b.cov)
    )
