"""Per-part latent priors: sampling, storage, and mixing.

Each part i of a layout gets its own latent vector z_i drawn from its
prior. A bundle holds the K vectors for one generated image; swapping a
subset of vectors between two bundles ("mixing") is how part-swap edits
are expressed.

Vectors are float32 numpy arrays marked read-only: bundles are values,
never mutated in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import containers
from .errors import ValidationError
from .layout import PartLayout, check_is_valid

STANDARD_NORMAL = "standard_normal"


@dataclass(frozen=True)
class PriorSpec:
    """Per-part latent dimensions and the (shared) prior family."""

    dims: tuple[int, ...]
    distribution: str = STANDARD_NORMAL

    def __post_init__(self) -> None:
        if not self.dims:
            raise ValidationError("prior spec needs at least one part dimension")
        if any(d < 1 for d in self.dims):
            raise ValidationError(f"part dimensions must be >= 1, got {self.dims}")
        if self.distribution != STANDARD_NORMAL:
            raise ValidationError(f"unsupported prior distribution {self.distribution!r}")

    @property
    def num_parts(self) -> int:
        return len(self.dims)


@dataclass(frozen=True)
class PartLatentBundle:
    """The K per-part latent vectors for one image, plus provenance."""

    vectors: tuple[np.ndarray, ...]
    layout_id: str
    seed: int | None = None

    def __post_init__(self) -> None:
        for i, v in enumerate(self.vectors):
            if v.ndim != 1:
                raise ValidationError(f"part {i + 1} vector must be 1-D, got shape {v.shape}")
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"part {i + 1} vector contains non-finite values")
            v.setflags(write=False)

    @property
    def num_parts(self) -> int:
        return len(self.vectors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(v.shape[0] for v in self.vectors)


def default_prior_spec(layout: PartLayout, scale: int = 8) -> PriorSpec:
    """Latent capacity proportional to spatial area: d_i = scale * |cells_i|."""
    if scale < 1:
        raise ValidationError(f"scale must be >= 1, got {scale}")
    check_is_valid(layout)
    dims = tuple(scale * n for n in layout.cell_counts())
    return PriorSpec(dims=dims)


def check_consistent(spec: PriorSpec, layout: PartLayout) -> None:
    if spec.num_parts != layout.num_parts:
        raise ValidationError(
            f"prior spec has {spec.num_parts} parts, layout has {layout.num_parts}"
        )


def sample_bundle(
    spec: PriorSpec,
    layout: PartLayout,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
) -> PartLatentBundle:
    """Draw the K vectors i.i.d. from the prior; deterministic given seed."""
    check_consistent(spec, layout)
    if rng is None:
        rng = np.random.default_rng(seed)
    vectors = tuple(rng.standard_normal(d, dtype=np.float32) for d in spec.dims)
    return PartLatentBundle(vectors=vectors, layout_id=layout.fingerprint(), seed=seed)


def sample_batch(
    spec: PriorSpec, batch: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Batched draw: one (batch, d_i) float32 matrix per part."""
    return [rng.standard_normal((batch, d), dtype=np.float32) for d in spec.dims]


def mix(
    target: PartLatentBundle,
    reference: PartLatentBundle,
    parts: Iterable[int],
) -> PartLatentBundle:
    """Take vector i from ``reference`` for i in ``parts``, else from ``target``.

    Inputs are never modified; unswapped vectors are shared with the target.
    """
    parts = frozenset(parts)
    if target.layout_id != reference.layout_id:
        raise ValidationError(
            f"bundles sampled for different layouts ({target.layout_id} vs {reference.layout_id})"
        )
    if target.dims != reference.dims:
        raise ValidationError(f"bundle dims differ: {target.dims} vs {reference.dims}")
    bad = [p for p in parts if not (1 <= p <= target.num_parts)]
    if bad:
        raise ValidationError(f"part ids {bad} out of range 1..{target.num_parts}")
    vectors = tuple(
        reference.vectors[i] if (i + 1) in parts else target.vectors[i]
        for i in range(target.num_parts)
    )
    return PartLatentBundle(vectors=vectors, layout_id=target.layout_id, seed=None)


def resample_part(
    bundle: PartLatentBundle,
    spec: PriorSpec,
    part: int,
    rng: np.random.Generator,
) -> PartLatentBundle:
    """Fresh prior draw for one part, everything else shared with ``bundle``."""
    if not (1 <= part <= bundle.num_parts):
        raise ValidationError(f"part id {part} out of range 1..{bundle.num_parts}")
    if spec.dims != bundle.dims:
        raise ValidationError(f"prior dims {spec.dims} do not match bundle dims {bundle.dims}")
    vectors = list(bundle.vectors)
    vectors[part - 1] = rng.standard_normal(spec.dims[part - 1], dtype=np.float32)
    return PartLatentBundle(vectors=tuple(vectors), layout_id=bundle.layout_id, seed=None)


def save_bundle(bundle: PartLatentBundle, path: str | Path) -> Path:
    """Write a bundle; round-trips bit-exactly."""
    arrays = {f"z{i + 1:03d}": v for i, v in enumerate(bundle.vectors)}
    meta = {
        "layout_id": bundle.layout_id,
        "dims": list(bundle.dims),
        "seed": bundle.seed,
        "distribution": STANDARD_NORMAL,
    }
    return containers.write_container(path, "latent_bundle", meta, arrays)


def load_bundle(path: str | Path) -> PartLatentBundle:
    meta, arrays = containers.read_container(path, expected_kind="latent_bundle")
    vectors = tuple(arrays[f"z{i + 1:03d}"] for i in range(len(meta["dims"])))
    bundle = PartLatentBundle(
        vectors=vectors,
        layout_id=str(meta["layout_id"]),
        seed=meta["seed"],
    )
    if list(bundle.dims) != list(meta["dims"]):
        raise ValidationError(f"{path}: stored dims {meta['dims']} do not match arrays")
    return bundle


def bundles_equal(a: PartLatentBundle, b: PartLatentBundle) -> bool:
    """Structural bit-exact equality of vectors and layout id."""
    return (
        a.layout_id == b.layout_id
        and a.dims == b.dims
        and all(np.array_equal(x, y) for x, y in zip(a.vectors, b.vectors))
    )


def stack_bundles(bundles: Sequence[PartLatentBundle]) -> list[np.ndarray]:
    """Stack same-shape bundles into per-part (batch, d_i) matrices."""
    if not bundles:
        raise ValidationError("cannot stack zero bundles")
    dims = bundles[0].dims
    for b in bundles:
        if b.dims != dims:
            raise ValidationError("bundles with differing dims cannot be stacked")
    return [
        np.stack([b.vectors[i] for b in bundles]).astype(np.float32)
        for i in range(len(dims))
    ]
