"""Exact and empirical part-influence analysis.

Which latent parts can affect which output pixels is a purely
architectural question: SAME convolutions union the influence sets of a
k x k window, nearest-neighbor upsampling copies them, and 1x1
convolutions leave them unchanged. Propagating per-cell part sets
through the generator's layer plan therefore yields, for every output
pixel, the exact set of parts with a dependency path to it — an
over-approximation of what any particular weight setting uses, and the
exact support for generic weights.

Influence here is support of the functional dependency, not magnitude:
the region taxonomy (inside / interlocking / outside of a part) is a
property of the architecture, not of trained values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import save_png
from .errors import ValidationError
from .latent import PartLatentBundle, resample_part
from .layout import PartLayout, check_is_valid
from .model import Generator, ModelSpec, generate

MAX_PARTS = 64  # bitset width


@dataclass(frozen=True)
class InfluenceMap:
    """Per-pixel sets of influencing parts, packed as uint64 bitmasks.

    Bit i-1 of ``sets[r, c]`` is set iff part i can influence pixel (r, c).
    Every pixel descends from at least one first-block cell, so no bitset
    is empty.
    """

    resolution: int
    num_parts: int
    sets: np.ndarray  # (resolution, resolution) uint64

    def __post_init__(self) -> None:
        if self.sets.shape != (self.resolution, self.resolution):
            raise ValidationError(
                f"influence sets shape {self.sets.shape} does not match resolution {self.resolution}"
            )
        self.sets.setflags(write=False)

    def part_mask(self, part: int) -> np.ndarray:
        """Boolean mask of pixels influenced by ``part``."""
        self._check_part(part)
        bit = np.uint64(1 << (part - 1))
        return (self.sets & bit) != 0

    def count_map(self) -> np.ndarray:
        """Number of influencing parts per pixel."""
        return np.bitwise_count(self.sets).astype(np.int64)

    def parts_at(self, row: int, col: int) -> frozenset[int]:
        value = int(self.sets[row, col])
        return frozenset(i + 1 for i in range(self.num_parts) if value >> i & 1)

    def _check_part(self, part: int) -> None:
        if not (1 <= part <= self.num_parts):
            raise ValidationError(f"part id {part} out of range 1..{self.num_parts}")


@dataclass(frozen=True)
class RegionMasks:
    """Inside / interlocking / outside pixel partition for one part."""

    part: int
    inside: np.ndarray  # influenced by this part only
    interlocking: np.ndarray  # this part and at least one other
    outside: np.ndarray  # not influenced by this part

    def __post_init__(self) -> None:
        for mask in (self.inside, self.interlocking, self.outside):
            mask.setflags(write=False)


def layout_sets(layout: PartLayout) -> np.ndarray:
    """Per-cell singleton bitsets of the first block."""
    check_is_valid(layout)
    if layout.num_parts > MAX_PARTS:
        raise ValidationError(f"at most {MAX_PARTS} parts supported, got {layout.num_parts}")
    grid = np.asarray(layout.grid(), dtype=np.int64)
    return (np.uint64(1) << (grid - 1).astype(np.uint64)).astype(np.uint64)


def _conv_union(sets: np.ndarray, kernel: int) -> np.ndarray:
    """SAME conv: union over the k x k input window, truncated at edges."""
    radius = kernel // 2
    if radius == 0:
        return sets.copy()
    h, w = sets.shape
    padded = np.zeros((h + 2 * radius, w + 2 * radius), dtype=np.uint64)
    padded[radius : radius + h, radius : radius + w] = sets
    out = np.zeros_like(sets)
    for dr in range(kernel):
        for dc in range(kernel):
            out |= padded[dr : dr + h, dc : dc + w]
    return out


def _upsample_copy(sets: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor upsample: each output pixel copies its source's set."""
    return np.repeat(np.repeat(sets, factor, axis=0), factor, axis=1)


def propagate(sets: np.ndarray, plan: Sequence[tuple[str, int]]) -> np.ndarray:
    """Push per-pixel part sets through a spatial layer plan."""
    current = np.asarray(sets, dtype=np.uint64)
    for op, arg in plan:
        if op == "conv":
            current = _conv_union(current, arg)
        elif op == "upsample":
            current = _upsample_copy(current, arg)
        else:
            raise ValidationError(f"unsupported layer type {op!r} in influence propagation")
    return current


def symbolic_influence(spec: ModelSpec, layout: PartLayout | None = None) -> InfluenceMap:
    """Exact per-pixel influence sets at the output resolution."""
    if layout is None:
        layout = spec.layout
    elif layout.fingerprint() != spec.layout.fingerprint():
        raise ValidationError("layout does not match the layout embedded in the model spec")
    sets = propagate(layout_sets(layout), spec.layer_plan())
    return InfluenceMap(resolution=spec.out_resolution, num_parts=layout.num_parts, sets=sets)


def first_block_influence(layout: PartLayout, kernel: int = 3) -> InfluenceMap:
    """Influence sets after a single SAME conv over the first block.

    This is the grid-scale picture: cells interior to a part keep singleton
    sets, while cells near part boundaries pick up every part that the
    k x k window straddles.
    """
    sets = propagate(layout_sets(layout), [("conv", kernel)])
    return InfluenceMap(resolution=layout.grid_width, num_parts=layout.num_parts, sets=sets)


def classify_regions(imap: InfluenceMap, part: int) -> RegionMasks:
    """Partition pixels into inside / interlocking / outside for one part."""
    imap._check_part(part)
    bit = np.uint64(1 << (part - 1))
    has_part = (imap.sets & bit) != 0
    alone = imap.sets == bit
    return RegionMasks(
        part=part,
        inside=alone,
        interlocking=has_part & ~alone,
        outside=~has_part,
    )


def empirical_influence(
    generator: Generator,
    bundle: PartLatentBundle,
    part: int,
    probes: int = 20,
    threshold: float = 1e-6,
    seed: int = 0,
) -> np.ndarray:
    """Pixels that actually moved when resampling one part's latent.

    For each probe, only z_part is redrawn; a pixel is marked influenced
    when its maximum absolute change over probes (max over color
    channels) exceeds ``threshold``. Multiple probes guard against dead
    zones of the activations.
    """
    if probes < 1:
        raise ValidationError(f"probes must be >= 1, got {probes}")
    if not (1 <= part <= generator.prior.num_parts):
        raise ValidationError(f"part id {part} out of range 1..{generator.prior.num_parts}")
    rng = np.random.default_rng(seed)
    base = generate(generator, bundle)
    peak = np.zeros(base.shape[:2], dtype=np.float32)
    for _ in range(probes):
        probe_bundle = resample_part(bundle, generator.prior, part, rng)
        delta = np.abs(generate(generator, probe_bundle) - base).max(axis=2)
        peak = np.maximum(peak, delta)
    return peak > threshold


def count_image(imap: InfluenceMap) -> np.ndarray:
    """Grayscale (uint8) rendering of the per-pixel part count."""
    counts = imap.count_map().astype(np.float64)
    return np.round(counts * (255.0 / imap.num_parts)).astype(np.uint8)


def mask_image(mask: np.ndarray) -> np.ndarray:
    return np.where(mask, np.uint8(255), np.uint8(0))


def dump_bitsets(imap: InfluenceMap, path: str | Path) -> Path:
    """Structured text dump: per-pixel part lists, row-major."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sets = [
        [sorted(imap.parts_at(r, c)) for c in range(imap.resolution)]
        for r in range(imap.resolution)
    ]
    payload = {
        "resolution": imap.resolution,
        "num_parts": imap.num_parts,
        "sets": sets,
    }
    path.write_text(json.dumps(payload, sort_keys=True) + "\n")
    return path


def load_bitsets(path: str | Path) -> InfluenceMap:
    data = json.loads(Path(path).read_text())
    res = int(data["resolution"])
    sets = np.zeros((res, res), dtype=np.uint64)
    for r in range(res):
        for c in range(res):
            value = 0
            for part in data["sets"][r][c]:
                value |= 1 << (part - 1)
            sets[r, c] = value
    return InfluenceMap(resolution=res, num_parts=int(data["num_parts"]), sets=sets)


def export_influence(
    imap: InfluenceMap,
    out_dir: str | Path,
    parts: Sequence[int] | None = None,
) -> list[Path]:
    """Write the count image, per-part region masks, and the bitset dump."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [save_png(count_image(imap), out_dir / "part_counts.png")]
    for part in parts if parts is not None else range(1, imap.num_parts + 1):
        regions = classify_regions(imap, part)
        for name in ("inside", "interlocking", "outside"):
            mask = getattr(regions, name)
            written.append(save_png(mask_image(mask), out_dir / f"part{part}_{name}.png"))
    written.append(dump_bitsets(imap, out_dir / "bitsets.json"))
    return written
