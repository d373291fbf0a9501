"""Compositional generator and mirror discriminator.

The generator's first block is assembled like a Lego wall: each part's
latent vector passes through its own fully-connected head, is reshaped
to (cells_i, channels), and scattered into the part's grid cells. A
shared stack of SAME-padded convolutions (with nearest-neighbor x2
upsampling between blocks) then turns the block into an RGB image, so
the spatial arrangement of the parts carries through to the output.

All convolutions are stride-1 SAME; resolution changes happen only in
explicit upsample (generator) / average-pool (discriminator) steps, and
the two networks visit the same resolutions in mirrored order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import containers
from .errors import NumericalError, ValidationError
from .latent import PartLatentBundle, PriorSpec, check_consistent, stack_bundles
from .layout import PartLayout, check_is_valid, format_layout, parse_layout, part_cells

CHECKPOINT_KIND = "checkpoint"
PIXEL_NORM_EPS = 1e-8


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description for one generator/discriminator pair.

    ``head_channels`` is the channel count c of the first block; channel
    width halves per upsample block, floored at ``min_channels``.
    """

    layout: PartLayout
    head_channels: int = 128
    out_resolution: int = 32
    kernel_size: int = 3
    leaky_slope: float = 0.2
    rgb_channels: int = 3
    pixel_norm: bool = True
    min_channels: int = 8

    def __post_init__(self) -> None:
        check_is_valid(self.layout)
        if self.layout.grid_height != self.layout.grid_width:
            raise ValidationError("model requires a square grid")
        if self.head_channels < 1:
            raise ValidationError("head_channels must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValidationError(f"kernel_size must be odd, got {self.kernel_size}")
        grid = self.layout.grid_width
        ratio = self.out_resolution / grid
        if ratio < 1 or 2 ** round(math.log2(ratio)) != ratio:
            raise ValidationError(
                f"out_resolution {self.out_resolution} must be grid size {grid} times a power of 2"
            )

    @property
    def grid_size(self) -> int:
        return self.layout.grid_width

    @property
    def up_blocks(self) -> int:
        return round(math.log2(self.out_resolution / self.grid_size))

    def channels_at(self, level: int) -> int:
        """Channel width at resolution grid * 2**level."""
        return max(self.head_channels >> level, self.min_channels)

    def layer_plan(self) -> tuple[tuple[str, int], ...]:
        """Spatial op sequence of the generator, first block to RGB.

        Entries are ("conv", kernel) or ("upsample", factor); the trailing
        ("conv", 1) is the RGB projection. Influence propagation interprets
        exactly this plan, so it stays in lockstep with the network.
        """
        plan: list[tuple[str, int]] = [("conv", self.kernel_size)]
        for _ in range(self.up_blocks):
            plan.append(("upsample", 2))
            plan.append(("conv", self.kernel_size))
            plan.append(("conv", self.kernel_size))
        plan.append(("conv", 1))
        return tuple(plan)

    def to_dict(self) -> dict[str, Any]:
        return {
            "layout": format_layout(self.layout),
            "head_channels": self.head_channels,
            "out_resolution": self.out_resolution,
            "kernel_size": self.kernel_size,
            "leaky_slope": self.leaky_slope,
            "rgb_channels": self.rgb_channels,
            "pixel_norm": self.pixel_norm,
            "min_channels": self.min_channels,
        }

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "ModelSpec":
        known = {
            "head_channels",
            "out_resolution",
            "kernel_size",
            "leaky_slope",
            "rgb_channels",
            "pixel_norm",
            "min_channels",
        }
        extra = set(data) - known - {"layout"}
        if extra:
            raise ValidationError(f"unknown model spec keys: {sorted(extra)}")
        if "layout" not in data:
            raise ValidationError("model spec is missing 'layout'")
        layout = parse_layout(data["layout"])
        kwargs = {k: data[k] for k in known if k in data}
        return ModelSpec(layout=layout, **kwargs)


def pixel_norm(x: torch.Tensor) -> torch.Tensor:
    """Per-pixel feature normalization across channels."""
    return x * torch.rsqrt(x.pow(2).mean(dim=1, keepdim=True) + PIXEL_NORM_EPS)


class Generator(nn.Module):
    """Per-part heads -> scattered first block -> conv/upsample stack -> RGB."""

    def __init__(self, spec: ModelSpec, prior: PriorSpec):
        super().__init__()
        check_consistent(prior, spec.layout)
        self.spec = spec
        self.prior = prior
        self.layout_fingerprint = spec.layout.fingerprint()
        grid = spec.grid_size
        c0 = spec.head_channels

        cells_per_part = [part_cells(spec.layout, p) for p in range(1, spec.layout.num_parts + 1)]
        self.heads = nn.ModuleList(
            nn.Linear(d, len(cells) * c0)
            for d, cells in zip(prior.dims, cells_per_part)
        )
        for i, cells in enumerate(cells_per_part):
            flat = torch.tensor([r * grid + c for r, c in cells], dtype=torch.long)
            self.register_buffer(f"_part_idx_{i}", flat, persistent=False)

        k = spec.kernel_size
        pad = k // 2
        self.grid_conv = nn.Conv2d(c0, c0, k, padding=pad)
        blocks = []
        for level in range(1, spec.up_blocks + 1):
            c_in = spec.channels_at(level - 1)
            c_out = spec.channels_at(level)
            blocks.append(
                nn.ModuleDict(
                    {
                        "conv1": nn.Conv2d(c_in, c_out, k, padding=pad),
                        "conv2": nn.Conv2d(c_out, c_out, k, padding=pad),
                    }
                )
            )
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = nn.Conv2d(spec.channels_at(spec.up_blocks), spec.rgb_channels, 1)

    def _part_index(self, i: int) -> torch.Tensor:
        return getattr(self, f"_part_idx_{i}")

    def _check_inputs(self, zs: Sequence[torch.Tensor]) -> None:
        if len(zs) != len(self.heads):
            raise ValidationError(f"expected {len(self.heads)} part vectors, got {len(zs)}")
        for i, (z, d) in enumerate(zip(zs, self.prior.dims)):
            if z.ndim != 2 or z.shape[1] != d:
                raise ValidationError(
                    f"part {i + 1}: head expects dimension {d}, got tensor of shape {tuple(z.shape)}"
                )

    def compose_head(self, zs: Sequence[torch.Tensor]) -> torch.Tensor:
        """Assemble the first block (batch, c, grid, grid).

        Each head output is viewed as (cells_i, c) in the part's row-major
        cell order and scattered into the block; the parts tile the grid,
        so every cell is written exactly once.
        """
        self._check_inputs(zs)
        grid = self.spec.grid_size
        c = self.spec.head_channels
        batch = zs[0].shape[0]
        flat = zs[0].new_zeros((batch, grid * grid, c))
        for i, (head, z) in enumerate(zip(self.heads, zs)):
            idx = self._part_index(i)
            flat[:, idx] = head(z).view(batch, idx.numel(), c)
        return flat.permute(0, 2, 1).reshape(batch, c, grid, grid)

    def _act(self, x: torch.Tensor) -> torch.Tensor:
        x = F.leaky_relu(x, negative_slope=self.spec.leaky_slope)
        if self.spec.pixel_norm:
            x = pixel_norm(x)
        return x

    def forward(self, zs: Sequence[torch.Tensor]) -> torch.Tensor:
        x = self.compose_head(zs)
        x = self._act(self.grid_conv(x))
        for block in self.blocks:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = self._act(block["conv1"](x))
            x = self._act(block["conv2"](x))
        return torch.tanh(self.to_rgb(x))

    def conv_resolutions(self) -> list[int]:
        """Input resolution of every conv, first block to RGB."""
        grid = self.spec.grid_size
        res = [grid]
        for level in range(1, self.spec.up_blocks + 1):
            res.extend([grid * 2**level] * 2)
        res.append(self.spec.out_resolution)
        return res


class Discriminator(nn.Module):
    """Mirror of the generator: RGB -> downsampling convs -> scalar score.

    The score is an unbounded real (WGAN-style critic value); with the
    sigmoid-based loss it is used as a pre-sigmoid logit.
    """

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        k = spec.kernel_size
        pad = k // 2
        top = spec.up_blocks
        self.from_rgb = nn.Conv2d(spec.rgb_channels, spec.channels_at(top), 1)
        blocks = []
        for level in range(top, 0, -1):
            c_in = spec.channels_at(level)
            c_out = spec.channels_at(level - 1)
            blocks.append(
                nn.ModuleDict(
                    {
                        "conv1": nn.Conv2d(c_in, c_in, k, padding=pad),
                        "conv2": nn.Conv2d(c_in, c_out, k, padding=pad),
                    }
                )
            )
        self.blocks = nn.ModuleList(blocks)
        c0 = spec.channels_at(0)
        self.grid_conv = nn.Conv2d(c0, c0, k, padding=pad)
        self.fc = nn.Linear(c0 * spec.grid_size**2, 1)

    def _act(self, x: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(x, negative_slope=self.spec.leaky_slope)

    def _check_input(self, x: torch.Tensor) -> None:
        expected = (self.spec.rgb_channels, self.spec.out_resolution, self.spec.out_resolution)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ValidationError(
                f"discriminator expects (batch, {expected[0]}, {expected[1]}, {expected[2]}), "
                f"got {tuple(x.shape)}"
            )

    def _trunk(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        x = self._act(self.from_rgb(x))
        for block in self.blocks:
            x = self._act(block["conv1"](x))
            x = self._act(block["conv2"](x))
            x = F.avg_pool2d(x, 2)
        return self._act(self.grid_conv(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self._trunk(x)
        return self.fc(x.flatten(1)).squeeze(1)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Penultimate embedding: globally averaged final conv activations."""
        return self._trunk(x).mean(dim=(2, 3))

    def conv_resolutions(self) -> list[int]:
        """Input resolution of every conv, RGB to first block (mirrors the generator)."""
        res = [self.spec.out_resolution]
        for level in range(self.spec.up_blocks, 0, -1):
            res.extend([self.spec.grid_size * 2**level] * 2)
        res.append(self.spec.grid_size)
        return res


def initialize_parameters(module: nn.Module, seed: int, slope: float = 0.2) -> None:
    """He-style scaled-normal init for all weights, zero biases.

    Values come from a single seeded numpy stream in parameter definition
    order, so identical architectures and seeds yield bit-identical models.
    """
    rng = np.random.default_rng(seed)
    gain = math.sqrt(2.0 / (1.0 + slope**2))
    with torch.no_grad():
        for name, param in module.named_parameters():
            if param.ndim >= 2:
                fan_in = int(np.prod(param.shape[1:]))
                std = gain / math.sqrt(fan_in)
                values = rng.standard_normal(tuple(param.shape), dtype=np.float32) * std
                param.copy_(torch.from_numpy(values))
            else:
                param.zero_()


def build_generator(spec: ModelSpec, prior: PriorSpec, seed: int) -> Generator:
    gen = Generator(spec, prior)
    initialize_parameters(gen, seed, slope=spec.leaky_slope)
    return gen


def build_discriminator(spec: ModelSpec, seed: int) -> Discriminator:
    disc = Discriminator(spec)
    initialize_parameters(disc, seed, slope=spec.leaky_slope)
    return disc


def _bundle_to_batch(generator: Generator, bundle: PartLatentBundle) -> list[torch.Tensor]:
    if bundle.layout_id != generator.layout_fingerprint:
        raise ValidationError(
            f"bundle was sampled for layout {bundle.layout_id}, "
            f"generator uses {generator.layout_fingerprint}"
        )
    if bundle.dims != generator.prior.dims:
        raise ValidationError(
            f"bundle dims {bundle.dims} do not match head dims {generator.prior.dims}"
        )
    return [torch.from_numpy(np.array(v, copy=True)).unsqueeze(0) for v in bundle.vectors]


def compose_head(generator: Generator, bundle: PartLatentBundle) -> torch.Tensor:
    """First block (c, grid, grid) for a single bundle."""
    with torch.no_grad():
        return generator.compose_head(_bundle_to_batch(generator, bundle))[0]


def generate(generator: Generator, bundle: PartLatentBundle) -> np.ndarray:
    """Render one image as (H, W, 3) float32 in [-1, 1]."""
    with torch.no_grad():
        img = generator(_bundle_to_batch(generator, bundle))[0]
    out = img.permute(1, 2, 0).numpy()
    if not np.all(np.isfinite(out)):
        raise NumericalError("generator produced non-finite activations")
    return out


def generate_batch(generator: Generator, bundles: Sequence[PartLatentBundle]) -> np.ndarray:
    """Render several bundles as (n, H, W, 3) float32 in [-1, 1]."""
    for b in bundles:
        if b.layout_id != generator.layout_fingerprint or b.dims != generator.prior.dims:
            raise ValidationError("bundle does not match generator layout/prior")
    zs = [torch.from_numpy(m) for m in stack_bundles(list(bundles))]
    with torch.no_grad():
        imgs = generator(zs)
    out = imgs.permute(0, 2, 3, 1).numpy()
    if not np.all(np.isfinite(out)):
        raise NumericalError("generator produced non-finite activations")
    return out


def image_batch_tensor(images: np.ndarray) -> torch.Tensor:
    """(n, H, W, 3) float32 array -> (n, 3, H, W) tensor."""
    return torch.from_numpy(
        np.ascontiguousarray(images.transpose(0, 3, 1, 2), dtype=np.float32)
    )


def discriminate(discriminator: Discriminator, image: np.ndarray | torch.Tensor) -> float:
    """Score one (H, W, 3) image."""
    if isinstance(image, np.ndarray):
        image = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
    if image.ndim == 3:
        image = image.permute(2, 0, 1).unsqueeze(0)
    with torch.no_grad():
        score = discriminator(image)
    return float(score[0])


def save_checkpoint(
    path: str | Path,
    generator: Generator,
    discriminator: Discriminator,
    step: int,
    extra: Mapping[str, Any] | None = None,
) -> Path:
    """Write a versioned archive of all named parameter tensors plus specs."""
    arrays: dict[str, np.ndarray] = {}
    for prefix, module in (("g", generator), ("d", discriminator)):
        for name, tensor in module.state_dict().items():
            arrays[f"{prefix}.{name}"] = tensor.detach().numpy()
    meta = {
        "model": generator.spec.to_dict(),
        "prior": {"dims": list(generator.prior.dims), "distribution": generator.prior.distribution},
        "step": int(step),
        "extra": dict(extra) if extra else {},
    }
    return containers.write_container(path, CHECKPOINT_KIND, meta, arrays)


@dataclass
class Checkpoint:
    generator: Generator
    discriminator: Discriminator
    spec: ModelSpec
    prior: PriorSpec
    step: int
    extra: dict[str, Any] = field(default_factory=dict)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Rebuild models from a checkpoint; fails loudly on any shape mismatch."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"checkpoint {path} does not exist")
    meta, arrays = containers.read_container(path, expected_kind=CHECKPOINT_KIND)
    spec = ModelSpec.from_dict(meta["model"])
    prior = PriorSpec(dims=tuple(meta["prior"]["dims"]), distribution=meta["prior"]["distribution"])
    generator = Generator(spec, prior)
    discriminator = Discriminator(spec)
    for prefix, module in (("g", generator), ("d", discriminator)):
        expected = module.state_dict()
        state: dict[str, torch.Tensor] = {}
        for name, tensor in expected.items():
            key = f"{prefix}.{name}"
            if key not in arrays:
                raise ValidationError(f"{path}: checkpoint is missing tensor {key}")
            stored = arrays[key]
            if tuple(stored.shape) != tuple(tensor.shape):
                raise ValidationError(
                    f"{path}: tensor {key} has shape {tuple(stored.shape)}, "
                    f"spec requires {tuple(tensor.shape)}"
                )
            state[name] = torch.from_numpy(np.array(stored))
        module.load_state_dict(state)
    known = {
        f"{prefix}.{name}"
        for prefix, module in (("g", generator), ("d", discriminator))
        for name in module.state_dict()
    }
    stray = set(arrays) - known
    if stray:
        raise ValidationError(f"{path}: unexpected tensors in checkpoint: {sorted(stray)[:5]}")
    return Checkpoint(
        generator=generator,
        discriminator=discriminator,
        spec=spec,
        prior=prior,
        step=int(meta["step"]),
        extra=dict(meta.get("extra", {})),
    )
