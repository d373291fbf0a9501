"""Adversarial training loop at fixed resolution.

The driver alternates discriminator and generator updates. Every source
of randomness (weight init, latent draws, gradient-penalty mixing,
batch shuffling) comes from numpy streams spawned from the single
config seed, so a run is reproducible bit for bit once torch reductions
are pinned (see determinism module).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch
import torch.nn.functional as F

from .dataio import ImageStore, batch_iter
from .errors import NumericalError, ValidationError
from .latent import PriorSpec, default_prior_spec, sample_batch
from .model import (
    Discriminator,
    Generator,
    ModelSpec,
    build_discriminator,
    build_generator,
    image_batch_tensor,
    save_checkpoint,
)

LOSS_KINDS = ("wgan_gp", "nonsaturating")


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "wgan_gp"
    gp_weight: float = 10.0
    batch_size: int = 16
    total_steps: int = 10_000
    d_steps_per_g_step: int = 1
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.99
    checkpoint_every: int = 0  # 0: final checkpoint only
    log_every: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.loss not in LOSS_KINDS:
            raise ValidationError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.gp_weight < 0:
            raise ValidationError(f"gp_weight must be >= 0, got {self.gp_weight}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_steps < 0:
            raise ValidationError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.d_steps_per_g_step < 1:
            raise ValidationError(f"d_steps_per_g_step must be >= 1, got {self.d_steps_per_g_step}")
        if self.lr <= 0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        for name, beta in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not (0 <= beta < 1):
                raise ValidationError(f"{name} must lie in [0, 1), got {beta}")
        if self.checkpoint_every < 0:
            raise ValidationError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.log_every < 1:
            raise ValidationError(f"log_every must be >= 1, got {self.log_every}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "TrainConfig":
        known = {f for f in TrainConfig.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValidationError(f"unknown training config keys: {sorted(extra)}")
        return TrainConfig(**dict(data))


@dataclass(frozen=True)
class TrainRecord:
    step: int
    d_loss: float
    g_loss: float
    gp: float
    score_gap: float  # mean D(real) - mean D(fake)
    wall_clock: float


@dataclass
class TrainLog:
    """Append-only sequence of step records, persisted as JSON lines."""

    records: list[TrainRecord] = field(default_factory=list)

    def append(self, record: TrainRecord) -> None:
        self.records.append(record)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        path.write_text("".join(line + "\n" for line in lines))
        return path

    @staticmethod
    def load(path: str | Path) -> "TrainLog":
        log = TrainLog()
        for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                log.append(TrainRecord(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValidationError(f"{path}: bad log record on line {i}: {exc}") from exc
        return log


def loss_d(
    real_scores: torch.Tensor,
    fake_scores: torch.Tensor,
    gp_term: torch.Tensor | float | None = None,
    *,
    kind: str = "wgan_gp",
    gp_weight: float = 10.0,
) -> torch.Tensor:
    """Discriminator objective.

    wgan_gp: mean(fake) - mean(real) + gp_weight * gp_term.
    nonsaturating: -mean log sigmoid(real) - mean log(1 - sigmoid(fake)),
    computed via softplus for stability.
    """
    _check_kind(kind)
    if kind == "wgan_gp":
        gp = 0.0 if gp_term is None else gp_term
        return fake_scores.mean() - real_scores.mean() + gp_weight * gp
    return F.softplus(-real_scores).mean() + F.softplus(fake_scores).mean()


def loss_g(fake_scores: torch.Tensor, *, kind: str = "wgan_gp") -> torch.Tensor:
    """Generator objective: -mean(fake) or -mean log sigmoid(fake)."""
    _check_kind(kind)
    if kind == "wgan_gp":
        return -fake_scores.mean()
    return F.softplus(-fake_scores).mean()


def _check_kind(kind: str) -> None:
    if kind not in LOSS_KINDS:
        raise ValidationError(f"loss must be one of {LOSS_KINDS}, got {kind!r}")


def gradient_penalty(
    discriminator: Discriminator,
    real: torch.Tensor,
    fake: torch.Tensor,
    rng: np.random.Generator,
) -> torch.Tensor:
    """Mean squared deviation of the critic's gradient norm from 1.

    Evaluated at per-sample uniform interpolates between real and fake.
    create_graph keeps the penalty differentiable w.r.t. D parameters.
    """
    eps = torch.from_numpy(rng.random((real.shape[0], 1, 1, 1), dtype=np.float32))
    mixed = (eps * real + (1.0 - eps) * fake.detach()).requires_grad_(True)
    scores = discriminator(mixed)
    (grads,) = torch.autograd.grad(scores.sum(), mixed, create_graph=True)
    norms = grads.flatten(1).norm(dim=1)
    return ((norms - 1.0) ** 2).mean()


def _latents(prior: PriorSpec, batch: int, rng: np.random.Generator) -> list[torch.Tensor]:
    return [torch.from_numpy(z) for z in sample_batch(prior, batch, rng)]


def _update_d(
    generator: Generator,
    discriminator: Discriminator,
    opt_d: torch.optim.Optimizer,
    real: torch.Tensor,
    cfg: TrainConfig,
    latent_rng: np.random.Generator,
    gp_rng: np.random.Generator,
) -> dict[str, float]:
    with torch.no_grad():
        fake = generator(_latents(generator.prior, real.shape[0], latent_rng))
    real_scores = discriminator(real)
    fake_scores = discriminator(fake)
    gp = gradient_penalty(discriminator, real, fake, gp_rng) if cfg.loss == "wgan_gp" else None
    loss = loss_d(real_scores, fake_scores, gp, kind=cfg.loss, gp_weight=cfg.gp_weight)
    opt_d.zero_grad(set_to_none=True)
    loss.backward()
    opt_d.step()
    return {
        "d_loss": float(loss.detach()),
        "gp": float(gp.detach()) if gp is not None else 0.0,
        "score_gap": float((real_scores.mean() - fake_scores.mean()).detach()),
    }


def _update_g(
    generator: Generator,
    discriminator: Discriminator,
    opt_g: torch.optim.Optimizer,
    cfg: TrainConfig,
    latent_rng: np.random.Generator,
) -> dict[str, float]:
    fake = generator(_latents(generator.prior, cfg.batch_size, latent_rng))
    loss = loss_g(discriminator(fake), kind=cfg.loss)
    opt_g.zero_grad(set_to_none=True)
    loss.backward()
    opt_g.step()
    return {"g_loss": float(loss.detach())}


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    checkpoint_path: Path
    log_path: Path
    log: TrainLog
    steps: int


def _check_dataset(store: ImageStore | np.ndarray, spec: ModelSpec, cfg: TrainConfig) -> int:
    n = len(store)
    if n == 0:
        raise ValidationError("dataset is empty")
    if cfg.batch_size > n:
        raise ValidationError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    res = store.resolution if isinstance(store, ImageStore) else store.shape[1]
    if res != spec.out_resolution:
        raise ValidationError(
            f"dataset resolution {res} does not match model output {spec.out_resolution}"
        )
    return n


def train(
    store: ImageStore | np.ndarray,
    spec: ModelSpec,
    cfg: TrainConfig,
    out_dir: str | Path,
    prior: PriorSpec | None = None,
) -> TrainResult:
    """Run the alternating loop; write checkpoints and the step log.

    Every stochastic choice is driven by streams spawned from cfg.seed,
    so repeated runs are bit-identical in deterministic mode. A
    non-finite loss aborts with a diagnostic checkpoint for post-mortem.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if prior is None:
        prior = default_prior_spec(spec.layout)
    _check_dataset(store, spec, cfg)

    seed_root = np.random.SeedSequence(cfg.seed)
    init_seq, latent_seq, gp_seq, shuffle_seq = seed_root.spawn(4)
    init_g_seed, init_d_seed = (int(s) for s in init_seq.generate_state(2))
    generator = build_generator(spec, prior, seed=init_g_seed)
    discriminator = build_discriminator(spec, seed=init_d_seed)
    latent_rng = np.random.default_rng(latent_seq)
    gp_rng = np.random.default_rng(gp_seq)
    batches = batch_iter(store, cfg.batch_size, seed=int(shuffle_seq.generate_state(1)[0]))

    betas = (cfg.beta1, cfg.beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.lr, betas=betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg.lr, betas=betas)

    log = TrainLog()
    start = time.monotonic()
    for step in range(1, cfg.total_steps + 1):
        for _ in range(cfg.d_steps_per_g_step):
            real = image_batch_tensor(next(batches))
            d_stats = _update_d(generator, discriminator, opt_d, real, cfg, latent_rng, gp_rng)
        g_stats = _update_g(generator, discriminator, opt_g, cfg, latent_rng)
        stats = {**d_stats, **g_stats}
        if not all(math.isfinite(v) for v in stats.values()):
            save_checkpoint(out_dir / "diagnostic.ckpt", generator, discriminator, step)
            log.save(out_dir / "train_log.jsonl")
            raise NumericalError(
                f"non-finite loss at step {step}: {stats} (diagnostic checkpoint written)"
            )
        if step % cfg.log_every == 0 or step == cfg.total_steps:
            log.append(
                TrainRecord(
                    step=step,
                    d_loss=stats["d_loss"],
                    g_loss=stats["g_loss"],
                    gp=stats["gp"],
                    score_gap=stats["score_gap"],
                    wall_clock=time.monotonic() - start,
                )
            )
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step < cfg.total_steps:
            save_checkpoint(out_dir / f"step{step:07d}.ckpt", generator, discriminator, step)

    final = save_checkpoint(out_dir / "final.ckpt", generator, discriminator, cfg.total_steps)
    log_path = log.save(out_dir / "train_log.jsonl")
    return TrainResult(
        generator=generator,
        discriminator=discriminator,
        checkpoint_path=final,
        log_path=log_path,
        log=log,
        steps=cfg.total_steps,
    )
