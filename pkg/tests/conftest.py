"""Shared fixtures: deterministic mode, cached desk-scale training run.

The acceptance suite needs one trained desk model (10k steps); training
it takes tens of minutes on one core, so the run is cached under
.cache/ keyed by its exact configuration and reused across pytest
invocations. Delete .cache/ to force a retrain.
"""

import hashlib
import json
import os
import time
from pathlib import Path

os.environ.setdefault("PUZZLEGAN_DETERMINISTIC", "1")  # before the package import

import pytest
from hypothesis import HealthCheck, settings

import puzzlegan as pg
from puzzlegan.dataio import ImageStore, build_store, synthesize_faces
from puzzlegan.model import load_checkpoint
from puzzlegan.training import TrainConfig, TrainLog, train

settings.register_profile(
    "desk",
    deadline=None,
    max_examples=25,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("desk")

CACHE = Path(__file__).resolve().parent.parent / ".cache"

DATA_PARAMS = {"n": 2048, "resolution": 32, "seed": 11}
MODEL_PARAMS = {"head_channels": 64, "out_resolution": 32}
TRAIN_PARAMS = {"loss": "wgan_gp", "batch_size": 16, "total_steps": 10_000, "log_every": 100, "seed": 7}


def _run_key() -> str:
    blob = json.dumps(
        {"data": DATA_PARAMS, "model": MODEL_PARAMS, "train": TRAIN_PARAMS}, sort_keys=True
    ).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@pytest.fixture(scope="session")
def face_store() -> ImageStore:
    """Aligned synthetic face thumbnails for desk-scale training."""
    CACHE.mkdir(exist_ok=True)
    name = "faces_{n}_{resolution}_{seed}.pzgc".format(**DATA_PARAMS)
    path = CACHE / name
    if not path.exists():
        faces = synthesize_faces(
            DATA_PARAMS["n"], resolution=DATA_PARAMS["resolution"], seed=DATA_PARAMS["seed"]
        )
        build_store(faces, path, source="synthetic fixture")
    return ImageStore.open(path)


@pytest.fixture(scope="session")
def desk_run(face_store):
    """Trained desk-scale model (facial_parts, 32x32, 10k steps), cached."""
    run_dir = CACHE / f"run_{_run_key()}"
    ckpt_path = run_dir / "final.ckpt"
    log_path = run_dir / "train_log.jsonl"
    wall_path = run_dir / "wall_seconds.txt"
    if not (ckpt_path.exists() and log_path.exists()):
        layout = pg.canonical_layout("facial_parts")
        spec = pg.ModelSpec(layout=layout, **MODEL_PARAMS)
        cfg = TrainConfig(**TRAIN_PARAMS)
        start = time.monotonic()
        train(face_store, spec, cfg, run_dir)
        wall_path.write_text(f"{time.monotonic() - start:.1f}\n")
    return {
        "checkpoint": load_checkpoint(ckpt_path),
        "log": TrainLog.load(log_path),
        "ckpt_path": ckpt_path,
        "wall_seconds": float(wall_path.read_text()) if wall_path.exists() else float("nan"),
    }


@pytest.fixture()
def facial_parts() -> pg.PartLayout:
    return pg.canonical_layout("facial_parts")


@pytest.fixture()
def face_swap() -> pg.PartLayout:
    return pg.canonical_layout("face_swap")


@pytest.fixture()
def tiny_spec(facial_parts) -> pg.ModelSpec:
    """Small desk architecture: full depth, thin channels, fast on CPU."""
    return pg.ModelSpec(layout=facial_parts, head_channels=16, out_resolution=32)
