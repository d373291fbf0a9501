"""Part-compositional GAN: grid layouts, per-part latents, influence analysis.

A generator whose first spatial block is assembled from per-part latent
heads, trained adversarially on aligned face thumbnails, plus exact
symbolic influence maps, part-swap mixing, region-wise MSE statistics,
and a Frechet distance over pluggable feature embeddings.
"""

from . import determinism

determinism.apply()

from .determinism import deterministic_mode

from .errors import NumericalError, PuzzleGanError, ValidationError
from .layout import (
    LayoutReport,
    LayoutViolation,
    PartLayout,
    canonical_layout,
    format_layout,
    load_layout,
    parse_layout,
    render_layout,
    save_layout,
    validate_layout,
)
from .latent import (
    PartLatentBundle,
    PriorSpec,
    default_prior_spec,
    load_bundle,
    mix,
    resample_part,
    sample_bundle,
    save_bundle,
)
from .model import (
    Checkpoint,
    Discriminator,
    Generator,
    ModelSpec,
    build_discriminator,
    build_generator,
    compose_head,
    discriminate,
    generate,
    generate_batch,
    load_checkpoint,
    save_checkpoint,
)
from .influence import (
    InfluenceMap,
    RegionMasks,
    classify_regions,
    empirical_influence,
    export_influence,
    first_block_influence,
    symbolic_influence,
)
from .training import TrainConfig, TrainLog, TrainRecord, TrainResult, train
from .metrics import (
    FeatureSummary,
    MseHeatmap,
    RegionStats,
    RegionSummary,
    eval_regions,
    extract_features,
    format_region_stats,
    frechet_distance,
    region_stats,
    swap_mse,
)
from .dataio import DatasetManifest, ImageStore, batch_iter, image_grid, ingest, synthesize_faces

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "DatasetManifest",
    "Discriminator",
    "FeatureSummary",
    "Generator",
    "ImageStore",
    "InfluenceMap",
    "LayoutReport",
    "LayoutViolation",
    "ModelSpec",
    "MseHeatmap",
    "NumericalError",
    "PartLatentBundle",
    "PartLayout",
    "PriorSpec",
    "PuzzleGanError",
    "RegionMasks",
    "RegionStats",
    "RegionSummary",
    "TrainConfig",
    "TrainLog",
    "TrainRecord",
    "TrainResult",
    "ValidationError",
    "batch_iter",
    "build_discriminator",
    "build_generator",
    "canonical_layout",
    "classify_regions",
    "compose_head",
    "default_prior_spec",
    "deterministic_mode",
    "discriminate",
    "empirical_influence",
    "eval_regions",
    "export_influence",
    "extract_features",
    "first_block_influence",
    "format_layout",
    "format_region_stats",
    "frechet_distance",
    "generate",
    "generate_batch",
    "image_grid",
    "ingest",
    "load_bundle",
    "load_checkpoint",
    "load_layout",
    "mix",
    "parse_layout",
    "region_stats",
    "render_layout",
    "resample_part",
    "sample_bundle",
    "save_bundle",
    "save_checkpoint",
    "save_layout",
    "swap_mse",
    "symbolic_influence",
    "synthesize_faces",
    "train",
    "validate_layout",
]
