"""Command-line entry point for reproducible experiment workflows.

Every artifact-writing command resolves its settings from an optional
JSON config file plus explicit flags (flags win), writes the fully
resolved settings to <out>/resolved_config.json, and names outputs
without timestamps, so a run can be replayed from its own snapshot and
diffed byte for byte.

Exit codes: 0 success, 1 validation error (bad input/config/layout),
2 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import containers
from .dataio import (
    ImageStore,
    build_store,
    image_grid,
    ingest,
    save_png,
    synthesize_faces,
)
from .errors import NumericalError, PuzzleGanError, ValidationError
from .influence import (
    count_image,
    dump_bitsets,
    export_influence,
    first_block_influence,
    symbolic_influence,
)
from .latent import default_prior_spec, mix, sample_bundle
from .layout import (
    CANONICAL_KINDS,
    PartLayout,
    format_layout,
    load_layout,
    render_layout,
    validate_layout,
)
from .metrics import (
    EXTRACTORS,
    eval_regions,
    extract_features,
    format_region_stats,
    frechet_distance,
    heatmap_image,
    save_heatmap,
)
from .model import Generator, ModelSpec, generate_batch, load_checkpoint
from .training import TrainConfig, train

SAMPLES_KIND = "samples"


def _load_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    file = Path(path)
    if not file.exists():
        raise ValidationError(f"config file {file} does not exist")
    try:
        data = json.loads(file.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{file}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{file}: config must be a JSON object")
    return data


def _check_keys(cfg: dict[str, Any], known: set[str], context: str) -> None:
    extra = set(cfg) - known
    if extra:
        raise ValidationError(f"unknown {context} config keys: {sorted(extra)}")


def _command_config(path: str | None, command: str, known: set[str]) -> dict[str, Any]:
    """Load a config file or a resolved-config snapshot for ``command``."""
    cfg = _load_config_file(path)
    stated = cfg.pop("command", None)
    if stated is not None and stated != command:
        raise ValidationError(f"config snapshot was written by {stated!r}, not {command!r}")
    _check_keys(cfg, known, command)
    return cfg


def _setting(flag_value, cfg: dict[str, Any], key: str, default=None, required: bool = False):
    """Flag beats config file beats default."""
    if flag_value is not None:
        return flag_value
    if key in cfg and cfg[key] is not None:
        return cfg[key]
    if required:
        raise ValidationError(f"missing required setting {key!r} (pass a flag or config entry)")
    return default


def _resolve_layout(source: str) -> PartLayout:
    return load_layout(source)


def _out_dir(args) -> Path:
    if args.out is None:
        raise ValidationError("missing required --out directory")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_snapshot(out: Path, snapshot: dict[str, Any]) -> Path:
    path = out / "resolved_config.json"
    path.write_text(json.dumps(snapshot, sort_keys=True, indent=2) + "\n")
    return path


def _parse_parts(value: str | Sequence[int] | None) -> list[int]:
    if value is None:
        return []
    if isinstance(value, str):
        if value.strip() == "":
            return []
        try:
            parts = [int(tok) for tok in value.split(",")]
        except ValueError as exc:
            raise ValidationError(f"--parts must be comma-separated integers, got {value!r}") from exc
    else:
        parts = [int(p) for p in value]
    if len(set(parts)) != len(parts):
        raise ValidationError(f"--parts has duplicates: {value!r}")
    return parts


def _sample_bundles(generator: Generator, n: int, seed: int):
    rng = np.random.default_rng(seed)
    layout = generator.spec.layout
    return [sample_bundle(generator.prior, layout, rng=rng) for _ in range(n)]


def _save_samples(out: Path, name: str, images: np.ndarray, meta: dict[str, Any]) -> list[Path]:
    raw = containers.write_container(out / f"{name}.pzgc", SAMPLES_KIND, meta, {"images": images})
    png = save_png(image_grid(images, cols=meta.get("cols")), out / f"{name}.png")
    return [raw, png]


def cmd_layout_check(args) -> int:
    layout = _resolve_layout(args.layout if args.layout else "facial_parts")
    print(render_layout(layout))
    report = validate_layout(layout)
    if report.ok:
        print(f"ok: {layout.num_parts} parts, {layout.grid_height}x{layout.grid_width} grid")
        return 0
    for v in report.violations:
        print(f"violation[{v.kind}]: {v.message}")
    return 1


def cmd_ingest(args) -> int:
    cfg = _command_config(args.config, "ingest", {"source", "resolution", "n", "seed"})
    out = _out_dir(args)
    source = _setting(args.source, cfg, "source", required=True)
    resolution = int(_setting(args.resolution, cfg, "resolution", default=32))
    seed = int(_setting(args.seed, cfg, "seed", default=0))
    note = "assumed pre-aligned; parts must sit at consistent positions"
    if source == "synthetic":
        n = int(_setting(args.n, cfg, "n", default=2048))
        faces = synthesize_faces(n, resolution=resolution, seed=seed)
        store, manifest = build_store(
            faces, out / "store.pzgc", source=f"synthetic(n={n}, seed={seed})",
            alignment_note=note, split_seed=seed,
        )
    else:
        store, manifest = ingest(
            source, resolution, out / "store.pzgc", alignment_note=note, split_seed=seed,
        )
    _write_snapshot(out, {"command": "ingest", "source": str(source), "resolution": resolution,
                          "seed": seed, "n": len(store)})
    print(f"wrote {store.path} ({manifest.count} images at {manifest.resolution}x{manifest.resolution})")
    if manifest.skipped:
        print(f"skipped {len(manifest.skipped)} unreadable files")
    return 0


def cmd_train(args) -> int:
    cfg = _command_config(args.config, "train", {"layout", "model", "train", "store", "prior_scale"})
    out = _out_dir(args)

    model_section = dict(cfg.get("model", {}))
    layout_source = args.layout or model_section.pop("layout", None) or cfg.get("layout")
    layout = _resolve_layout(layout_source if layout_source else "facial_parts")
    if "layout" in model_section:
        model_section.pop("layout")
    spec = ModelSpec.from_dict({**model_section, "layout": format_layout(layout)})

    train_section = dict(cfg.get("train", {}))
    if args.seed is not None:
        train_section["seed"] = args.seed
    tcfg = TrainConfig.from_dict(train_section)

    prior_scale = int(cfg.get("prior_scale", 8))
    prior = default_prior_spec(layout, scale=prior_scale)
    store_path = _setting(args.store, cfg, "store", required=True)
    store = ImageStore.open(store_path)

    _write_snapshot(out, {
        "command": "train",
        "model": spec.to_dict(),
        "train": tcfg.to_dict(),
        "prior_scale": prior_scale,
        "store": str(store_path),
    })
    result = train(store, spec, tcfg, out, prior=prior)
    print(f"trained {result.steps} steps; wrote {result.checkpoint_path} and {result.log_path}")

    preview = generate_batch(result.generator, _sample_bundles(result.generator, 16, tcfg.seed))
    for path in _save_samples(out, "preview", preview, {"seed": tcfg.seed, "count": 16}):
        print(f"wrote {path}")
    return 0


def cmd_sample(args) -> int:
    cfg = _command_config(args.config, "sample", {"checkpoint", "n", "seed"})
    out = _out_dir(args)
    ckpt_path = _setting(args.checkpoint, cfg, "checkpoint", required=True)
    n = int(_setting(args.n, cfg, "n", default=16))
    seed = int(_setting(args.seed, cfg, "seed", default=0))
    if n < 1:
        raise ValidationError(f"--n must be >= 1, got {n}")
    ckpt = load_checkpoint(ckpt_path)
    images = generate_batch(ckpt.generator, _sample_bundles(ckpt.generator, n, seed))
    _write_snapshot(out, {"command": "sample", "checkpoint": str(ckpt_path), "n": n, "seed": seed})
    meta = {"seed": seed, "count": n, "checkpoint_step": ckpt.step}
    for path in _save_samples(out, "samples", images, meta):
        print(f"wrote {path}")
    return 0


def cmd_swap(args) -> int:
    cfg = _command_config(args.config, "swap", {"checkpoint", "n", "seed", "reference_seed", "parts"})
    out = _out_dir(args)
    ckpt_path = _setting(args.checkpoint, cfg, "checkpoint", required=True)
    n = int(_setting(args.n, cfg, "n", default=4))
    seed = int(_setting(args.seed, cfg, "seed", default=0))
    reference_seed = int(_setting(args.reference_seed, cfg, "reference_seed", default=seed + 1))
    parts = _parse_parts(_setting(args.parts, cfg, "parts", default=""))
    if n < 1:
        raise ValidationError(f"--n must be >= 1, got {n}")

    ckpt = load_checkpoint(ckpt_path)
    gen = ckpt.generator
    for part in parts:
        if not (1 <= part <= gen.prior.num_parts):
            raise ValidationError(f"part id {part} out of range 1..{gen.prior.num_parts}")
    targets = _sample_bundles(gen, n, seed)
    references = _sample_bundles(gen, n, reference_seed)

    # Columns: target | reference | one mix per part when several are
    # listed | combined mix of all listed parts. An empty list keeps the
    # combined column, which is then identical to the target.
    mix_sets: list[list[int]] = [[p] for p in parts] if len(parts) > 1 else []
    mix_sets.append(parts)
    columns = ["target", "reference"] + [
        "mix(" + ",".join(str(p) for p in s) + ")" for s in mix_sets
    ]
    rows = []
    for tgt, ref in zip(targets, references):
        row = [tgt, ref] + [mix(tgt, ref, s) for s in mix_sets]
        rows.append(generate_batch(gen, row))
    images = np.concatenate(rows, axis=0)

    _write_snapshot(out, {
        "command": "swap", "checkpoint": str(ckpt_path), "n": n,
        "seed": seed, "reference_seed": reference_seed, "parts": parts,
    })
    meta = {"columns": columns, "cols": len(columns), "checkpoint_step": ckpt.step}
    for path in _save_samples(out, "swap_grid", images, meta):
        print(f"wrote {path}")
    print("columns: " + " | ".join(columns))
    return 0


def cmd_influence(args) -> int:
    cfg = _command_config(args.config, "influence", {"layout", "model"})
    out = _out_dir(args)
    model_section = dict(cfg.get("model", {}))
    layout_source = args.layout or model_section.pop("layout", None) or cfg.get("layout")
    layout = _resolve_layout(layout_source if layout_source else "facial_parts")
    spec = ModelSpec.from_dict({**model_section, "layout": format_layout(layout)})

    imap = symbolic_influence(spec)
    written = export_influence(imap, out)
    block = first_block_influence(layout, kernel=spec.kernel_size)
    written.append(save_png(count_image(block), out / "block_counts.png"))
    written.append(dump_bitsets(block, out / "block_bitsets.json"))
    _write_snapshot(out, {"command": "influence", "model": spec.to_dict()})
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_eval_regions(args) -> int:
    cfg = _command_config(args.config, "eval-regions", {"checkpoint", "part", "n", "seed"})
    out = _out_dir(args)
    ckpt_path = _setting(args.checkpoint, cfg, "checkpoint", required=True)
    n = int(_setting(args.n, cfg, "n", default=500))
    seed = int(_setting(args.seed, cfg, "seed", default=0))
    part = _setting(args.part, cfg, "part")
    ckpt = load_checkpoint(ckpt_path)
    parts = [int(part)] if part is not None else list(range(1, ckpt.prior.num_parts + 1))

    tables = []
    for p in parts:
        heatmap, stats = eval_regions(ckpt.generator, p, n=n, seed=seed)
        save_heatmap(heatmap, out / f"part{p}_heatmap.pzgc")
        save_png(heatmap_image(heatmap), out / f"part{p}_heatmap.png")
        tables.append(format_region_stats(stats))
    text = "\n\n".join(tables) + "\n"
    (out / "region_stats.txt").write_text(text)
    print(text, end="")
    _write_snapshot(out, {
        "command": "eval-regions", "checkpoint": str(ckpt_path),
        "part": part if part is None else int(part), "n": n, "seed": seed,
    })
    return 0


def cmd_fid(args) -> int:
    cfg = _command_config(args.config, "fid", {"checkpoint", "store", "extractor", "n", "seed"})
    out = _out_dir(args)
    ckpt_path = _setting(args.checkpoint, cfg, "checkpoint", required=True)
    store_path = _setting(args.store, cfg, "store", required=True)
    extractor = _setting(args.extractor, cfg, "extractor", default="pixel_downsample")
    if extractor == "external":
        raise ValidationError("the external extractor is library-only; pass a callable in code")
    if extractor not in EXTRACTORS:
        raise ValidationError(f"--extractor must be one of {EXTRACTORS}, got {extractor!r}")
    n = int(_setting(args.n, cfg, "n", default=500))
    seed = int(_setting(args.seed, cfg, "seed", default=0))

    ckpt = load_checkpoint(ckpt_path)
    store = ImageStore.open(store_path)
    if n > len(store):
        raise ValidationError(f"--n {n} exceeds dataset size {len(store)}")
    rng = np.random.default_rng(seed)
    real = store[np.sort(rng.choice(len(store), size=n, replace=False))]
    fake = generate_batch(ckpt.generator, _sample_bundles(ckpt.generator, n, seed))
    kwargs = {"discriminator": ckpt.discriminator} if extractor == "discriminator_penultimate" else {}
    value = frechet_distance(
        extract_features(real, extractor, **kwargs),
        extract_features(fake, extractor, **kwargs),
    )
    record = {
        "command": "fid", "checkpoint": str(ckpt_path), "store": str(store_path),
        "extractor": extractor, "n": n, "seed": seed,
    }
    _write_snapshot(out, record)
    (out / "fid.json").write_text(json.dumps({**record, "fid": value}, sort_keys=True, indent=2) + "\n")
    print(f"fid {value:.6f} (extractor={extractor}, n={n})")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems are validation errors (exit 1)
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="puzzlegan", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str, flags: Sequence[str]) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        if "config" in flags:
            p.add_argument("--config", help="JSON config file; explicit flags override it")
        if "seed" in flags:
            p.add_argument("--seed", type=int, help="base random seed (default 0)")
        if "out" in flags:
            p.add_argument("--out", help="output directory (name-addressed, no timestamps)")
        if "layout" in flags:
            p.add_argument("--layout", help=f"layout file or one of {sorted(CANONICAL_KINDS)}")
        if "checkpoint" in flags:
            p.add_argument("--checkpoint", help="checkpoint file from a training run")
        if "part" in flags:
            p.add_argument("--part", type=int, help="part id (1-based)")
        if "n" in flags:
            p.add_argument("--n", type=int, help="sample count")
        if "parts" in flags:
            p.add_argument("--parts", help="comma-separated part ids, e.g. 2,3")
        if "extractor" in flags:
            p.add_argument("--extractor", help=f"feature extractor, one of {EXTRACTORS[:2]}")
        return p

    add("layout-check", cmd_layout_check, "parse and validate a layout file", ["layout"])

    p = add("ingest", cmd_ingest, "preprocess images into a training store",
            ["config", "seed", "out", "n"])
    p.add_argument("--source", help="image folder, existing store, or 'synthetic'")
    p.add_argument("--resolution", type=int, help="target square resolution (default 32)")

    p = add("train", cmd_train, "run adversarial training", ["config", "seed", "out", "layout"])
    p.add_argument("--store", help="preprocessed image store from ingest")

    add("sample", cmd_sample, "render an image grid from a checkpoint",
        ["config", "seed", "out", "checkpoint", "n"])
    p = add("swap", cmd_swap, "mix target and reference latents per part",
            ["config", "seed", "out", "checkpoint", "n", "parts"])
    p.add_argument("--reference-seed", type=int, dest="reference_seed",
                   help="seed for the reference column (default: seed + 1)")

    add("influence", cmd_influence, "export symbolic influence maps and region masks",
        ["config", "out", "layout"])
    add("eval-regions", cmd_eval_regions, "swap-MSE heatmap and region statistics",
        ["config", "seed", "out", "checkpoint", "part", "n"])
    p = add("fid", cmd_fid, "Frechet distance between real and generated features",
            ["config", "seed", "out", "checkpoint", "n", "extractor"])
    p.add_argument("--store", help="preprocessed image store with real images")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except PuzzleGanError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
