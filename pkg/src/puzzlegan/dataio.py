"""Dataset ingestion, the preprocessed image store, and raster helpers.

Ingestion center-crops to square, resizes to the target resolution, and
packs everything into a single fixed-stride container for random access.
Images are stored as uint8 and normalized to [-1, 1] on read, so
re-ingesting a store reproduces it bit-exactly.

Alignment of the input images is assumed, not enforced: the part
decomposition only works when the same concepts sit in approximately the
same position in every training sample. Record how your data was aligned
in the manifest's alignment note.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import scipy.special
from PIL import Image, UnidentifiedImageError

from . import containers
from .errors import ValidationError

logger = logging.getLogger(__name__)

STORE_KIND = "image_store"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}


@dataclass(frozen=True)
class DatasetManifest:
    """What went into a preprocessed store."""

    root: str
    count: int
    resolution: int
    alignment_note: str
    normalization: tuple[float, float] = (-1.0, 1.0)
    split_seed: int | None = None
    skipped: tuple[str, ...] = ()
    store_path: str = ""

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = dataclasses.asdict(self)
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return path

    @staticmethod
    def load(path: str | Path) -> "DatasetManifest":
        data = json.loads(Path(path).read_text())
        data["normalization"] = tuple(data["normalization"])
        data["skipped"] = tuple(data["skipped"])
        return DatasetManifest(**data)


def to_uint8(images: np.ndarray) -> np.ndarray:
    """Map float images in [-1, 1] to uint8 [0, 255]."""
    return np.clip(np.round((images + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(images: np.ndarray) -> np.ndarray:
    """Map uint8 images to float32 in [-1, 1]."""
    return images.astype(np.float32) / 127.5 - 1.0


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to (H, W, 3) uint8 RGB."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def save_png(array: np.ndarray, path: str | Path) -> Path:
    """Write a uint8 array ((H, W) grayscale or (H, W, 3) RGB) as PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if array.dtype != np.uint8:
        raise ValidationError(f"save_png expects uint8, got {array.dtype}")
    Image.fromarray(array).save(path, format="PNG")
    return path


def center_crop_resize(image: np.ndarray, resolution: int) -> np.ndarray:
    """Center-crop to square, then resize to ``resolution``.

    Resizing is skipped when the crop already has the target size, which
    makes preprocessing idempotent.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"expected (H, W, 3) image, got shape {image.shape}")
    h, w = image.shape[:2]
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    cropped = image[top : top + side, left : left + side]
    if side == resolution:
        return np.ascontiguousarray(cropped)
    resized = Image.fromarray(cropped).resize((resolution, resolution), Image.BILINEAR)
    return np.asarray(resized)


class ImageStore:
    """Random-access view over a preprocessed image container.

    Integer or fancy indexing returns float32 images in [-1, 1] with
    shape (..., H, W, 3); ``raw`` exposes the stored uint8 records.
    Read-only after ingestion, so concurrent readers are safe.
    """

    def __init__(self, path: Path, meta: dict, images: np.ndarray):
        self.path = path
        self.meta = meta
        self._images = images

    @classmethod
    def open(cls, path: str | Path) -> "ImageStore":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"image store {path} does not exist")
        meta, arrays = containers.read_container(path, expected_kind=STORE_KIND, mmap=True)
        images = arrays["images"]
        if images.ndim != 4 or images.shape[3] != 3 or images.dtype != np.uint8:
            raise ValidationError(f"{path}: malformed image store payload {images.shape} {images.dtype}")
        return cls(path, meta, images)

    def __len__(self) -> int:
        return self._images.shape[0]

    @property
    def resolution(self) -> int:
        return int(self._images.shape[1])

    def __getitem__(self, index) -> np.ndarray:
        return from_uint8(np.asarray(self._images[index]))

    def raw(self, index) -> np.ndarray:
        return np.array(self._images[index])


def _iter_source_images(source: Path, skipped: list[str]) -> list[np.ndarray]:
    if source.is_file() and containers.is_container(source):
        store = ImageStore.open(source)
        return [store.raw(i) for i in range(len(store))]
    if source.is_dir():
        files = sorted(
            p for p in source.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
        images = []
        for file in files:
            try:
                images.append(load_image(file))
            except (OSError, UnidentifiedImageError) as exc:
                logger.warning("skipping unreadable image %s: %s", file.name, exc)
                skipped.append(file.name)
        return images
    raise ValidationError(f"dataset source {source} is neither an image folder nor a store")


def build_store(
    images: np.ndarray,
    out_path: str | Path,
    source: str = "arrays",
    alignment_note: str = "",
    split_seed: int | None = None,
    skipped: tuple[str, ...] = (),
) -> tuple[ImageStore, DatasetManifest]:
    """Write a store plus manifest from ready (n, res, res, 3) uint8 images."""
    out_path = Path(out_path)
    if images.ndim != 4 or images.shape[1] != images.shape[2] or images.shape[3] != 3:
        raise ValidationError(f"expected (n, res, res, 3) images, got shape {images.shape}")
    if images.dtype != np.uint8:
        raise ValidationError(f"store images must be uint8, got {images.dtype}")
    meta = {
        "count": int(images.shape[0]),
        "resolution": int(images.shape[1]),
        "channels": 3,
        "source": source,
    }
    containers.write_container(out_path, STORE_KIND, meta, {"images": images})
    manifest = DatasetManifest(
        root=source,
        count=int(images.shape[0]),
        resolution=int(images.shape[1]),
        alignment_note=alignment_note,
        split_seed=split_seed,
        skipped=skipped,
        store_path=str(out_path),
    )
    manifest.save(manifest_path_for(out_path))
    return ImageStore.open(out_path), manifest


def ingest(
    source: str | Path,
    target_resolution: int,
    out_path: str | Path,
    alignment_note: str = "",
    split_seed: int | None = None,
) -> tuple[ImageStore, DatasetManifest]:
    """Preprocess a folder of images (or an existing store) into a new store.

    Ordering is deterministic (sorted by filename); unreadable files are
    skipped with a warning and recorded in the manifest; zero usable
    images is a hard error. The manifest is written next to the store.
    """
    source = Path(source)
    if target_resolution < 1:
        raise ValidationError(f"target resolution must be >= 1, got {target_resolution}")
    skipped: list[str] = []
    records = [center_crop_resize(img, target_resolution) for img in _iter_source_images(source, skipped)]
    if not records:
        raise ValidationError(f"no usable images found in {source}")
    return build_store(
        np.stack(records).astype(np.uint8),
        out_path,
        source=str(source),
        alignment_note=alignment_note,
        split_seed=split_seed,
        skipped=tuple(skipped),
    )


def manifest_path_for(store_path: str | Path) -> Path:
    return Path(store_path).with_name(Path(store_path).name + ".manifest.json")


def batch_iter(
    store: "ImageStore | np.ndarray",
    batch_size: int,
    seed: int,
    epochs: int | None = None,
) -> Iterator[np.ndarray]:
    """Seeded shuffled epochs of (B, H, W, 3) float32 batches in [-1, 1].

    Every epoch covers every image exactly once (the final batch of an
    epoch may be short). Identical seeds give identical batch sequences.
    ``epochs=None`` streams forever.
    """
    n = len(store)
    if n == 0:
        raise ValidationError("dataset is empty")
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    if batch_size > n:
        raise ValidationError(f"batch_size {batch_size} exceeds dataset size {n}")
    rng = np.random.default_rng(seed)
    done = 0
    while epochs is None or done < epochs:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            if isinstance(store, ImageStore):
                yield store[idx]
            else:
                batch = np.asarray(store)[idx]
                yield from_uint8(batch) if batch.dtype == np.uint8 else batch.astype(np.float32)
        done += 1


def image_grid(images: np.ndarray, cols: int | None = None, pad: int = 2) -> np.ndarray:
    """Tile (N, H, W, 3) images (uint8 or [-1, 1] float) into one uint8 canvas."""
    if images.ndim != 4:
        raise ValidationError(f"expected (N, H, W, 3) images, got shape {images.shape}")
    if images.dtype != np.uint8:
        images = to_uint8(images)
    n, h, w, _ = images.shape
    if cols is None:
        cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    canvas = np.zeros((rows * (h + pad) + pad, cols * (w + pad) + pad, 3), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        top = pad + r * (h + pad)
        left = pad + c * (w + pad)
        canvas[top : top + h, left : left + w] = images[i]
    return canvas


def _soft_ellipse(
    yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, ry: float, rx: float, soft: float = 0.03
) -> np.ndarray:
    """Anti-aliased filled ellipse mask in [0, 1]."""
    d = 1.0 - ((yy - cy) / ry) ** 2 - ((xx - cx) / rx) ** 2
    return scipy.special.expit(d / soft)


def _blend(canvas: np.ndarray, mask: np.ndarray, color: np.ndarray) -> None:
    canvas *= 1.0 - mask[..., None]
    canvas += mask[..., None] * color


def synthesize_faces(
    n: int,
    resolution: int = 32,
    seed: int = 0,
    out_dir: str | Path | None = None,
) -> np.ndarray:
    """Procedurally drawn aligned face thumbnails, (n, res, res, 3) uint8.

    Hair, skin, eye, mouth, and background colors vary per image while the
    geometry stays aligned, giving each spatial part of the canonical
    facial layout its own independent appearance factor. Intended as a
    self-contained stand-in for an aligned face photo dataset.
    """
    if n < 1:
        raise ValidationError("need at least one face")
    rng = np.random.default_rng(seed)
    px = (np.arange(resolution) + 0.5) / resolution
    yy, xx = np.meshgrid(px, px, indexing="ij")
    out = np.empty((n, resolution, resolution, 3), dtype=np.uint8)

    hair_palette = np.array(
        [[0.10, 0.07, 0.05], [0.35, 0.22, 0.10], [0.78, 0.64, 0.35], [0.45, 0.16, 0.08], [0.55, 0.55, 0.58]]
    )
    for i in range(n):
        bg = rng.uniform(0.25, 0.95, size=3)
        skin = np.array([0.95, 0.80, 0.66]) * rng.uniform(0.55, 1.05) + rng.normal(0, 0.02, 3)
        hair = hair_palette[rng.integers(len(hair_palette))] * rng.uniform(0.8, 1.2)
        iris = rng.uniform(0.05, 0.45, size=3) * np.array([0.8, 0.9, 1.2])
        mouth = np.array([rng.uniform(0.55, 0.85), rng.uniform(0.15, 0.35), rng.uniform(0.18, 0.35)])
        jy = rng.normal(0, 0.008)
        jx = rng.normal(0, 0.008)

        canvas = np.ones((resolution, resolution, 3)) * bg
        face_cy, face_cx = 0.56 + jy, 0.50 + jx
        face_ry = rng.uniform(0.30, 0.34)
        face_rx = rng.uniform(0.23, 0.27)
        hair_mask = _soft_ellipse(yy, xx, face_cy - 0.10, face_cx, face_ry + 0.09, face_rx + 0.07)
        _blend(canvas, np.clip(hair_mask, 0, 1), np.clip(hair, 0, 1))
        face_mask = _soft_ellipse(yy, xx, face_cy, face_cx, face_ry, face_rx)
        _blend(canvas, face_mask, np.clip(skin, 0, 1))
        # hairline fringe across the forehead
        fringe_y = 0.30 + jy + rng.uniform(-0.02, 0.02)
        fringe = _soft_ellipse(yy, xx, fringe_y - 0.05, face_cx, 0.10, face_rx + 0.02) * face_mask
        _blend(canvas, fringe, np.clip(hair, 0, 1))

        eye_y = 0.47 + jy
        for ex in (-0.105, 0.105):
            white = _soft_ellipse(yy, xx, eye_y, face_cx + ex, 0.030, 0.045, soft=0.02)
            _blend(canvas, white, np.array([0.93, 0.93, 0.93]))
            pupil = _soft_ellipse(yy, xx, eye_y, face_cx + ex, 0.020, 0.022, soft=0.02)
            _blend(canvas, pupil, np.clip(iris, 0, 1))
            brow = _soft_ellipse(yy, xx, eye_y - 0.055, face_cx + ex, 0.012, 0.050, soft=0.02)
            _blend(canvas, brow, np.clip(hair * 0.7, 0, 1))

        nose = _soft_ellipse(yy, xx, 0.60 + jy, face_cx, 0.045, 0.020, soft=0.02)
        _blend(canvas, nose * 0.35, np.clip(skin * 0.82, 0, 1))
        mouth_mask = _soft_ellipse(yy, xx, 0.70 + jy, face_cx, 0.022, rng.uniform(0.05, 0.075), soft=0.02)
        _blend(canvas, mouth_mask, mouth)

        out[i] = np.clip(np.round(canvas * 255), 0, 255).astype(np.uint8)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i in range(n):
            save_png(out[i], out_dir / f"face_{i:05d}.png")
    return out
