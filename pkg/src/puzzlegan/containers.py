"""Versioned binary container for named arrays plus a JSON header.

One format backs every on-disk artifact that stores raw numerics:
checkpoints, latent bundles, feature summaries, and the preprocessed
image store. Layout:

    bytes 0..3    magic b"PZGC"
    bytes 4..7    header length n (uint32, little-endian)
    bytes 8..8+n  UTF-8 JSON header
    remainder     raw array data, in header order, contiguous

The header is serialized with sorted keys and no whitespace, and arrays
are written in sorted-name order, so identical content always produces
identical bytes. Arrays are stored little-endian.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ValidationError

MAGIC = b"PZGC"
FORMAT_VERSION = 1

_HEADER_LEN_BYTES = 4


def _canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _le_dtype(dtype: np.dtype) -> np.dtype:
    dtype = np.dtype(dtype)
    if dtype.byteorder == ">":
        return dtype.newbyteorder("<")
    return dtype


def write_container(
    path: str | Path,
    kind: str,
    meta: Mapping[str, Any],
    arrays: Mapping[str, np.ndarray],
) -> Path:
    """Write named arrays with metadata to ``path``. Returns the path."""
    path = Path(path)
    names = sorted(arrays)
    entries = []
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(_le_dtype(arr.dtype), copy=False)
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "meta": dict(meta),
        "arrays": entries,
    }
    header_bytes = _canonical_json(header)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(_HEADER_LEN_BYTES, "little"))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    return path


def _read_header(path: Path) -> tuple[dict[str, Any], int]:
    """Read the JSON header; returns ``(header, data_start_offset)``."""
    if path.is_dir():
        raise ValidationError(f"{path}: expected a container file, found a directory")
    if not path.exists():
        raise ValidationError(f"{path}: does not exist")
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValidationError(f"{path}: not a container file (bad magic {magic!r})")
        n = int.from_bytes(fh.read(_HEADER_LEN_BYTES), "little")
        raw = fh.read(n)
    if len(raw) != n:
        raise ValidationError(f"{path}: truncated container header")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: corrupt container header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"{path}: unsupported container version {header.get('format_version')!r}"
        )
    return header, len(MAGIC) + _HEADER_LEN_BYTES + n


def read_header(path: str | Path) -> dict[str, Any]:
    """Read and validate only the JSON header of a container file."""
    return _read_header(Path(path))[0]


def read_container(
    path: str | Path,
    expected_kind: str | None = None,
    mmap: bool = False,
) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Read a container file; returns ``(meta, arrays)``.

    With ``mmap=True`` the arrays are read-only memory maps into the file,
    which gives random access to large stores without loading them.
    """
    path = Path(path)
    header, data_start = _read_header(path)
    if expected_kind is not None and header["kind"] != expected_kind:
        raise ValidationError(
            f"{path}: expected kind {expected_kind!r}, found {header['kind']!r}"
        )
    arrays: dict[str, np.ndarray] = {}
    offset = data_start
    file_size = path.stat().st_size
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        if offset + nbytes > file_size:
            raise ValidationError(f"{path}: truncated container (array {entry['name']})")
        if mmap:
            arr = np.memmap(path, dtype=dtype, mode="r", offset=offset, shape=shape)
        else:
            with open(path, "rb") as fh:
                fh.seek(offset)
                arr = np.frombuffer(fh.read(nbytes), dtype=dtype).reshape(shape).copy()
        arrays[entry["name"]] = arr
        offset += nbytes
    return header["meta"], arrays


def container_kind(path: str | Path) -> str:
    """Kind string of a container file, without reading its payload."""
    return str(read_header(path)["kind"])


def is_container(path: str | Path) -> bool:
    """True if ``path`` starts with the container magic."""
    try:
        with open(path, "rb") as fh:
            return fh.read(len(MAGIC)) == MAGIC
    except OSError:
        return False
