"""Array, image, score and manifest I/O in fixed, documented formats.

Arrays travel as NPY version 1.0 files (magic ``\\x93NUMPY``, little-endian,
C order) restricted to 1-4 dimensions and the dtypes float32 (``<f4``),
float64 (``<f8``) and uint8 (``|u1``).  Scores and labels are also accepted
as RFC-4180 CSV with an ``id,score`` / ``id,label`` header.  Images are 8-bit
RGB PNG only; alpha or 16-bit files are rejected rather than converted.
Dataset manifests are UTF-8 JSON with a top-level ``"version": 1`` field.

All readers and writers are pure with respect to process state, so
concurrent reads of distinct files are safe.
"""

from __future__ import annotations

import ast
import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    FormatError,
    ManifestError,
    MissingFileError,
    ShapeError,
    TruncationError,
    UnsupportedDtypeError,
    UnsupportedImageError,
    ValidationError,
)

_NPY_MAGIC = b"\x93NUMPY"
_SUPPORTED_DESCRS = {
    "<f4": np.dtype("<f4"),
    "<f8": np.dtype("<f8"),
    "|u1": np.dtype("|u1"),
}
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

MANIFEST_VERSION = 1


def read_array(path, allow_nonfinite: bool = False) -> np.ndarray:
    """Read an NPY v1.0 file into a C-order array.

    Only 1-4 dimensional ``<f4``/``<f8``/``|u1`` arrays are accepted.  Float
    payloads must be finite unless ``allow_nonfinite`` is set.
    """
    with open(path, "rb") as fh:
        raw = fh.read()

    if len(raw) < len(_NPY_MAGIC) or raw[: len(_NPY_MAGIC)] != _NPY_MAGIC:
        raise FormatError(f"{path}: not an NPY file (bad magic)")
    pos = len(_NPY_MAGIC)
    if len(raw) < pos + 2:
        raise TruncationError(f"{path}: file ends inside the version field")
    major, minor = raw[pos], raw[pos + 1]
    if (major, minor) != (1, 0):
        raise FormatError(f"{path}: unsupported NPY version {major}.{minor}")
    pos += 2
    if len(raw) < pos + 2:
        raise TruncationError(f"{path}: file ends inside the header length")
    (header_len,) = struct.unpack("<H", raw[pos : pos + 2])
    pos += 2
    if len(raw) < pos + header_len:
        raise TruncationError(f"{path}: file ends inside the header")
    header = raw[pos : pos + header_len]
    pos += header_len

    if not header.endswith(b"\n"):
        raise FormatError(f"{path}: header is not newline-terminated")
    try:
        meta = ast.literal_eval(header.decode("ascii").strip())
    except (ValueError, SyntaxError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: unparseable header ({exc})") from exc
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"{path}: header must define descr, fortran_order, shape")

    descr = meta["descr"]
    if descr not in _SUPPORTED_DESCRS:
        raise UnsupportedDtypeError(
            f"{path}: dtype {descr!r} not supported (expected one of "
            f"{sorted(_SUPPORTED_DESCRS)})"
        )
    if meta["fortran_order"] is not False:
        raise FormatError(f"{path}: only C-order (fortran_order=False) is supported")
    shape = meta["shape"]
    if (
        not isinstance(shape, tuple)
        or not all(isinstance(d, int) and d >= 0 for d in shape)
    ):
        raise FormatError(f"{path}: malformed shape {shape!r}")
    if not 1 <= len(shape) <= 4:
        raise FormatError(
            f"{path}: {len(shape)}-dimensional arrays are not supported (need 1-4 dims)"
        )

    dtype = _SUPPORTED_DESCRS[descr]
    count = 1
    for d in shape:
        count *= d
    nbytes = count * dtype.itemsize
    payload = raw[pos:]
    if len(payload) < nbytes:
        raise TruncationError(
            f"{path}: payload has {len(payload)} bytes, header declares {nbytes}"
        )
    if len(payload) > nbytes:
        raise FormatError(f"{path}: {len(payload) - nbytes} trailing bytes after payload")

    arr = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if not allow_nonfinite and arr.dtype.kind == "f" and not np.isfinite(arr).all():
        raise ValidationError(f"{path}: payload contains non-finite values")
    return arr


def write_array(path, arr: np.ndarray, allow_nonfinite: bool = False) -> None:
    """Write ``arr`` as a canonical NPY v1.0 file (inverse of :func:`read_array`)."""
    arr = np.asarray(arr)
    if not 1 <= arr.ndim <= 4:
        raise ShapeError(f"cannot write {arr.ndim}-dimensional array (need 1-4 dims)")
    descr = None
    for cand, dtype in _SUPPORTED_DESCRS.items():
        if arr.dtype == dtype:
            descr = cand
            break
    if descr is None:
        raise UnsupportedDtypeError(
            f"dtype {arr.dtype} not supported (expected one of {sorted(_SUPPORTED_DESCRS)})"
        )
    if not allow_nonfinite and arr.dtype.kind == "f" and not np.isfinite(arr).all():
        raise ValidationError("array contains non-finite values")

    header = "{'descr': %r, 'fortran_order': False, 'shape': %r, }" % (
        descr,
        tuple(int(d) for d in arr.shape),
    )
    # Pad so that magic + version + length field + header is a multiple of 64.
    unpadded = len(_NPY_MAGIC) + 2 + 2 + len(header) + 1
    header = header + " " * (-unpadded % 64) + "\n"
    with open(path, "wb") as fh:
        fh.write(_NPY_MAGIC)
        fh.write(b"\x01\x00")
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(arr).tobytes(order="C"))


def read_image(path) -> np.ndarray:
    """Read an 8-bit RGB PNG into an (H, W, 3) float64 array in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 33 or raw[:8] != _PNG_SIGNATURE:
        raise UnsupportedImageError(f"{path}: not a PNG file")
    length, chunk_type = struct.unpack(">I4s", raw[8:16])
    if chunk_type != b"IHDR" or length != 13:
        raise UnsupportedImageError(f"{path}: missing IHDR chunk")
    _, _, bit_depth, color_type = struct.unpack(">IIBB", raw[16:26])
    if bit_depth != 8:
        raise UnsupportedImageError(f"{path}: {bit_depth}-bit PNG not supported (8-bit only)")
    if color_type != 2:
        raise UnsupportedImageError(
            f"{path}: PNG color type {color_type} not supported (truecolor RGB only; "
            "alpha and palette images are rejected)"
        )
    with Image.open(io.BytesIO(raw)) as img:
        pixels = np.asarray(img, dtype=np.float64)
    return pixels / 255.0


def write_image(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) array as 8-bit RGB PNG.

    Values are clamped to [0, 1] and quantized with round(v * 255).
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got shape {image.shape}")
    if not np.isfinite(image).all():
        raise ValidationError("image contains non-finite values")
    quantized = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


def write_scores_csv(path, ids, scores) -> None:
    """Write an ``id,score`` CSV; floats carry 9 significant digits."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = [str(i) for i in ids]
    if len(ids) != scores.shape[0]:
        raise ShapeError(f"{len(ids)} ids but {scores.shape[0]} scores")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "score"])
        for item_id, score in zip(ids, scores):
            writer.writerow([item_id, format(score, ".9g")])


def read_scores_csv(path) -> tuple[list[str], np.ndarray]:
    """Read an ``id,score`` CSV; returns (ids, float64 scores)."""
    return _read_two_column_csv(path, "score", float)


def write_labels_csv(path, ids, labels) -> None:
    """Write an ``id,label`` CSV of binary {0, 1} labels."""
    labels = np.asarray(labels)
    ids = [str(i) for i in ids]
    if len(ids) != labels.shape[0]:
        raise ShapeError(f"{len(ids)} ids but {labels.shape[0]} labels")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"])
        for item_id, label in zip(ids, labels):
            writer.writerow([item_id, int(label)])


def read_labels_csv(path) -> tuple[list[str], np.ndarray]:
    """Read an ``id,label`` CSV; labels must be 0 or 1."""
    def parse_label(text: str) -> int:
        value = int(text)
        if value not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {value}")
        return value

    ids, values = _read_two_column_csv(path, "label", parse_label)
    return ids, values.astype(np.int64)


def _read_two_column_csv(path, value_column, parse):
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        if header != ["id", value_column]:
            raise FormatError(
                f"{path}: expected header ['id', '{value_column}'], got {header}"
            )
        ids: list[str] = []
        values: list[float] = []
        for row_num, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise FormatError(f"{path}:{row_num}: expected 2 columns, got {len(row)}")
            try:
                values.append(parse(row[1]))
            except ValueError as exc:
                raise FormatError(f"{path}:{row_num}: bad {value_column}: {exc}") from exc
            ids.append(row[0])
    return ids, np.asarray(values, dtype=np.float64)


@dataclass(frozen=True)
class ManifestEntry:
    """One dataset item: an id plus resolved paths to its arrays."""

    id: str
    logits_path: Path
    mask_path: Path | None = None
    label: int | None = None


@dataclass(frozen=True)
class DatasetManifest:
    entries: list[ManifestEntry]
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(path) -> DatasetManifest:
    """Load and validate a JSON dataset manifest.

    Relative paths are resolved against the manifest's directory.  Entries
    are returned in file order; ids must be unique and every referenced file
    must exist.
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestError(f"{path}: cannot parse manifest ({exc})") from exc
    if not isinstance(payload, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    if payload.get("version") != MANIFEST_VERSION:
        raise ManifestError(
            f"{path}: manifest version {payload.get('version')!r} not supported "
            f"(expected {MANIFEST_VERSION})"
        )
    raw_entries = payload.get("entries")
    if not isinstance(raw_entries, list):
        raise ManifestError(f"{path}: manifest must have an 'entries' list")
    metadata = payload.get("metadata", {})
    if not isinstance(metadata, dict):
        raise ManifestError(f"{path}: 'metadata' must be an object")

    base = path.parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for i, raw in enumerate(raw_entries):
        where = f"{path}: entry {i}"
        if not isinstance(raw, dict):
            raise ManifestError(f"{where}: must be an object")
        item_id = raw.get("id")
        if not isinstance(item_id, str) or not item_id:
            raise ManifestError(f"{where}: missing or empty 'id'")
        if item_id in seen:
            raise ManifestError(f"{path}: duplicate id {item_id!r}")
        seen.add(item_id)
        logits_raw = raw.get("logits_path")
        if not isinstance(logits_raw, str) or not logits_raw:
            raise ManifestError(f"{where}: missing 'logits_path'")
        logits_path = _resolve(base, logits_raw)
        if not logits_path.is_file():
            raise MissingFileError(f"{where}: no such file {logits_path}")
        mask_path = None
        if raw.get("mask_path") is not None:
            if not isinstance(raw["mask_path"], str):
                raise ManifestError(f"{where}: 'mask_path' must be a string")
            mask_path = _resolve(base, raw["mask_path"])
            if not mask_path.is_file():
                raise MissingFileError(f"{where}: no such file {mask_path}")
        label = raw.get("label")
        if label is not None and label not in (0, 1):
            raise ManifestError(f"{where}: label must be 0 or 1, got {label!r}")
        entries.append(ManifestEntry(item_id, logits_path, mask_path, label))
    return DatasetManifest(entries=entries, metadata=metadata)


def save_manifest(path, entries, metadata=None) -> None:
    """Write a manifest; ``entries`` are (id, logits_path[, mask_path]) tuples."""
    path = Path(path)
    records = []
    for entry in entries:
        item_id, logits_path = entry[0], entry[1]
        record = {"id": str(item_id), "logits_path": str(logits_path)}
        if len(entry) > 2 and entry[2] is not None:
            record["mask_path"] = str(entry[2])
        records.append(record)
    payload = {"version": MANIFEST_VERSION, "entries": records,
               "metadata": dict(metadata or {})}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _resolve(base: Path, raw: str) -> Path:
    candidate = Path(raw)
    return candidate if candidate.is_absolute() else base / candidate
