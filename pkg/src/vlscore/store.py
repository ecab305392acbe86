"""Bit-exact matrix and annotation I/O.

Matrix file layout (all integers little-endian):

    magic   4 bytes  ``VLEB``
    version u32      1
    dtype   u32      0 (float32)
    rows    u64
    cols    u64
    keylen  u64      byte length of the key block
    keys    rows * [u32 length + UTF-8 bytes]
    data    rows*cols float32, row-major

Row keys live in the file so matrices are self-describing; a score matrix
additionally stores its column keys in a ``<path>.cols`` sidecar (one key
per line). Annotation records are JSON Lines; the field schema is pinned in
``schemas/records.schema.json``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    BoxOutOfBoundsError,
    IoFailureError,
    KeyMismatchError,
    LabelMissingForBoxError,
    ParseError,
    ShapeOverflowError,
    TruncatedFileError,
    UnsupportedVersionError,
)

MAGIC = b"VLEB"
VERSION = 1
DTYPE_F32 = 0
_F32 = np.dtype("<f4")
_MAX_CELLS = 1 << 40  # guard against absurd header shapes


@dataclass
class EmbeddingMatrix:
    """Dense float32 matrix with one string key per row."""

    row_keys: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self):
        self.row_keys = tuple(self.row_keys)
        self.data = np.ascontiguousarray(self.data, dtype=_F32)
        if self.data.ndim != 2:
            raise IoFailureError(f"matrix must be 2-D, got {self.data.ndim}-D")
        if len(self.row_keys) != self.data.shape[0]:
            raise IoFailureError(
                f"{len(self.row_keys)} keys for {self.data.shape[0]} rows"
            )
        if len(set(self.row_keys)) != len(self.row_keys):
            raise IoFailureError("row keys are not unique")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row(self, key: str) -> np.ndarray:
        return self.data[self.row_keys.index(key)]


@dataclass
class ScoreMatrix:
    """images x texts score matrix; rows keyed by image, columns by text."""

    image_keys: tuple[str, ...]
    text_keys: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self):
        self.image_keys = tuple(self.image_keys)
        self.text_keys = tuple(self.text_keys)
        self.data = np.ascontiguousarray(self.data, dtype=_F32)
        if self.data.shape != (len(self.image_keys), len(self.text_keys)):
            raise IoFailureError(
                f"data shape {self.data.shape} != "
                f"({len(self.image_keys)}, {len(self.text_keys)})"
            )

    @property
    def n_images(self) -> int:
        return self.data.shape[0]

    @property
    def n_texts(self) -> int:
        return self.data.shape[1]

    def column(self, text_key: str) -> np.ndarray:
        return self.data[:, self.text_keys.index(text_key)]


def write_matrix(m: EmbeddingMatrix | ScoreMatrix, path) -> None:
    """Write `m` in the binary format above. Round-trips bit-identically."""
    if isinstance(m, ScoreMatrix):
        keys, data = m.image_keys, m.data
    else:
        keys, data = m.row_keys, m.data
    key_block = b"".join(
        struct.pack("<I", len(kb)) + kb for kb in (k.encode("utf-8") for k in keys)
    )
    header = MAGIC + struct.pack(
        "<IIQQQ", VERSION, DTYPE_F32, data.shape[0], data.shape[1], len(key_block)
    )
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(key_block)
            fh.write(np.ascontiguousarray(data, dtype=_F32).tobytes(order="C"))
        if isinstance(m, ScoreMatrix):
            with open(str(path) + ".cols", "w", encoding="utf-8") as fh:
                fh.write("".join(k + "\n" for k in m.text_keys))
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def read_matrix(path) -> EmbeddingMatrix | ScoreMatrix:
    """Read a matrix file; returns a ScoreMatrix when a `.cols` sidecar exists."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc

    if len(blob) < 36:
        raise TruncatedFileError(f"{path}: {len(blob)} bytes is shorter than header")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: magic {blob[:4]!r} != {MAGIC!r}")
    version, dtype, rows, cols, key_len = struct.unpack("<IIQQQ", blob[4:36])
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: version {version}")
    if dtype != DTYPE_F32:
        raise UnsupportedVersionError(f"{path}: dtype code {dtype}")
    if rows * cols > _MAX_CELLS:
        raise ShapeOverflowError(f"{path}: {rows} x {cols} exceeds supported size")

    offset = 36
    keys = []
    for i in range(rows):
        if offset + 4 > len(blob):
            raise TruncatedFileError(f"{path}: key block ends at key {i}")
        (klen,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if offset + klen > len(blob):
            raise TruncatedFileError(f"{path}: key {i} body truncated")
        keys.append(blob[offset : offset + klen].decode("utf-8"))
        offset += klen
    if offset - 36 != key_len:
        raise ShapeOverflowError(
            f"{path}: key block is {offset - 36} bytes, header says {key_len}"
        )

    n_bytes = rows * cols * 4
    if len(blob) - offset < n_bytes:
        raise TruncatedFileError(
            f"{path}: {len(blob) - offset} data bytes, expected {n_bytes}"
        )
    data = np.frombuffer(blob[offset : offset + n_bytes], dtype=_F32).reshape(
        rows, cols
    )

    cols_path = str(path) + ".cols"
    try:
        with open(cols_path, encoding="utf-8") as fh:
            text_keys = tuple(line.rstrip("\n") for line in fh)
    except FileNotFoundError:
        return EmbeddingMatrix(row_keys=tuple(keys), data=data.copy())
    return ScoreMatrix(image_keys=tuple(keys), text_keys=text_keys, data=data.copy())


@dataclass(frozen=True)
class Box:
    label: str
    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass
class ImageRecord:
    """One image's labels, per-label boxes, captions, and pixel size."""

    image_id: str
    width: int
    height: int
    labels: tuple[str, ...]
    boxes: tuple[Box, ...] = ()
    captions: tuple[str, ...] = ()

    def label_area_fraction(self, label: str) -> float:
        """Summed box area of `label` over image area, clamped to 1."""
        total = sum(b.area for b in self.boxes if b.label == label)
        return min(1.0, total / (self.width * self.height))


def _validate_record(rec: ImageRecord, line_no=None) -> None:
    if rec.width <= 0 or rec.height <= 0:
        raise ParseError(
            f"record {rec.image_id!r}: non-positive size "
            f"{rec.width}x{rec.height}",
            line_no,
        )
    labels = set(rec.labels)
    for b in rec.boxes:
        if b.label not in labels:
            raise LabelMissingForBoxError(
                f"record {rec.image_id!r}: box label {b.label!r} not in labels",
                line_no,
            )
        if b.w < 0 or b.h < 0 or b.x < 0 or b.y < 0 or (
            b.x + b.w > rec.width or b.y + b.h > rec.height
        ):
            raise BoxOutOfBoundsError(
                f"record {rec.image_id!r}: box {b} outside "
                f"{rec.width}x{rec.height}",
                line_no,
            )


def read_records(path) -> list[ImageRecord]:
    """Parse a JSON-Lines record file; raises a positioned error on any bad line."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no) from exc
            try:
                rec = ImageRecord(
                    image_id=obj["image_id"],
                    width=int(obj["width"]),
                    height=int(obj["height"]),
                    labels=tuple(obj["labels"]),
                    boxes=tuple(
                        Box(
                            label=b["label"],
                            x=float(b["x"]),
                            y=float(b["y"]),
                            w=float(b["w"]),
                            h=float(b["h"]),
                        )
                        for b in obj.get("boxes", [])
                    ),
                    captions=tuple(obj.get("captions", [])),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad record field: {exc}", line_no) from exc
            _validate_record(rec, line_no)
            records.append(rec)
    return records


def write_records(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            _validate_record(rec)
            obj = {
                "image_id": rec.image_id,
                "width": rec.width,
                "height": rec.height,
                "labels": list(rec.labels),
                "boxes": [
                    {"label": b.label, "x": b.x, "y": b.y, "w": b.w, "h": b.h}
                    for b in rec.boxes
                ],
                "captions": list(rec.captions),
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def check_alignment(m: EmbeddingMatrix, records: list[ImageRecord]) -> None:
    """Assert matrix row keys equal record image ids, in order."""
    n = max(len(m.row_keys), len(records))
    for i in range(n):
        mk = m.row_keys[i] if i < len(m.row_keys) else None
        rk = records[i].image_id if i < len(records) else None
        if mk != rk:
            raise KeyMismatchError(i, mk, rk)
