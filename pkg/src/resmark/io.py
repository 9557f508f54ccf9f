"""Persistence: tensor containers, detector checkpoints, pipeline text, CSV.

Binary formats are little-endian and self-identifying (magic + version), and
reject foreign or truncated files with a diagnostic carrying the byte offset.
Tensor payloads are always float32 on disk, so round-trips of float32 models
are bit-exact.

RTNS tensor container:
    magic "RTNS" | u16 version | u32 count | count * record
    record: u16 name_len | name utf-8 | u32 ndim | ndim * u32 dims | f32 data

RSWT detector checkpoint:
    magic "RSWT" | u16 version | u32 header_len | header utf-8 JSON
    | u32 count | count * record   (records as in RTNS)
"""

from __future__ import annotations

import csv
import io as _io
import json
import struct

import numpy as np

from .autodiff import Tensor
from .detector import DetectorConfig, DetectorModel, build_detector
from .errors import FormatError, InvalidArgumentError
from .transforms import TransformPipeline, TransformSpec

TENSOR_MAGIC = b"RTNS"
CHECKPOINT_MAGIC = b"RSWT"
FORMAT_VERSION = 1


class _Reader:
    """Byte-counting reader that raises FormatError on truncation."""

    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated, expected {n} more bytes but only "
                f"{len(self.data) - self.pos} remain",
                offset=self.pos,
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _write_tensor_record(buf, name: str, arr: np.ndarray):
    encoded = name.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise InvalidArgumentError(f"tensor name too long: {name!r}")
    buf.write(struct.pack("<H", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        buf.write(struct.pack("<I", d))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_tensor_record(r: _Reader):
    name = r.take(r.u16()).decode("utf-8")
    ndim = r.u32()
    if ndim > 32:
        raise FormatError(f"{r.path}: implausible tensor rank {ndim}", offset=r.pos - 4)
    shape = tuple(r.u32() for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    raw = r.take(count * 4)
    arr = np.frombuffer(raw, dtype="<f4", count=count).reshape(shape).copy()
    return name, arr


def save_tensor_file(path, tensors):
    """Write named tensors ((name, array-or-Tensor) pairs or a dict) as RTNS."""
    items = list(tensors.items()) if isinstance(tensors, dict) else list(tensors)
    buf = _io.BytesIO()
    buf.write(TENSOR_MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(items)))
    for name, t in items:
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        _write_tensor_record(buf, name, arr)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_tensor_file(path):
    """Read an RTNS container; returns an ordered dict of name -> float32 array."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    magic = r.take(4)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {TENSOR_MAGIC!r}", offset=0)
    version = r.u16()
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    count = r.u32()
    out = {}
    for _ in range(count):
        name, arr = _read_tensor_record(r)
        out[name] = arr
    if r.pos != len(r.data):
        raise FormatError(
            f"{path}: {len(r.data) - r.pos} trailing bytes after payload", offset=r.pos
        )
    return out


def save_checkpoint(model: DetectorModel, path, meta: dict = None):
    """Persist a detector: JSON header (config + metadata) plus parameters."""
    header = {"config": model.config.to_dict(), "meta": dict(meta or {})}
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = _io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        _write_tensor_record(buf, name, p.data)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Rebuild a detector from an RSWT file; returns (model, metadata dict)."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    magic = r.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", offset=0)
    version = r.u16()
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=4)
    header_start = r.pos
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
        config = DetectorConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})", offset=header_start) from exc
    model = build_detector(config)
    count = r.u32()
    if count != len(model.params):
        raise FormatError(
            f"{path}: header architecture expects {len(model.params)} tensors, "
            f"file holds {count}",
            offset=r.pos - 4,
        )
    for _ in range(count):
        record_at = r.pos
        name, arr = _read_tensor_record(r)
        if name not in model.params:
            raise FormatError(f"{path}: unexpected tensor {name!r}", offset=record_at)
        slot = model.params[name]
        if slot.data.shape != arr.shape:
            raise FormatError(
                f"{path}: tensor {name!r} has shape {arr.shape}, architecture "
                f"expects {slot.data.shape}",
                offset=record_at,
            )
        slot.data = arr.astype(slot.data.dtype)
    return model, header["meta"]


# ---------------------------------------------------------------------------
# pipeline text format: one "kind key=value ..." line per spec, plus optional
# "mode <mode>" and "seed <int>" directives


def format_pipeline(pipe: TransformPipeline) -> str:
    lines = [f"mode {pipe.mode}", f"seed {pipe.seed}"]
    for spec in pipe.specs:
        parts = [spec.kind] + [f"{k}={v!r}" for k, v in spec.params]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def parse_pipeline(text: str) -> TransformPipeline:
    mode = "single_random"
    seed = 0
    specs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        head = fields[0]
        try:
            if head == "mode":
                mode = fields[1]
            elif head == "seed":
                seed = int(fields[1])
            else:
                params = {}
                for item in fields[1:]:
                    key, _, value = item.partition("=")
                    if not _:
                        raise ValueError(f"expected key=value, got {item!r}")
                    params[key] = float(value)
                specs.append(TransformSpec(head, tuple(params.items())))
        except (IndexError, ValueError, InvalidArgumentError) as exc:
            raise FormatError(f"pipeline config line {lineno}: {exc}") from exc
    if not specs:
        raise FormatError("pipeline config declares no transforms")
    return TransformPipeline(specs=tuple(specs), mode=mode, seed=seed)


def save_pipeline(pipe: TransformPipeline, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_pipeline(pipe))


def load_pipeline(path) -> TransformPipeline:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_pipeline(fh.read())


# ---------------------------------------------------------------------------
# CSV reports


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float) or isinstance(value, np.floating):
        return f"{float(value):.9g}"
    return str(value)


def write_report_csv(rows, path):
    """Write homogeneous mapping rows as CSV (floats at 9 significant digits)."""
    rows = list(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            fh.write("")
            return
        header = list(rows[0].keys())
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            if list(row.keys()) != header:
                raise InvalidArgumentError(
                    f"CSV rows must share one schema; {list(row.keys())} != {header}"
                )
            writer.writerow([_format_cell(row[k]) for k in header])


def write_report_csv_with_header(header, rows, path):
    """CSV writer for an explicit header, used when rows may be empty."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_format_cell(row[k]) for k in header])
