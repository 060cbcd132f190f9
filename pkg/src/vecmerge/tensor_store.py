"""Bit-exact reader/writer/validator for the tensor-archive format.

Layout: 8-byte little-endian unsigned header length N, then N bytes of
UTF-8 JSON `{name: {"dtype", "shape", "data_offsets"}}` (plus an optional
"__metadata__" string map), then the raw little-endian data region.

The writer is canonical: tensors are serialized in lexicographic name
order with offsets packed contiguously from 0, so equal checkpoints
produce byte-equal archives.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dtypes import DTYPE_SIZES, cast_values, decode, dtype_size, encode

METADATA_KEY = "__metadata__"


class ArchiveError(ValueError):
    """Malformed or inconsistent tensor archive."""


@dataclass(frozen=True)
class TensorSpec:
    name: str
    dtype: str
    shape: tuple[int, ...]
    data_offsets: tuple[int, int]

    @property
    def numel(self) -> int:
        return math.prod(self.shape)

    @property
    def nbytes(self) -> int:
        return self.numel * dtype_size(self.dtype)


@dataclass(frozen=True)
class Tensor:
    """One named tensor: archive dtype tag plus in-memory values."""

    dtype: str
    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)


@dataclass
class Checkpoint:
    """Immutable-by-convention ordered map of named tensors."""

    tensors: dict[str, Tensor] = field(default_factory=dict)
    metadata: dict[str, str] | None = None

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def values(self, name: str) -> np.ndarray:
        return self.tensors[name].values

    @staticmethod
    def from_arrays(arrays: dict[str, np.ndarray], dtype: str = "F64",
                    metadata: dict[str, str] | None = None) -> "Checkpoint":
        tensors = {name: Tensor(dtype, cast_values(np.asarray(a, dtype=np.float64), dtype))
                   for name, a in arrays.items()}
        return Checkpoint(tensors, metadata)


@dataclass
class ValidationReport:
    tensor_count: int = 0
    total_bytes: int = 0
    dtype_counts: dict[str, int] = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "dtype_counts": dict(sorted(self.dtype_counts.items())),
            "tensor_count": self.tensor_count,
            "total_bytes": self.total_bytes,
            "valid": self.valid,
            "violations": list(self.violations),
        }


def _no_duplicates(pairs):
    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise ArchiveError(f"duplicate tensor name {key!r} in header")
        seen.add(key)
    return dict(pairs)


def _parse_header(raw: bytes) -> tuple[dict, bytes]:
    if len(raw) < 8:
        raise ArchiveError(f"truncated input: {len(raw)} bytes, need at least 8 for header length")
    n = int.from_bytes(raw[:8], "little")
    if len(raw) < 8 + n:
        raise ArchiveError(f"truncated input: header length {n} exceeds remaining {len(raw) - 8} bytes")
    try:
        header = json.loads(raw[8:8 + n].decode("utf-8"), object_pairs_hook=_no_duplicates)
    except ArchiveError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"malformed JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise ArchiveError("malformed JSON header: top level must be an object")
    return header, raw[8 + n:]


def _spec_from_entry(name: str, entry) -> TensorSpec:
    if not isinstance(entry, dict) or set(entry) != {"dtype", "shape", "data_offsets"}:
        raise ArchiveError(f"tensor {name!r}: header entry must have exactly dtype/shape/data_offsets")
    dtype = entry["dtype"]
    if dtype not in DTYPE_SIZES:
        raise ArchiveError(f"tensor {name!r}: unknown dtype {dtype!r}")
    shape = entry["shape"]
    if not isinstance(shape, list) or any(not isinstance(s, int) or s < 0 for s in shape):
        raise ArchiveError(f"tensor {name!r}: shape must be a list of non-negative integers")
    offs = entry["data_offsets"]
    if (not isinstance(offs, list) or len(offs) != 2
            or any(not isinstance(o, int) or o < 0 for o in offs) or offs[1] < offs[0]):
        raise ArchiveError(f"tensor {name!r}: data_offsets must be [begin, end] with 0 <= begin <= end")
    return TensorSpec(name, dtype, tuple(shape), (offs[0], offs[1]))


def _check_specs(specs: list[TensorSpec], data_len: int) -> None:
    for spec in specs:
        if not spec.name or spec.name == METADATA_KEY:
            raise ArchiveError(f"invalid tensor name {spec.name!r}")
        begin, end = spec.data_offsets
        if end - begin != spec.nbytes:
            raise ArchiveError(
                f"tensor {spec.name!r}: byte range [{begin}, {end}) holds {end - begin} bytes "
                f"but numel {spec.numel} x {dtype_size(spec.dtype)} requires {spec.nbytes}")
        if end > data_len:
            raise ArchiveError(
                f"tensor {spec.name!r}: out-of-bounds byte range [{begin}, {end}) "
                f"in data region of {data_len} bytes")
    ordered = sorted(specs, key=lambda s: s.data_offsets)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.data_offsets[0] < prev.data_offsets[1]:
            raise ArchiveError(
                f"tensor {cur.name!r}: byte range [{cur.data_offsets[0]}, {cur.data_offsets[1]}) "
                f"overlaps {prev.name!r} ending at offset {prev.data_offsets[1]}")


def read_archive(path_or_bytes) -> Checkpoint:
    """Parse an archive from a path or a bytes object into a Checkpoint."""
    if isinstance(path_or_bytes, (bytes, bytearray, memoryview)):
        raw = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as fh:
            raw = fh.read()
    header, data = _parse_header(raw)

    metadata = header.pop(METADATA_KEY, None)
    if metadata is not None:
        if (not isinstance(metadata, dict)
                or any(not isinstance(k, str) or not isinstance(v, str) for k, v in metadata.items())):
            raise ArchiveError(f"{METADATA_KEY} must be a string-to-string map")

    specs = [_spec_from_entry(name, entry) for name, entry in header.items()]
    _check_specs(specs, len(data))

    tensors = {}
    for spec in specs:
        begin, end = spec.data_offsets
        tensors[spec.name] = Tensor(spec.dtype, decode(data[begin:end], spec.dtype, spec.shape))
    return Checkpoint(tensors, dict(metadata) if metadata else None)


def write_archive(checkpoint: Checkpoint, dtype_policy: str = "keep",
                  allow_nonfinite: bool = True) -> bytes:
    """Serialize a Checkpoint canonically; `dtype_policy` is "keep" or a dtype name."""
    if dtype_policy != "keep" and dtype_policy not in DTYPE_SIZES:
        raise ValueError(f"invalid dtype policy {dtype_policy!r}")

    header: dict[str, dict] = {}
    if checkpoint.metadata:
        header[METADATA_KEY] = dict(sorted(checkpoint.metadata.items()))
    chunks = []
    offset = 0
    for name in checkpoint.names():
        if not name or name == METADATA_KEY:
            raise ArchiveError(f"invalid tensor name {name!r}")
        tensor = checkpoint[name]
        dtype = tensor.dtype if dtype_policy == "keep" else dtype_policy
        values = tensor.values
        if dtype != tensor.dtype:
            values = cast_values(values.astype(np.float64), dtype, allow_nonfinite=allow_nonfinite)
        elif not allow_nonfinite and not np.isfinite(values).all():
            raise ValueError(f"tensor {name!r}: non-finite value with allow_nonfinite=False")
        raw = encode(values, dtype)
        header[name] = {
            "dtype": dtype,
            "shape": list(tensor.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        chunks.append(raw)
        offset += len(raw)

    header_bytes = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return len(header_bytes).to_bytes(8, "little") + header_bytes + b"".join(chunks)


def save_archive(checkpoint: Checkpoint, path, dtype_policy: str = "keep",
                 allow_nonfinite: bool = True) -> None:
    """Write atomically: serialize to a temp file, then rename into place."""
    blob = write_archive(checkpoint, dtype_policy, allow_nonfinite)
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def validate_archive(path) -> ValidationReport:
    """Inspect an archive, reporting format violations instead of raising."""
    report = ValidationReport()
    with open(path, "rb") as fh:
        raw = fh.read()

    if len(raw) < 8:
        report.violations.append("truncated input: missing 8-byte header length")
        return report
    n = int.from_bytes(raw[:8], "little")
    if len(raw) < 8 + n:
        report.violations.append(f"truncated input: header length {n} exceeds file size")
        return report

    def collect(pairs):
        out = {}
        for key, value in pairs:
            if key in out:
                report.violations.append(f"duplicate tensor name {key!r}")
            out[key] = value
        return out

    try:
        header = json.loads(raw[8:8 + n].decode("utf-8"), object_pairs_hook=collect)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        report.violations.append(f"malformed JSON header: {exc}")
        return report
    if not isinstance(header, dict):
        report.violations.append("malformed JSON header: top level must be an object")
        return report
    header.pop(METADATA_KEY, None)

    data_len = len(raw) - 8 - n
    specs = []
    for name, entry in header.items():
        try:
            spec = _spec_from_entry(name, entry)
            _check_specs([spec], data_len)
        except ArchiveError as exc:
            report.violations.append(str(exc))
            continue
        if not name or name == METADATA_KEY:
            report.violations.append(f"invalid tensor name {name!r}")
            continue
        specs.append(spec)

    report.tensor_count = len(specs)
    report.total_bytes = sum(s.nbytes for s in specs)
    for spec in specs:
        report.dtype_counts[spec.dtype] = report.dtype_counts.get(spec.dtype, 0) + 1

    ordered = sorted(specs, key=lambda s: s.data_offsets)
    cursor = 0
    for spec in ordered:
        begin, end = spec.data_offsets
        if begin < cursor:
            report.violations.append(
                f"tensor {spec.name!r}: byte range [{begin}, {end}) overlaps preceding tensor")
        elif begin > cursor:
            report.violations.append(
                f"non-contiguous data: gap of {begin - cursor} bytes before tensor {spec.name!r}")
        cursor = max(cursor, end)
    if specs and cursor != data_len:
        report.violations.append(
            f"non-contiguous data: {data_len - cursor} trailing bytes after last tensor")
    return report
