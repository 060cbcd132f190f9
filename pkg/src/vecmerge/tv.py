"""Task-vector extraction and scaled vector-addition merging.

All arithmetic accumulates in float64 regardless of storage dtype; the
cast back to the base tensor's dtype happens exactly once per output
tensor. Large tensors are processed in fixed-size chunks so merge
overhead stays small relative to checkpoint size.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dtypes import cast_values, memory_dtype
from .tensor_store import Checkpoint, Tensor

TASK_VECTOR_KIND = "task_vector"
KIND_KEY = "vecmerge.kind"

_CHUNK = 1 << 20  # elements per accumulation chunk

MISMATCH_MODES = ("error", "ignore", "copy_from_finetuned")


class MergeError(ValueError):
    """Incompatible operands for a merge operation."""


@dataclass
class TaskVector:
    """Per-tensor float64 deltas (fine-tuned minus base).

    `extras` carries fine-tuned-only tensors (e.g. task heads) under the
    copy_from_finetuned policy, for verbatim re-attachment on apply.
    `ignored` lists tensors dropped under the ignore policy.
    """

    deltas: dict[str, np.ndarray] = field(default_factory=dict)
    extras: dict[str, Tensor] = field(default_factory=dict)
    ignored: list[str] = field(default_factory=list)
    origin: str = "constructed"

    def names(self) -> list[str]:
        return sorted(self.deltas)

    def to_checkpoint(self) -> Checkpoint:
        tensors = {name: Tensor("F64", d) for name, d in self.deltas.items()}
        return Checkpoint(tensors, {KIND_KEY: TASK_VECTOR_KIND, "vecmerge.origin": self.origin})

    @staticmethod
    def from_checkpoint(ckpt: Checkpoint, origin: str = "loaded from archive") -> "TaskVector":
        deltas = {name: ckpt.values(name).astype(np.float64) for name in ckpt.names()}
        for d in deltas.values():
            d.setflags(write=False)
        return TaskVector(deltas=deltas, origin=origin)

    @staticmethod
    def from_arrays(arrays: dict[str, np.ndarray], origin: str = "constructed") -> "TaskVector":
        deltas = {}
        for name, a in arrays.items():
            d = np.asarray(a, dtype=np.float64)
            d.setflags(write=False)
            deltas[name] = d
        return TaskVector(deltas=deltas, origin=origin)


def is_task_vector_archive(ckpt: Checkpoint) -> bool:
    return bool(ckpt.metadata) and ckpt.metadata.get(KIND_KEY) == TASK_VECTOR_KIND


def extract_task_vector(base: Checkpoint, finetuned: Checkpoint,
                        policy: str = "error") -> TaskVector:
    """delta = finetuned - base over the shared name/shape intersection.

    Tensors present in only one checkpoint, or with differing shapes, are
    handled per `policy`: error aborts, ignore drops them, and
    copy_from_finetuned carries fine-tuned-side tensors as extras.
    """
    if policy not in MISMATCH_MODES:
        raise ValueError(f"unknown mismatch policy {policy!r}")
    shared = [n for n in finetuned.names()
              if n in base and base[n].shape == finetuned[n].shape]
    if not shared:
        raise MergeError("no shared tensors with matching shapes between base and finetuned")
    mismatched = sorted(
        set(base.names()).symmetric_difference(finetuned.names())
        | {n for n in finetuned.names() if n in base and base[n].shape != finetuned[n].shape})
    if mismatched and policy == "error":
        raise MergeError(f"mismatched tensors (policy=error): {', '.join(mismatched)}")

    tv = TaskVector(origin=f"extract(base={len(base)} tensors, finetuned={len(finetuned)} tensors)")
    for name in shared:
        d = finetuned.values(name).astype(np.float64) - base.values(name).astype(np.float64)
        d.setflags(write=False)
        tv.deltas[name] = d
    if policy == "copy_from_finetuned":
        for name in mismatched:
            if name in finetuned:
                tv.extras[name] = finetuned[name]
            else:
                tv.ignored.append(name)
    else:
        tv.ignored = mismatched
    return tv


def scale(tv: TaskVector, lam: float) -> TaskVector:
    """Multiply every delta by `lam` (float64). lam=-1 negates the vector."""
    if not np.isfinite(lam):
        raise ValueError(f"non-finite scale factor {lam}")
    out = TaskVector(extras=dict(tv.extras), ignored=list(tv.ignored),
                     origin=f"scale({tv.origin}, {lam})")
    for name, d in tv.deltas.items():
        s = d * float(lam)
        s.setflags(write=False)
        out.deltas[name] = s
    return out


def add_vectors(tvs: list[TaskVector]) -> TaskVector:
    """Element-wise float64 sum over the union of names, in list order."""
    if not tvs:
        raise MergeError("add_vectors requires at least one task vector")
    out = TaskVector(origin="sum of {} vectors".format(len(tvs)))
    for tv in tvs:
        for name, d in tv.deltas.items():
            if name in out.deltas:
                if out.deltas[name].shape != d.shape:
                    raise MergeError(
                        f"tensor {name!r}: shape conflict {out.deltas[name].shape} vs {d.shape}")
                out.deltas[name] = out.deltas[name] + d
            else:
                out.deltas[name] = d.copy()
        for name, t in tv.extras.items():
            out.extras.setdefault(name, t)
    for d in out.deltas.values():
        d.setflags(write=False)
    return out


def _merge_tensor(base: Tensor, deltas: list[tuple[np.ndarray, float]]) -> Tensor:
    """Chunked base + sum(lam*delta) in float64, one cast to base dtype."""
    flat_base = base.values.reshape(-1)
    out = np.empty(flat_base.shape, dtype=memory_dtype(base.dtype))
    for start in range(0, flat_base.size, _CHUNK):
        sl = slice(start, min(start + _CHUNK, flat_base.size))
        acc = flat_base[sl].astype(np.float64)
        for delta, lam in deltas:
            acc += delta.reshape(-1)[sl] * lam
        out[sl] = cast_values(acc, base.dtype)
    return Tensor(base.dtype, out.reshape(base.shape))


def apply(base: Checkpoint, tv: TaskVector, threads: int = 1) -> Checkpoint:
    """out = base + tv, cast back per-tensor to the base dtype.

    Tensors untouched by tv are copied bit-exactly; extras are appended
    verbatim.
    """
    for name, d in tv.deltas.items():
        if name not in base:
            raise MergeError(f"task vector tensor {name!r} missing from base")
        if base[name].shape != d.shape:
            raise MergeError(
                f"tensor {name!r}: shape mismatch base {base[name].shape} vs delta {d.shape}")

    def one(name: str) -> Tensor:
        tensor = base[name]
        if name in tv.deltas:
            return _merge_tensor(tensor, [(tv.deltas[name], 1.0)])
        return tensor

    names = base.names()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            merged = dict(zip(names, pool.map(one, names)))
    else:
        merged = {name: one(name) for name in names}
    for name, t in tv.extras.items():
        if name not in merged:
            merged[name] = t
    return Checkpoint(merged, dict(base.metadata) if base.metadata else None)


def tv_merge(base: Checkpoint, weighted: list[tuple[TaskVector, float]],
             threads: int = 1) -> Checkpoint:
    """Scaled vector addition: out = base + sum(lam_i * tv_i).

    Accumulation happens once in float64 across all vectors, followed by
    a single cast per tensor (never iterated casting).
    """
    if not weighted:
        raise MergeError("tv_merge requires at least one (vector, weight) pair")
    for _, lam in weighted:
        if not np.isfinite(lam):
            raise ValueError(f"non-finite merge weight {lam}")
    per_name: dict[str, list[tuple[np.ndarray, float]]] = {}
    extras: dict[str, Tensor] = {}
    for tv, lam in weighted:
        for name, d in tv.deltas.items():
            if name not in base:
                raise MergeError(f"task vector tensor {name!r} missing from base")
            if base[name].shape != d.shape:
                raise MergeError(
                    f"tensor {name!r}: shape mismatch base {base[name].shape} vs delta {d.shape}")
            per_name.setdefault(name, []).append((d, float(lam)))
        for name, t in tv.extras.items():
            extras.setdefault(name, t)

    def one(name: str) -> Tensor:
        tensor = base[name]
        if name in per_name:
            return _merge_tensor(tensor, per_name[name])
        return tensor

    names = base.names()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            merged = dict(zip(names, pool.map(one, names)))
    else:
        merged = {name: one(name) for name in names}
    for name, t in extras.items():
        if name not in merged:
            merged[name] = t
    return Checkpoint(merged, dict(base.metadata) if base.metadata else None)
