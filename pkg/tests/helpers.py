"""Shared test helpers: random checkpoint generation and naive references."""

import math

import numpy as np

from vecmerge import Checkpoint, Tensor
from vecmerge.dtypes import cast_values

DTYPES = ["F64", "F32", "F16", "BF16"]


def random_checkpoint(rng: np.random.Generator, n_tensors=None, max_numel=64,
                      dtypes=DTYPES) -> Checkpoint:
    """Checkpoint with random finite values exactly representable in the
    chosen storage dtype (so round-trips can be compared bit-exactly)."""
    n = n_tensors if n_tensors is not None else int(rng.integers(1, 6))
    ckpt = Checkpoint()
    for i in range(n):
        name = f"t{i:03d}"
        ndim = int(rng.integers(0, 3))
        shape = tuple(int(rng.integers(0, 5)) for _ in range(ndim))
        if math.prod(shape) > max_numel:
            shape = (max_numel,)
        dtype = dtypes[int(rng.integers(len(dtypes)))]
        values = rng.normal(0.0, 2.0, size=shape)
        ckpt.tensors[name] = Tensor(dtype, cast_values(values, dtype))
    return ckpt


# --- independent naive TIES reference (per-element loops, no vectorization) ---

def naive_trim(values, density):
    flat = [float(v) for v in np.asarray(values).reshape(-1)]
    k = math.ceil(density * len(flat))
    order = sorted(range(len(flat)), key=lambda i: (-abs(flat[i]), i))
    keep = set(order[:k])
    return [flat[i] if i in keep else 0.0 for i in range(len(flat))]


def _sign(x):
    return (x > 0) - (x < 0)


def naive_ties_vector(vector_lists, weights, density):
    """Trim, elect, disjoint-merge over flat per-vector lists of equal
    length. Returns (merged list, elected sign list)."""
    trimmed = [naive_trim(v, density) for v in vector_lists]
    n = len(trimmed[0])
    merged = []
    gammas = []
    for p in range(n):
        total = 0.0
        for t in range(len(trimmed)):
            total += weights[t] * trimmed[t][p]
        gamma = _sign(total)
        gammas.append(gamma)
        if gamma == 0:
            merged.append(0.0)
            continue
        num = 0.0
        den = 0.0
        for t in range(len(trimmed)):
            if _sign(trimmed[t][p]) == gamma:
                num += weights[t] * trimmed[t][p]
                den += weights[t]
        merged.append(num / den if den else 0.0)
    return merged, gammas
