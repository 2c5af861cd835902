"""Small numerical substrate shared by every other module.

All arrays are float64. Randomness comes from numpy's Philox4x64 generator,
a counter-based bit generator, so every stochastic step is reproducible from a
root seed plus a purpose label (see :func:`make_rng`).
"""

from __future__ import annotations

import zlib
from collections.abc import Iterable

import numpy as np

from ipll.errors import DimensionError, IPLLError

FLOAT = np.float64


def make_rng(seed: int, *purpose: str | int) -> np.random.Generator:
    """Return an independent Philox stream derived from ``seed`` and ``purpose``.

    String parts of ``purpose`` are hashed with CRC32 so the derivation does
    not depend on Python's randomized ``hash``.
    """
    key = tuple(zlib.crc32(p.encode()) if isinstance(p, str) else int(p) for p in purpose)
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(seq))


def check_finite(arr: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise IPLLError(f"non-finite values in {what}")
    return arr


def l2_distance(a, b) -> float:
    a = np.asarray(a, dtype=FLOAT)
    b = np.asarray(b, dtype=FLOAT)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sqrt(np.dot(diff, diff)))


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances between rows of ``a`` (n, d) and rows of ``b`` (m, d)."""
    a = np.atleast_2d(np.asarray(a, dtype=FLOAT))
    b = np.atleast_2d(np.asarray(b, dtype=FLOAT))
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max-subtraction. Accepts a vector or a matrix."""
    z = np.asarray(logits, dtype=FLOAT)
    if z.size == 0 or z.shape[-1] == 0:
        raise IPLLError("softmax of an empty vector")
    check_finite(z, "logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def argmax_restricted(values, allowed: Iterable[int]) -> int:
    """Index in ``allowed`` with the largest value; ties go to the smallest index."""
    values = np.asarray(values, dtype=FLOAT)
    idx = sorted(set(int(i) for i in allowed))
    if not idx:
        raise IPLLError("argmax over an empty index set")
    if idx[0] < 0 or idx[-1] >= values.shape[0]:
        raise IndexError(f"allowed indices out of range for length {values.shape[0]}")
    sub = values[idx]
    return idx[int(np.argmax(sub))]


def masked_argmax(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise argmax over entries where ``mask`` is true (first index wins ties)."""
    values = np.atleast_2d(values)
    mask = np.atleast_2d(mask)
    if not np.all(mask.any(axis=1)):
        raise IPLLError("argmax over an empty index set")
    masked = np.where(mask, values, -np.inf)
    return np.argmax(masked, axis=1)


def masked_argmin(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    values = np.atleast_2d(values)
    mask = np.atleast_2d(mask)
    if not np.all(mask.any(axis=1)):
        raise IPLLError("argmin over an empty index set")
    masked = np.where(mask, values, np.inf)
    return np.argmin(masked, axis=1)


def candidate_mask(candidates: Iterable[Iterable[int]], num_classes: int) -> np.ndarray:
    """Boolean (n, num_classes) matrix with row i marking the classes of set i."""
    cands = list(candidates)
    mask = np.zeros((len(cands), num_classes), dtype=bool)
    for i, s in enumerate(cands):
        for c in s:
            mask[i, c] = True
    return mask
