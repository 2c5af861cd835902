"""Budgeted episodic memory of representative and diverse samples."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from ipll.datagen import Sample
from ipll.errors import ConfigError, IPLLError
from ipll.mathcore import FLOAT, candidate_mask, masked_argmax, pairwise_distances
from ipll.model import Model, forward
from ipll.prototypes import PrototypeBank


@dataclass(frozen=True)
class MemoryConfig:
    budget: int = 2000
    knn_k: int = 10
    diverse_fraction: float = 0.67

    def __post_init__(self):
        if self.budget < 1 or self.knn_k < 1:
            raise ConfigError("memory budget and knn_k must be >= 1")
        if not 0.0 <= self.diverse_fraction <= 1.0:
            raise ConfigError("diverse_fraction must lie in [0, 1]")


@dataclass
class MemoryEntry:
    sample: Sample
    pseudo: np.ndarray
    predicted: int
    kind: str  # "representative" | "diverse" | "random"
    proto_distance: float = float("nan")
    knn_score: float = float("nan")


@dataclass
class Pool:
    """Current task data plus previous memory, sorted by sample id."""

    samples: list[Sample]
    pseudo: np.ndarray
    features: np.ndarray
    predicted: np.ndarray

    def groups(self) -> dict[int, np.ndarray]:
        return {int(c): np.flatnonzero(self.predicted == c) for c in np.unique(self.predicted)}


def build_pool(
    model: Model,
    current: Sequence[tuple[Sample, np.ndarray]],
    previous: Sequence[MemoryEntry] = (),
) -> Pool:
    """Concatenate ``(sample, pseudo)`` pairs with the old memory and predict each class."""
    items = list(current) + [(e.sample, e.pseudo) for e in previous]
    ids = [s.id for s, _ in items]
    if len(set(ids)) != len(ids):
        raise IPLLError("duplicate sample ids in the memory pool")
    items.sort(key=lambda it: it[0].id)
    C = model.num_classes
    samples = [s for s, _ in items]
    pseudo = np.zeros((len(items), C), dtype=FLOAT)
    for i, (_, p) in enumerate(items):
        pseudo[i, : len(p)] = p
    if not samples:
        return Pool([], pseudo, np.zeros((0, model.hidden_dim)), np.zeros(0, dtype=int))
    H, Z, _ = forward(model, np.array([s.features for s in samples]))
    pred = masked_argmax(Z, candidate_mask([s.candidates for s in samples], C))
    return Pool(samples, pseudo, H, pred)


def class_budgets(budget: int, num_classes: int) -> list[int]:
    """``floor(m / |Y|)`` per class, one extra slot for the lowest classes until ``m`` is used."""
    if budget < num_classes:
        raise ConfigError(f"memory budget {budget} is smaller than the {num_classes} classes")
    base, extra = divmod(budget, num_classes)
    return [base + (1 if c < extra else 0) for c in range(num_classes)]


def knn_scores(feats: np.ndarray, k: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Sum of distances to the ``k`` nearest other samples, and those neighbor sets.

    ``k`` is clamped to ``len(feats) - 1``; a singleton group scores 0 with
    no neighbors. Distance ties are broken by position.
    """
    feats = np.atleast_2d(feats)
    n = feats.shape[0]
    if n < 2:
        return np.zeros(n), [np.zeros(0, dtype=int) for _ in range(n)]
    k_eff = min(k, n - 1)
    dist = pairwise_distances(feats, feats)
    scores = np.empty(n)
    neighbors = []
    for i in range(n):
        others = np.delete(np.arange(n), i)
        order = others[np.argsort(dist[i, others], kind="stable")][:k_eff]
        neighbors.append(order)
        scores[i] = dist[i, order].sum()
    return scores, neighbors


def select_diverse(feats: np.ndarray, k: int, n_d: int) -> list[int]:
    """Greedy smallest-score picks that avoid the neighborhoods of earlier picks."""
    if n_d <= 0 or len(feats) == 0:
        return []
    scores, neighbors = knn_scores(feats, k)
    blocked = np.zeros(len(scores), dtype=bool)
    chosen: list[int] = []
    for i in np.argsort(scores, kind="stable"):
        if blocked[i]:
            continue
        chosen.append(int(i))
        blocked[i] = True
        blocked[neighbors[i]] = True
        if len(chosen) == n_d:
            break
    return chosen


def select_representative(
    feats: np.ndarray, prototype: np.ndarray, n_r: int, exclude: Sequence[int] = ()
) -> list[int]:
    """The ``n_r`` positions closest to ``prototype``, skipping ``exclude``."""
    if n_r <= 0 or len(feats) == 0:
        return []
    dist = pairwise_distances(feats, prototype[None])[:, 0]
    skip = set(int(i) for i in exclude)
    order = [int(i) for i in np.argsort(dist, kind="stable") if int(i) not in skip]
    return order[:n_r]


def rebuild_memory(
    pool: Pool,
    bank: PrototypeBank,
    config: MemoryConfig,
    num_classes: int,
    strategy: str = "pgdr",
    rng: np.random.Generator | None = None,
) -> list[MemoryEntry]:
    """Per-class diverse picks first, then representatives up to the class budget.

    ``strategy="random"`` replaces both passes by uniform picks within the
    class budget; a ``diverse_fraction`` of 0 gives representatives only.
    """
    budgets = class_budgets(config.budget, num_classes)
    groups = pool.groups()
    entries: list[MemoryEntry] = []
    for c in range(num_classes):
        idx = groups.get(c)
        if idx is None or len(idx) == 0:
            continue
        b_c = budgets[c]
        feats = pool.features[idx]
        if strategy == "random":
            if rng is None:
                raise IPLLError("random memory needs an rng")
            picks = np.sort(rng.choice(len(idx), size=min(b_c, len(idx)), replace=False))
            for j in picks:
                entries.append(_entry(pool, idx[j], c, "random"))
            continue
        if strategy != "pgdr":
            raise IPLLError(f"unknown memory strategy {strategy!r}")
        if c not in bank:
            raise IPLLError(f"no prototype for class {c} with {len(idx)} pool samples")
        proto = bank.means[c]
        scores, _ = knn_scores(feats, config.knn_k)
        dist = pairwise_distances(feats, proto[None])[:, 0]
        diverse = select_diverse(feats, config.knn_k, int(np.floor(config.diverse_fraction * b_c + 1e-9)))
        reps = select_representative(feats, proto, b_c - len(diverse), exclude=diverse)
        for kind, picks in (("diverse", diverse), ("representative", reps)):
            for j in picks:
                entries.append(_entry(pool, idx[j], c, kind, dist[j], scores[j]))
    entries.sort(key=lambda e: e.sample.id)
    return entries


def _entry(pool: Pool, i: int, c: int, kind: str, d=float("nan"), a=float("nan")) -> MemoryEntry:
    return MemoryEntry(pool.samples[i], pool.pseudo[i].copy(), c, kind, float(d), float(a))
