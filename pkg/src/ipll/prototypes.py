"""Per-class feature centroids and the nearest-prototype classifier."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from ipll.errors import DimensionError, IPLLError
from ipll.mathcore import FLOAT, candidate_mask, masked_argmax, pairwise_distances
from ipll.model import Model, forward


class PrototypeBank:
    def __init__(self, dim: int, gamma: float = 0.5):
        if not 0.0 <= gamma <= 1.0:
            raise IPLLError("gamma must lie in [0, 1]")
        self.dim = dim
        self.gamma = gamma
        self.means: dict[int, np.ndarray] = {}

    def __contains__(self, c: int) -> bool:
        return c in self.means

    def __len__(self) -> int:
        return len(self.means)

    @property
    def classes(self) -> list[int]:
        return sorted(self.means)

    def matrix(self, classes: Sequence[int] | None = None) -> np.ndarray:
        classes = self.classes if classes is None else classes
        return np.array([self.means[c] for c in classes], dtype=FLOAT).reshape(len(classes), self.dim)

    def copy(self) -> "PrototypeBank":
        bank = PrototypeBank(self.dim, self.gamma)
        bank.means = {c: m.copy() for c, m in self.means.items()}
        return bank


def assign_class_features(model: Model, x: np.ndarray, candidates: Sequence[frozenset]) -> dict[int, np.ndarray]:
    """Group encoder features by the model's prediction restricted to each candidate set."""
    H, Z, _ = forward(model, np.atleast_2d(x))
    mask = candidate_mask(candidates, Z.shape[1])
    pred = masked_argmax(Z, mask)
    return {int(c): H[pred == c] for c in np.unique(pred)}


def update_prototypes(bank: PrototypeBank, groups: dict[int, np.ndarray]) -> None:
    """Momentum update ``mu = gamma*mu + (1-gamma)*mean(P_c)``.

    A class seen for the first time takes the plain mean; classes with no
    assigned features keep their prototype.
    """
    for c, feats in groups.items():
        feats = np.atleast_2d(np.asarray(feats, dtype=FLOAT))
        if feats.shape[0] == 0:
            continue
        if feats.shape[1] != bank.dim:
            raise DimensionError(f"features of dim {feats.shape[1]} for a bank of dim {bank.dim}")
        centroid = feats.mean(axis=0)
        if c in bank.means:
            bank.means[c] = bank.gamma * bank.means[c] + (1.0 - bank.gamma) * centroid
        else:
            bank.means[c] = centroid


def prototype_distances(bank: PrototypeBank, feats: np.ndarray, classes: Sequence[int]) -> np.ndarray:
    return pairwise_distances(np.atleast_2d(feats), bank.matrix(classes))


def classify_by_prototype(bank: PrototypeBank, feats) -> np.ndarray | int:
    """Nearest initialized prototype; ties go to the smaller class index."""
    if len(bank) == 0:
        raise IPLLError("no initialized prototypes")
    feats = np.asarray(feats, dtype=FLOAT)
    classes = np.array(bank.classes)
    dist = prototype_distances(bank, feats, classes)
    pred = classes[np.argmin(dist, axis=1)]
    return int(pred[0]) if feats.ndim == 1 else pred
