"""Old/new separation, candidate re-allocation and momentum pseudo-labels."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from ipll.errors import ConfigError, DegenerateInputError, IPLLError
from ipll.mathcore import FLOAT, candidate_mask, masked_argmax
from ipll.prototypes import PrototypeBank, prototype_distances

VARIANCE_FLOOR = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class SeparationConfig:
    alpha: float = 0.8
    beta_start: float = 0.8
    beta_end: float = 0.6
    em_tol: float = 1e-6
    em_max_iter: int = 100
    argmax_space: str = "original"

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        for b in (self.beta_start, self.beta_end):
            if not 0.0 <= b <= 1.0:
                raise ConfigError("beta must lie in [0, 1]")
        if self.argmax_space not in ("original", "reallocated"):
            raise ConfigError(f"unknown argmax_space {self.argmax_space!r}")


@dataclass
class Gmm1D:
    """Two-component 1-D mixture; component 0 has the smaller mean."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    log_likelihoods: list[float] = field(default_factory=list)

    @property
    def n_iter(self) -> int:
        return max(len(self.log_likelihoods) - 1, 0)


def distance_set(
    feats: np.ndarray, candidates: Sequence[frozenset], bank: PrototypeBank, old_classes: Iterable[int]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distance of each sample to its nearest old-candidate prototype.

    Returns ``(index, e, nearest)``: positions (into ``feats``) of samples
    with at least one old candidate, their minimal prototype distance, and
    the class achieving it. Old classes without a prototype are ignored.
    """
    old = [c for c in sorted(set(old_classes)) if c in bank]
    feats = np.atleast_2d(feats)
    if not old:
        empty = np.zeros(0, dtype=int)
        return empty, np.zeros(0), empty
    dist = prototype_distances(bank, feats, old)
    col = {c: k for k, c in enumerate(old)}
    mask = np.zeros_like(dist, dtype=bool)
    for i, s in enumerate(candidates):
        for c in s:
            k = col.get(c)
            if k is not None:
                mask[i, k] = True
    index = np.flatnonzero(mask.any(axis=1))
    masked = np.where(mask[index], dist[index], np.inf)
    k = np.argmin(masked, axis=1)
    e = masked[np.arange(len(index)), k]
    nearest = np.array(old, dtype=int)[k]
    return index, e, nearest


def _component_logpdf(x: np.ndarray, means, variances) -> np.ndarray:
    x = x[:, None]
    return -0.5 * (LOG_2PI + np.log(variances) + (x - means) ** 2 / variances)


def _log_joint(x, gmm_means, gmm_vars, gmm_weights) -> np.ndarray:
    return _component_logpdf(x, gmm_means, gmm_vars) + np.log(gmm_weights)


def fit_gmm_1d(values, tol: float = 1e-6, max_iter: int = 100) -> Gmm1D:
    """EM fit of a two-component Gaussian mixture.

    Initialization is deterministic: means at the 10th and 90th percentiles
    (min and max if those coincide), both variances equal to the sample
    variance, equal weights.
    """
    x = np.asarray(values, dtype=FLOAT).ravel()
    if np.unique(x).size < 2:
        raise DegenerateInputError("need at least two distinct values to fit a mixture")
    lo, hi = np.percentile(x, [10, 90])
    if lo == hi:
        lo, hi = x.min(), x.max()
    means = np.array([lo, hi], dtype=FLOAT)
    variances = np.full(2, max(x.var(), VARIANCE_FLOOR))
    weights = np.array([0.5, 0.5])
    n = x.size

    joint = _log_joint(x, means, variances, weights)
    ll = float(np.logaddexp.reduce(joint, axis=1).sum())
    trace = [ll]
    for _ in range(max_iter):
        log_norm = np.logaddexp.reduce(joint, axis=1, keepdims=True)
        resp = np.exp(joint - log_norm)
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, np.finfo(FLOAT).tiny)
        means = (resp * x[:, None]).sum(axis=0) / nk
        variances = np.maximum((resp * (x[:, None] - means) ** 2).sum(axis=0) / nk, VARIANCE_FLOOR)
        weights = np.clip(nk / n, 1e-12, 1.0 - 1e-12)
        weights = weights / weights.sum()
        joint = _log_joint(x, means, variances, weights)
        new_ll = float(np.logaddexp.reduce(joint, axis=1).sum())
        trace.append(new_ll)
        gain = new_ll - ll
        ll = new_ll
        if gain < tol:
            break

    order = np.argsort(means, kind="stable")
    return Gmm1D(means[order], variances[order], weights[order], trace)


def posterior_old(gmm: Gmm1D, e) -> np.ndarray | float:
    """Posterior probability of the smaller-mean component, computed in log space."""
    arr = np.atleast_1d(np.asarray(e, dtype=FLOAT))
    joint = _log_joint(arr, gmm.means, gmm.variances, gmm.weights)
    w = np.exp(joint[:, 0] - np.logaddexp(joint[:, 0], joint[:, 1]))
    return float(w[0]) if np.ndim(e) == 0 else w


def separate(ids: Sequence[int], scored_ids: Sequence[int], w, alpha: float) -> tuple[set, set]:
    """Split ``ids`` into (old, new): old iff the sample was scored and ``w > alpha``."""
    w = np.asarray(w, dtype=FLOAT)
    old = {int(i) for i, wi in zip(scored_ids, w) if wi > alpha}
    new = {int(i) for i in ids} - old
    return old, new


def reallocate(
    candidates: frozenset,
    is_old: bool,
    feature: np.ndarray,
    bank: PrototypeBank,
    new_classes: Iterable[int],
    old_classes: Iterable[int],
) -> frozenset:
    """Reduced candidate set after old/new separation.

    Old-tagged samples keep the nearest old prototype's class plus their new
    candidates; new-tagged samples keep only their new candidates, falling
    back to the nearest-prototype candidate when that leaves nothing.
    """
    new_part = frozenset(candidates) & frozenset(new_classes)
    if is_old:
        nearest = _nearest_prototype(feature, bank, frozenset(candidates) & frozenset(old_classes))
        return new_part | ({nearest} if nearest is not None else set())
    if new_part:
        return new_part
    nearest = _nearest_prototype(feature, bank, candidates)
    if nearest is None:
        return frozenset(candidates)
    return frozenset({nearest})


def _nearest_prototype(feature, bank: PrototypeBank, classes) -> int | None:
    classes = [c for c in sorted(classes) if c in bank]
    if not classes:
        return None
    dist = prototype_distances(bank, feature, classes)[0]
    return classes[int(np.argmin(dist))]


def init_pseudo(reduced: Iterable[int], num_classes: int) -> np.ndarray:
    idx = sorted(set(reduced))
    if not idx:
        raise IPLLError("cannot initialize a pseudo-label from an empty set")
    p = np.zeros(num_classes, dtype=FLOAT)
    p[idx] = 1.0 / len(idx)
    return p


def update_pseudo(p, logits, candidates, beta: float) -> np.ndarray:
    """Momentum update ``p = beta*p + (1-beta)*onehot(argmax over candidates)``.

    ``candidates`` is a set of class indices for a single sample, or a
    boolean mask of the same shape as ``p`` for a batch.
    """
    p = np.asarray(p, dtype=FLOAT)
    logits = np.asarray(logits, dtype=FLOAT)
    single = p.ndim == 1
    P = np.atleast_2d(p)
    Z = np.atleast_2d(logits)
    if isinstance(candidates, np.ndarray) and candidates.dtype == bool:
        mask = np.atleast_2d(candidates)
    else:
        mask = candidate_mask([candidates] if single else candidates, P.shape[1])
    z = np.zeros_like(P)
    z[np.arange(P.shape[0]), masked_argmax(Z, mask)] = 1.0
    out = beta * P + (1.0 - beta) * z
    sums = out.sum(axis=1, keepdims=True)
    drift = np.abs(sums - 1.0) > 1e-9
    if np.any(drift):
        out = np.where(drift, out / sums, out)
    return out[0] if single else out


def beta_at(epoch: int, total_epochs: int, beta_start: float = 0.8, beta_end: float = 0.6) -> float:
    """Linear ramp from ``beta_start`` at epoch 0 to ``beta_end`` at the last epoch."""
    if total_epochs < 1:
        raise IPLLError("total_epochs must be >= 1")
    if total_epochs == 1:
        return beta_start
    frac = epoch / (total_epochs - 1)
    return beta_start + (beta_end - beta_start) * frac
