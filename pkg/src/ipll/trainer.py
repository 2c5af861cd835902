"""Task-by-task training loop, ablation variants and evaluation."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from ipll.config import PGDRConfig
from ipll.datagen import Sample, TaskStream
from ipll.disambiguation import (
    beta_at,
    distance_set,
    fit_gmm_1d,
    init_pseudo,
    posterior_old,
    reallocate,
    separate,
    update_pseudo,
)
from ipll.errors import DegenerateInputError, IPLLError
from ipll.mathcore import FLOAT, candidate_mask, make_rng, masked_argmax, masked_argmin, pairwise_distances
from ipll.memory import MemoryEntry, build_pool, rebuild_memory
from ipll.model import LossValues, LossWeights, Model, augment, forward, loss_and_grad, sgd_step
from ipll.prototypes import PrototypeBank, assign_class_features, classify_by_prototype, update_prototypes

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VariantHooks:
    labeling: str = "pgdr"  # pgdr | mp | pp
    memory: str = "pgdr"  # pgdr | random | none


def apply_variant(config: PGDRConfig) -> tuple[PGDRConfig, VariantHooks]:
    """Effective config and pipeline switches for ``config.variant``."""
    tag = config.variant
    if tag == "PGDR":
        return config, VariantHooks()
    if tag == "MP":
        return config, VariantHooks(labeling="mp")
    if tag == "PP":
        return config, VariantHooks(labeling="pp")
    if tag == "NO_MEMORY":
        return config, VariantHooks(memory="none")
    if tag == "RANDOM_MEMORY":
        return config, VariantHooks(memory="random")
    if tag == "DISTANCE_MEMORY":
        return replace(config, memory=replace(config.memory, diverse_fraction=0.0)), VariantHooks()
    if tag == "LINEAR_EVAL":
        return replace(config, eval_classifier="linear"), VariantHooks()
    if tag == "NO_CR":
        return replace(config, loss=replace(config.loss, w_cr=0.0)), VariantHooks()
    if tag == "NO_KD":
        return replace(config, loss=replace(config.loss, w_kd=0.0)), VariantHooks()
    raise IPLLError(f"unknown variant {tag!r}")


@dataclass
class TrainerState:
    model: Model
    bank: PrototypeBank
    memory: list[MemoryEntry] = field(default_factory=list)
    old_model: Model | None = None
    task: int = 0
    events: list[str] = field(default_factory=list)


def init_state(config: PGDRConfig, input_dim: int, num_classes: int) -> TrainerState:
    rng = make_rng(config.seed, "init")
    model = Model(input_dim, config.hidden_dim, num_classes, config.activation, rng)
    return TrainerState(model, PrototypeBank(config.hidden_dim, config.gamma))


@dataclass
class SeparationRecord:
    id: int
    e: float
    w: float
    old: bool
    truly_old: bool
    n_candidates: int
    n_reduced: int


@dataclass
class TaskOutcome:
    task: int
    separation: list[SeparationRecord]
    separation_accuracy: float
    epoch_losses: list[LossValues]
    probe_losses: list[float]


@dataclass
class EvalResult:
    acc_all: float
    acc_new: float
    acc_old: float


@dataclass
class TaskMetrics:
    task: int
    acc_all: float
    acc_new: float
    acc_old: float
    sep_acc: float
    loss_ce: float
    loss_kd: float
    loss_cr: float
    alt_acc_all: float = float("nan")


@dataclass
class ExperimentReport:
    variant: str
    eval_classifier: str
    tasks: list[TaskMetrics]
    loss_curves: list[list[LossValues]]
    separation: list[list[SeparationRecord]]
    memory: list[list[MemoryEntry]]

    @property
    def accuracies(self) -> list[float]:
        return [m.acc_all for m in self.tasks]

    @property
    def average_incremental_accuracy(self) -> float:
        return average_incremental_accuracy(self.accuracies)

    @property
    def alt_average_incremental_accuracy(self) -> float:
        return average_incremental_accuracy([m.alt_acc_all for m in self.tasks])

    @property
    def mean_separation_accuracy(self) -> float:
        vals = [m.sep_acc for m in self.tasks if not math.isnan(m.sep_acc)]
        return float(np.mean(vals)) if vals else float("nan")


def average_incremental_accuracy(accs: Sequence[float]) -> float:
    if len(accs) == 0:
        raise IPLLError("no accuracies to average")
    return float(sum(accs) / len(accs))


def _gmm_fallback(e: np.ndarray, bank: PrototypeBank) -> np.ndarray:
    """Old iff ``e`` is at most the mean pairwise distance between prototypes."""
    protos = bank.matrix()
    if len(protos) < 2:
        return np.ones_like(e)
    d = pairwise_distances(protos, protos)
    threshold = d[np.triu_indices(len(protos), k=1)].mean()
    return (e <= threshold).astype(FLOAT)


def _separate_task(
    state: TrainerState, samples: list[Sample], n_old: int, n_seen: int, config: PGDRConfig
) -> tuple[list[frozenset], list[SeparationRecord]]:
    X = np.array([s.features for s in samples])
    H = forward(state.model, X)[0]
    cands = [s.candidates for s in samples]
    idx, e, _ = distance_set(H, cands, state.bank, range(n_old))
    w = np.zeros(0)
    if len(idx):
        try:
            gmm = fit_gmm_1d(e, config.separation.em_tol, config.separation.em_max_iter)
            w = posterior_old(gmm, e)
        except DegenerateInputError:
            msg = f"task {state.task}: GMM input degenerate ({len(idx)} distances), using threshold fallback"
            logger.warning(msg)
            state.events.append(msg)
            w = _gmm_fallback(e, state.bank)
    old_ids, _ = separate([s.id for s in samples], [samples[i].id for i in idx], w, config.separation.alpha)
    scored = {int(i): (float(ei), float(wi)) for i, ei, wi in zip(idx, e, w)}
    new_classes = range(n_old, n_seen)
    reduced, records = [], []
    for i, s in enumerate(samples):
        is_old = s.id in old_ids
        r = reallocate(s.candidates, is_old, H[i], state.bank, new_classes, range(n_old))
        reduced.append(r)
        ei, wi = scored.get(i, (float("nan"), float("nan")))
        records.append(SeparationRecord(s.id, ei, wi, is_old, s.true_label < n_old, len(s.candidates), len(r)))
    return reduced, records


def _prototype_targets(model: Model, bank: PrototypeBank, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Nearest-prototype class within each candidate set; model argmax where no candidate has one."""
    H, Z, _ = forward(model, x)
    C = mask.shape[1]
    have = np.array([c in bank for c in range(C)])
    usable = mask & have
    out = masked_argmax(Z, mask)
    rows = np.flatnonzero(usable.any(axis=1))
    if len(rows):
        classes = [c for c in range(C) if have[c]]
        dist = np.full((len(rows), C), np.inf)
        dist[:, classes] = pairwise_distances(H[rows], bank.matrix(classes))
        out[rows] = masked_argmin(dist, usable[rows])
    return out


def run_task(
    state: TrainerState,
    samples: Sequence[Sample],
    num_seen: int,
    config: PGDRConfig,
    hooks: VariantHooks = VariantHooks(),
    aug_scale: float = 1.0,
) -> TaskOutcome:
    """Train on one task and refresh prototypes, memory and the old-model snapshot.

    Augmentation noise is ``aug_weak * aug_scale`` and ``aug_strong *
    aug_scale``; pass the data's cluster stddev as ``aug_scale``. Mutates
    ``state`` and advances ``state.task``.
    """
    t = state.task
    seed = config.seed
    samples = sorted(samples, key=lambda s: s.id)
    model = state.model
    n_old = model.num_classes if t > 0 else 0
    if t > 0:
        model.grow_head(num_seen, make_rng(seed, "head", t))
    C = model.num_classes

    records: list[SeparationRecord] = []
    sep_acc = float("nan")
    if t > 0 and hooks.labeling == "pgdr" and samples:
        reduced, records = _separate_task(state, samples, n_old, num_seen, config)
        sep_acc = 100.0 * float(np.mean([r.old == r.truly_old for r in records]))
    else:
        reduced = [s.candidates for s in samples]

    memory = state.memory
    all_samples = list(samples) + [e.sample for e in memory]
    N = len(all_samples)
    X = np.array([s.features for s in all_samples]).reshape(N, model.input_dim)
    orig_mask = candidate_mask([s.candidates for s in all_samples], C)
    P = np.zeros((N, C), dtype=FLOAT)
    for i, r in enumerate(reduced):
        P[i] = init_pseudo(r, C)
    for k, e in enumerate(memory):
        P[len(samples) + k, : len(e.pseudo)] = e.pseudo
    if config.separation.argmax_space == "reallocated":
        z_mask = orig_mask.copy()
        z_mask[: len(samples)] = candidate_mask(reduced, C)
    else:
        z_mask = orig_mask
    frozen = np.zeros(N, dtype=bool)
    if config.freeze_memory_labels:
        frozen[len(samples):] = True

    sigma_w, sigma_s = config.aug_weak * aug_scale, config.aug_strong * aug_scale
    batch_rng = make_rng(seed, "batch", t)
    aug_rng = make_rng(seed, "augment", t)
    old_model = state.old_model if t > 0 else None
    probe = np.arange(min(N, 256))
    epoch_losses: list[LossValues] = []
    probe_losses: list[float] = []

    for epoch in range(config.epochs):
        beta = beta_at(epoch, config.epochs, config.separation.beta_start, config.separation.beta_end)
        lr = config.lr * (config.lr_decay ** (epoch // config.lr_step) if config.lr_step > 0 else 1.0)
        totals = LossValues()
        order = batch_rng.permutation(N)
        for start in range(0, N, config.batch_size):
            b = order[start : start + config.batch_size]
            xw = augment(X[b], sigma_w, aug_rng)
            xs = augment(X[b], sigma_s, aug_rng)
            P[b] = _update_labels(model, state.bank, xw, P[b], z_mask[b], orig_mask[b], frozen[b], beta, hooks)
            grads, values = loss_and_grad(model, xw, xs, P[b], old_model, config.loss, config.kd_temperature)
            sgd_step(model, grads, lr, config.sgd_momentum)
            totals.ce += values.ce * len(b)
            totals.kd += values.kd * len(b)
            totals.cr += values.cr * len(b)
        epoch_losses.append(LossValues(totals.ce / N, totals.kd / N, totals.cr / N))
        if hooks.labeling == "pp":
            update_prototypes(state.bank, assign_class_features(model, X, [s.candidates for s in all_samples]))
        if len(probe):
            _, probe_values = loss_and_grad(model, X[probe], X[probe], P[probe], old_model, config.loss, config.kd_temperature)
            probe_losses.append(_weighted_total(probe_values, config.loss))

    if N:
        update_prototypes(state.bank, assign_class_features(model, X, [s.candidates for s in all_samples]))

    if hooks.memory == "none" or N == 0:
        state.memory = []
    else:
        pool = build_pool(model, list(zip(all_samples, P)))
        strategy = "random" if hooks.memory == "random" else "pgdr"
        state.memory = rebuild_memory(pool, state.bank, config.memory, C, strategy, make_rng(seed, "memory", t))

    state.old_model = model.copy()
    state.task = t + 1
    return TaskOutcome(t, records, sep_acc, epoch_losses, probe_losses)


def _update_labels(model, bank, xw, P, z_mask, orig_mask, frozen, beta, hooks) -> np.ndarray:
    if hooks.labeling == "mp":
        probs = forward(model, xw)[2] * orig_mask
        sums = probs.sum(axis=1, keepdims=True)
        uniform = orig_mask / orig_mask.sum(axis=1, keepdims=True)
        new = np.where(sums > 0, probs / np.where(sums > 0, sums, 1.0), uniform)
    elif hooks.labeling == "pp":
        z = np.zeros_like(P)
        z[np.arange(len(P)), _prototype_targets(model, bank, xw, orig_mask)] = 1.0
        new = beta * P + (1.0 - beta) * z
    else:
        new = update_pseudo(P, forward(model, xw)[1], z_mask, beta)
    return np.where(frozen[:, None], P, new)


def _weighted_total(values: LossValues, weights: LossWeights) -> float:
    return weights.w_ce * values.ce + weights.w_kd * values.kd + weights.w_cr * values.cr


def predict(model: Model, bank: PrototypeBank, x: np.ndarray, mode: str) -> np.ndarray:
    if mode == "prototype":
        return classify_by_prototype(bank, forward(model, np.atleast_2d(x))[0])
    if mode == "linear":
        return np.argmax(forward(model, np.atleast_2d(x))[1], axis=1)
    raise IPLLError(f"unknown evaluation mode {mode!r}")


def accuracy_split(pred: np.ndarray, y: np.ndarray, n_old: int) -> EvalResult:
    """Overall accuracy plus accuracy on classes ``>= n_old`` (new) and ``< n_old`` (old), in percent."""
    if len(y) == 0:
        raise IPLLError("empty test set")
    correct = pred == y
    old = y < n_old

    def pct(sel):
        return 100.0 * float(correct[sel].mean()) if sel.any() else float("nan")

    return EvalResult(100.0 * float(correct.mean()), pct(~old), pct(old))


def evaluate(model: Model, bank: PrototypeBank, x: np.ndarray, y: np.ndarray, n_old: int, mode: str) -> EvalResult:
    if len(y) == 0:
        raise IPLLError("empty test set")
    return accuracy_split(predict(model, bank, x, mode), np.asarray(y), n_old)


def run_stream(
    stream: TaskStream, config: PGDRConfig, state: TrainerState | None = None
) -> tuple[ExperimentReport, TrainerState]:
    """Train through every task and evaluate on the cumulative test set after each."""
    config, hooks = apply_variant(config)
    if state is None:
        state = init_state(config, stream.feature_dim, stream.num_seen(0))
    aug_scale = float(stream.meta.get("stddev", 1.0))
    alt_mode = "linear" if config.eval_classifier == "prototype" else "prototype"
    metrics, curves, seps, mems = [], [], [], []
    for t in range(stream.num_tasks):
        outcome = run_task(state, stream.tasks[t], stream.num_seen(t), config, hooks, aug_scale)
        x, y = stream.test_set(t)
        n_old = stream.num_seen(t) - stream.new_counts[t]
        res = evaluate(state.model, state.bank, x, y, n_old, config.eval_classifier)
        alt = evaluate(state.model, state.bank, x, y, n_old, alt_mode)
        last = outcome.epoch_losses[-1] if outcome.epoch_losses else LossValues()
        metrics.append(TaskMetrics(
            t, res.acc_all, res.acc_new, res.acc_old, outcome.separation_accuracy,
            last.ce, last.kd, last.cr, alt.acc_all,
        ))
        curves.append(outcome.epoch_losses)
        seps.append(outcome.separation)
        mems.append(list(state.memory))
        logger.info("task %d: acc=%.2f new=%.2f old=%.2f sep=%.2f", t, res.acc_all, res.acc_new, res.acc_old, outcome.separation_accuracy)
    report = ExperimentReport(config.variant, config.eval_classifier, metrics, curves, seps, mems)
    return report, state
