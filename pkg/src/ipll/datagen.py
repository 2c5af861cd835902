"""Synthetic Gaussian datasets and blurry partially-labeled task streams.

Classes are relabeled when a stream is built so that the classes introduced
in task 1 get the lowest indices, task 2's new classes the next ones, and so
on. The cumulative label space of task ``t`` is then ``range(n_t)``, which is
also the head width of the model at that task.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ipll.errors import ConfigError, IPLLError
from ipll.mathcore import FLOAT, make_rng, pairwise_distances

MAX_MEAN_ATTEMPTS = 1000


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 10
    feature_dim: int = 16
    samples_per_class: int = 100
    test_per_class: int = 50
    cluster_separation: float = 10.0
    cluster_stddev: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.feature_dim < 1 or self.samples_per_class < 1 or self.test_per_class < 0:
            raise ConfigError("feature_dim and samples_per_class must be positive")
        if self.cluster_separation <= 0 or self.cluster_stddev <= 0:
            raise ConfigError("cluster_separation and cluster_stddev must be positive")


@dataclass(frozen=True)
class StreamSpec:
    tasks: int = 5
    w: int = 90
    q: float = 0.3
    flip_mode: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.tasks < 1:
            raise ConfigError("tasks must be >= 1")
        if not 0 <= self.w <= 100:
            raise ConfigError(f"W must lie in [0, 100], got {self.w}")
        if not 0.0 <= self.q <= 1.0:
            raise ConfigError(f"q must lie in [0, 1], got {self.q}")
        if self.flip_mode not in ("uniform", "nonuniform"):
            raise ConfigError(f"unknown flip_mode {self.flip_mode!r}")

    @property
    def blurry(self) -> int:
        """The ``(100 - W)`` in "(100-W)-blurry"."""
        return 100 - self.w


@dataclass(frozen=True)
class Sample:
    id: int
    features: np.ndarray
    true_label: int
    candidates: frozenset
    task: int


@dataclass
class GaussianDataset:
    means: np.ndarray
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    spec: DatasetSpec


@dataclass
class TaskStream:
    """Per-task training subsets plus a test pool split by class home task.

    ``tasks[t]`` holds the samples placed in task ``t`` (0-based). The
    cumulative test set of task ``t`` is every test sample whose class is in
    ``range(num_seen(t))``.
    """

    tasks: list[list[Sample]]
    new_counts: list[int]
    test_x: np.ndarray
    test_y: np.ndarray
    test_ids: np.ndarray
    num_classes: int
    feature_dim: int
    q: float = 0.0
    w: int = 100
    seed: int = 0
    flip_mode: str = "uniform"
    meta: dict = field(default_factory=dict)

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def num_seen(self, t: int) -> int:
        return int(sum(self.new_counts[: t + 1]))

    def new_classes(self, t: int) -> range:
        return range(self.num_seen(t) - self.new_counts[t], self.num_seen(t))

    def old_classes(self, t: int) -> range:
        return range(self.num_seen(t) - self.new_counts[t])

    def home_task(self, c: int) -> int:
        for t in range(self.num_tasks):
            if c < self.num_seen(t):
                return t
        raise IndexError(c)

    def test_set(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        keep = self.test_y < self.num_seen(t)
        return self.test_x[keep], self.test_y[keep]


def class_counts_per_task(num_classes: int, tasks: int) -> list[int]:
    """Even class split; the remainder goes to the earliest tasks."""
    base, extra = divmod(num_classes, tasks)
    return [base + (1 if t < extra else 0) for t in range(tasks)]


def make_gaussian_dataset(spec: DatasetSpec) -> GaussianDataset:
    """Isotropic Gaussian clusters with rejection-sampled, well separated means."""
    C, d = spec.num_classes, spec.feature_dim
    rng = make_rng(spec.seed, "means")
    # typical pairwise distance is about 1.5x the required separation
    scale = 1.5 * spec.cluster_separation / np.sqrt(2.0 * d)
    means = np.empty((C, d), dtype=FLOAT)
    for c in range(C):
        for _ in range(MAX_MEAN_ATTEMPTS):
            cand = rng.normal(0.0, scale, size=d)
            if c == 0 or pairwise_distances(cand[None], means[:c]).min() >= spec.cluster_separation:
                means[c] = cand
                break
        else:
            raise IPLLError(
                f"could not place {C} means {spec.cluster_separation} apart in {d} dimensions"
            )

    def draw(n: int, purpose: str):
        r = make_rng(spec.seed, purpose)
        x = np.concatenate(
            [means[c] + r.normal(0.0, spec.cluster_stddev, size=(n, d)) for c in range(C)]
        )
        y = np.repeat(np.arange(C), n)
        return x, y

    train_x, train_y = draw(spec.samples_per_class, "train")
    test_x, test_y = draw(spec.test_per_class, "test")
    return GaussianDataset(means, train_x, train_y, test_x, test_y, spec)


def flip_uniform(y: int, num_labels: int, q: float, rng: np.random.Generator) -> frozenset:
    """Candidate set over ``range(num_labels)``: ``y`` plus each negative with probability ``q``."""
    if not 0 <= y < num_labels:
        raise IPLLError(f"label {y} outside label space of size {num_labels}")
    if not 0.0 <= q <= 1.0:
        raise IPLLError(f"q must lie in [0, 1], got {q}")
    draws = rng.random(num_labels)
    keep = draws < q
    keep[y] = True
    return frozenset(int(j) for j in np.flatnonzero(keep))


def default_flip_matrix(num_classes: int) -> np.ndarray:
    """Banded matrix: 1 on the diagonal, 0.5..0.1 on the five bands below it."""
    m = np.eye(num_classes, dtype=FLOAT)
    for band, prob in enumerate((0.5, 0.4, 0.3, 0.2, 0.1), start=1):
        idx = np.arange(band, num_classes)
        m[idx, idx - band] = prob
    return m


def flip_nonuniform(
    y: int, matrix: np.ndarray, rng: np.random.Generator, num_labels: int | None = None
) -> frozenset:
    """Include label ``j`` with probability ``matrix[y, j]``, restricted to ``range(num_labels)``."""
    matrix = np.asarray(matrix, dtype=FLOAT)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise IPLLError("flip matrix must be square")
    if not np.all(np.diag(matrix) == 1.0):
        raise IPLLError("flip matrix diagonal must be 1")
    if np.any(matrix < 0) or np.any(matrix > 1):
        raise IPLLError("flip matrix entries must lie in [0, 1]")
    n = matrix.shape[0] if num_labels is None else num_labels
    if not 0 <= y < n:
        raise IPLLError(f"label {y} outside label space of size {n}")
    draws = rng.random(n)
    keep = draws < matrix[y, :n]
    keep[y] = True
    return frozenset(int(j) for j in np.flatnonzero(keep))


def blurry_placement(n_samples: int, home: int, tasks: int, w: int) -> list[int]:
    """Number of a class's samples placed in each task.

    ``floor(W% * n)`` stay in the home task; the rest are spread evenly over
    the later tasks with any remainder going to the earliest ones. A class
    introduced in the last task keeps all of its samples there.
    """
    if not 0 <= w <= 100:
        raise ConfigError(f"W must lie in [0, 100], got {w}")
    counts = [0] * tasks
    later = tasks - home - 1
    if later == 0:
        counts[home] = n_samples
        return counts
    n_home = w * n_samples // 100
    counts[home] = n_home
    base, extra = divmod(n_samples - n_home, later)
    for k in range(later):
        counts[home + 1 + k] = base + (1 if k < extra else 0)
    return counts


def build_blurry_stream(dataset: GaussianDataset, spec: StreamSpec) -> TaskStream:
    C = dataset.spec.num_classes
    T = spec.tasks
    if C < T:
        raise ConfigError(f"cannot spread {C} classes over {T} tasks")
    rng = make_rng(spec.seed, "partition")
    order = rng.permutation(C)  # order[k] = original class that becomes label k
    relabel = np.empty(C, dtype=int)
    relabel[order] = np.arange(C)
    counts = class_counts_per_task(C, T)
    bounds = np.cumsum(counts)

    placed: list[list[tuple[int, np.ndarray, int]]] = [[] for _ in range(T)]
    split_rng = make_rng(spec.seed, "split")
    train_y = relabel[dataset.train_y]
    for c in range(C):
        home = int(np.searchsorted(bounds, c, side="right"))
        idx = np.flatnonzero(train_y == c)
        idx = idx[split_rng.permutation(len(idx))]
        start = 0
        for t, n in enumerate(blurry_placement(len(idx), home, T, spec.w)):
            for i in sorted(idx[start : start + n]):
                placed[t].append((int(i), dataset.train_x[i], c))
            start += n

    flip_rng = make_rng(spec.seed, "flip")
    matrix = default_flip_matrix(C) if spec.flip_mode == "nonuniform" else None
    tasks: list[list[Sample]] = []
    for t in range(T):
        n_seen = int(bounds[t])
        samples = []
        for i, x, c in sorted(placed[t], key=lambda r: r[0]):
            if matrix is None:
                cands = flip_uniform(c, n_seen, spec.q, flip_rng)
            else:
                cands = flip_nonuniform(c, matrix, flip_rng, n_seen)
            samples.append(Sample(i, x.copy(), c, cands, t))
        tasks.append(samples)

    n_train = len(dataset.train_y)
    test_y = relabel[dataset.test_y]
    test_ids = np.arange(n_train, n_train + len(test_y))
    return TaskStream(
        tasks=tasks,
        new_counts=counts,
        test_x=dataset.test_x.copy(),
        test_y=test_y,
        test_ids=test_ids,
        num_classes=C,
        feature_dim=dataset.spec.feature_dim,
        q=spec.q,
        w=spec.w,
        seed=spec.seed,
        flip_mode=spec.flip_mode,
        meta={
            "separation": dataset.spec.cluster_separation,
            "stddev": dataset.spec.cluster_stddev,
        },
    )


def generate_stream(dspec: DatasetSpec, sspec: StreamSpec) -> TaskStream:
    return build_blurry_stream(make_gaussian_dataset(dspec), sspec)
