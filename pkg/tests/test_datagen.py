import numpy as np
import pytest

from ipll.datagen import (
    DatasetSpec,
    StreamSpec,
    blurry_placement,
    build_blurry_stream,
    class_counts_per_task,
    default_flip_matrix,
    flip_nonuniform,
    flip_uniform,
    make_gaussian_dataset,
)
from ipll.errors import ConfigError, IPLLError
from ipll.mathcore import make_rng


def dealt_counts(n, home, tasks, w):
    """Oracle for the blurry split: keep W% at home, deal the rest one by one, earliest task first."""
    counts = [0] * tasks
    if home == tasks - 1:
        counts[home] = n
        return counts
    keep = (w * n) // 100
    counts[home] = keep
    later = list(range(home + 1, tasks))
    for k in range(n - keep):
        counts[later[k % len(later)]] += 1
    return counts


class TestGaussianDataset:
    def test_nearest_mean_is_perfect_on_easy_data(self):
        ds = make_gaussian_dataset(DatasetSpec(2, 2, 50, 200, 10.0, 0.1, seed=1))
        d = ((ds.test_x[:, None, :] - ds.means[None]) ** 2).sum(-1)
        assert np.mean(d.argmin(1) == ds.test_y) == 1.0

    def test_counts(self):
        ds = make_gaussian_dataset(DatasetSpec(10, 4, 50, 5, 3.0, 0.5, seed=2))
        assert ds.train_x.shape == (500, 4)
        assert np.bincount(ds.train_y).tolist() == [50] * 10

    def test_deterministic(self):
        spec = DatasetSpec(5, 3, 20, 4, 2.0, 0.3, seed=9)
        a, b = make_gaussian_dataset(spec), make_gaussian_dataset(spec)
        assert np.array_equal(a.train_x, b.train_x) and np.array_equal(a.test_x, b.test_x)

    def test_separation_respected(self):
        ds = make_gaussian_dataset(DatasetSpec(12, 5, 2, 1, 4.0, 0.3, seed=4))
        d = np.sqrt(((ds.means[:, None] - ds.means[None]) ** 2).sum(-1))
        assert d[np.triu_indices(12, 1)].min() >= 4.0

    def test_infeasible_separation(self):
        with pytest.raises(IPLLError):
            make_gaussian_dataset(DatasetSpec(50, 1, 2, 1, 100.0, 0.1, seed=0))

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            DatasetSpec(num_classes=1)
        with pytest.raises(ConfigError):
            StreamSpec(w=101)


class TestFlips:
    def test_q_zero(self):
        rng = make_rng(0, "t")
        assert flip_uniform(3, 10, 0.0, rng) == {3}

    def test_q_one(self):
        rng = make_rng(0, "t")
        assert flip_uniform(3, 10, 1.0, rng) == set(range(10))

    def test_negative_inclusion_rate(self):
        rng = make_rng(1, "t")
        n, q = 10_000, 0.2
        counts = np.zeros(8)
        for _ in range(n):
            for j in flip_uniform(0, 8, q, rng):
                counts[j] += 1
        freq = counts[1:] / n
        sigma = np.sqrt(q * (1 - q) / n)
        assert np.all(np.abs(freq - q) < 3 * sigma)
        assert counts[0] == n

    def test_default_matrix_rows(self):
        m = default_flip_matrix(10)
        assert m[0].tolist() == [1.0] + [0.0] * 9
        assert m[6].tolist() == [0, 0.1, 0.2, 0.3, 0.4, 0.5, 1, 0, 0, 0]
        assert m[1, 0] == 0.5

    def test_nonuniform_row_frequencies(self):
        m = default_flip_matrix(10)
        rng = make_rng(2, "t")
        n = 20_000
        hits = np.zeros(10)
        for _ in range(n):
            for j in flip_nonuniform(6, m, rng):
                hits[j] += 1
        freq = hits / n
        for j, p in [(1, 0.1), (5, 0.5), (7, 0.0), (0, 0.0), (6, 1.0)]:
            assert abs(freq[j] - p) <= 3 * np.sqrt(p * (1 - p) / n) + 1e-12

    def test_nonuniform_first_row_is_singleton(self):
        m = default_flip_matrix(10)
        rng = make_rng(3, "t")
        assert all(flip_nonuniform(0, m, rng) == {0} for _ in range(500))

    def test_nonuniform_second_row(self):
        m = default_flip_matrix(10)
        rng = make_rng(4, "t")
        n = 20_000
        freq = sum(0 in flip_nonuniform(1, m, rng) for _ in range(n)) / n
        assert abs(freq - 0.5) < 3 * np.sqrt(0.25 / n)

    def test_bad_matrix(self):
        with pytest.raises(IPLLError):
            flip_nonuniform(0, np.zeros((3, 3)), make_rng(0, "t"))


class TestBlurrySplit:
    def test_example_counts(self):
        # class introduced in the third of ten tasks, 100 samples, W=90
        counts = blurry_placement(100, 2, 10, 90)
        assert counts == dealt_counts(100, 2, 10, 90)
        assert counts[2] == 90
        assert counts[3:] == [2, 2, 2, 1, 1, 1, 1]
        assert sum(counts) == 100

    @pytest.mark.parametrize("w", [0, 30, 70, 90, 100])
    @pytest.mark.parametrize("home", [0, 3, 9])
    @pytest.mark.parametrize("n", [1, 7, 100, 101])
    def test_matches_dealing_oracle(self, w, home, n):
        assert blurry_placement(n, home, 10, w) == dealt_counts(n, home, 10, w)

    def test_non_blurry(self):
        assert blurry_placement(40, 1, 4, 100) == [0, 40, 0, 0]

    def test_w_out_of_range(self):
        with pytest.raises(ConfigError):
            blurry_placement(10, 0, 3, 120)

    def test_class_counts(self):
        assert class_counts_per_task(10, 5) == [2] * 5
        assert class_counts_per_task(11, 4) == [3, 3, 3, 2]


@pytest.fixture(scope="module")
def small_stream():
    ds = make_gaussian_dataset(DatasetSpec(9, 3, 30, 6, 3.0, 0.4, seed=5))
    return ds, build_blurry_stream(ds, StreamSpec(4, 70, 0.3, "uniform", seed=5))


class TestStream:
    def test_true_label_in_candidates_within_placement_space(self, small_stream):
        _, stream = small_stream
        for t, samples in enumerate(stream.tasks):
            for s in samples:
                assert s.true_label in s.candidates
                assert max(s.candidates) < stream.num_seen(t)
                assert s.task == t

    def test_partition_of_dataset(self, small_stream):
        ds, stream = small_stream
        ids = [s.id for task in stream.tasks for s in task]
        assert len(ids) == len(set(ids)) == len(ds.train_y)

    def test_first_task_only_new(self, small_stream):
        _, stream = small_stream
        assert {s.true_label for s in stream.tasks[0]} <= set(stream.new_classes(0))

    def test_cumulative_test_sets(self, small_stream):
        _, stream = small_stream
        for t in range(stream.num_tasks):
            _, y = stream.test_set(t)
            assert set(y.tolist()) == set(range(stream.num_seen(t)))

    def test_features_preserved_under_relabel(self, small_stream):
        ds, stream = small_stream
        for s in stream.tasks[2]:
            assert np.array_equal(s.features, ds.train_x[s.id])
        # relabeling is a bijection consistent between train and test
        mapping = {}
        for task in stream.tasks:
            for s in task:
                mapping.setdefault(int(ds.train_y[s.id]), s.true_label)
        assert len(set(mapping.values())) == 9

    def test_split_counts_per_class(self, small_stream):
        _, stream = small_stream
        for c in range(9):
            per_task = [sum(s.true_label == c for s in task) for task in stream.tasks]
            assert per_task == dealt_counts(30, stream.home_task(c), 4, 70)

    def test_deterministic(self, small_stream):
        ds, stream = small_stream
        again = build_blurry_stream(ds, StreamSpec(4, 70, 0.3, "uniform", seed=5))
        for a, b in zip(stream.tasks, again.tasks):
            assert [(s.id, s.candidates) for s in a] == [(s.id, s.candidates) for s in b]

    def test_nonuniform_stream(self):
        ds = make_gaussian_dataset(DatasetSpec(12, 3, 10, 2, 3.0, 0.4, seed=6))
        stream = build_blurry_stream(ds, StreamSpec(3, 90, 0.0, "nonuniform", seed=6))
        for t, task in enumerate(stream.tasks):
            for s in task:
                assert s.true_label in s.candidates
                assert all(c <= s.true_label for c in s.candidates)
                assert all(s.true_label - c <= 5 for c in s.candidates)
