import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ipll.errors import DimensionError, IPLLError
from ipll.mathcore import argmax_restricted, l2_distance, make_rng, masked_argmax, softmax

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestL2Distance:
    def test_identity(self):
        assert l2_distance([0, 0], [0, 0]) == 0

    def test_345(self):
        assert l2_distance([0, 0], [3, 4]) == 5

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=16), rng.normal(size=16)
        naive = math.sqrt(sum((x - y) ** 2 for x, y in zip(a.tolist(), b.tolist())))
        assert abs(l2_distance(a, b) - naive) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            l2_distance([0, 0], [0, 0, 0])

    @given(arrays(np.float64, 6, elements=finite), arrays(np.float64, 6, elements=finite))
    def test_symmetric_and_zero_on_self(self, a, b):
        assert l2_distance(a, b) == l2_distance(b, a)
        assert l2_distance(a, a) == 0
        assert l2_distance(a, b) >= 0


class TestSoftmax:
    def test_symmetric_pair(self):
        np.testing.assert_allclose(softmax([0, 0]), [0.5, 0.5])

    def test_no_overflow(self):
        p = softmax([1000.0, 0.0])
        assert np.all(np.isfinite(p))
        assert p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0, abs=1e-300)

    def test_matches_direct_formula(self):
        x = [1.0, 2.0, 3.0]
        denom = sum(math.exp(v) for v in x)
        np.testing.assert_allclose(softmax(x), [math.exp(v) / denom for v in x], atol=1e-12)

    def test_empty_raises(self):
        with pytest.raises(IPLLError):
            softmax([])

    @given(arrays(np.float64, 5, elements=finite), st.floats(-100, 100))
    def test_shift_invariance(self, z, c):
        np.testing.assert_allclose(softmax(z), softmax(z + c), atol=1e-10)
        assert abs(softmax(z).sum() - 1) < 1e-12


class TestArgmaxRestricted:
    @pytest.mark.parametrize(
        "values, allowed, expected",
        [([0.1, 0.9, 0.9], {1, 2}, 1), ([5, 1, 2], {1, 2}, 2), ([5, 1, 2], {0, 1, 2}, 0)],
    )
    def test_examples(self, values, allowed, expected):
        assert argmax_restricted(values, allowed) == expected

    def test_empty(self):
        with pytest.raises(IPLLError):
            argmax_restricted([1, 2], set())

    def test_masked_version_agrees(self):
        rng = np.random.default_rng(0)
        vals = rng.integers(0, 3, size=(200, 6)).astype(float)
        mask = rng.random((200, 6)) < 0.5
        mask[:, 0] |= ~mask.any(axis=1)
        got = masked_argmax(vals, mask)
        for i in range(200):
            assert got[i] == argmax_restricted(vals[i], np.flatnonzero(mask[i]))


def test_rng_reproducible():
    a = make_rng(11, "flip").random(10_000)
    b = make_rng(11, "flip").random(10_000)
    assert np.array_equal(a, b)


def test_rng_purposes_differ():
    assert not np.array_equal(make_rng(11, "flip").random(5), make_rng(11, "init").random(5))
    assert not np.array_equal(make_rng(11, "batch", 0).random(5), make_rng(11, "batch", 1).random(5))
