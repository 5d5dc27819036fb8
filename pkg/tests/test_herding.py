import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from herddiff.errors import DimensionMismatch, NonFiniteWeight
from herddiff.herding import (
    FeatureTable,
    HerdingState,
    categorical_herding_step,
    discrepancy,
    feature_herding_step,
    herding_run,
    weight_norm_trace,
)
from herddiff.types import Token, validate_prob_vector


def naive_herding(p, w0, T):
    """Plain-Python reference loop with lowest-index tie-breaking."""
    w = list(map(float, w0))
    out = []
    for _ in range(T):
        k = max(range(len(w)), key=lambda i: (w[i], -i))
        out.append(k)
        w = [wi + pi - (1.0 if i == k else 0.0) for i, (wi, pi) in enumerate(zip(w, p))]
    return out, w


@st.composite
def prob_vectors(draw, min_k=1, max_k=12):
    K = draw(st.integers(min_k, max_k))
    raw = draw(hnp.arrays(np.float64, K, elements=st.floats(0.01, 1.0)))
    return raw / raw.sum()


class TestFeatureStep:
    def test_identity_features(self):
        table = FeatureTable(np.eye(2), [0.7, 0.3])
        j, st_ = feature_herding_step(HerdingState([0.2, -0.1]), table)
        assert j == 0
        assert st_.w == pytest.approx([-0.1, 0.2], abs=1e-15)
        assert st_.step_count == 1

    def test_period_two_orbit(self):
        table = FeatureTable([[0.0, 1.0]], [0.5])
        s = HerdingState([0.4])
        j1, s = feature_herding_step(s, table)
        assert j1 == 1 and s.w == pytest.approx([-0.1])
        j2, s = feature_herding_step(s, table)
        assert j2 == 0 and s.w == pytest.approx([0.4])
        samples = []
        for _ in range(100):
            j, s = feature_herding_step(s, table)
            samples.append(table.features[0, j])
        assert np.mean(samples) == 0.5

    def test_zero_weight_tie_goes_to_lowest_index(self):
        table = FeatureTable([[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]], [0.2, 0.4])
        j, s = feature_herding_step(HerdingState([0.0, 0.0]), table)
        assert j == 0
        assert s.w == pytest.approx(table.targets - table.features[:, 0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            feature_herding_step(HerdingState([0.0, 0.0, 0.0]), FeatureTable(np.eye(2), [0.5, 0.5]))

    def test_non_finite_update_is_fatal(self):
        table = FeatureTable([[1.0, 0.0]], [1e308])
        with pytest.raises(NonFiniteWeight):
            feature_herding_step(HerdingState([1e308]), table)


class TestCategoricalStep:
    def test_orbit(self):
        p = validate_prob_vector([0.7, 0.3])
        tok, s = categorical_herding_step(HerdingState([0.2, -0.1]), p)
        assert tok == Token(0, 2) and s.w == pytest.approx([-0.1, 0.2])
        tok, s = categorical_herding_step(s, p)
        assert tok == Token(1, 2) and s.w == pytest.approx([0.6, -0.5])

    def test_point_mass_is_fixed_point(self):
        p = validate_prob_vector([1.0, 0.0])
        s = HerdingState([0.0, 0.0])
        for _ in range(20):
            tok, s = categorical_herding_step(s, p)
            assert tok.index == 0
            assert s.w.tolist() == [0.0, 0.0]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            categorical_herding_step(HerdingState([0.0]), validate_prob_vector([0.5, 0.5]))

    @given(prob_vectors(), st.integers(1, 40), st.integers(0, 2**32 - 1))
    def test_feature_herding_matches_categorical(self, p, T, seed):
        w0 = np.random.default_rng(seed).random(p.size)
        table = FeatureTable.categorical(p)
        pv = validate_prob_vector(p)
        a, b = HerdingState(w0), HerdingState(w0)
        for _ in range(T):
            j, a = feature_herding_step(a, table)
            tok, b = categorical_herding_step(b, pv)
            assert j == tok.index
            assert np.array_equal(a.w, b.w)


class TestRun:
    def test_two_step_return(self):
        samples, s = herding_run([0.5, 0.5], [0.3, 0.1], 2)
        assert samples.tolist() == [0, 1]
        assert s.w == pytest.approx([0.3, 0.1], abs=1e-15)
        assert np.bincount(samples, minlength=2).tolist() == [1, 1]

    def test_uniform_visits_each_once(self):
        p = np.full(5, 0.2)
        samples, _ = herding_run(p, np.zeros(5), 5)
        ref, _ = naive_herding(p, np.zeros(5), 5)
        assert samples.tolist() == ref
        assert sorted(samples.tolist()) == [0, 1, 2, 3, 4]

    @given(prob_vectors(), st.integers(1, 300), st.integers(0, 2**32 - 1))
    def test_matches_naive_loop(self, p, T, seed):
        w0 = np.random.default_rng(seed).uniform(-1, 1, p.size)
        samples, s = herding_run(p, w0, T)
        ref, w_ref = naive_herding(p, w0, T)
        assert samples.tolist() == ref
        assert np.array_equal(s.w, w_ref)

    @given(prob_vectors(), st.integers(1, 2000), st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_telescoping(self, p, T, seed):
        w0 = np.random.default_rng(seed).random(p.size)
        samples, s = herding_run(p, w0, T)
        counts = np.bincount(samples, minlength=p.size)
        assert np.abs(T * p - counts - (s.w - w0)).max() <= 1e-12
        assert np.abs(discrepancy(samples, p, w0, s.w)).max() <= 1e-12

    def test_error_bounded_by_weight_excursion(self):
        p = np.array([0.7, 0.3])
        w0 = np.array([0.5, 0.2])
        T = 5000
        samples, norms = weight_norm_trace(p, w0, T)
        # ||w_t - w_0|| <= ||w_t|| + ||w_0||
        err = np.abs(p - np.bincount(samples, minlength=2) / T).max()
        assert err <= (norms.max() + np.abs(w0).max()) / T

    def test_rate_at_ten_thousand(self):
        p = np.array([0.7, 0.2, 0.1])
        samples, _ = herding_run(p, np.zeros(3), 10_000)
        err = np.abs(p - np.bincount(samples, minlength=3) / 10_000).max()
        assert err <= 2 * 3 / 10_000

    def test_deterministic(self):
        p = np.array([0.15, 0.35, 0.5])
        a, sa = herding_run(p, [0.1, 0.9, 0.4], 10_000)
        b, sb = herding_run(p, [0.1, 0.9, 0.4], 10_000)
        assert np.array_equal(a, b) and np.array_equal(sa.w, sb.w)

    def test_initial_weight_is_retained(self):
        _, s = herding_run([0.25, 0.75], [0.1, 0.2], 10)
        assert s.initial_weight.weights.tolist() == [0.1, 0.2]
        assert s.step_count == 10

    def test_norm_trace_agrees_with_run(self):
        p = np.array([0.6, 0.3, 0.1])
        a, s = herding_run(p, [0.2, 0.0, 0.5], 500)
        b, norms = weight_norm_trace(p, [0.2, 0.0, 0.5], 500)
        assert np.array_equal(a, b)
        assert norms[-1] == np.abs(s.w).max() and norms[0] == 0.5

    def test_rejects_bad_inputs(self):
        with pytest.raises(DimensionMismatch):
            herding_run([0.5, 0.5], [0.0], 3)
        with pytest.raises(Exception):
            herding_run([0.5, 0.5], [0.0, 0.0], 0)

    def test_non_finite_initial_weight(self):
        with pytest.raises(NonFiniteWeight):
            herding_run([0.5, 0.5], [np.inf, 0.0], 3)


class TestDiscrepancy:
    def test_flipped_token_gives_one_over_T(self):
        p = np.array([0.6, 0.4])
        w0 = np.array([0.3, 0.7])
        T = 250
        samples, s = herding_run(p, w0, T)
        bad = samples.copy()
        bad[17] = 1 - bad[17]
        res = discrepancy(bad, p, w0, s.w)
        assert np.abs(res) == pytest.approx([1 / T, 1 / T], abs=1e-15)

    def test_single_step(self):
        p = np.array([0.2, 0.5, 0.3])
        w0 = np.array([0.1, 0.4, 0.3])
        samples, s = herding_run(p, w0, 1)
        assert samples.tolist() == [1]
        assert np.abs(discrepancy(samples, p, w0, s.w)).max() <= 1e-15

    def test_dimension_checks(self):
        with pytest.raises(DimensionMismatch):
            discrepancy([0], [0.5, 0.5], [0.0], [0.0, 0.0])
        with pytest.raises(DimensionMismatch):
            discrepancy([], [0.5, 0.5], [0.0, 0.0], [0.0, 0.0])
        with pytest.raises(DimensionMismatch):
            discrepancy([2], [0.5, 0.5], [0.0, 0.0], [0.0, 0.0])


@pytest.mark.parametrize("K", [2, 8, 32])
def test_weights_do_not_grow(K):
    rng = np.random.default_rng(K)
    p = rng.dirichlet(np.ones(K))
    _, norms = weight_norm_trace(p, rng.random(K), 20_000)
    assert norms.max() <= norms[:1001].max() + 1.0
