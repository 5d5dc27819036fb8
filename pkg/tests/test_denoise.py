import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from herddiff import streams
from herddiff.denoise import (
    DenoiseConfig,
    PositionState,
    derandomized_step,
    gumbel_max_step,
    init_position_state,
    run_reverse_chain,
    sample_chains,
)
from herddiff.diffusion import ForwardProcess, bundled_distribution, exact_bayes_model
from herddiff.errors import DimensionMismatch, ModelFailure, NonFiniteWeight, ValidationError
from herddiff.types import NoiseSchedule, Token, WeightVector


def state(tok, w):
    return PositionState(Token(tok, len(w)), WeightVector(w))


class ConstModel:
    """Reverse model returning a fixed per-position distribution."""

    def __init__(self, probs, L=1):
        self.probs = np.asarray(probs, dtype=np.float64)
        self.vocab_size = self.probs.size
        self.seq_len = L

    def predict(self, x, t):
        x = np.asarray(x)
        return np.broadcast_to(self.probs, x.shape + (self.vocab_size,)).copy()


def bench_model(T=16, kind="uniform"):
    data = bundled_distribution()
    proc = ForwardProcess.uniform(8, NoiseSchedule.linear(T)) if kind == "uniform" else \
        ForwardProcess.absorbing(8, NoiseSchedule.linear(T))
    return exact_bayes_model(data, proc)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(steps=0), dict(steps=3, delta=-0.1), dict(steps=3, weight_scale=0),
                                    dict(steps=3, sampler="ddim"), dict(steps=3, delta=float("nan"))])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            DenoiseConfig(**kw)


class TestDerandomizedStep:
    def test_switch_example(self):
        out = derandomized_step(state(1, [0.1, 0.2]), [0.6, 0.4], 0.0)
        assert out.token == Token(0, 2)
        assert np.allclose(out.weight.weights, [-0.3, 0.6], atol=1e-15)

    def test_hold_example(self):
        out = derandomized_step(state(1, [0.1, 0.2]), [0.6, 0.4], 0.15)
        assert out.token == Token(1, 2)
        assert np.allclose(out.weight.weights, [0.7, -0.4], atol=1e-15)

    @pytest.mark.parametrize("delta", [0.0, 0.1, 5.0])
    def test_current_is_argmax(self, delta):
        w, p = np.array([0.9, 0.1, 0.3]), np.array([0.5, 0.2, 0.3])
        out = derandomized_step(state(0, w), p, delta)
        assert out.token.index == 0
        assert np.array_equal(out.weight.weights, w + p - np.eye(3)[0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            derandomized_step(state(0, [0.1, 0.2]), [0.2, 0.3, 0.5], 0.0)

    def test_delta_zero_is_plain_argmax(self, rng):
        for _ in range(2000):
            K = int(rng.integers(1, 10))
            w = rng.normal(size=K)
            p = rng.dirichlet(np.ones(K))
            out = derandomized_step(state(int(rng.integers(K)), w), p, 0.0)
            assert out.token.index == int(np.argmax(w + p))

    def test_ties_at_zero_margin_keep_current(self):
        # two candidates tie; current is the higher index -> argmax picks 0, gap 0 -> keep
        out = derandomized_step(state(1, [0.0, 0.0]), [0.5, 0.5], 0.0)
        assert out.token.index == 1

    @given(st.integers(2, 8), st.data())
    @settings(max_examples=200)
    def test_monotone_freezing(self, K, data):
        w = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=K, max_size=K)))
        p = np.array(data.draw(st.lists(st.floats(0.01, 1), min_size=K, max_size=K)))
        p = p / p.sum()
        cur = data.draw(st.integers(0, K - 1))
        d1 = data.draw(st.floats(0, 3))
        d2 = data.draw(st.floats(0, 3))
        lo, hi = min(d1, d2), max(d1, d2)
        keep_lo = derandomized_step(state(cur, w), p, lo).token.index == cur
        keep_hi = derandomized_step(state(cur, w), p, hi).token.index == cur
        assert keep_hi or not keep_lo

    @given(st.integers(1, 8), st.data())
    def test_weight_update_uses_chosen_token(self, K, data):
        w = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=K, max_size=K)))
        p = np.full(K, 1.0 / K)
        delta = data.draw(st.floats(0, 2))
        out = derandomized_step(state(data.draw(st.integers(0, K - 1)), w), p, delta)
        assert np.array_equal(out.weight.weights, (w + p) - np.eye(K)[out.token.index])


class TestInit:
    @pytest.mark.parametrize("scale", [1.0, 0.5])
    def test_ranges(self, scale):
        g = streams.stream(3, streams.INIT)
        for _ in range(200):
            s = init_position_state(5, g, scale)
            assert 0 <= s.token.index < 5
            assert np.all((s.weight.weights >= 0) & (s.weight.weights <= scale))

    def test_determinism(self):
        a = init_position_state(6, streams.stream(1, streams.INIT))
        b = init_position_state(6, streams.stream(1, streams.INIT))
        c = init_position_state(6, streams.stream(2, streams.INIT))
        assert a.token == b.token and np.array_equal(a.weight.weights, b.weight.weights)
        assert not np.array_equal(a.weight.weights, c.weight.weights)

    def test_token_uniform(self):
        g = streams.stream(0, streams.INIT)
        counts = np.bincount([init_position_state(4, g).token.index for _ in range(8000)], minlength=4)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_bad_k(self, rng):
        with pytest.raises(ValidationError):
            init_position_state(0, rng)


class TestGumbel:
    def test_point_mass(self, rng):
        assert all(gumbel_max_step([1.0, 0.0], rng).index == 0 for _ in range(2000))

    def test_never_picks_zero_mass(self, rng):
        assert all(gumbel_max_step([0.5, 0.0, 0.5], rng).index != 1 for _ in range(2000))

    def test_binomial(self):
        g = streams.stream(11, streams.IID)
        hits = sum(gumbel_max_step([0.5, 0.5], g).index == 0 for _ in range(100_000))
        assert abs(hits / 100_000 - 0.5) <= 0.01

    @pytest.mark.slow
    def test_chi_square_over_seeds(self):
        p = np.array([0.2, 0.3, 0.5])
        ok = 0
        for seed in range(100):
            # vectorised form of the same argmax-of-perturbed-logits rule
            g = streams.stream(seed, streams.IID).gumbel(size=(100_000, 3))
            counts = np.bincount((np.log(p) + g).argmax(1), minlength=3)
            ok += stats.chisquare(counts, p * 100_000).pvalue > 1e-3
        assert ok >= 99

    def test_scalar_and_vector_agree(self):
        g1 = streams.stream(5, streams.IID)
        g2 = streams.stream(5, streams.IID)
        p = np.array([0.2, 0.3, 0.5])
        scalar = [gumbel_max_step(p, g1).index for _ in range(50)]
        vec = (np.log(p) + g2.gumbel(size=(50, 3))).argmax(1).tolist()
        assert scalar == vec


class TestChains:
    def test_single_step_is_argmax(self):
        model = bench_model(T=1)
        batch = sample_chains(model, DenoiseConfig(1), 4, 64, record=True)
        P = model.predict(batch.tokens[1], 1)
        w = batch.weights[1]
        assert np.array_equal(batch.final_tokens, (w + P).argmax(-1))

    def test_large_delta_keeps_noise(self):
        batch = sample_chains(bench_model(T=1), DenoiseConfig(1, delta=3.0), 0, 300)
        assert np.array_equal(batch.final_tokens, batch.initial_tokens)
        assert batch.switches.sum() == 0

    def test_deterministic(self):
        model = bench_model()
        a = sample_chains(model, DenoiseConfig(16), 9, 100, record=True)
        b = sample_chains(model, DenoiseConfig(16), 9, 100, record=True)
        for key in ("final_tokens", "initial_tokens", "tokens", "weights", "discrepancy", "max_weight_norm"):
            assert np.array_equal(getattr(a, key), getattr(b, key))

    def test_seeds_differ(self):
        model = bench_model()
        a = sample_chains(model, DenoiseConfig(16), 1, 200)
        b = sample_chains(model, DenoiseConfig(16), 2, 200)
        assert not np.array_equal(a.initial_tokens, b.initial_tokens)

    @pytest.mark.parametrize("kind", ["uniform", "absorbing"])
    @pytest.mark.parametrize("delta", [0.0, 0.2])
    def test_trajectory_identities(self, kind, delta):
        model = bench_model(T=12, kind=kind)
        batch = sample_chains(model, DenoiseConfig(12, delta=delta), 3, 20, record=True)
        for i in range(len(batch)):
            traj = batch.trajectory(i)
            assert traj.update_residual() <= 1e-12
            assert traj.telescoping_residual() <= 1e-12
            assert np.array_equal(traj.tokens[0], batch.final_tokens[i])

    def test_absorbing_starts_masked(self):
        batch = sample_chains(bench_model(kind="absorbing"), DenoiseConfig(16), 0, 50)
        assert np.all(batch.initial_tokens == 7)

    def test_no_randomness_after_init(self, monkeypatch):
        calls = []
        real = streams.stream

        def spy(root, purpose, *keys):
            calls.append(purpose)
            return real(root, purpose, *keys)

        monkeypatch.setattr(streams, "stream", spy)
        sample_chains(bench_model(), DenoiseConfig(16), 0, 10)
        assert calls == [streams.INIT]
        calls.clear()
        sample_chains(bench_model(), DenoiseConfig(16, sampler="gumbel"), 0, 10)
        assert calls.count(streams.GUMBEL) == 16

    def test_batching_and_workers_invariant(self):
        model = bench_model(T=8)
        cfg = DenoiseConfig(8)
        full = sample_chains(model, cfg, 5, 2500)
        threaded = sample_chains(model, cfg, 5, 2500, workers=3)
        ids = [2499, 3, 1024, 7, 2048]
        subset = sample_chains(model, cfg, 5, chain_ids=ids)
        assert np.array_equal(full.final_tokens, threaded.final_tokens)
        assert np.array_equal(full.final_tokens[ids], subset.final_tokens)
        assert np.array_equal(full.discrepancy[ids], subset.discrepancy)

    def test_gumbel_batching_invariant(self):
        model = bench_model(T=8)
        cfg = DenoiseConfig(8, sampler="gumbel")
        full = sample_chains(model, cfg, 5, 1500, workers=2)
        subset = sample_chains(model, cfg, 5, chain_ids=[1400, 2])
        assert np.array_equal(full.final_tokens[[1400, 2]], subset.final_tokens)

    def test_run_reverse_chain(self):
        model = bench_model()
        seq, traj = run_reverse_chain(model, DenoiseConfig(16), 2, chain=5)
        batch = sample_chains(model, DenoiseConfig(16), 2, 6)
        assert seq.indices == tuple(batch.final_tokens[5])
        assert traj.tokens.shape == (17, 2) and traj.probs.shape == (17, 2, 8)

    def test_model_failure(self):
        class Broken(ConstModel):
            def predict(self, x, t):
                raise RuntimeError("boom")

        with pytest.raises(ModelFailure):
            sample_chains(Broken([0.5, 0.5]), DenoiseConfig(3), 0, 4)

    @pytest.mark.parametrize("bad", [[0.7, 0.7], [1.2, -0.2], [np.nan, 1.0]])
    def test_model_invalid_output(self, bad):
        with pytest.raises(ModelFailure):
            sample_chains(ConstModel(bad), DenoiseConfig(3), 0, 4)

    def test_model_wrong_shape(self):
        class Wrong(ConstModel):
            def predict(self, x, t):
                return np.full((3,), 1 / 3)

        with pytest.raises(ModelFailure):
            sample_chains(Wrong([0.5, 0.5]), DenoiseConfig(3), 0, 4)

    def test_nonfinite_weight(self):
        with pytest.raises(NonFiniteWeight):
            sample_chains(ConstModel([0.5, 0.5]), DenoiseConfig(3, weight_scale=float("inf")), 0, 4)

    def test_const_model_herding_tracks_p(self):
        # a static target turns the chain into plain herding per position
        batch = sample_chains(ConstModel([0.7, 0.3]), DenoiseConfig(1000), 0, 4, record=True)
        for i in range(4):
            freq = np.bincount(batch.tokens[:-1, i, 0], minlength=2) / 1000
            assert np.abs(freq - [0.7, 0.3]).max() <= 2 / 1000
