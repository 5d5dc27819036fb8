"""Static herding over a finite sample space.

Two entry points: general feature herding, where each element of an
enumerated sample space has a feature vector, and the categorical case
(features are one-hot vectors) that the reverse denoiser builds on.
Ties in every argmax go to the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ValidationError
from .types import ProbVector, Token, WeightVector, validate_prob_vector


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Column j of ``features`` is phi(x_j); ``targets`` is the moment vector mu."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        f = np.array(self.features, dtype=np.float64)
        mu = np.array(self.targets, dtype=np.float64).reshape(-1)
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise DimensionMismatch(f"features must be a nonempty N x |V| matrix, got {f.shape}")
        if mu.size != f.shape[0]:
            raise DimensionMismatch(f"{mu.size} targets for {f.shape[0]} features")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(mu))):
            raise ValidationError("feature table entries must be finite")
        f.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "targets", mu)

    @property
    def n_features(self) -> int:
        return self.features.shape[0]

    @property
    def n_states(self) -> int:
        return self.features.shape[1]

    @classmethod
    def categorical(cls, p) -> FeatureTable:
        p = np.asarray(p, dtype=np.float64)
        return cls(np.eye(p.size), p)


@dataclass(eq=False)
class HerdingState:
    weight: WeightVector
    step_count: int = 0
    initial_weight: WeightVector | None = None

    def __post_init__(self):
        if not isinstance(self.weight, WeightVector):
            self.weight = WeightVector(self.weight)
        if self.initial_weight is None:
            self.initial_weight = self.weight.copy()
        elif not isinstance(self.initial_weight, WeightVector):
            self.initial_weight = WeightVector(self.initial_weight)
        if len(self.initial_weight) != len(self.weight):
            raise DimensionMismatch("weight and initial_weight lengths differ")

    @property
    def w(self) -> np.ndarray:
        return self.weight.weights

    def advanced(self, new_weights: np.ndarray) -> HerdingState:
        nxt = HerdingState(WeightVector(new_weights), self.step_count + 1, self.initial_weight)
        nxt.weight.check_finite()
        return nxt


def feature_herding_step(state: HerdingState, table: FeatureTable) -> tuple[int, HerdingState]:
    w = state.w
    if w.size != table.n_features:
        raise DimensionMismatch(f"weight length {w.size} != feature count {table.n_features}")
    scores = w @ table.features
    j = int(np.argmax(scores))
    with np.errstate(over="ignore", invalid="ignore"):
        new_w = w + table.targets - table.features[:, j]
    return j, state.advanced(new_w)


def categorical_herding_step(state: HerdingState, p: ProbVector) -> tuple[Token, HerdingState]:
    w = state.w
    pv = np.asarray(p)
    if w.size != pv.size:
        raise DimensionMismatch(f"weight length {w.size} != K = {pv.size}")
    k = int(np.argmax(w))
    with np.errstate(over="ignore", invalid="ignore"):
        new_w = w + pv
    new_w[k] -= 1.0
    return Token(k, pv.size), state.advanced(new_w)


def _herd_loop(p: np.ndarray, w: np.ndarray, steps: int, norms: np.ndarray | None) -> np.ndarray:
    """In-place categorical herding on ``w``; returns the sample indices.

    Evaluation order matches the single-step functions exactly: (w + p) - 1.
    """
    samples = np.empty(steps, dtype=np.int64)
    argmax = w.argmax
    if norms is None:
        for t in range(steps):
            k = argmax()
            samples[t] = k
            w += p
            w[k] -= 1.0
    else:
        absmax = np.abs
        norms[0] = absmax(w).max()
        for t in range(steps):
            k = argmax()
            samples[t] = k
            w += p
            w[k] -= 1.0
            norms[t + 1] = absmax(w).max()
    return samples


def _check_run_inputs(p, w0, steps):
    pv = p if isinstance(p, ProbVector) else validate_prob_vector(p)
    w = np.array(w0.weights if isinstance(w0, WeightVector) else w0, dtype=np.float64)
    if w.ndim != 1 or w.size != pv.size:
        raise DimensionMismatch(f"initial weight shape {w.shape} does not match K = {pv.size}")
    if steps < 1:
        raise ValidationError(f"need at least one step, got {steps}")
    return np.array(pv.probs), w


def herding_run(p, w0, steps: int) -> tuple[np.ndarray, HerdingState]:
    """Run categorical herding for ``steps`` steps from weight ``w0``.

    Returns the sampled category indices (length ``steps``) and the final
    state, whose ``initial_weight`` is ``w0``.
    """
    pv, w = _check_run_inputs(p, w0, steps)
    w_init = WeightVector(w)
    samples = _herd_loop(pv, w, steps, None)
    # non-finite values are sticky under addition, so the check in
    # WeightVector at the end covers every step
    return samples, HerdingState(WeightVector(w), steps, w_init)


def weight_norm_trace(p, w0, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`herding_run` but also returns ||w_t||_inf for t = 0..steps."""
    pv, w = _check_run_inputs(p, w0, steps)
    norms = np.empty(steps + 1)
    samples = _herd_loop(pv, w, steps, norms)
    if not np.all(np.isfinite(norms)):
        WeightVector(w)  # raises NonFiniteWeight
    return samples, norms


def discrepancy(samples, p, w0, w_final) -> np.ndarray:
    """Residual of the telescoping identity

        p - mean(onehot(x_t)) == (w_T - w_0) / T

    computed component-wise with exactly rounded summation. A genuine
    herding run gives zero up to rounding.
    """
    pv = np.asarray(p, dtype=np.float64)
    w0 = np.asarray(getattr(w0, "weights", w0), dtype=np.float64)
    wT = np.asarray(getattr(w_final, "weights", w_final), dtype=np.float64)
    samples = np.asarray(samples, dtype=np.int64)
    if not (pv.shape == w0.shape == wT.shape) or pv.ndim != 1:
        raise DimensionMismatch("p, w0 and w_T must be 1-d of equal length")
    if samples.ndim != 1 or samples.size == 0:
        raise DimensionMismatch("samples must be a nonempty 1-d sequence")
    if samples.min() < 0 or samples.max() >= pv.size:
        raise DimensionMismatch("sample index outside [0, K)")
    T = samples.size
    counts = np.bincount(samples, minlength=pv.size)
    return np.array([
        math.fsum((pv[k], -counts[k] / T, -wT[k] / T, w0[k] / T)) for k in range(pv.size)
    ])
