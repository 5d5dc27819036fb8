"""Shared domain types.

Categorical states are stored as integer indices; the one-hot form is only
materialized on request. Every vector-valued type wraps a read-only numpy
array that has been validated at construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import (
    BetaOutOfRange,
    DimensionMismatch,
    EmptyVector,
    NegativeEntry,
    NonFiniteWeight,
    SumOutOfTolerance,
    ValidationError,
)

PROB_SUM_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Token:
    index: int
    vocab_size: int

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ValidationError(f"vocab_size must be positive, got {self.vocab_size}")
        if not 0 <= self.index < self.vocab_size:
            raise ValidationError(f"token index {self.index} outside [0, {self.vocab_size})")


def onehot(token: Token) -> np.ndarray:
    v = np.zeros(token.vocab_size)
    v[token.index] = 1.0
    return v


def token_from_onehot(v) -> Token:
    """Inverse of :func:`onehot`; rejects anything that is not exactly one-hot."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("one-hot vector must be a nonempty 1-d array")
    ones = np.flatnonzero(v == 1.0)
    if ones.size != 1 or np.count_nonzero(v) != 1:
        raise ValidationError(f"not a one-hot vector: {v}")
    return Token(int(ones[0]), v.size)


@dataclass(frozen=True)
class TokenSequence:
    indices: tuple[int, ...]
    vocab_size: int

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        for i in self.indices:
            if not 0 <= i < self.vocab_size:
                raise ValidationError(f"token index {i} outside [0, {self.vocab_size})")

    @property
    def tokens(self) -> list[Token]:
        return [Token(i, self.vocab_size) for i in self.indices]

    def __len__(self) -> int:
        return len(self.indices)

    def as_array(self) -> np.ndarray:
        return np.array(self.indices, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class ProbVector:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))

    @property
    def size(self) -> int:
        return self.probs.size

    def __len__(self) -> int:
        return self.probs.size

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def __eq__(self, other):
        return isinstance(other, ProbVector) and np.array_equal(self.probs, other.probs)

    __hash__ = None


def validate_prob_vector(v: Sequence[float] | np.ndarray) -> ProbVector:
    """Check nonnegativity and unit sum; never renormalizes."""
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionMismatch(f"probability vector must be 1-d, got shape {a.shape}")
    if a.size == 0:
        raise EmptyVector("probability vector is empty")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"probability vector has non-finite entries: {a}")
    if np.any(a < 0):
        raise NegativeEntry(f"negative probability at index {int(np.argmin(a))}: {a.min()}")
    total = math.fsum(a)
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise SumOutOfTolerance(f"probabilities sum to {total!r}, not 1")
    return ProbVector(a)


@dataclass(eq=False)
class WeightVector:
    """Mutable herding weight; the only mutable domain object."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, copy=True)
        if self.weights.ndim != 1 or self.weights.size == 0:
            raise DimensionMismatch(f"weight vector must be nonempty 1-d, got shape {self.weights.shape}")
        self.check_finite()

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.weights)):
            raise NonFiniteWeight(f"non-finite herding weight: {self.weights}")

    def copy(self) -> WeightVector:
        return WeightVector(self.weights)

    def __len__(self) -> int:
        return self.weights.size


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Column-stochastic matrix; entry (i, j) is P(next = i | current = j)."""

    entries: np.ndarray

    def __post_init__(self):
        a = _frozen(self.entries)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise DimensionMismatch(f"transition matrix must be square, got shape {a.shape}")
        if np.any(a < 0) or np.any(a > 1):
            raise ValidationError("transition matrix entries must lie in [0, 1]")
        dev = np.abs(a.sum(axis=0) - 1.0).max()
        if dev > PROB_SUM_TOL:
            raise SumOutOfTolerance(f"column sums deviate from 1 by {dev:.3g}")
        object.__setattr__(self, "entries", a)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def __matmul__(self, other):
        if isinstance(other, TransitionMatrix):
            return self.entries @ other.entries
        return self.entries @ np.asarray(other)

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


_BETA_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step corruption rates beta_1..beta_T and cumulative retention.

    ``cumulative_alphas[t]`` is prod_{s<=t} (1 - beta_s), accumulated in log
    space, with ``cumulative_alphas[0] == 1``.
    """

    betas: np.ndarray
    cumulative_alphas: np.ndarray = field(init=False)
    log_alphas: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        b = _frozen(self.betas)
        if b.ndim != 1 or b.size == 0:
            raise BetaOutOfRange("schedule needs at least one step")
        if np.any(~np.isfinite(b)) or np.any(b <= 0) or np.any(b >= 1):
            raise BetaOutOfRange(f"every beta must lie in (0, 1), got min {b.min()} max {b.max()}")
        log_alphas = np.concatenate([[0.0], np.cumsum(np.log1p(-b))])
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "log_alphas", _frozen(log_alphas))
        object.__setattr__(self, "cumulative_alphas", _frozen(np.exp(log_alphas)))

    @property
    def steps(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        """Rate of step t, 1-based."""
        return float(self.betas[t - 1])

    def retention(self, s: int, t: int) -> float:
        """prod_{tau=s+1..t} (1 - beta_tau)."""
        return math.exp(self.log_alphas[t] - self.log_alphas[s])

    @classmethod
    def from_betas(cls, betas) -> NoiseSchedule:
        return cls(np.asarray(betas, dtype=np.float64))

    @classmethod
    def linear(cls, steps: int) -> NoiseSchedule:
        """Cumulative retention falling linearly, alpha_bar_t = 1 - t/T."""
        if steps < 1:
            raise BetaOutOfRange(f"steps must be >= 1, got {steps}")
        t = np.arange(1, steps + 1, dtype=np.float64)
        # beta_t = 1 - abar_t / abar_{t-1} = 1 / (T - t + 1)
        betas = 1.0 / (steps - t + 1.0)
        return cls(np.clip(betas, _BETA_FLOOR, 1.0 - _BETA_FLOOR))

    @classmethod
    def geometric(cls, steps: int, final_alpha: float = 1e-3) -> NoiseSchedule:
        """Constant beta chosen so that alpha_bar_T == final_alpha."""
        if steps < 1:
            raise BetaOutOfRange(f"steps must be >= 1, got {steps}")
        if not 0 < final_alpha < 1:
            raise BetaOutOfRange(f"final_alpha must lie in (0, 1), got {final_alpha}")
        beta = -math.expm1(math.log(final_alpha) / steps)
        return cls(np.full(steps, np.clip(beta, _BETA_FLOOR, 1.0 - _BETA_FLOOR)))

    @classmethod
    def named(cls, kind: str, steps: int) -> NoiseSchedule:
        if kind == "linear":
            return cls.linear(steps)
        if kind == "geometric":
            return cls.geometric(steps)
        raise ValidationError(f"unknown schedule kind {kind!r}")


@dataclass(eq=False)
class ChainTrajectory:
    """Record of one reverse chain, indexed by time.

    ``tokens[t, l]`` is x_t at position l, ``weights[t, l]`` is w_t and
    ``probs[t, l]`` the distribution x_t was chosen against (the stationary
    distribution at t == T). ``weights`` is None for stochastic chains.
    """

    tokens: np.ndarray
    probs: np.ndarray
    weights: np.ndarray | None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n_records = self.tokens.shape[0]
        if self.probs.shape[0] != n_records or (
            self.weights is not None and self.weights.shape[0] != n_records
        ):
            raise DimensionMismatch("every trajectory array needs T+1 time records")

    @property
    def steps(self) -> int:
        return self.tokens.shape[0] - 1

    def update_residual(self) -> float:
        """max |w_{t-1} - w_t - p_{t-1} + onehot(x_{t-1})| over all steps."""
        if self.weights is None:
            raise ValidationError("stochastic trajectories carry no weights")
        K = self.probs.shape[-1]
        eye = np.eye(K)
        res = self.weights[:-1] - self.weights[1:] - self.probs[:-1] + eye[self.tokens[:-1]]
        return float(np.abs(res).max()) if res.size else 0.0

    def telescoping_residual(self) -> float:
        """max over t of |(w_t - w_T) - sum_{tau=t}^{T-1} (p_tau - onehot(x_tau))|."""
        if self.weights is None:
            raise ValidationError("stochastic trajectories carry no weights")
        K = self.probs.shape[-1]
        T = self.steps
        inc = self.probs[:T] - np.eye(K)[self.tokens[:T]]
        # suffix sums: tail[t] = sum_{tau >= t} inc[tau]
        tail = np.cumsum(inc[::-1], axis=0)[::-1]
        res = (self.weights[:T] - self.weights[T]) - tail
        return float(np.abs(res).max()) if res.size else 0.0
