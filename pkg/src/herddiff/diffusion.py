"""Forward corruption processes and an exact-Bayes reverse model.

Matrices follow the column convention: ``Q[i, j]`` is the probability of
moving to category ``i`` from category ``j``, so a distribution ``v``
evolves as ``Q @ v``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import (
    BadMaskIndex,
    BadTimeRange,
    BetaOutOfRange,
    DimensionMismatch,
    EnumerationCapExceeded,
    ValidationError,
    ZeroMassPosterior,
)
from .types import (
    NoiseSchedule,
    ProbVector,
    Token,
    TokenSequence,
    TransitionMatrix,
    validate_prob_vector,
)

ENUMERATION_CAP = 4096
PROCESS_KINDS = ("uniform", "absorbing")


def _check_beta(beta: float) -> None:
    if not 0.0 < beta < 1.0:
        raise BetaOutOfRange(f"beta must lie in (0, 1), got {beta}")


def _uniform_matrix(keep: float, K: int) -> np.ndarray:
    return keep * np.eye(K) + (1.0 - keep) / K


def _absorbing_matrix(keep: float, K: int, mask: int) -> np.ndarray:
    Q = keep * np.eye(K)
    Q[mask, :] += 1.0 - keep
    return Q


def uniform_transition(beta: float, K: int) -> TransitionMatrix:
    _check_beta(beta)
    if K < 1:
        raise ValidationError(f"K must be positive, got {K}")
    return TransitionMatrix(_uniform_matrix(1.0 - beta, K))


def absorbing_transition(beta: float, K: int, mask_index: int) -> TransitionMatrix:
    _check_beta(beta)
    if not 0 <= mask_index < K:
        raise BadMaskIndex(f"mask index {mask_index} outside [0, {K})")
    return TransitionMatrix(_absorbing_matrix(1.0 - beta, K, mask_index))


@dataclass(frozen=True, eq=False)
class ForwardProcess:
    kind: str
    vocab_size: int
    schedule: NoiseSchedule
    mask_index: int | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in PROCESS_KINDS:
            raise ValidationError(f"process kind must be one of {PROCESS_KINDS}, got {self.kind!r}")
        if self.vocab_size < 1:
            raise ValidationError(f"K must be positive, got {self.vocab_size}")
        if self.kind == "absorbing":
            if self.mask_index is None or not 0 <= self.mask_index < self.vocab_size:
                raise BadMaskIndex(f"mask index {self.mask_index} outside [0, {self.vocab_size})")

    @classmethod
    def uniform(cls, K: int, schedule: NoiseSchedule) -> ForwardProcess:
        return cls("uniform", K, schedule)

    @classmethod
    def absorbing(cls, K: int, schedule: NoiseSchedule, mask_index: int | None = None) -> ForwardProcess:
        return cls("absorbing", K, schedule, K - 1 if mask_index is None else mask_index)

    @property
    def steps(self) -> int:
        return self.schedule.steps

    def _matrix(self, keep: float) -> np.ndarray:
        if self.kind == "uniform":
            return _uniform_matrix(keep, self.vocab_size)
        return _absorbing_matrix(keep, self.vocab_size, self.mask_index)

    def step_matrix(self, t: int) -> np.ndarray:
        """Q_t as a read-only array, 1 <= t <= T."""
        if not 1 <= t <= self.steps:
            raise BadTimeRange(f"step {t} outside [1, {self.steps}]")
        key = ("step", t)
        if key not in self._cache:
            m = self._matrix(1.0 - self.schedule.beta(t))
            m.setflags(write=False)
            self._cache[key] = m
        return self._cache[key]

    def cumulative_matrix(self, s: int, t: int) -> np.ndarray:
        """Q_t Q_{t-1} ... Q_{s+1} in closed form; identity when s == t."""
        if not 0 <= s <= t <= self.steps:
            raise BadTimeRange(f"need 0 <= s <= t <= {self.steps}, got s={s}, t={t}")
        key = ("cum", s, t)
        if key not in self._cache:
            m = self._matrix(self.schedule.retention(s, t))
            m.setflags(write=False)
            self._cache[key] = m
        return self._cache[key]

    def stationary(self) -> np.ndarray:
        if self.kind == "uniform":
            return np.full(self.vocab_size, 1.0 / self.vocab_size)
        v = np.zeros(self.vocab_size)
        v[self.mask_index] = 1.0
        return v

    def posterior_table(self, t: int) -> np.ndarray:
        """R[i, k0, j] = q(x_{t-1} = j | x_t = i, x_0 = k0); zero rows mark impossible pairs."""
        key = ("post", t)
        if key not in self._cache:
            Qt = self.step_matrix(t)
            prev = self.cumulative_matrix(0, t - 1)
            num = Qt[:, None, :] * prev.T[None, :, :]
            tot = num.sum(axis=-1, keepdims=True)
            R = np.divide(num, tot, out=np.zeros_like(num), where=tot > 0)
            R.setflags(write=False)
            self._cache[key] = R
        return self._cache[key]


def make_process(kind: str, K: int, schedule: NoiseSchedule, mask_index: int | None = None) -> ForwardProcess:
    if kind == "uniform":
        return ForwardProcess.uniform(K, schedule)
    if kind == "absorbing":
        return ForwardProcess.absorbing(K, schedule, mask_index)
    raise ValidationError(f"process kind must be one of {PROCESS_KINDS}, got {kind!r}")


def cumulative_transition(process: ForwardProcess, s: int, t: int) -> TransitionMatrix:
    if not 0 <= s < t <= process.steps:
        raise BadTimeRange(f"need 0 <= s < t <= {process.steps}, got s={s}, t={t}")
    return TransitionMatrix(process.cumulative_matrix(s, t))


def stationary_distribution(process: ForwardProcess) -> ProbVector:
    return ProbVector(process.stationary())


def forward_sample(x0: TokenSequence, process: ForwardProcess, t: int, rng: np.random.Generator) -> TokenSequence:
    """Draw x_t ~ Cat(Qbar(0, t) onehot(x_0)) independently per position."""
    if not 1 <= t <= process.steps:
        raise BadTimeRange(f"t={t} outside [1, {process.steps}]")
    if x0.vocab_size != process.vocab_size:
        raise DimensionMismatch("sequence vocabulary does not match the process")
    cols = process.cumulative_matrix(0, t)[:, x0.as_array()].T  # (L, K)
    cdf = np.cumsum(cols, axis=1)
    u = rng.random(len(x0))
    idx = np.minimum((cdf <= u[:, None]).sum(axis=1), process.vocab_size - 1)
    # cdf rounding must never land on a zero-probability category
    idx = np.where(cols[np.arange(len(x0)), idx] > 0, idx, cols.argmax(axis=1))
    return TokenSequence(tuple(idx), process.vocab_size)


def reverse_posterior(x_t: Token, x0: Token, process: ForwardProcess, t: int) -> ProbVector:
    """q(x_{t-1} | x_t, x_0) proportional to Q_t[x_t, :] * Qbar(0, t-1)[:, x_0]."""
    if not 1 <= t <= process.steps:
        raise BadTimeRange(f"t={t} outside [1, {process.steps}]")
    K = process.vocab_size
    if x_t.vocab_size != K or x0.vocab_size != K:
        raise DimensionMismatch("token vocabulary does not match the process")
    num = process.step_matrix(t)[x_t.index, :] * process.cumulative_matrix(0, t - 1)[:, x0.index]
    total = num.sum()
    if total <= 0:
        raise ZeroMassPosterior(f"x_t={x_t.index} is unreachable from x_0={x0.index} at t={t}")
    return validate_prob_vector(num / total)


@dataclass(frozen=True, eq=False)
class DataDistribution:
    """Finite distribution over length-L sequences of K categories."""

    vocab_size: int
    seq_len: int
    support: np.ndarray
    probs: ProbVector
    cap: int = ENUMERATION_CAP

    def __post_init__(self):
        sup = np.array(self.support, dtype=np.int64)
        if sup.ndim != 2 or sup.shape[1] != self.seq_len or sup.shape[0] == 0:
            raise DimensionMismatch(f"support must have shape (S, {self.seq_len}), got {sup.shape}")
        if sup.shape[0] > self.cap:
            raise EnumerationCapExceeded(f"support size {sup.shape[0]} exceeds cap {self.cap}")
        if sup.min() < 0 or sup.max() >= self.vocab_size:
            raise ValidationError(f"support tokens must lie in [0, {self.vocab_size})")
        if np.unique(sup, axis=0).shape[0] != sup.shape[0]:
            raise ValidationError("support sequences must be distinct")
        probs = self.probs if isinstance(self.probs, ProbVector) else validate_prob_vector(self.probs)
        if probs.size != sup.shape[0]:
            raise DimensionMismatch(f"{probs.size} probabilities for {sup.shape[0]} support sequences")
        sup.setflags(write=False)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probs", probs)

    @property
    def K(self) -> int:
        return self.vocab_size

    @property
    def L(self) -> int:
        return self.seq_len

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(v) for v in row): float(p) for row, p in zip(self.support, self.probs.probs)}

    def to_json(self) -> dict:
        return {
            "K": self.vocab_size,
            "L": self.seq_len,
            "support": self.support.tolist(),
            "probs": self.probs.probs.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict, cap: int = ENUMERATION_CAP) -> DataDistribution:
        try:
            return cls(int(doc["K"]), int(doc["L"]), doc["support"], doc["probs"], cap)
        except KeyError as e:
            raise ValidationError(f"data distribution is missing field {e.args[0]!r}") from None


def load_data_distribution(path: str | Path, cap: int = ENUMERATION_CAP) -> DataDistribution:
    with open(path) as fh:
        return DataDistribution.from_json(json.load(fh), cap)


def bundled_distribution(name: str = "default_benchmark") -> DataDistribution:
    text = resources.files("herddiff.data").joinpath(f"{name}.json").read_text()
    return DataDistribution.from_json(json.loads(text))


@runtime_checkable
class ReverseModel(Protocol):
    """Anything that maps (x_t, t) to per-position distributions over x_{t-1}.

    ``predict`` accepts a sequence of shape (L,) or a batch of shape (B, L)
    and returns an array of shape (..., L, K) whose last axis holds valid
    probability vectors.
    """

    vocab_size: int
    seq_len: int

    def predict(self, x_t: np.ndarray, t: int) -> np.ndarray: ...


class ExactBayesModel:
    """Reverse transitions of the true posterior under a known data distribution.

    p(x_0 | x_t) is computed by enumerating the data support, then each
    position gets sum_{x_0} q(x_{t-1} | x_t, x_0) p(x_0 | x_t) using that
    position's marginal of the posterior.

    Herding chains can reach sequences that no support element explains
    (e.g. under the absorbing process, after unmasking a token with zero
    predicted mass). For such inputs the model falls back to a factorized
    posterior: each position uses the data marginal at that position as its
    prior, and a flat prior if even that has zero evidence. ``strict=True``
    raises ZeroMassPosterior instead.
    """

    def __init__(self, data: DataDistribution, process: ForwardProcess, strict: bool = False):
        if data.vocab_size != process.vocab_size:
            raise DimensionMismatch("data and process disagree on K")
        self.data = data
        self.process = process
        self.vocab_size = data.vocab_size
        self.seq_len = data.seq_len
        self.strict = strict
        # one-hot of the support, per position: (L, S, K)
        self._support_onehot = np.eye(data.vocab_size)[data.support.T]

    def _predict_unique(self, xs: np.ndarray, t: int) -> np.ndarray:
        sup = self.data.support
        Qbar = self.process.cumulative_matrix(0, t)
        lik = np.ones((xs.shape[0], sup.shape[0]))
        for pos in range(self.seq_len):
            lik *= Qbar[xs[:, pos][:, None], sup[None, :, pos]]
        post = lik * self.data.probs.probs
        tot = post.sum(axis=1, keepdims=True)
        dead = tot[:, 0] <= 0
        if np.any(dead) and self.strict:
            bad = xs[int(np.flatnonzero(dead)[0])]
            raise ZeroMassPosterior(f"sequence {bad.tolist()} has zero likelihood at t={t}")
        post /= np.where(dead[:, None], 1.0, tot)
        R = self.process.posterior_table(t)
        out = np.empty((xs.shape[0], self.seq_len, self.vocab_size))
        for pos in range(self.seq_len):
            marg = post @ self._support_onehot[pos]  # (u, K0)
            if np.any(dead):
                marg[dead] = self._factorized_marginal(xs[dead, pos], pos, Qbar)
            out[:, pos, :] = np.einsum("uk,ukj->uj", marg, R[xs[:, pos]])
        return out

    def _factorized_marginal(self, x: np.ndarray, pos: int, Qbar: np.ndarray) -> np.ndarray:
        lik = Qbar[x]  # (n, K0)
        m = lik * (self.data.probs.probs @ self._support_onehot[pos])
        tot = m.sum(axis=1, keepdims=True)
        flat = tot[:, 0] <= 0
        m[flat] = lik[flat]
        tot[flat] = lik[flat].sum(axis=1, keepdims=True)
        if np.any(tot <= 0):
            raise ZeroMassPosterior(f"token {int(x[np.argmin(tot[:, 0])])} unreachable at position {pos}")
        return m / tot

    def predict(self, x_t, t: int) -> np.ndarray:
        if not 1 <= t <= self.process.steps:
            raise BadTimeRange(f"t={t} outside [1, {self.process.steps}]")
        x = np.asarray(x_t, dtype=np.int64)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.seq_len:
            raise DimensionMismatch(f"expected sequences of length {self.seq_len}, got shape {x.shape}")
        uniq, inv = np.unique(x2, axis=0, return_inverse=True)
        out = self._predict_unique(uniq, t)[inv.reshape(-1)]
        return out[0] if single else out

    def distributions(self, seq: TokenSequence, t: int) -> list[ProbVector]:
        return [validate_prob_vector(row) for row in self.predict(seq.as_array(), t)]


def exact_bayes_model(data: DataDistribution, process: ForwardProcess, strict: bool = False) -> ExactBayesModel:
    return ExactBayesModel(data, process, strict)
