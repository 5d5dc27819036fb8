"""Sample-quality metrics and exact reference distributions."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from . import streams
from .denoise import ChainBatch
from .diffusion import ENUMERATION_CAP, DataDistribution
from .errors import (
    DimensionMismatch,
    EmptySampleSet,
    EnumerationCapExceeded,
    ValidationError,
)
from .herding import _herd_loop
from .types import ProbVector, TokenSequence, validate_prob_vector


def total_variation(p, q) -> float:
    a = np.asarray(p, dtype=np.float64)
    b = np.asarray(q, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    return 0.5 * math.fsum(np.abs(a - b))


def empirical_distribution(samples, K: int) -> ProbVector:
    s = np.asarray([getattr(x, "index", x) for x in samples] if isinstance(samples, list) else samples,
                   dtype=np.int64).reshape(-1)
    if s.size == 0:
        raise EmptySampleSet("no samples")
    if s.min() < 0 or s.max() >= K:
        raise DimensionMismatch(f"sample outside [0, {K})")
    return validate_prob_vector(np.bincount(s, minlength=K) / s.size)


def _as_token_array(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return samples
    rows = [s.indices if isinstance(s, TokenSequence) else s for s in samples]
    return np.asarray(rows, dtype=np.int64)


def token_entropy(samples) -> float:
    """Entropy in nats of the unigram distribution pooled over all positions and samples."""
    arr = _as_token_array(samples).reshape(-1)
    if arr.size == 0:
        raise EmptySampleSet("no samples")
    counts = np.bincount(arr)
    freq = counts[counts > 0] / arr.size
    return max(0.0, -math.fsum(freq * np.log(freq)))


def sequence_index(tokens: np.ndarray, K: int) -> np.ndarray:
    """Lexicographic index of each row (position 0 most significant)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    return np.ravel_multi_index(tokens.T, (K,) * tokens.shape[1])


def sequence_distribution(tokens, K: int, cap: int = ENUMERATION_CAP) -> np.ndarray:
    tokens = _as_token_array(tokens)
    if tokens.size == 0:
        raise EmptySampleSet("no samples")
    S = K ** tokens.shape[1]
    if S > cap:
        raise EnumerationCapExceeded(f"K^L = {S} exceeds cap {cap}")
    return np.bincount(sequence_index(tokens, K), minlength=S) / tokens.shape[0]


def tv_to_data(tokens, data: DataDistribution) -> float:
    """Total variation between the empirical distribution of sampled sequences and ``data``."""
    tokens = _as_token_array(tokens)
    if tokens.shape[0] == 0:
        raise EmptySampleSet("no samples")
    n = tokens.shape[0]
    counts = Counter(map(tuple, tokens.tolist()))
    target = data.as_dict()
    terms = [abs(p - counts.get(seq, 0) / n) for seq, p in target.items()]
    terms += [c / n for seq, c in counts.items() if seq not in target]
    return 0.5 * math.fsum(terms)


def data_vector(data: DataDistribution, cap: int = ENUMERATION_CAP) -> np.ndarray:
    S = data.vocab_size ** data.seq_len
    if S > cap:
        raise EnumerationCapExceeded(f"K^L = {S} exceeds cap {cap}")
    v = np.zeros(S)
    v[sequence_index(data.support, data.vocab_size)] = data.probs.probs
    return v


def all_sequences(K: int, L: int) -> np.ndarray:
    """Every length-L sequence over K categories, in lexicographic order."""
    return np.indices((K,) * L).reshape(L, -1).T.copy()


def exact_chain_slices(model, steps: int, initial=None, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """Exact law of x_t for the stochastic reverse chain, t = 0..steps.

    Row t of the result is a distribution over all K^L sequences. The chain
    starts from the product of ``initial`` (the process's stationary law by
    default) and at each step moves every position independently according
    to the model's per-position distributions.
    """
    K, L = model.vocab_size, model.seq_len
    S = K ** L
    if S > cap:
        raise EnumerationCapExceeded(f"K^L = {S} exceeds cap {cap}")
    if initial is None:
        process = getattr(model, "process", None)
        initial = process.stationary() if process is not None else np.full(K, 1.0 / K)
    init = np.asarray(initial, dtype=np.float64)
    states = all_sequences(K, L)

    mass = init[states].prod(axis=1)
    out = np.empty((steps + 1, S))
    out[steps] = mass
    chunk = max(1, (1 << 22) // S)
    for t in range(steps, 0, -1):
        live = np.flatnonzero(mass > 0)
        P = model.predict(states[live], t)  # (n, L, K)
        new = np.zeros(S)
        for lo in range(0, live.size, chunk):
            part = P[lo:lo + chunk]
            rows = part[:, 0, :]
            for pos in range(1, L):
                rows = (rows[:, :, None] * part[:, pos, None, :]).reshape(rows.shape[0], -1)
            new += mass[live[lo:lo + chunk]] @ rows
        mass = new
        out[t - 1] = mass
    return out


def exact_chain_marginals(model, process=None, steps: int | None = None, sampler: str = "stochastic",
                          cap: int = ENUMERATION_CAP) -> np.ndarray:
    """Exact distribution of x_0 over all K^L sequences for the stochastic chain."""
    if sampler != "stochastic":
        raise ValidationError("only the stochastic chain has a distributional oracle")
    if steps is None:
        steps = process.steps
    initial = None if process is None else process.stationary()
    return exact_chain_slices(model, steps, initial, cap)[0]


def fit_loglog_slope(T: Sequence[float], err: Sequence[float]) -> float:
    """Least-squares slope of log(err) against log(T) over the points with err > 0.

    NaN when fewer than two points are positive (e.g. herding on a point mass).
    """
    T = np.asarray(T, dtype=np.float64)
    err = np.asarray(err, dtype=np.float64)
    keep = err > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(T[keep]), np.log(err[keep]), 1)[0])


@dataclass
class ConvergenceCurve:
    sampler: str
    T: np.ndarray
    seeds: list[int]
    errors: np.ndarray  # (n_seeds, len(T))
    slope: float

    @property
    def mean_errors(self) -> np.ndarray:
        return self.errors.mean(axis=0)


def _prefix_errors(p: np.ndarray, samples: np.ndarray, grid: np.ndarray) -> np.ndarray:
    K = p.size
    out = np.empty(grid.size)
    counts = np.zeros(K, dtype=np.int64)
    prev = 0
    for i, T in enumerate(grid):
        counts += np.bincount(samples[prev:T], minlength=K)
        prev = T
        out[i] = np.abs(p - counts / T).max()
    return out


def convergence_curve(p, sampler: str, T_grid: Iterable[int], seeds, *, weight_scale: float = 1.0,
                      w0=None) -> ConvergenceCurve:
    """Max-norm error of the running empirical frequency against ``p``.

    Each seed produces one sample stream of length max(T_grid) and is
    evaluated on its prefixes. Herding seeds draw w0 uniformly on
    [0, weight_scale]^K unless ``w0`` is given. The reported slope is fitted
    to the error averaged over seeds.
    """
    pv = np.asarray(p if isinstance(p, ProbVector) else validate_prob_vector(p), dtype=np.float64)
    grid = np.asarray(list(T_grid), dtype=np.int64)
    if grid.size == 0 or grid.min() < 1 or np.any(np.diff(grid) <= 0):
        raise ValidationError("T_grid must be a nonempty increasing sequence of positive ints")
    seeds = list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]
    if not seeds:
        raise ValidationError("need at least one seed")
    K, Tmax = pv.size, int(grid[-1])
    errors = np.empty((len(seeds), grid.size))
    for i, seed in enumerate(seeds):
        if sampler == "herding":
            if w0 is None:
                w = streams.stream(seed, streams.INIT).random(K) * weight_scale
            else:
                w = np.array(w0, dtype=np.float64)
            samples = _herd_loop(pv, w, Tmax, None)
        elif sampler == "gumbel":
            g = streams.stream(seed, streams.IID)
            with np.errstate(divide="ignore"):
                logp = np.log(pv)
            samples = (logp + g.gumbel(size=(Tmax, K))).argmax(axis=1)
        else:
            raise ValidationError(f"unknown sampler {sampler!r}")
        errors[i] = _prefix_errors(pv, samples, grid)
    return ConvergenceCurve(sampler, grid, seeds, errors, fit_loglog_slope(grid, errors.mean(axis=0)))


@dataclass
class RunMetrics:
    sampler: str
    tv_to_target: float
    token_entropy: float
    max_weight_norm: float | None
    discrepancy_norm: float
    switch_counts: list[int]  # summed over chains and positions, one entry per step t = T..1

    def __post_init__(self):
        if not 0.0 <= self.tv_to_target <= 1.0 + 1e-12:
            raise ValidationError(f"tv out of range: {self.tv_to_target}")
        for name in ("tv_to_target", "token_entropy", "discrepancy_norm"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} is not finite")

    @property
    def total_switches(self) -> int:
        return int(sum(self.switch_counts))

    def to_json(self) -> dict:
        return asdict(self)


def run_metrics(batch: ChainBatch, data: DataDistribution) -> RunMetrics:
    return RunMetrics(
        sampler=batch.config.sampler,
        tv_to_target=tv_to_data(batch.final_tokens, data),
        token_entropy=token_entropy(batch.final_tokens),
        max_weight_norm=None if batch.max_weight_norm is None else float(batch.max_weight_norm.max()),
        discrepancy_norm=float(batch.discrepancy.max()),
        switch_counts=[int(c) for c in batch.switches.sum(axis=0)],
    )
