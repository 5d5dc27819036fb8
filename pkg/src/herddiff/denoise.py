"""Reverse denoising chains: time-dependent herding and the Gumbel-max baseline.

Each token position carries a hybrid state (x_t, w_t). A herding step scores
every category by w_t + p_{t-1}, moves to the best one only if it beats the
current token's score by the switching margin delta, and then charges the
chosen category against the weights:

    w_{t-1} = w_t + p_{t-1} - onehot(x_{t-1})

Randomness enters a herding chain only through its initial state.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import streams
from .errors import (
    AllZeroProbability,
    DimensionMismatch,
    HerdDiffError,
    ModelFailure,
    NonFiniteWeight,
    ValidationError,
)
from .types import (
    PROB_SUM_TOL,
    ChainTrajectory,
    ProbVector,
    Token,
    TokenSequence,
    WeightVector,
)

SAMPLERS = ("herding", "gumbel")


@dataclass(frozen=True)
class DenoiseConfig:
    steps: int
    delta: float = 0.0
    weight_scale: float = 1.0
    sampler: str = "herding"

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError(f"steps must be >= 1, got {self.steps}")
        if not self.delta >= 0:
            raise ValidationError(f"delta must be >= 0, got {self.delta}")
        if not self.weight_scale > 0:
            raise ValidationError(f"weight_scale must be > 0, got {self.weight_scale}")
        if self.sampler not in SAMPLERS:
            raise ValidationError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")


@dataclass
class PositionState:
    token: Token
    weight: WeightVector

    def __post_init__(self):
        if len(self.weight) != self.token.vocab_size:
            raise DimensionMismatch("weight length must equal the vocabulary size")


def _tokens_from_uniforms(u: np.ndarray, initial: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(initial)
    idx = np.searchsorted(cdf, u, side="right")
    idx = np.minimum(idx, initial.size - 1)
    # guard against cdf rounding selecting a zero-mass category
    return np.where(initial[idx] > 0, idx, int(np.argmax(initial)))


def init_position_state(K: int, rng: np.random.Generator, weight_scale: float = 1.0,
                        initial: ProbVector | None = None) -> PositionState:
    """Draw x_T from ``initial`` (uniform by default) and w_T uniform on [0, weight_scale]^K."""
    if K < 1:
        raise ValidationError(f"K must be positive, got {K}")
    init = np.full(K, 1.0 / K) if initial is None else np.asarray(initial, dtype=np.float64)
    tok = int(_tokens_from_uniforms(np.array([rng.random()]), init)[0])
    w = rng.random(K) * weight_scale
    return PositionState(Token(tok, K), WeightVector(w))


def _select(scores: np.ndarray, current: np.ndarray, delta: float) -> np.ndarray:
    """Delayed-switching choice along the last axis of ``scores``.

    Switch to the argmax candidate iff its score exceeds the current token's
    by at least delta (strictly more than zero when delta == 0).
    """
    cand = scores.argmax(axis=-1)
    best = np.take_along_axis(scores, cand[..., None], axis=-1)[..., 0]
    here = np.take_along_axis(scores, current[..., None], axis=-1)[..., 0]
    with np.errstate(invalid="ignore"):  # inf weights are reported by the caller
        gap = best - here
    switch = gap >= delta if delta > 0 else gap > 0
    return np.where(switch, cand, current)


def derandomized_step(state: PositionState, p_next: ProbVector, delta: float) -> PositionState:
    p = np.asarray(p_next, dtype=np.float64)
    K = state.token.vocab_size
    if p.shape != (K,):
        raise DimensionMismatch(f"distribution of length {p.size} for K = {K}")
    if delta < 0:
        raise ValidationError(f"delta must be >= 0, got {delta}")
    scores = state.weight.weights + p
    nxt = int(_select(scores, np.array(state.token.index), delta))
    scores[nxt] -= 1.0
    return PositionState(Token(nxt, K), WeightVector(scores))


def _gumbel_argmax(probs: np.ndarray, gumbels: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logits = np.log(probs)
    return (logits + gumbels).argmax(axis=-1)


def gumbel_max_step(p_next: ProbVector, rng: np.random.Generator) -> Token:
    p = np.asarray(p_next, dtype=np.float64)
    if not np.any(p > 0):
        raise AllZeroProbability("cannot sample from an all-zero distribution")
    return Token(int(_gumbel_argmax(p, rng.gumbel(size=p.size))), p.size)


def _default_initial(model, K: int) -> np.ndarray:
    process = getattr(model, "process", None)
    if process is not None:
        return np.asarray(process.stationary(), dtype=np.float64)
    return np.full(K, 1.0 / K)


def _query(model, x: np.ndarray, t: int) -> np.ndarray:
    try:
        P = np.asarray(model.predict(x, t), dtype=np.float64)
    except HerdDiffError as e:
        raise ModelFailure(f"model failed at t={t}: {e}") from e
    except Exception as e:  # model code is foreign; surface anything as ModelFailure
        raise ModelFailure(f"model raised {type(e).__name__} at t={t}: {e}") from e
    expected = x.shape + (model.vocab_size,)
    if P.shape != expected:
        raise ModelFailure(f"model returned shape {P.shape}, expected {expected}")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise ModelFailure(f"model returned negative or non-finite probabilities at t={t}")
    dev = np.abs(P.sum(axis=-1) - 1.0).max()
    if dev > PROB_SUM_TOL:
        raise ModelFailure(f"model distributions deviate from unit sum by {dev:.3g} at t={t}")
    return P


@dataclass(eq=False)
class ChainBatch:
    """Outcome of many independent chains; row i is chain ``chain_ids[i]``."""

    config: DenoiseConfig
    seed: int
    chain_ids: np.ndarray
    initial_tokens: np.ndarray  # (N, L)
    final_tokens: np.ndarray  # (N, L)
    switches: np.ndarray  # (N, T); column j counts changes on the step t = T - j
    discrepancy: np.ndarray  # (N,) max over positions of ||sum (p - onehot x)||_inf / T
    max_weight_norm: np.ndarray | None  # (N,) herding only
    tokens: np.ndarray | None = None  # (T+1, N, L) when recorded
    probs: np.ndarray | None = None  # (T+1, N, L, K)
    weights: np.ndarray | None = None  # (T+1, N, L, K)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.chain_ids.size

    def trajectory(self, i: int) -> ChainTrajectory:
        if self.tokens is None:
            raise ValidationError("chains were run without recording trajectories")
        meta = dict(self.metadata, chain=int(self.chain_ids[i]))
        return ChainTrajectory(
            self.tokens[:, i].copy(),
            self.probs[:, i].copy(),
            None if self.weights is None else self.weights[:, i].copy(),
            meta,
        )


def _run_block(model, config: DenoiseConfig, seed: int, block: int, offsets: np.ndarray,
               initial: np.ndarray, record: bool) -> dict[str, np.ndarray]:
    K, L, T = model.vocab_size, model.seq_len, config.steps
    B = offsets.size
    herding = config.sampler == "herding"

    g = streams.stream(seed, streams.INIT, block)
    u = g.random((streams.BLOCK_SIZE, L))[offsets]
    w = (g.random((streams.BLOCK_SIZE, L, K)) * config.weight_scale)[offsets]
    x = _tokens_from_uniforms(u, initial)
    x0_init = x.copy()

    resid = np.zeros((B, L, K))
    switches = np.zeros((B, T), dtype=np.int64)
    wmax = np.abs(w).max(axis=(1, 2)) if herding else None
    eye = np.eye(K)
    if record:
        rec_x = np.empty((T + 1, B, L), dtype=np.int64)
        rec_p = np.empty((T + 1, B, L, K))
        rec_w = np.empty((T + 1, B, L, K)) if herding else None
        rec_x[T], rec_p[T] = x, initial
        if herding:
            rec_w[T] = w

    rows = np.arange(B)[:, None]
    cols = np.arange(L)[None, :]
    for t in range(T, 0, -1):
        P = _query(model, x, t)
        if herding:
            scores = w + P
            nxt = _select(scores, x, config.delta)
            scores[rows, cols, nxt] -= 1.0
            w = scores
            if not np.all(np.isfinite(w)):
                raise NonFiniteWeight(f"non-finite herding weight at t={t}")
            np.maximum(wmax, np.abs(w).max(axis=(1, 2)), out=wmax)
        else:
            gum = streams.stream(seed, streams.GUMBEL, block, t).gumbel(size=(streams.BLOCK_SIZE, L, K))
            nxt = _gumbel_argmax(P, gum[offsets])
        resid += P - eye[nxt]
        switches[:, T - t] = (nxt != x).sum(axis=1)
        x = nxt
        if record:
            rec_x[t - 1], rec_p[t - 1] = x, P
            if herding:
                rec_w[t - 1] = w

    out = {
        "initial_tokens": x0_init,
        "final_tokens": x,
        "switches": switches,
        "discrepancy": np.abs(resid).max(axis=(1, 2)) / T,
        "max_weight_norm": wmax,
    }
    if record:
        out.update(tokens=rec_x, probs=rec_p, weights=rec_w)
    return out


def sample_chains(model, config: DenoiseConfig, seed: int, n_chains: int | None = None, *,
                  chain_ids=None, workers: int = 1, record: bool = False,
                  initial: ProbVector | None = None) -> ChainBatch:
    """Run independent reverse chains ``0..n_chains-1`` (or the given ``chain_ids``).

    Chains are grouped into fixed blocks of random streams, so chain i's
    result is the same whether it runs alone, in a batch, or on a worker
    thread.
    """
    if chain_ids is None:
        if n_chains is None or n_chains < 1:
            raise ValidationError(f"need at least one chain, got {n_chains}")
        chain_ids = np.arange(n_chains)
    chain_ids = np.asarray(chain_ids, dtype=np.int64).reshape(-1)
    if chain_ids.size == 0 or chain_ids.min() < 0:
        raise ValidationError("chain ids must be nonnegative and nonempty")
    K = model.vocab_size
    init = _default_initial(model, K) if initial is None else np.asarray(initial, dtype=np.float64)
    if init.shape != (K,):
        raise DimensionMismatch(f"initial distribution of length {init.size} for K = {K}")

    blocks, offs = np.divmod(chain_ids, streams.BLOCK_SIZE)
    jobs = [(int(b), offs[blocks == b]) for b in np.unique(blocks)]
    run = lambda job: _run_block(model, config, seed, job[0], job[1], init, record)  # noqa: E731
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(job) for job in jobs]

    # jobs are grouped by block; restore the caller's chain order
    order = np.concatenate([np.flatnonzero(blocks == b) for b, _ in jobs])
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)

    def cat(key, axis=0):
        if parts[0][key] is None:
            return None
        return np.take(np.concatenate([p[key] for p in parts], axis=axis), inverse, axis=axis)

    meta = {"seed": int(seed), "delta": config.delta, "weight_scale": config.weight_scale,
            "sampler": config.sampler, "process": getattr(getattr(model, "process", None), "kind", None)}
    return ChainBatch(
        config=config,
        seed=int(seed),
        chain_ids=chain_ids,
        initial_tokens=cat("initial_tokens"),
        final_tokens=cat("final_tokens"),
        switches=cat("switches"),
        discrepancy=cat("discrepancy"),
        max_weight_norm=cat("max_weight_norm"),
        tokens=cat("tokens", 1) if record else None,
        probs=cat("probs", 1) if record else None,
        weights=cat("weights", 1) if record else None,
        metadata=meta,
    )


def run_reverse_chain(model, config: DenoiseConfig, seed: int, chain: int = 0,
                      initial: ProbVector | None = None) -> tuple[TokenSequence, ChainTrajectory]:
    batch = sample_chains(model, config, seed, chain_ids=[chain], record=True, initial=initial)
    traj = batch.trajectory(0)
    return TokenSequence(tuple(batch.final_tokens[0]), model.vocab_size), traj

