"""Brute-force reference computations and the oracle-check suite.

The functions here deliberately avoid the closed forms used by
:mod:`herddiff.diffusion`: single-step matrices are written out entry by
entry, cumulative matrices are explicit products, and posteriors come from
enumerating Bayes' rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import streams
from .denoise import DenoiseConfig, sample_chains
from .diffusion import (
    DataDistribution,
    ExactBayesModel,
    ForwardProcess,
    bundled_distribution,
    make_process,
)
from .errors import ZeroMassPosterior
from .herding import discrepancy, herding_run
from .metrics import exact_chain_slices, sequence_distribution, total_variation
from .types import NoiseSchedule


def step_matrix_entrywise(process: ForwardProcess, t: int) -> np.ndarray:
    K, beta = process.vocab_size, process.schedule.beta(t)
    Q = np.empty((K, K))
    for i in range(K):
        for j in range(K):
            if process.kind == "uniform":
                Q[i, j] = (1.0 - beta) * (i == j) + beta / K
            else:
                Q[i, j] = (1.0 - beta) * (i == j) + beta * (i == process.mask_index)
    return Q


def explicit_product(process: ForwardProcess, s: int, t: int) -> np.ndarray:
    """Q_t Q_{t-1} ... Q_{s+1} by repeated multiplication."""
    M = np.eye(process.vocab_size)
    for tau in range(s + 1, t + 1):
        M = step_matrix_entrywise(process, tau) @ M
    return M


def brute_force_posterior(x_t: int, x0: int, process: ForwardProcess, t: int) -> np.ndarray:
    """q(x_{t-1} | x_t, x_0) = q(x_t | x_{t-1}) q(x_{t-1} | x_0) / q(x_t | x_0), enumerated."""
    K = process.vocab_size
    Qt = step_matrix_entrywise(process, t)
    before = explicit_product(process, 0, t - 1)
    evidence = explicit_product(process, 0, t)[x_t, x0]
    if evidence == 0.0:
        raise ZeroMassPosterior(f"x_t={x_t} unreachable from x_0={x0} at t={t}")
    return np.array([Qt[x_t, j] * before[j, x0] for j in range(K)]) / evidence


def brute_force_reverse_model(data: DataDistribution, process: ForwardProcess, x_t, t: int) -> np.ndarray:
    """Per-position p(x_{t-1}^l | x_t) by summing the joint over (x_0, x_{t-1}^l)."""
    K, L = data.vocab_size, data.seq_len
    Qt = step_matrix_entrywise(process, t)
    before = explicit_product(process, 0, t - 1)
    after = explicit_product(process, 0, t)
    out = np.zeros((L, K))
    for pos in range(L):
        for x0, p0 in data.as_dict().items():
            others = 1.0
            for m in range(L):
                if m != pos:
                    others *= after[x_t[m], x0[m]]
            for j in range(K):
                out[pos, j] += p0 * others * Qt[x_t[pos], j] * before[j, x0[pos]]
        out[pos] /= out[pos].sum()
    return out


def random_schedule(rng: np.random.Generator, steps: int) -> NoiseSchedule:
    return NoiseSchedule.from_betas(rng.uniform(0.01, 0.99, size=steps))


@dataclass
class CheckResult:
    name: str
    deviation: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: max deviation {self.deviation:.3e} (tol {self.tolerance:.1e}) {self.detail}".rstrip()


def _check(name, dev, tol, detail="") -> CheckResult:
    return CheckResult(name, float(dev), tol, bool(dev <= tol), detail)


def check_closed_form(rng, n: int = 50) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        K, T = int(rng.integers(1, 9)), int(rng.integers(1, 17))
        sched = random_schedule(rng, T)
        for proc in (ForwardProcess.uniform(K, sched),
                     ForwardProcess.absorbing(K, sched, int(rng.integers(K)))):
            for s in range(T):
                for t in range(s + 1, T + 1):
                    worst = max(worst, np.abs(proc.cumulative_matrix(s, t) - explicit_product(proc, s, t)).max())
    return _check("closed_form_vs_product", worst, 1e-12, f"({n} schedules, both processes)")


def check_chapman_kolmogorov(rng, n: int = 50) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        K, T = int(rng.integers(1, 9)), int(rng.integers(2, 17))
        sched = random_schedule(rng, T)
        for proc in (ForwardProcess.uniform(K, sched), ForwardProcess.absorbing(K, sched)):
            t = int(rng.integers(2, T + 1))
            s = int(rng.integers(1, t))
            lhs = proc.cumulative_matrix(0, t)
            rhs = proc.cumulative_matrix(s, t) @ proc.cumulative_matrix(0, s)
            worst = max(worst, np.abs(lhs - rhs).max())
    return _check("chapman_kolmogorov", worst, 1e-12)


def check_posterior(rng, n: int = 200) -> CheckResult:
    from .diffusion import reverse_posterior
    from .types import Token

    worst, impossible, mismatched = 0.0, 0, 0
    for _ in range(n):
        K, T = int(rng.integers(1, 7)), int(rng.integers(1, 9))
        sched = random_schedule(rng, T)
        kind = "uniform" if rng.random() < 0.5 else "absorbing"
        proc = make_process(kind, K, sched, int(rng.integers(K)))
        t = int(rng.integers(1, T + 1))
        xt, x0 = int(rng.integers(K)), int(rng.integers(K))
        try:
            ref = brute_force_posterior(xt, x0, proc, t)
        except ZeroMassPosterior:
            impossible += 1
            try:
                reverse_posterior(Token(xt, K), Token(x0, K), proc, t)
                mismatched += 1
            except ZeroMassPosterior:
                pass
            continue
        got = reverse_posterior(Token(xt, K), Token(x0, K), proc, t).probs
        worst = max(worst, np.abs(got - ref).max())
    res = _check("posterior_vs_enumeration", worst, 1e-10, f"({impossible} impossible cases)")
    if mismatched:
        res.passed = False
        res.detail += f"; {mismatched} impossible cases did not raise"
    return res


def check_bayes_model(model: ExactBayesModel, rng, n_queries: int = 20) -> CheckResult:
    K, L, T = model.vocab_size, model.seq_len, model.process.steps
    worst = 0.0
    for _ in range(n_queries):
        t = int(rng.integers(1, T + 1))
        x_t = model.data.support[int(rng.integers(model.data.support.shape[0]))].copy()
        if model.process.kind == "uniform":
            x_t = rng.integers(K, size=L)
        ref = brute_force_reverse_model(model.data, model.process, x_t, t)
        worst = max(worst, np.abs(model.predict(x_t, t) - ref).max())
    return _check("bayes_model_vs_enumeration", worst, 1e-10)


def check_dp_conservation(model: ExactBayesModel) -> CheckResult:
    slices = exact_chain_slices(model, model.process.steps)
    dev = np.abs(slices.sum(axis=1) - 1.0).max()
    return _check("dp_conservation", dev, 1e-10, f"({slices.shape[0]} time slices)")


def toy_k3_model(steps: int = 4) -> ExactBayesModel:
    data = bundled_distribution("toy_k3")
    return ExactBayesModel(data, ForwardProcess.uniform(3, NoiseSchedule.linear(steps)))


def gumbel_vs_dp_tv(model: ExactBayesModel, seed: int, n_chains: int) -> float:
    T = model.process.steps
    exact = exact_chain_slices(model, T)[0]
    batch = sample_chains(model, DenoiseConfig(T, sampler="gumbel"), seed, n_chains)
    return total_variation(sequence_distribution(batch.final_tokens, model.vocab_size), exact)


def check_gumbel_vs_dp(seed: int, n_chains: int = 100_000) -> CheckResult:
    tv = gumbel_vs_dp_tv(toy_k3_model(), seed, n_chains)
    return _check("gumbel_vs_dp", tv, 0.01, f"(K=3, L=1, T=4, {n_chains} chains)")


def check_herding_identity(rng, n: int = 20, inject_fault: bool = False) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        K, T = int(rng.integers(2, 17)), int(rng.integers(1, 5001))
        p = rng.dirichlet(np.ones(K))
        w0 = rng.random(K)
        samples, state = herding_run(p, w0, T)
        if inject_fault:
            samples = samples.copy()
            samples[0] = (samples[0] + 1) % K
        worst = max(worst, np.abs(discrepancy(samples, p, w0, state.w)).max())
    name = "herding_discrepancy" + ("[fault injected]" if inject_fault else "")
    return _check(name, worst, 1e-12)


def check_trajectory_identity(model, config: DenoiseConfig, seed: int) -> CheckResult:
    cfg = DenoiseConfig(config.steps, config.delta, config.weight_scale, "herding")
    batch = sample_chains(model, cfg, seed, 8, record=True)
    worst = 0.0
    for i in range(len(batch)):
        traj = batch.trajectory(i)
        worst = max(worst, traj.update_residual(), traj.telescoping_residual())
    return _check("trajectory_identity", worst, 1e-12, "(8 herding chains)")


def run_oracle_suite(model: ExactBayesModel, config: DenoiseConfig, seed: int,
                     inject_fault: bool = False, mc_chains: int = 100_000) -> list[CheckResult]:
    rng = streams.stream(seed, streams.IID, 1)
    return [
        check_closed_form(rng),
        check_chapman_kolmogorov(rng),
        check_posterior(rng),
        check_bayes_model(model, rng),
        check_dp_conservation(model),
        check_gumbel_vs_dp(seed, mc_chains),
        check_herding_identity(rng, inject_fault=inject_fault),
        check_trajectory_identity(model, config, seed),
    ]


