"""Command-line driver.

Every subcommand writes three files into ``--out``: ``results.csv``,
``metrics.json`` and ``resolved_config.json``. Outputs are only written after
the whole computation succeeds, so a failed run leaves no partial files.

CSV columns
-----------
herd-cat     sampler,T,seed,max_norm_error,fitted_slope
diffuse      chain,sampler,initial_tokens,final_tokens,max_weight_norm,discrepancy_norm,switches
sweep-delta  delta,tv_to_data,token_entropy,max_weight_norm,discrepancy_norm,total_switches,mean_switches_per_chain
oracle-check check,deviation,tolerance,passed

Floats are written with 17 significant digits; token sequences as
space-separated indices.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import ConfigError, ExperimentConfig
from .denoise import DenoiseConfig, sample_chains
from .diffusion import ENUMERATION_CAP
from .errors import EnumerationCapExceeded, HerdDiffError
from .metrics import (
    convergence_curve,
    data_vector,
    exact_chain_slices,
    run_metrics,
    sequence_distribution,
    total_variation,
)
from .oracles import run_oracle_suite

log = logging.getLogger("herddiff")


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _tokens_str(row) -> str:
    return " ".join(str(int(v)) for v in row)


def _csv_bytes(header: Sequence[str], rows: list[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    return buf.getvalue()


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write_outputs(out: Path, csv_text: str, metrics: dict, config: ExperimentConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    resolved = config.to_dict()
    (out / "results.csv").write_text(csv_text)
    (out / "metrics.json").write_text(_json_text(dict(metrics, config=resolved)))
    (out / "resolved_config.json").write_text(_json_text(resolved))


def _samplers(config: ExperimentConfig) -> list[str]:
    return ["herding", "gumbel"] if config.sampler == "both" else [config.sampler]


def cmd_herd_cat(config: ExperimentConfig) -> tuple[str, dict]:
    config.check_herd_cat()
    rows, summary = [], {}
    for sampler in _samplers(config):
        curve = convergence_curve(config.probs, sampler, config.t_grid, config.n_seeds,
                                  weight_scale=config.weight_scale)
        for i, seed in enumerate(curve.seeds):
            for j, T in enumerate(curve.T):
                rows.append((sampler, int(T), seed, curve.errors[i, j], curve.slope))
        summary[sampler] = {"T": curve.T.tolist(), "mean_error": curve.mean_errors.tolist(),
                            "fitted_slope": curve.slope}
        log.info("%s: fitted slope %.4f", sampler, curve.slope)
    text = _csv_bytes(["sampler", "T", "seed", "max_norm_error", "fitted_slope"], rows)
    return text, {"curves": summary}


def _denoise_config(config: ExperimentConfig, sampler: str, delta: float | None = None) -> DenoiseConfig:
    return DenoiseConfig(config.steps, config.delta if delta is None else delta, config.weight_scale, sampler)


def cmd_diffuse(config: ExperimentConfig) -> tuple[str, dict]:
    data, model = config.build_model()
    oracle = None
    if config.oracle:
        exact = exact_chain_slices(model, config.steps)[0]  # raises EnumerationCapExceeded first
        oracle = {"tv_dp_to_data": total_variation(exact, data_vector(data))}
    rows, runs = [], {}
    batches = {}
    for sampler in _samplers(config):
        batch = sample_chains(model, _denoise_config(config, sampler), config.seed, config.chains,
                              workers=config.workers)
        batches[sampler] = batch
        m = run_metrics(batch, data)
        runs[sampler] = m.to_json()
        if oracle is not None:
            emp = sequence_distribution(batch.final_tokens, data.vocab_size)
            oracle[f"tv_{sampler}_to_dp"] = total_variation(emp, exact)
        log.info("%s: TV to data %.5f, entropy %.4f", sampler, m.tv_to_target, m.token_entropy)
    for i in range(config.chains):
        for sampler, b in batches.items():
            rows.append((
                int(b.chain_ids[i]), sampler, _tokens_str(b.initial_tokens[i]), _tokens_str(b.final_tokens[i]),
                None if b.max_weight_norm is None else b.max_weight_norm[i], b.discrepancy[i],
                int(b.switches[i].sum()),
            ))
    header = ["chain", "sampler", "initial_tokens", "final_tokens", "max_weight_norm", "discrepancy_norm",
              "switches"]
    metrics: dict[str, Any] = {"runs": runs}
    if oracle is not None:
        metrics["oracle"] = oracle
    return _csv_bytes(header, rows), metrics


def cmd_sweep_delta(config: ExperimentConfig) -> tuple[str, dict]:
    config.check_sweep()
    data, model = config.build_model()
    rows, table = [], []
    for delta in config.deltas:
        batch = sample_chains(model, _denoise_config(config, "herding", delta), config.seed, config.chains,
                              workers=config.workers)
        m = run_metrics(batch, data)
        rows.append((delta, m.tv_to_target, m.token_entropy, m.max_weight_norm, m.discrepancy_norm,
                     m.total_switches, m.total_switches / config.chains))
        table.append(dict(m.to_json(), delta=delta))
        log.info("delta=%g: TV %.5f entropy %.4f switches %d", delta, m.tv_to_target, m.token_entropy,
                 m.total_switches)
    header = ["delta", "tv_to_data", "token_entropy", "max_weight_norm", "discrepancy_norm", "total_switches",
              "mean_switches_per_chain"]
    return _csv_bytes(header, rows), {"sweep": table}


def cmd_oracle_check(config: ExperimentConfig, inject_fault: bool = False) -> tuple[str, dict, bool]:
    _, model = config.build_model()
    S = model.vocab_size ** model.seq_len
    if S > ENUMERATION_CAP:
        raise EnumerationCapExceeded(f"K^L = {S} exceeds the enumeration cap {ENUMERATION_CAP}")
    results = run_oracle_suite(model, _denoise_config(config, "herding"), config.seed,
                               inject_fault=inject_fault, mc_chains=config.mc_chains)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("oracle-check:", "all checks passed" if ok else
          "FAILED: " + ", ".join(r.name for r in results if not r.passed))
    rows = [(r.name, r.deviation, r.tolerance, r.passed) for r in results]
    metrics = {"checks": [vars(r) for r in results], "passed": ok, "inject_fault": inject_fault}
    return _csv_bytes(["check", "deviation", "tolerance", "passed"], rows), metrics, ok


def _float_list(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _int_list(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file; flags override its fields")
    common.add_argument("--seed", type=int)
    common.add_argument("--steps", type=int)
    common.add_argument("--chains", type=int)
    common.add_argument("--delta", type=float)
    common.add_argument("--weight-scale", dest="weight_scale", type=float)
    common.add_argument("--sampler", choices=["herding", "gumbel", "both"])
    common.add_argument("--process", choices=["uniform", "absorbing"])
    common.add_argument("--schedule", choices=["linear", "geometric"])
    common.add_argument("--data", help="data distribution JSON (default: bundled benchmark)")
    common.add_argument("--workers", type=int, help="worker threads for chain blocks")
    common.add_argument("--out", type=Path, default=Path("results"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="herddiff", description="Herding-based discrete denoising toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("herd-cat", parents=[common], help="convergence of categorical herding vs Gumbel-max")
    p.add_argument("--probs", type=_float_list, help="target distribution, comma separated")
    p.add_argument("--t-grid", dest="t_grid", type=_int_list)
    p.add_argument("--n-seeds", dest="n_seeds", type=int)

    p = sub.add_parser("diffuse", parents=[common], help="run reverse chains on a data distribution")
    p.add_argument("--oracle", action="store_true", default=None, help="also compute the exact chain law")

    p = sub.add_parser("sweep-delta", parents=[common], help="herding trade-off over switching margins")
    p.add_argument("--deltas", type=_float_list)

    p = sub.add_parser("oracle-check", parents=[common], help="run every oracle equivalence")
    p.add_argument("--mc-chains", dest="mc_chains", type=int)
    p.add_argument("--inject-fault", dest="inject_fault", action="store_true",
                   help="flip one herding sample to demonstrate a failing identity check")
    return parser


_CONFIG_FLAGS = ("seed", "steps", "chains", "delta", "weight_scale", "sampler", "process", "schedule", "data",
                 "workers", "probs", "t_grid", "n_seeds", "oracle", "deltas", "mc_chains")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        config = config.override(**{k: getattr(args, k, None) for k in _CONFIG_FLAGS})
        ok = True
        if args.command == "herd-cat":
            text, metrics = cmd_herd_cat(config)
        elif args.command == "diffuse":
            text, metrics = cmd_diffuse(config)
        elif args.command == "sweep-delta":
            text, metrics = cmd_sweep_delta(config)
        else:
            text, metrics, ok = cmd_oracle_check(config, args.inject_fault)
    except ConfigError as e:
        print(f"herddiff: invalid config: {e}", file=sys.stderr)
        return 2
    except (HerdDiffError, TypeError, ValueError) as e:
        print(f"herddiff: error: {e}", file=sys.stderr)
        return 2
    _write_outputs(args.out, text, metrics, config)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
