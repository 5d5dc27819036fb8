"""Experiment configuration: one JSON document, overridable field by field."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .diffusion import (
    PROCESS_KINDS,
    DataDistribution,
    ExactBayesModel,
    bundled_distribution,
    load_data_distribution,
    make_process,
)
from .errors import HerdDiffError, ValidationError
from .types import NoiseSchedule, validate_prob_vector

BUNDLED_PREFIX = "bundled:"


class ConfigError(ValidationError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    process: str = "uniform"
    K: int | None = None
    L: int | None = None
    steps: int = 64
    schedule: str = "linear"
    sampler: str = "both"
    delta: float = 0.0
    weight_scale: float = 1.0
    chains: int = 4096
    seed: int = 0
    data: str = BUNDLED_PREFIX + "default_benchmark"
    mask_index: int | None = None
    workers: int = 1
    oracle: bool = False
    probs: list[float] = field(default_factory=lambda: [0.7, 0.2, 0.1])
    t_grid: list[int] = field(default_factory=lambda: [100, 1000, 10000, 100000])
    n_seeds: int = 100
    deltas: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2, 0.5])
    mc_chains: int = 100_000

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration field")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError("config", f"cannot read {path}: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config", "top level must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def override(self, **changes) -> ExperimentConfig:
        doc = self.to_dict()
        doc.update({k: v for k, v in changes.items() if v is not None})
        return ExperimentConfig.from_dict(doc)

    def load_data(self) -> DataDistribution:
        try:
            if self.data.startswith(BUNDLED_PREFIX):
                return bundled_distribution(self.data[len(BUNDLED_PREFIX):])
            if not Path(self.data).is_file():
                raise ConfigError("data", f"file not found: {self.data}")
            return load_data_distribution(self.data)
        except ConfigError:
            raise
        except (HerdDiffError, OSError, ValueError, json.JSONDecodeError) as e:
            raise ConfigError("data", str(e)) from None

    def check_common(self) -> None:
        if self.process not in PROCESS_KINDS:
            raise ConfigError("process", f"must be one of {PROCESS_KINDS}")
        if self.schedule not in ("linear", "geometric"):
            raise ConfigError("schedule", "must be 'linear' or 'geometric'")
        if self.sampler not in ("herding", "gumbel", "both"):
            raise ConfigError("sampler", "must be 'herding', 'gumbel' or 'both'")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ConfigError("steps", f"must be a positive integer, got {self.steps!r}")
        if not isinstance(self.chains, int) or self.chains < 1:
            raise ConfigError("chains", f"must be a positive integer, got {self.chains!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", f"must be a nonnegative integer, got {self.seed!r}")
        if not self.delta >= 0:
            raise ConfigError("delta", f"must be >= 0, got {self.delta!r}")
        if not self.weight_scale > 0:
            raise ConfigError("weight_scale", f"must be > 0, got {self.weight_scale!r}")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers", f"must be a positive integer, got {self.workers!r}")

    def check_herd_cat(self) -> None:
        self.check_common()
        try:
            validate_prob_vector(self.probs)
        except ValidationError as e:
            raise ConfigError("probs", str(e)) from None
        grid = self.t_grid
        if not grid or any(not isinstance(t, int) or t < 1 for t in grid) or any(
            b <= a for a, b in zip(grid, grid[1:])
        ):
            raise ConfigError("t_grid", "must be a nonempty increasing list of positive integers")
        if not isinstance(self.n_seeds, int) or self.n_seeds < 1:
            raise ConfigError("n_seeds", f"must be a positive integer, got {self.n_seeds!r}")

    def check_sweep(self) -> None:
        if not self.deltas:
            raise ConfigError("deltas", "must be nonempty")
        if any(d < 0 for d in self.deltas) or any(b < a for a, b in zip(self.deltas, self.deltas[1:])):
            raise ConfigError("deltas", "must be nonnegative and nondecreasing")

    def build_model(self) -> tuple[DataDistribution, ExactBayesModel]:
        """Resolve K and L from the data file and build the exact reverse model."""
        self.check_common()
        data = self.load_data()
        if self.K is not None and self.K != data.vocab_size:
            raise ConfigError("K", f"config says {self.K} but the data distribution has K={data.vocab_size}")
        if self.L is not None and self.L != data.seq_len:
            raise ConfigError("L", f"config says {self.L} but the data distribution has L={data.seq_len}")
        self.K, self.L = data.vocab_size, data.seq_len
        try:
            process = make_process(self.process, data.vocab_size, NoiseSchedule.named(self.schedule, self.steps),
                                   self.mask_index)
        except HerdDiffError as e:
            raise ConfigError("mask_index" if "mask" in str(e) else "process", str(e)) from None
        if process.mask_index is not None:
            self.mask_index = process.mask_index
        return data, ExactBayesModel(data, process)
