"""Declarative experiment configuration (YAML or JSON)."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..augment import METHODS
from ..core import DataError
from ..noise import check_noise
from ..solvers import LAMBDA_CONVENTIONS, LogRegConfig
from ..synthgen import MixtureSpec, fig1_spec


@dataclass(frozen=True)
class Grid:
    """Candidate values plus the convention used to turn them into penalty
    strengths (ignored for non-penalty grids)."""

    values: tuple
    convention: str = "absolute"

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise DataError("invalid-config", "grids must be nonempty")
        if self.convention not in LAMBDA_CONVENTIONS:
            raise DataError("invalid-config", f"unknown lambda convention {self.convention}")
        object.__setattr__(self, "values", vals)

    def to_dict(self) -> dict:
        return {"values": list(self.values), "convention": self.convention}


def _logspace(lo, hi, num):
    return tuple(np.logspace(np.log10(float(lo)), np.log10(float(hi)), int(num)))


LAMBDA_PRESETS = {
    # inverse strength C, 20 log-spaced values
    "default": Grid(_logspace(1e-4, 1.0, 20), "inverse"),
}
LAMBDA_ID_PRESETS = {
    "default": Grid(_logspace(1e-7, 1e-3, 20), "inverse"),
    "easy": Grid(_logspace(1e-1, 1e2, 20), "inverse"),
}
UPWEIGHT_PRESETS = {
    "5-20": Grid(tuple(np.linspace(5, 20, 5))),
    "20-40": Grid(tuple(np.linspace(20, 40, 5))),
    "4-10": Grid(tuple(np.linspace(4, 10, 5))),
}


def parse_grid(raw, presets: dict, default: str | None = None) -> Grid:
    """Accepts a preset name, a list of values, or a mapping with one of
    ``preset``, ``values``, ``logspace: [lo, hi, num]``,
    ``linspace: [lo, hi, num]`` and an optional ``convention``."""
    if raw is None:
        raw = default
    if isinstance(raw, Grid):
        return raw
    if isinstance(raw, str):
        if raw not in presets:
            raise DataError("invalid-config", f"unknown grid preset {raw!r}; choose from {sorted(presets)}")
        return presets[raw]
    if isinstance(raw, (list, tuple)):
        return Grid(tuple(raw))
    if not isinstance(raw, dict):
        raise DataError("invalid-config", f"cannot parse grid {raw!r}")
    if "preset" in raw:
        return parse_grid(raw["preset"], presets)
    conv = raw.get("convention", "absolute")
    if "values" in raw:
        return Grid(tuple(raw["values"]), conv)
    if "logspace" in raw:
        return Grid(_logspace(*raw["logspace"]), conv)
    if "linspace" in raw:
        lo, hi, num = raw["linspace"]
        return Grid(tuple(np.linspace(float(lo), float(hi), int(num))), conv)
    raise DataError("invalid-config", f"cannot parse grid {raw!r}")


@dataclass(frozen=True)
class MethodEntry:
    """A method name plus options; ``label`` keys results and fixed
    hyperparameters and defaults to the method name."""

    method: str
    loss: str = "logistic"
    penalty: str = "l1"
    averaging_runs: int = 10
    label: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError("invalid-method", f"unknown method {self.method!r}")
        if self.loss not in ("logistic", "squared"):
            raise DataError("invalid-config", f"unknown loss {self.loss}")
        if not self.label:
            object.__setattr__(self, "label", self.method if self.loss == "logistic" else f"{self.method}-{self.loss}")

    @classmethod
    def parse(cls, raw) -> "MethodEntry":
        if isinstance(raw, str):
            return cls(raw)
        if isinstance(raw, dict) and "method" in raw:
            return cls(**raw)
        raise DataError("invalid-config", f"cannot parse method entry {raw!r}")

    def to_dict(self) -> dict:
        return dict(method=self.method, loss=self.loss, penalty=self.penalty, averaging_runs=self.averaging_runs, label=self.label)


@dataclass(frozen=True)
class DataSource:
    """Either a mixture to sample ``n`` validation points from, or a CSV."""

    spec: MixtureSpec | None = None
    n: int = 10_000
    csv: str | None = None

    def __post_init__(self):
        if (self.spec is None) == (self.csv is None):
            raise DataError("invalid-config", "data needs exactly one of synthetic / csv")
        if self.spec is not None and self.n < 2:
            raise DataError("invalid-config", "n must be >= 2")

    @property
    def synthetic(self) -> bool:
        return self.spec is not None

    @classmethod
    def parse(cls, raw: dict, base: Path | None = None) -> "DataSource":
        if not isinstance(raw, dict):
            raise DataError("invalid-config", "data must be a mapping")
        if "csv" in raw:
            p = Path(raw["csv"])
            if base is not None and not p.is_absolute():
                p = base / p
            return cls(csv=str(p))
        syn = raw.get("synthetic")
        if syn == "fig1":
            spec = fig1_spec()
        elif isinstance(syn, dict):
            spec = MixtureSpec.from_dict(syn)
        else:
            raise DataError("invalid-config", "data.synthetic must be 'fig1' or a mixture mapping")
        if "pi0" in raw:
            spec = spec.with_pi0(raw["pi0"])
        return cls(spec=spec, n=int(raw.get("n", 10_000)))

    def to_dict(self) -> dict:
        if self.csv is not None:
            return {"csv": self.csv}
        return {"synthetic": self.spec.to_dict(), "n": self.n}


@dataclass(frozen=True)
class MSelfGrid:
    finetune_steps: int = 500
    learning_rate: Grid = field(default_factory=lambda: Grid((1e-4, 1e-3, 1e-2)))
    points_per_class: Grid = field(default_factory=lambda: Grid((20, 100, 500)))

    @classmethod
    def parse(cls, raw) -> "MSelfGrid":
        raw = raw or {}
        base = cls()
        return cls(
            int(raw.get("finetune_steps", base.finetune_steps)),
            parse_grid(raw.get("learning_rate"), {}, base.learning_rate),
            parse_grid(raw.get("points_per_class"), {}, base.points_per_class),
        )

    def to_dict(self) -> dict:
        return {
            "finetune_steps": self.finetune_steps,
            "learning_rate": self.learning_rate.to_dict(),
            "points_per_class": self.points_per_class.to_dict(),
        }


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSource
    methods: tuple = ()
    retrain_fraction: float = 0.5
    noise_levels: tuple = (0.0, 0.05, 0.10, 0.15, 0.20)
    noise_seeds: int = 10
    train_runs: int = 10
    master_seed: int = 0
    lambda_grid: Grid = LAMBDA_PRESETS["default"]
    lambda_id_grid: Grid = LAMBDA_ID_PRESETS["default"]
    upweight_grid: Grid = UPWEIGHT_PRESETS["5-20"]
    mself: MSelfGrid = field(default_factory=MSelfGrid)
    fixed: dict = field(default_factory=dict)
    standardize: bool = False
    resample_per_seed: bool = False
    metric: str = "holdout"
    solver: LogRegConfig = field(default_factory=LogRegConfig)

    def __post_init__(self):
        if not 0.0 < self.retrain_fraction < 1.0:
            raise DataError("invalid-config", "retrain_fraction must be in (0, 1)")
        object.__setattr__(self, "noise_levels", tuple(check_noise(p) for p in self.noise_levels))
        object.__setattr__(self, "methods", tuple(MethodEntry.parse(m) for m in self.methods))
        labels = [m.label for m in self.methods]
        if len(set(labels)) != len(labels):
            raise DataError("invalid-config", f"duplicate method labels {labels}")
        if not self.noise_levels:
            raise DataError("invalid-config", "noise_levels must be nonempty")
        if self.noise_seeds < 1 or self.train_runs < 1:
            raise DataError("invalid-config", "noise_seeds and train_runs must be >= 1")
        if self.metric not in ("holdout", "population"):
            raise DataError("invalid-config", f"unknown metric {self.metric}")
        if self.metric == "population" and not self.data.synthetic:
            raise DataError("invalid-config", "population metric needs a synthetic data source")
        if self.resample_per_seed and not self.data.synthetic:
            raise DataError("invalid-config", "resample_per_seed needs a synthetic data source")

    @classmethod
    def from_dict(cls, raw: dict, base: Path | None = None) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise DataError("invalid-config", "config must be a mapping")
        known = {
            "data", "methods", "split", "noise_levels", "noise_seeds", "train_runs", "master_seed",
            "grids", "fixed", "standardize", "resample_per_seed", "metric", "solver",
        }
        unknown = set(raw) - known
        if unknown:
            raise DataError("invalid-config", f"unknown config keys {sorted(unknown)}")
        grids = raw.get("grids") or {}
        split = raw.get("split") or {}
        solver = raw.get("solver") or {}
        kw = dict(
            data=DataSource.parse(raw.get("data"), base),
            methods=tuple(raw.get("methods") or ()),
            retrain_fraction=float(split.get("retrain_fraction", 0.5)),
            lambda_grid=parse_grid(grids.get("lambda"), LAMBDA_PRESETS, "default"),
            lambda_id_grid=parse_grid(grids.get("lambda_id"), LAMBDA_ID_PRESETS, "default"),
            upweight_grid=parse_grid(grids.get("upweight"), UPWEIGHT_PRESETS, "5-20"),
            mself=MSelfGrid.parse(grids.get("mself")),
            fixed=dict(raw.get("fixed") or {}),
            standardize=bool(raw.get("standardize", False)),
            resample_per_seed=bool(raw.get("resample_per_seed", False)),
            metric=raw.get("metric", "holdout"),
            solver=LogRegConfig(max_iters=int(solver.get("max_iters", 10_000)), tol=float(solver.get("tol", 1e-8))),
        )
        for key in ("noise_levels", "noise_seeds", "train_runs", "master_seed"):
            if key in raw:
                kw[key] = tuple(raw[key]) if key == "noise_levels" else int(raw[key])
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "data": self.data.to_dict(),
            "methods": [m.to_dict() for m in self.methods],
            "split": {"retrain_fraction": self.retrain_fraction},
            "noise_levels": list(self.noise_levels),
            "noise_seeds": self.noise_seeds,
            "train_runs": self.train_runs,
            "master_seed": self.master_seed,
            "grids": {
                "lambda": self.lambda_grid.to_dict(),
                "lambda_id": self.lambda_id_grid.to_dict(),
                "upweight": self.upweight_grid.to_dict(),
                "mself": self.mself.to_dict(),
            },
            "fixed": self.fixed,
            "standardize": self.standardize,
            "resample_per_seed": self.resample_per_seed,
            "metric": self.metric,
            "solver": {"max_iters": self.solver.max_iters, "tol": self.solver.tol},
        }


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise DataError("missing-file", str(path))
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise DataError("invalid-config", f"{path}: {e}") from None
    return ExperimentConfig.from_dict(raw, base=path.parent)
