"""Holdout splits, hyperparameter tuning and noise sweeps.

Protocol for one method at one noise level: for every noise seed, inject
domain-label noise into the retraining split only, score each grid point by
worst-group accuracy on the clean holdout and keep the per-seed argmax; fix
the most common choice across seeds; then run ``train_runs`` fits per seed
with that choice and record their holdout metrics.
"""

from __future__ import annotations

import itertools
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from ..augment import DOMAIN_FREE, MSelfConfig, PipelineSpec, fit_pipeline, rad_config_for
from ..core import DataError, LabeledDataset, LinearModel, RadLLRError, RngSeed, per_group_accuracy
from ..noise import NoiseModel, inject
from ..rad import RadConfig, rad_annotate
from ..solvers import stronger_first
from ..synthgen import sample
from ..theory import population_group_accuracy
from .config import ExperimentConfig, MethodEntry
from .io import load_embeddings

# methods whose output depends on the pipeline seed
RANDOMIZED = ("gds", "cds", "gds-averaged", "m-self")


class GridEdgeWarning(UserWarning):
    pass


# -- splitting and scaling ---------------------------------------------------------


def split_indices(n: int, fraction: float, seed: RngSeed) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise DataError("too-small", "need at least two rows to split")
    if not 0.0 < fraction < 1.0:
        raise DataError("invalid-config", "fraction must be in (0, 1)")
    k = min(max(int(round(n * fraction)), 1), n - 1)
    perm = seed.generator().permutation(n)
    return np.sort(perm[:k]), np.sort(perm[k:])


def split_holdout(data: LabeledDataset, fraction: float = 0.5, seed: RngSeed | int = 0):
    """Disjoint uniform split into ``(retrain, holdout)`` with
    ``round(n * fraction)`` retraining rows."""
    if not isinstance(seed, RngSeed):
        seed = RngSeed(int(seed), "split")
    a, b = split_indices(data.n, fraction, seed)
    return data.subset(a), data.subset(b)


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def apply(self, data: LabeledDataset) -> LabeledDataset:
        return data.replace(features=(data.features - self.mean) / self.scale)

    def unscale(self, model: LinearModel) -> LinearModel:
        """Same classifier expressed on raw features."""
        if model.link == "identity-threshold":
            w = model.w / self.scale
            return LinearModel(w, float(model.b) - self.mean @ w, model.link)
        W = model.w / self.scale[:, None]
        return LinearModel(W, model.b - self.mean @ W, model.link)


# -- records -----------------------------------------------------------------------


@dataclass
class RunRecord:
    method: str
    p: float
    noise_seed: int
    train_run: int
    hyperparameters: dict
    wga: float | None
    group_accuracy: dict
    population_wga: float | None = None
    diagnostics: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SummaryRow:
    method: str
    p: float
    mean_wga: float
    std_wga: float
    n: int
    pooled_std: float
    n_runs: int


@dataclass
class SweepSummary:
    """``std_wga`` is the spread of per-seed mean WGA across noise seeds;
    ``pooled_std`` is the spread over every individual run."""

    rows: list

    def row(self, method: str, p: float) -> SummaryRow:
        for r in self.rows:
            if r.method == method and r.p == p:
                return r
        raise KeyError((method, p))


def summarize(records, metric: str = "holdout") -> SweepSummary:
    key = "wga" if metric == "holdout" else "population_wga"
    cells: dict = {}
    for rec in records:
        v = getattr(rec, key)
        if v is None:
            continue
        cells.setdefault((rec.method, rec.p), {}).setdefault(rec.noise_seed, []).append(v)
    rows = []
    for (method, p), seeds in sorted(cells.items()):
        per_seed = np.array([np.mean(v) for _, v in sorted(seeds.items())])
        pooled = np.array([x for _, v in sorted(seeds.items()) for x in v])
        rows.append(
            SummaryRow(method, p, float(per_seed.mean()), float(per_seed.std()), len(per_seed), float(pooled.std()), len(pooled))
        )
    return SweepSummary(rows)


# -- building and scoring fits -----------------------------------------------------


def candidates(entry: MethodEntry, cfg: ExperimentConfig) -> list[dict]:
    """Grid points for one method, in tie-break preference order (stronger
    regularisation first, then smaller upweight factor)."""
    if entry.loss == "squared":
        return [{}]
    axes = {"lam": cfg.lambda_grid.values}
    if entry.method == "rad-uw":
        axes["lambda_id"] = cfg.lambda_id_grid.values
        axes["upweight"] = cfg.upweight_grid.values
    if entry.method == "m-self":
        axes["learning_rate"] = cfg.mself.learning_rate.values
        axes["points_per_class"] = cfg.mself.points_per_class.values
    names = list(axes)
    points = [dict(zip(names, combo)) for combo in itertools.product(*(axes[k] for k in names))]
    return sorted(points, key=lambda hp: preference_key(hp, cfg))


def preference_key(hp: dict, cfg: ExperimentConfig) -> tuple:
    def strength(v, grid):
        return -v if stronger_first(grid.convention) else v

    return (
        strength(hp.get("lam", 0.0), cfg.lambda_grid),
        strength(hp.get("lambda_id", 0.0), cfg.lambda_id_grid),
        hp.get("upweight", 0.0),
        hp.get("learning_rate", 0.0),
        hp.get("points_per_class", 0.0),
    )


def pipeline_spec(entry: MethodEntry, hp: dict, cfg: ExperimentConfig) -> PipelineSpec:
    solver = cfg.solver.replace(lam=float(hp.get("lam", cfg.lambda_grid.values[0])))
    mself = MSelfConfig(
        cfg.mself.finetune_steps,
        float(hp.get("learning_rate", cfg.mself.learning_rate.values[0])),
        int(hp.get("points_per_class", cfg.mself.points_per_class.values[0])),
    )
    rad = RadConfig(
        float(hp.get("lambda_id", cfg.lambda_id_grid.values[0])),
        solver.lam,
        float(hp.get("upweight", cfg.upweight_grid.values[0])),
        solver,
        convention=cfg.lambda_grid.convention,
        id_convention=cfg.lambda_id_grid.convention,
    )
    return PipelineSpec(
        method=entry.method,
        solver=solver,
        loss=entry.loss,
        penalty=entry.penalty,
        averaging_runs=entry.averaging_runs,
        mself=mself,
        rad=rad,
        lam_convention=cfg.lambda_grid.convention,
    )


@dataclass(frozen=True, eq=False)
class SeedContext:
    """Standardized retraining split and clean holdout for one noise seed."""

    key: int
    retrain: LabeledDataset
    holdout: LabeledDataset
    scaler: Standardizer | None
    num_domains: int


@dataclass(frozen=True)
class Evaluation:
    wga: float
    group_accuracy: dict
    population_wga: float | None
    diagnostics: dict


def _group_key(k) -> str:
    return f"{k.y},{k.d}"


class _Runner:
    """Memoising fit-and-score engine shared by tuning and the final runs."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._fits: dict = {}
        self._annotations: dict = {}
        self._noisy: dict = {}

    def noisy(self, ctx: SeedContext, p: float, seed_index: int) -> LabeledDataset:
        key = (ctx.key, p, seed_index)
        if key not in self._noisy:
            noise_seed = RngSeed(self.cfg.master_seed, "noise", (seed_index,))
            self._noisy[key] = inject(ctx.retrain, NoiseModel(p, ctx.num_domains), noise_seed)
        return self._noisy[key]

    def evaluate(self, entry: MethodEntry, hp: dict, ctx: SeedContext, p: float | None, seed_index: int, run: int) -> Evaluation:
        """Fit on the (noisy) retraining split and score on the holdout.
        ``p=None`` marks a method that never reads domain labels."""
        randomized = entry.method in RANDOMIZED
        data_key = (ctx.key, None) if p is None else (ctx.key, p, seed_index)
        run_key = (seed_index, run) if randomized else None
        key = (entry.label, tuple(sorted(hp.items())), data_key, run_key)
        if key in self._fits:
            return self._fits[key]
        train = ctx.retrain if p is None else self.noisy(ctx, p, seed_index)
        spec = pipeline_spec(entry, hp, self.cfg)
        run_seed = RngSeed(self.cfg.master_seed, "train", (seed_index, run))
        ann = None
        if entry.method == "rad-uw":
            rcfg = rad_config_for(spec)
            akey = (ctx.key, rcfg.lambda_id, rcfg.id_convention, rcfg.id_penalty)
            if akey not in self._annotations:
                self._annotations[akey] = rad_annotate(train, rcfg, run_seed)
            ann = self._annotations[akey]
        res = fit_pipeline(spec, train, run_seed, ann)
        accs = per_group_accuracy(res.model, ctx.holdout)
        present = [a for a in accs.values() if a is not None]
        pop = None
        if self.cfg.data.synthetic and res.model.num_classes == 2:
            model = ctx.scaler.unscale(res.model) if ctx.scaler is not None else res.model
            pop = min(population_group_accuracy(model, self.cfg.data.spec).values())
        diag = dict(res.info)
        if res.flags:
            diag["flags"] = list(res.flags)
        ev = Evaluation(min(present), {_group_key(k): v for k, v in accs.items()}, pop, diag)
        self._fits[key] = ev
        return ev


# -- tuning ------------------------------------------------------------------------


@dataclass
class TuneResult:
    choice: dict
    per_seed: list
    scores: np.ndarray  # (seeds, grid points), nan where a fit failed
    grid: list
    warnings: list = field(default_factory=list)
    failures: int = 0


def select(scores: np.ndarray, grid: list) -> tuple[int, list]:
    """Index of the modal per-seed argmax over a preference-ordered grid.

    Within a seed, the first maximiser wins. Across seeds, ties in the mode
    go to the higher mean score, then to the earlier grid point.
    """
    per_seed = []
    for row in scores:
        if np.all(np.isnan(row)):
            continue
        best = np.nanmax(row)
        per_seed.append(int(np.flatnonzero(row == best)[0]))
    if not per_seed:
        raise DataError("tuning-failed", "every grid point failed")
    counts = Counter(per_seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        means = np.nanmean(scores, axis=0)
    top = max(counts.values())
    tied = [i for i, c in counts.items() if c == top]
    chosen = min(tied, key=lambda i: (-means[i], i))
    return chosen, per_seed


def _edge_warnings(entry: MethodEntry, hp: dict, cfg: ExperimentConfig, p) -> list[str]:
    out = []
    for name, grid in (("lam", cfg.lambda_grid), ("lambda_id", cfg.lambda_id_grid)):
        if name in hp and len(grid.values) >= 3 and hp[name] in (min(grid.values), max(grid.values)):
            out.append(f"grid-edge: {entry.label} p={p} {name}={hp[name]:.6g}")
    return out


def _tune(runner: _Runner, entry: MethodEntry, contexts: list, p, seeds: list[int]) -> TuneResult:
    cfg = runner.cfg
    grid = candidates(entry, cfg)
    scores = np.full((len(seeds), len(grid)), np.nan)
    failures = 0
    for i, (ctx, s) in enumerate(zip(contexts, seeds)):
        for j, hp in enumerate(grid):
            try:
                scores[i, j] = runner.evaluate(entry, hp, ctx, p, s, 0).wga
            except RadLLRError:
                failures += 1
    idx, per_seed = select(scores, grid)
    choice = grid[idx]
    warn = _edge_warnings(entry, choice, cfg, p)
    for w in warn:
        warnings.warn(w, GridEdgeWarning, stacklevel=3)
    return TuneResult(choice, [grid[k] for k in per_seed], scores, grid, warn, failures)


def tune(config: ExperimentConfig, method, retrain, holdout, p: float = 0.0) -> TuneResult:
    """Tune one method on already-split data.

    ``retrain`` and ``holdout`` are datasets or equal-length lists of them
    (one per noise seed); noise at level ``p`` is injected into the
    retraining part only.
    """
    entry = method if isinstance(method, MethodEntry) else MethodEntry.parse(method)
    rs = retrain if isinstance(retrain, (list, tuple)) else [retrain] * config.noise_seeds
    hs = holdout if isinstance(holdout, (list, tuple)) else [holdout] * len(rs)
    contexts = [
        SeedContext(i if isinstance(retrain, (list, tuple)) else 0, r, h, None, max(r.num_domains, 2))
        for i, (r, h) in enumerate(zip(rs, hs))
    ]
    runner = _Runner(config)
    p_arg = None if entry.method in DOMAIN_FREE else p
    return _tune(runner, entry, contexts, p_arg, list(range(len(contexts))))


# -- sweeps ------------------------------------------------------------------------


@dataclass
class SweepResult:
    records: list
    summary: SweepSummary
    tuning: dict
    warnings: list


def seed_contexts(cfg: ExperimentConfig) -> list[SeedContext]:
    """One context per noise seed; without per-seed resampling they all
    share a single split."""
    def build(key: int, data: LabeledDataset) -> SeedContext:
        split_seed = RngSeed(cfg.master_seed, "split", (key,) if cfg.resample_per_seed else ())
        retrain, holdout = split_holdout(data, cfg.retrain_fraction, split_seed)
        scaler = None
        if cfg.standardize:
            scaler = Standardizer.fit(retrain.features)
            retrain, holdout = scaler.apply(retrain), scaler.apply(holdout)
        return SeedContext(key, retrain, holdout, scaler, max(data.num_domains, 2))

    src = cfg.data
    if src.synthetic and cfg.resample_per_seed:
        return [build(s, sample(src.spec, src.n, RngSeed(cfg.master_seed, "sample", (s,)))) for s in range(cfg.noise_seeds)]
    data = sample(src.spec, src.n, RngSeed(cfg.master_seed, "sample")) if src.synthetic else load_embeddings(src.csv)
    shared = build(0, data)
    return [shared] * cfg.noise_seeds


def _hp_for_record(hp: dict) -> dict:
    return {k: (int(v) if k == "points_per_class" else float(v)) for k, v in hp.items()}


def sweep(cfg: ExperimentConfig) -> SweepResult:
    if not cfg.methods:
        raise DataError("nothing-to-run", "no methods configured")
    contexts = seed_contexts(cfg)
    seeds = list(range(cfg.noise_seeds))
    runner = _Runner(cfg)
    records, tuning, warns = [], {}, []
    for entry in sorted(cfg.methods, key=lambda e: e.label):
        free = entry.method in DOMAIN_FREE
        levels = [None] if free else list(cfg.noise_levels)
        for p in levels:
            if entry.label in cfg.fixed:
                choice = dict(cfg.fixed[entry.label])
            else:
                try:
                    res = _tune(runner, entry, contexts, p, seeds)
                except RadLLRError as e:
                    warns.append(f"{entry.label} p={p}: {e}")
                    continue
                choice = res.choice
                warns.extend(res.warnings)
                tuning[(entry.label, p)] = res
            cell = []
            for s in seeds:
                for r in range(cfg.train_runs):
                    try:
                        ev = runner.evaluate(entry, choice, contexts[s], p, s, r)
                        cell.append((s, r, ev, None))
                    except RadLLRError as e:
                        cell.append((s, r, None, str(e)))
            for p_out in (cfg.noise_levels if free else [p]):
                for s, r, ev, err in cell:
                    records.append(
                        RunRecord(
                            method=entry.label,
                            p=float(p_out),
                            noise_seed=s,
                            train_run=r,
                            hyperparameters=_hp_for_record(choice),
                            wga=None if ev is None else ev.wga,
                            group_accuracy={} if ev is None else dict(ev.group_accuracy),
                            population_wga=None if ev is None else ev.population_wga,
                            diagnostics={} if ev is None else dict(ev.diagnostics),
                            error=err,
                        )
                    )
    records.sort(key=lambda rec: (rec.method, rec.p, rec.noise_seed, rec.train_run))
    return SweepResult(records, summarize(records, cfg.metric), tuning, warns)
