"""Command line entry point ``radllr``.

Exit codes: 0 success, 1 usage error, 2 data or IO error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from ..augment import DOMAIN_FREE, METHODS, PipelineSpec, fit_pipeline
from ..core import DataError, NumericalError, RngSeed, per_group_accuracy, worst_group_accuracy
from ..noise import NoiseModel, inject
from ..rad import RadConfig
from ..solvers import LogRegConfig
from ..synthgen import MixtureSpec, fig1_spec, sample
from ..theory import theory_curve
from .config import MethodEntry, load_config
from .experiment import Standardizer, _Runner, _tune, seed_contexts, sweep
from .io import load_embeddings, save_csv
from .report import read_jsonl, report

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _spec_arg(value: str) -> MixtureSpec:
    if value == "fig1":
        return fig1_spec()
    path = Path(value)
    if not path.exists():
        raise DataError("missing-file", value)
    return MixtureSpec.from_dict(yaml.safe_load(path.read_text()))


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise DataError("invalid-config", f"bad number list {text!r}") from None


def cmd_synth(a) -> None:
    spec = _spec_arg(a.spec)
    if a.pi0 is not None:
        spec = spec.with_pi0(a.pi0)
    data = sample(spec, a.n, RngSeed(a.seed, "sample"))
    save_csv(data, a.out, {"mixture": spec.to_dict(), "seed": a.seed})


def cmd_inject(a) -> None:
    data = load_embeddings(a.data)
    noisy = inject(data, NoiseModel(a.p, max(data.num_domains, 2)), RngSeed(a.seed, "noise"))
    save_csv(noisy, a.out, {"noise_p": a.p, "seed": a.seed})


def _model_json(model) -> dict:
    return {"w": np.asarray(model.w).tolist(), "b": np.asarray(model.b).tolist(), "link": model.link}


def cmd_train(a) -> None:
    data = load_embeddings(a.data)
    evaluation = load_embeddings(a.eval) if a.eval else data
    if a.standardize:
        sc = Standardizer.fit(data.features)
        data, evaluation = sc.apply(data), sc.apply(evaluation)
    solver = LogRegConfig(lam=a.lam)
    spec = PipelineSpec(
        method=a.method,
        solver=solver,
        loss=a.loss,
        penalty=a.penalty,
        rad=RadConfig(a.lambda_id, a.lam, a.upweight, solver, convention=a.convention),
        lam_convention=a.convention,
    )
    res = fit_pipeline(spec, data, RngSeed(a.seed, "train"))
    accs = per_group_accuracy(res.model, evaluation)
    out = {
        "method": a.method,
        "model": _model_json(res.model),
        "wga": worst_group_accuracy(res.model, evaluation),
        "group_accuracy": {f"{k.y},{k.d}": v for k, v in accs.items()},
        "flags": list(res.flags),
        "info": {k: v for k, v in res.info.items()},
    }
    text = json.dumps(out, indent=2, sort_keys=True)
    if a.out:
        Path(a.out).write_text(text + "\n")
    print(text)


def cmd_tune(a) -> None:
    cfg = load_config(a.config)
    entry = next((m for m in cfg.methods if m.label == a.method), None) or MethodEntry.parse(a.method)
    ctxs = seed_contexts(cfg)
    p = None if entry.method in DOMAIN_FREE else a.p
    res = _tune(_Runner(cfg), entry, ctxs, p, list(range(cfg.noise_seeds)))
    print(json.dumps({"method": entry.label, "p": a.p, "choice": res.choice, "warnings": res.warnings}, sort_keys=True))


def cmd_sweep(a) -> None:
    cfg = load_config(a.config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = sweep(cfg)
    overlay = None
    if cfg.data.synthetic:
        overlay = cfg.data.spec
        try:
            theory_curve(overlay, [0.0])
        except DataError:
            overlay = None
    paths = report(res.records, a.out, cfg.metric, overlay)
    (Path(a.out) / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for r in res.summary.rows:
        print(f"{r.method:<16} p={r.p:<5g} mean_wga={r.mean_wga:.4f} std={r.std_wga:.4f} n={r.n}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")


def cmd_theory(a) -> None:
    spec = _spec_arg(a.spec)
    pi0 = a.pi0 if a.pi0 is not None else spec.pi0
    rows = theory_curve(spec.with_pi0(pi0), _floats(a.p_grid), pi0)
    lines = ["p,pi_noisy,pi_ds,c_tilde,wga_erm,wga_ds_uw"]
    for t in rows:
        lines.append(",".join(repr(float(v)) for v in (t.p, t.pi_noisy, t.pi_ds, t.c_tilde, t.wga_erm, t.wga_ds)))
    text = "\n".join(lines) + "\n"
    if a.out:
        Path(a.out).write_text(text)
    sys.stdout.write(text)


def cmd_report(a) -> None:
    records = read_jsonl(a.runs)
    spec = _spec_arg(a.spec) if a.spec else None
    paths = report(records, a.out, a.metric, spec)
    print(f"wrote {', '.join(str(p) for p in paths.values())}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="radllr", description="Last-layer retraining under noisy domain annotations.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="sample a dataset from a mixture")
    s.add_argument("--spec", default="fig1", help="'fig1' or a YAML/JSON mixture file")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--pi0", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("inject", help="add symmetric domain-label noise to a dataset file")
    s.add_argument("--data", required=True)
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_inject)

    s = sub.add_parser("train", help="fit one method on one dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--eval", help="dataset to score on (default: the training data)")
    s.add_argument("--method", choices=METHODS, default="llr")
    s.add_argument("--loss", choices=("logistic", "squared"), default="logistic")
    s.add_argument("--penalty", choices=("l1", "l2"), default="l1")
    s.add_argument("--lambda", dest="lam", type=float, default=0.0)
    s.add_argument("--lambda-id", type=float, default=1e-2)
    s.add_argument("--upweight", type=float, default=10.0)
    s.add_argument("--convention", choices=("absolute", "inverse", "relative"), default="absolute")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--standardize", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("tune", help="tune one method from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--method", required=True, help="method name or label from the config")
    s.add_argument("--p", type=float, default=0.0)
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("sweep", help="run a full noise sweep from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("theory", help="closed-form worst-group accuracy curves")
    s.add_argument("--spec", default="fig1")
    s.add_argument("--pi0", type=float)
    s.add_argument("--p-grid", default="0,0.05,0.1,0.15,0.2,0.25,0.3,0.35,0.4,0.45,0.5")
    s.add_argument("--out")
    s.set_defaults(func=cmd_theory)

    s = sub.add_parser("report", help="rebuild summaries from a runs.jsonl file")
    s.add_argument("--runs", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--metric", choices=("holdout", "population"), default="holdout")
    s.add_argument("--spec", help="mixture for a closed-form overlay")
    s.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
