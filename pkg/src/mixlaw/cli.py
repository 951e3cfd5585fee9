"""mixctl: command-line interface for the full pipeline.

Subcommands: fit, predict, evaluate, optimize, simulate, analyze, grid.
Analysis tables are CSV (stdout by default, --out writes a file) and every
report path can also render a matplotlib figure next to the table via
--plot.  Exit codes: 0 success, 1 domain errors, 2 usage errors.  The
MIXLAW_THREADS environment variable caps internal parallelism (default:
all cores).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .core import Dataset, TargetWeights, flops, validate_mixture
from .errors import DomainMismatch, InvalidMixture, MixLawError
from .fitkit import FitConfig, evaluate_mre, fit_law
from .laws import FAMILY_TAGS, LawParams, eval_law, predict_batch
from .mixopt import (
    OptimizeConfig,
    asymptote_trace,
    corner_profile,
    fixed_point_scan,
    mirror_descent,
)
from .runstore import (
    make_artifact,
    parse_runs,
    read_design,
    read_law,
    write_law,
    write_runs,
)
from .synthlab import (
    fixed_budget_slice,
    law_family_comparison,
    runcount_study,
    simplex_grid,
    synth_runs,
)


def n_jobs_from_env() -> int:
    """Parallelism cap from MIXLAW_THREADS; all cores when unset."""
    raw = os.environ.get("MIXLAW_THREADS", "").strip()
    if not raw:
        return -1
    n = int(raw)
    if n < 1:
        raise ValueError(f"MIXLAW_THREADS must be >= 1, got {raw!r}")
    return n


def _parse_budget(text: str) -> int:
    value = float(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"budget {text!r} must be >= 1")
    return int(round(value))


def parse_mixture_flag(text: str, domain_names: tuple[str, ...]):
    """Comma-separated weights, positional or name=value; no mixing."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise InvalidMixture("empty mixture specification")
    named = ["=" in p for p in parts]
    if any(named) and not all(named):
        raise InvalidMixture(
            "mixture mixes positional and name=value styles; pick one"
        )
    if all(named):
        weights = {}
        for p in parts:
            name, _, value = p.partition("=")
            name = name.strip()
            if name in weights:
                raise InvalidMixture(f"domain {name!r} given twice")
            weights[name] = float(value)
        if set(weights) != set(domain_names):
            raise InvalidMixture(
                f"mixture names {sorted(weights)} do not match the law's "
                f"domains {sorted(domain_names)}"
            )
        return validate_mixture([weights[n] for n in domain_names],
                                domain_names)
    values = [float(p) for p in parts]
    if len(values) != len(domain_names):
        raise InvalidMixture(
            f"{len(values)} weights for {len(domain_names)} domains "
            f"{domain_names}"
        )
    return validate_mixture(values, domain_names)


def _load_laws(paths_text: str) -> list:
    return [read_law(p.strip()) for p in paths_text.split(",") if p.strip()]


def _emit_table(header: list[str], rows: list[list], out: str | None):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            repr(v) if isinstance(v, float) else str(v) for v in row
        ))
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _fit_config(args) -> FitConfig:
    return FitConfig(
        delta=args.delta,
        n_restarts=args.restarts,
        n_hops=args.hops,
        seed=args.seed,
    )


def _add_fit_flags(p: argparse.ArgumentParser, restarts=32, hops=100):
    p.add_argument("--seed", type=int, default=0, help="root RNG seed")
    p.add_argument("--restarts", type=int, default=restarts,
                   help="random-search restarts")
    p.add_argument("--hops", type=int, default=hops,
                   help="basin-hopping iterations per restart")
    p.add_argument("--delta", type=float, default=1e-3,
                   help="Huber threshold")


def _add_opt_flags(p: argparse.ArgumentParser):
    p.add_argument("--eta", type=float, default=0.1,
                   help="mirror-descent step size")
    p.add_argument("--max-iter", type=int, default=10000)
    p.add_argument("--tol", type=float, default=1e-9,
                   help="stop when max weight change is below this")
    p.add_argument("--min-weight", type=float, default=0.0,
                   help="post-hoc floor applied to the returned weights")


def _opt_config(args) -> OptimizeConfig:
    return OptimizeConfig(eta=args.eta, max_iter=args.max_iter, tol=args.tol,
                          min_weight=args.min_weight)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixctl",
        description="Data-mixture scaling laws: fit, predict, optimize.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a law family to a run file")
    p.add_argument("--runs", required=True, help="JSONL or CSV run file")
    p.add_argument("--law", required=True, choices=list(FAMILY_TAGS))
    p.add_argument("--target", required=True, help="target domain name")
    p.add_argument("--out", required=True, help="law artifact path")
    _add_fit_flags(p)

    p = sub.add_parser("predict", help="evaluate a fitted law at (N, D, h)")
    p.add_argument("--law", required=True, help="law artifact path")
    p.add_argument("--n", required=True, type=_parse_budget,
                   help="model parameters N")
    p.add_argument("--d", required=True, type=_parse_budget,
                   help="training tokens D")
    p.add_argument("--mixture", required=True,
                   help="w1,...,wk or name=w,... domain weights")

    p = sub.add_parser("evaluate", help="MRE of fitted laws on a run file")
    p.add_argument("--law", required=True,
                   help="law artifact path(s), comma separated")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", help="write the CSV table here instead of stdout")
    p.add_argument("--plot", help="render an observed-vs-predicted figure")

    p = sub.add_parser("optimize", help="optimal mixture for fitted laws")
    p.add_argument("--laws", required=True,
                   help="law artifact path(s), comma separated")
    p.add_argument("--weights",
                   help="importance weights, parallel to --laws (default uniform)")
    p.add_argument("--n", required=True, type=_parse_budget)
    p.add_argument("--d", required=True, type=_parse_budget)
    p.add_argument("--trace", help="write the iterate trajectory CSV here")
    p.add_argument("--plot", help="render the trajectory figure here")
    _add_opt_flags(p)

    p = sub.add_parser("simulate", help="synthesize runs from a design file")
    p.add_argument("--spec", required=True, help="design JSON path")
    p.add_argument("--out", required=True, help="output run file (.jsonl/.csv)")

    p = sub.add_parser("analyze", help="analysis tables (CSV) and figures")
    asub = p.add_subparsers(dest="analysis", required=True)

    a = asub.add_parser("corners", help="optimal mixture per single target")
    a.add_argument("--laws", required=True)
    a.add_argument("--n", required=True, type=_parse_budget)
    a.add_argument("--d", required=True, type=_parse_budget)
    a.add_argument("--out")
    a.add_argument("--plot")
    _add_opt_flags(a)

    a = asub.add_parser("fixed-points",
                        help="scan target weightings w for h*(w) = w")
    a.add_argument("--laws", required=True)
    a.add_argument("--n", required=True, type=_parse_budget)
    a.add_argument("--d", required=True, type=_parse_budget)
    a.add_argument("--grid-step", required=True, type=float)
    a.add_argument("--grid-min", type=float, default=0.0)
    a.add_argument("--js-tol", type=float, default=1e-3,
                   help="JS distance below which a point counts as fixed")
    a.add_argument("--out")
    a.add_argument("--plot")
    _add_opt_flags(a)

    a = asub.add_parser("asymptotes",
                        help="optimal mixture along a compute schedule")
    a.add_argument("--laws", required=True)
    a.add_argument("--weights")
    a.add_argument("--n", required=True, type=_parse_budget,
                   help="starting model size")
    a.add_argument("--d", required=True, type=_parse_budget,
                   help="starting token count")
    a.add_argument("--mode", choices=["n", "d", "both"], default="both",
                   help="which budget grows along the schedule")
    a.add_argument("--factor", type=float, default=2.0)
    a.add_argument("--steps", type=int, default=8)
    a.add_argument("--out")
    a.add_argument("--plot")
    _add_opt_flags(a)

    a = asub.add_parser("runcount",
                        help="held-out MRE vs number of training mixtures")
    a.add_argument("--runs", required=True)
    a.add_argument("--law", required=True, choices=list(FAMILY_TAGS))
    a.add_argument("--target", required=True)
    a.add_argument("--q", required=True,
                   help="comma-separated training-mixture counts")
    a.add_argument("--seeds", type=int, default=20)
    a.add_argument("--out")
    a.add_argument("--plot")
    _add_fit_flags(a, restarts=8, hops=20)

    a = asub.add_parser("compare",
                        help="fixed-budget law-family comparison table")
    a.add_argument("--runs", required=True)
    a.add_argument("--target", required=True)
    a.add_argument("--n", type=_parse_budget,
                   help="restrict records to this model size")
    a.add_argument("--d", type=_parse_budget,
                   help="restrict records to this token count")
    a.add_argument("--families",
                   help="comma-separated family tags (default: fixed-budget set)")
    a.add_argument("--train-mixtures", type=int, default=25)
    a.add_argument("--out")
    a.add_argument("--plot")
    _add_fit_flags(a, restarts=8, hops=20)

    p = sub.add_parser("grid", help="list evenly spaced simplex mixtures")
    p.add_argument("--k", required=True, type=int)
    p.add_argument("--step", required=True, type=float)
    p.add_argument("--min", type=float, default=0.0, dest="min_weight")

    return parser


def _cmd_fit(args) -> int:
    data = parse_runs(args.runs)
    config = _fit_config(args)
    result = fit_law(args.law, data, args.target, config,
                     n_jobs=n_jobs_from_env())
    n_points = len(data.for_target(args.target))
    artifact = make_artifact(result.law, args.target, result.huber_value,
                             config.delta, config.seed, n_points,
                             result.train_mre_percent)
    write_law(artifact, args.out)
    print(f"huber={result.huber_value!r}")
    print(f"train_mre_percent={result.train_mre_percent!r}")
    return 0


def _cmd_predict(args) -> int:
    artifact = read_law(args.law)
    law = artifact.law
    h = parse_mixture_flag(args.mixture, law.domain_names)
    loss = eval_law(law, args.n, args.d, h)
    print(f"loss={loss!r}")
    print(f"flops={flops(args.n, args.d)!r}")
    return 0


def _cmd_evaluate(args) -> int:
    data = parse_runs(args.runs)
    artifacts = _load_laws(args.law)
    rows = []
    scatter = []
    for art in artifacts:
        law = art.law
        value, n_points = evaluate_mre(law, data, art.target)
        rows.append([art.target, n_points, value])
        if args.plot:
            n, d, h, obs = data.arrays_for_target(art.target)
            pred = predict_batch(law.family, law.params, n, d, h)
            scatter.append((art.target, obs, pred))
    _emit_table(["target", "n_points", "mre_percent"], rows, args.out)
    if args.plot:
        from . import plots

        plots.plot_pred_vs_obs(scatter, args.plot)
    return 0


def _parse_law_weights(args, n_laws: int) -> list[float]:
    if not args.weights:
        return [1.0] * n_laws
    values = [float(p) for p in args.weights.split(",") if p.strip()]
    if len(values) != n_laws:
        raise InvalidMixture(
            f"{len(values)} weights for {n_laws} laws"
        )
    if any(v < 0 for v in values) or sum(values) <= 0:
        raise InvalidMixture("law weights must be >= 0 and not all zero")
    return values


def _cmd_optimize(args) -> int:
    artifacts = _load_laws(args.laws)
    weights = _parse_law_weights(args, len(artifacts))
    pairs = [(a.law, w) for a, w in zip(artifacts, weights)]
    report = mirror_descent(pairs, args.n, args.d, _opt_config(args))
    print(f"objective={report.objective_value!r}")
    print(f"n_iter={report.n_iter}")
    print(f"converged={report.converged}")
    print(f"flooring_applied={report.flooring_applied}")
    names = report.h_star.domain_names
    print("domain,weight")
    for name, w in zip(names, report.h_star.weights):
        print(f"{name},{w!r}")
    if args.trace:
        header = ["iteration"] + [f"h_{n}" for n in names]
        rows = [[i] + list(m.weights) for i, m in enumerate(report.trajectory)]
        _emit_table(header, rows, args.trace)
    if args.plot:
        from . import plots

        plots.plot_trajectory([m.weights for m in report.trajectory], names,
                              args.plot)
    return 0


def _cmd_simulate(args) -> int:
    spec = read_design(args.spec)
    data = synth_runs(spec)
    write_runs(data, args.out)
    print(f"records={len(data)}")
    print(f"out={args.out}")
    return 0


def _artifact_law_map(paths_text: str) -> dict[str, LawParams]:
    laws = {}
    for art in _load_laws(paths_text):
        if art.target in laws:
            raise DomainMismatch(f"two artifacts share target {art.target!r}")
        laws[art.target] = art.law
    return laws


def _cmd_analyze_corners(args) -> int:
    laws = _artifact_law_map(args.laws)
    profile = corner_profile(laws, args.n, args.d, _opt_config(args))
    names = next(iter(laws.values())).domain_names
    rows = [[t] + list(profile[t].weights) for t in laws]
    _emit_table(["target"] + [f"h_{n}" for n in names], rows, args.out)
    if args.plot:
        from . import plots

        plots.plot_corner_profile(
            [(t, profile[t].weights) for t in laws], names, args.plot
        )
    return 0


def _cmd_analyze_fixed_points(args) -> int:
    laws = _artifact_law_map(args.laws)
    targets = tuple(laws)
    grid_mixes = simplex_grid(len(targets), args.grid_step, args.grid_min,
                              targets)
    grid = [TargetWeights(targets, m.weights) for m in grid_mixes]
    results = fixed_point_scan(laws, args.n, args.d, grid, _opt_config(args),
                               fixed_point_tol=args.js_tol)
    names = next(iter(laws.values())).domain_names
    header = ([f"w_{t}" for t in targets] + [f"h_{n}" for n in names]
              + ["js", "fixed"])
    rows = [
        list(w.weights) + list(h.weights) + [js, fixed]
        for w, h, js, fixed in results
    ]
    _emit_table(header, rows, args.out)
    if args.plot:
        from . import plots

        plots.plot_fixed_points([r[2] for r in results],
                                [r[3] for r in results], args.js_tol,
                                args.plot)
    return 0


def _cmd_analyze_asymptotes(args) -> int:
    laws = _artifact_law_map(args.laws)
    weights = None
    if args.weights:
        values = [float(p) for p in args.weights.split(",") if p.strip()]
        if len(values) != len(laws):
            raise InvalidMixture(f"{len(values)} weights for {len(laws)} laws")
        weights = TargetWeights(tuple(laws), tuple(values))
    schedule = []
    for t in range(args.steps):
        scale = args.factor ** t
        n = int(round(args.n * scale)) if args.mode in ("n", "both") else args.n
        d = int(round(args.d * scale)) if args.mode in ("d", "both") else args.d
        schedule.append((n, d))
    trace = asymptote_trace(laws, weights, schedule, _opt_config(args))
    names = next(iter(laws.values())).domain_names
    header = ["model_params", "tokens", "flops"] + [f"h_{n}" for n in names]
    rows = [
        [n, d, flops(n, d)] + list(h.weights)
        for (n, d), h in zip(schedule, trace)
    ]
    _emit_table(header, rows, args.out)
    if args.plot:
        from . import plots

        plots.plot_asymptote_trace([flops(n, d) for n, d in schedule],
                                   [h.weights for h in trace], names,
                                   args.plot)
    return 0


def _cmd_analyze_runcount(args) -> int:
    data = parse_runs(args.runs)
    q_values = [int(q) for q in args.q.split(",") if q.strip()]
    rows = runcount_study(data, args.law, args.target, q_values, args.seeds,
                          _fit_config(args), n_jobs=n_jobs_from_env())
    _emit_table(
        ["q", "mre_median", "mre_q25", "mre_q75", "n_seeds"],
        [[r.q, r.mre_median, r.mre_q25, r.mre_q75, r.n_seeds] for r in rows],
        args.out,
    )
    if args.plot:
        from . import plots

        plots.plot_runcount([r.q for r in rows], [r.mre_median for r in rows],
                            [r.mre_q25 for r in rows],
                            [r.mre_q75 for r in rows], args.plot)
    return 0


def _cmd_analyze_compare(args) -> int:
    data = parse_runs(args.runs)
    if args.n is not None or args.d is not None:
        data = fixed_budget_slice(data, args.n, args.d)
    families = None
    if args.families:
        families = [f.strip() for f in args.families.split(",") if f.strip()]
    rows = law_family_comparison(
        data, args.target, _fit_config(args), families=families,
        n_train_mixtures=args.train_mixtures, n_jobs=n_jobs_from_env(),
    )
    _emit_table(
        ["family", "target", "train_mre_percent", "test_mre_percent",
         "huber", "converged", "fitted"],
        [[r.family, r.target, r.train_mre_percent, r.test_mre_percent,
          r.huber_value, r.converged, r.fitted] for r in rows],
        args.out,
    )
    if args.plot:
        from . import plots

        fitted = [r for r in rows if r.fitted]
        plots.plot_comparison([r.family for r in fitted],
                              [r.train_mre_percent for r in fitted],
                              [r.test_mre_percent for r in fitted], args.plot)
    return 0


def _cmd_grid(args) -> int:
    for mix in simplex_grid(args.k, args.step, args.min_weight):
        print(",".join(repr(w) for w in mix.weights))
    return 0


_ANALYZE = {
    "corners": _cmd_analyze_corners,
    "fixed-points": _cmd_analyze_fixed_points,
    "asymptotes": _cmd_analyze_asymptotes,
    "runcount": _cmd_analyze_runcount,
    "compare": _cmd_analyze_compare,
}

_COMMANDS = {
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "optimize": _cmd_optimize,
    "simulate": _cmd_simulate,
    "grid": _cmd_grid,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "analyze":
            return _ANALYZE[args.analysis](args)
        return _COMMANDS[args.command](args)
    except MixLawError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
