"""Command line entry point: simulate, optimize, compare, sweep."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bayesopt import Bounds, TraceWriter, optimize, write_best_json
from .config import ConfigError, Scenario, config_hash, load, parse_toll
from .day2day import (
    RunResult, ScenarioConfig, initial_state, mean_consumption, run_to_convergence,
    snapshot, sweep_endowment,
)
from .market import min_endowment
from .mfd import GridlockError
from .outputs import (
    now_utc, write_compare_csv, write_json, write_manifest, write_run, write_sweep_csv,
)
from .parallel import map_configs
from .tuning import DEFAULT_BOUNDS, PARAMETERS, WelfareObjective, baseline, synthetic_objective

log = logging.getLogger("tcs_mfd")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GRIDLOCK = 3
EXIT_NOT_CONVERGED = 4


def _prepare_out(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_warm_start(sc: Scenario, out: Path, files: list[Path]) -> ScenarioConfig:
    """Turn ``warm_start: baseline`` into a snapshot of the no-toll equilibrium."""
    cfg = sc.config
    if sc.warm_start != "baseline":
        return cfg
    log.info("[%s] running no-toll baseline for the warm start", sc.name)
    base = baseline(cfg)
    path = out / "baseline.snapshot"
    snapshot(base.state, path, seed=cfg.seed)
    files.append(path)
    return replace(cfg, warm_start=str(path))


def cmd_simulate(args) -> int:
    sc = load(args.config, seed=args.seed, days=args.days)
    out = _prepare_out(args.out)
    started = now_utc()
    files: list[Path] = []
    cfg = sc.config
    if args.toll:
        doc = json.loads(Path(args.toll).read_text())
        cfg = replace(cfg, toll=parse_toll(doc.get("toll", doc), "toll"))
    cfg = _resolve_warm_start(replace(sc, config=cfg), out, files)

    result = run_to_convergence(cfg, keep_days=sc.keep_days, callback=_progress(sc.name))
    files += write_run(out, sc.name, result, sc.config_hash)
    snap = out / "state.snapshot"
    snapshot(result.state, snap, seed=cfg.seed)
    files.append(snap)
    write_manifest(out, command="simulate", config_hash=sc.config_hash, seed=cfg.seed,
                   started=started, files=files)
    _report(sc.name, result)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _progress(name):
    def cb(rec):
        log.debug("[%s] day %d gap=%.4f%% price=%.4f W=%.4f", name, rec.day, rec.gap,
                  rec.price, rec.welfare.welfare)
    return cb


def _report(name: str, result: RunResult) -> None:
    w = result.summary["welfare"]
    status = f"converged on day {result.converged_day}" if result.converged else "did not converge"
    log.info("[%s] %s after %d days; welfare %.3f +/- %.3f DKK/cap", name, status,
             len(result.history), w["mean"], w["std"])


def cmd_optimize(args) -> int:
    sc = load(args.config, seed=args.seed, days=args.days)
    if sc.optimize is None:
        raise ConfigError("optimize", "missing required section for the optimize command")
    opt = sc.optimize
    out = _prepare_out(args.out)
    started = now_utc()
    files: list[Path] = []
    shape = opt["shape"]
    if shape not in PARAMETERS:
        raise ConfigError("optimize.shape", f"unknown shape {shape!r}")
    bounds_doc = opt["bounds"] or DEFAULT_BOUNDS[shape]
    synthetic = opt["synthetic"]
    if synthetic is None and set(bounds_doc) != set(PARAMETERS[shape]):
        raise ConfigError("optimize.bounds", f"{shape} needs bounds for {list(PARAMETERS[shape])}")
    names = tuple(bounds_doc) if synthetic is not None else PARAMETERS[shape]
    bounds = Bounds.from_pairs({k: tuple(bounds_doc[k]) for k in names})

    extra = {}
    if synthetic is not None:
        x0 = synthetic.get("optimum") if isinstance(synthetic, dict) else None
        if x0 is None or len(x0) != bounds.dim:
            raise ConfigError("optimize.synthetic.optimum", f"expected {bounds.dim} numbers")
        objective = synthetic_objective(x0, bounds.lower, bounds.upper)
    else:
        if sc.config.scheme.value == "none":
            raise ConfigError("scheme", "optimize needs a tolled scheme")
        start = None
        if sc.warm_start == "baseline":
            base = baseline(sc.config)
            start = base.state
            extra["baseline_welfare"] = base.summary["welfare"]
            extra["baseline_converged"] = base.converged
        elif sc.warm_start is not None:
            start = initial_state(replace(sc.config, warm_start=sc.warm_start))
        objective = WelfareObjective(sc.config, shape, start=start, band=opt["band"],
                                     require_convergence=opt["require_convergence"])

    trace_path = out / "trace.csv"
    with TraceWriter(trace_path, bounds.names) as writer:
        def on_row(row):
            writer(row)
            log.info("[%s] %s %3d objective=%.4f best=%.4f", sc.name, row.phase, row.iteration,
                     row.objective, row.best)

        result = optimize(objective, bounds, n_init=opt["n_init"], n_iter=opt["n_iter"],
                          beta=opt["beta"], seed=sc.config.seed, jitter=opt["jitter"],
                          on_row=on_row)
    files.append(trace_path)
    if synthetic is None:
        extra["toll"] = objective.profile(result.best_params).to_dict()
    best = out / "best.json"
    write_best_json(best, result, extra)
    files.append(best)
    write_manifest(out, command="optimize", config_hash=sc.config_hash, seed=sc.config.seed,
                   started=started, files=files)
    log.info("[%s] best objective %.4f at %s", sc.name, result.best_value, result.best_dict())
    return EXIT_OK


def _run_scenario(item):
    cfg, keep = item
    return run_to_convergence(cfg, keep_days=keep)


def cmd_compare(args) -> int:
    if len(args.config) < 2:
        raise ConfigError("config", "compare needs at least two scenario files")
    scenarios = [load(p, seed=args.seed, days=args.days) for p in args.config]
    ref = scenarios[0].config
    for sc in scenarios[1:]:
        if sc.config.population != ref.population or sc.config.seed != ref.seed:
            raise ConfigError("population", f"scenario {sc.name!r} does not share the population "
                                            f"and seed of {scenarios[0].name!r}")
    names = [sc.name for sc in scenarios]
    if len(set(names)) != len(names):
        names = [f"{i}_{n}" for i, n in enumerate(names)]
    out = _prepare_out(args.out)
    started = now_utc()
    files: list[Path] = []
    items = []
    for name, sc in zip(names, scenarios):
        sub = out / name
        sub.mkdir(exist_ok=True)
        items.append((_resolve_warm_start(sc, sub, files), sc.keep_days))
    results = map_configs(_run_scenario, items)
    for name, sc, res in zip(names, scenarios, results):
        files += write_run(out / name, name, res, sc.config_hash)
    table = out / "comparison.csv"
    write_compare_csv(table, list(zip(names, results)))
    files.append(table)
    combined = config_hash({"scenarios": [sc.raw for sc in scenarios]})
    write_manifest(out, command="compare", config_hash=combined, seed=ref.seed, started=started,
                   files=files)
    for name, res in zip(names, results):
        _report(name, res)
    return EXIT_OK if all(r.converged for r in results) else EXIT_NOT_CONVERGED


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError("endowments", f"expected comma-separated numbers, got {text!r}") from None


def cmd_sweep(args) -> int:
    sc = load(args.config, seed=args.seed, days=args.days)
    if not sc.config.scheme.uses_credits:
        raise ConfigError("scheme", "an endowment sweep needs a credit scheme")
    values = _parse_floats(args.endowments)
    if not values:
        raise ConfigError("endowments", "no values given")
    out = _prepare_out(args.out)
    started = now_utc()
    files: list[Path] = []
    extra = {}
    cfg = sc.config
    if sc.warm_start == "baseline":
        base = baseline(cfg)
        path = out / "baseline.snapshot"
        snapshot(base.state, path, seed=cfg.seed)
        files.append(path)
        cfg = replace(cfg, warm_start=str(path))
        extra["i_ue"] = mean_consumption(base.history, base.state.population.length, cfg.toll,
                                         cfg.w_distance, cfg.w_time, cfg.tail)
    rows = sweep_endowment(cfg, values)
    table = out / "sweep.csv"
    write_sweep_csv(table, rows)
    files.append(table)
    pop = initial_state(replace(cfg, warm_start=None)).population
    extra["i_min"] = min_endowment(pop.window(), pop.length, cfg.toll, cfg.w_distance,
                                   cfg.w_time, cfg.speed.v_free)
    summary = out / "sweep.json"
    write_json(summary, {"rows": [list(r) for r in rows], **extra})
    files.append(summary)
    write_manifest(out, command="sweep", config_hash=sc.config_hash, seed=cfg.seed,
                   started=started, files=files)
    for i, p, ok in rows:
        log.info("[%s] I=%g p*=%.4f converged=%s", sc.name, i, p, ok)
    return EXIT_OK if all(ok for _, _, ok in rows) else EXIT_NOT_CONVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tcs-mfd",
        description="Tradable credit scheme simulation and toll optimization on a trip-based MFD.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, multi=False):
        if multi:
            p.add_argument("--config", action="append", required=True,
                           help="scenario file (repeat for each scenario)")
        else:
            p.add_argument("--config", required=True, help="scenario YAML file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--days", type=int, default=None, help="override the day horizon")
        p.add_argument("--quiet", action="store_true", help="only print warnings and errors")
        p.add_argument("--verbose", action="store_true", help="log every simulated day")

    p = sub.add_parser("simulate", help="run one scenario to equilibrium")
    common(p)
    p.add_argument("--toll", default=None, help="best.json (or toll JSON) overriding the toll profile")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", help="tune the toll profile with Bayesian optimization")
    common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("compare", help="run several scenarios and tabulate equilibria")
    common(p, multi=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="equilibrium price for a range of endowments")
    common(p)
    p.add_argument("--endowments", default="3,4,5,6,7,8", help="comma-separated values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
    logging.getLogger("tcs_mfd").setLevel(level)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except GridlockError as exc:
        log.error("gridlock: %s", exc)
        return EXIT_GRIDLOCK


if __name__ == "__main__":
    sys.exit(main())
