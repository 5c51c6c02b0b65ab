"""Scenario files: YAML in, validated dataclasses out.

A scenario file is a nested mapping. Unknown keys are rejected so typos
surface as errors instead of silently falling back to defaults. Every error
names the offending key path, e.g. ``market.k``.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .behavior import Scheme
from .day2day import ScenarioConfig
from .market import TollProfile
from .mfd import SpeedFunction
from .population import PopulationError, PopulationSpec

SECONDS_PER_MINUTE = 60.0
REQUIRED = ("seed", "population.n_travelers", "scheme")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# schema: key -> default (nested dicts are sections); None means optional
SCHEMA = {
    "name": "scenario",
    "seed": 0,
    "population": {
        "n_travelers": 3700,
        "trip_length": {"mean": 4600.0, "sd": 920.0, "min": 0.0},
        "departure": {"mean": 80.0, "sd": 18.0, "bounds": [20.0, 150.0]},
        "penalties": {
            "mean": [0.5, 4.0],
            "cov": [[0.0025, 0.01], [0.01, 0.16]],
            "sde_bounds": [0.3, 0.7],
            "sdl_bounds": [2.5, 5.5],
        },
        "theta": 1.1,
        "tau": 30,
        "dt": 1.0,
    },
    "network": {"free_flow_speed_mps": 9.78, "n_jam": 4500.0},
    "behavior": {"mu": 0.15, "omega": 0.7},
    "scheme": "none",
    "toll": None,
    "market": {"price0": 0.0, "endowment": 5.0, "k": 2e-4, "w_distance": 2e-4, "w_time": 0.08},
    "run": {
        "days": 60,
        "threshold": 0.5,
        "patience": 5,
        "tail": 10,
        "min_days": 0,
        "warm_start": None,
        "keep_days": [],
    },
    "optimize": None,
}

OPTIMIZE_SCHEMA = {
    "shape": "gaussian",
    "bounds": None,
    "band": 10.0,
    "n_init": 30,
    "n_iter": 40,
    "beta": 2.0,
    "jitter": 1e-6,
    "require_convergence": True,
    "synthetic": None,
}

TOLL_KEYS = ("shape", "params", "basis", "denomination")


@dataclass
class Scenario:
    """A loaded scenario: the simulation config plus CLI-level settings."""

    name: str
    config: ScenarioConfig
    raw: dict
    warm_start: str | None = None  # "baseline" or a snapshot path
    keep_days: tuple = ()
    optimize: dict | None = None
    source: str | None = None
    extras: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(doc: dict) -> str:
    """SHA-256 over canonical JSON, so key order in the file does not matter."""
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def default_scenario_path(name: str = "default") -> Path:
    return Path(str(resources.files("tcs_mfd") / "data" / f"{name}.yaml"))


def _merge(schema: dict, doc: dict, path: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(path, "expected a mapping")
    unknown = sorted(set(doc) - set(schema))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    out = {}
    for key, default in schema.items():
        sub = f"{path}.{key}" if path else key
        if isinstance(default, dict):
            out[key] = _merge(default, doc.get(key) or {}, sub)
        elif key in doc:
            out[key] = doc[key]
        else:
            out[key] = copy.deepcopy(default)
    return out


def _lookup(doc: dict, dotted: str):
    cur = doc
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


def _num(doc: dict, dotted: str, kind=float, positive=False, nonneg=False):
    val = _lookup(doc, dotted)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(dotted, f"expected a number, got {val!r}")
    if kind is int and float(val) != int(val):
        raise ConfigError(dotted, f"expected an integer, got {val!r}")
    val = kind(val)
    if positive and not val > 0:
        raise ConfigError(dotted, "must be positive")
    if nonneg and val < 0:
        raise ConfigError(dotted, "must be nonnegative")
    return val


def _pair(doc: dict, dotted: str) -> tuple[float, float]:
    val = _lookup(doc, dotted)
    if not isinstance(val, (list, tuple)) or len(val) != 2:
        raise ConfigError(dotted, "expected a two-element list")
    try:
        lo, hi = float(val[0]), float(val[1])
    except (TypeError, ValueError):
        raise ConfigError(dotted, f"expected numbers, got {val!r}") from None
    if not lo < hi:
        raise ConfigError(dotted, "lower bound must be below upper bound")
    return lo, hi


def parse_toll(doc, path: str = "toll") -> TollProfile:
    if not isinstance(doc, dict):
        raise ConfigError(path, "expected a mapping with shape and params")
    unknown = sorted(set(doc) - set(TOLL_KEYS))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown key")
    if "shape" not in doc:
        raise ConfigError(f"{path}.shape", "missing required key")
    try:
        return TollProfile.from_dict(doc)
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from None


def _check_required(doc: dict) -> None:
    for dotted in REQUIRED:
        cur = doc
        for part in dotted.split("."):
            if not isinstance(cur, dict) or part not in cur:
                raise ConfigError(dotted, "missing required key")
            cur = cur[part]


def build(doc: dict, *, seed: int | None = None, days: int | None = None,
          source: str | None = None) -> Scenario:
    """Validate a raw scenario mapping and build the dataclasses."""
    if not isinstance(doc, dict):
        raise ConfigError("", "scenario file must contain a mapping")
    _check_required(doc)
    d = _merge(SCHEMA, doc, "")
    if seed is not None:
        d["seed"] = int(seed)
    if days is not None:
        d["run"]["days"] = int(days)

    master = _num(d, "seed", int, nonneg=True)
    pen = d["population"]["penalties"]
    cov = pen["cov"]
    if (not isinstance(cov, (list, tuple)) or len(cov) != 2
            or any(not isinstance(r, (list, tuple)) or len(r) != 2 for r in cov)):
        raise ConfigError("population.penalties.cov", "expected a 2x2 nested list")
    v_mps = _num(d, "network.free_flow_speed_mps", positive=True)
    try:
        pop = PopulationSpec(
            n_travelers=_num(d, "population.n_travelers", int, positive=True),
            length_mean=_num(d, "population.trip_length.mean"),
            length_sd=_num(d, "population.trip_length.sd", nonneg=True),
            length_min=_num(d, "population.trip_length.min", nonneg=True),
            departure_mean=_num(d, "population.departure.mean"),
            departure_sd=_num(d, "population.departure.sd", nonneg=True),
            departure_bounds=_pair(d, "population.departure.bounds"),
            penalty_mean=tuple(float(x) for x in pen["mean"]),
            penalty_cov=tuple(tuple(float(x) for x in row) for row in cov),
            sde_bounds=_pair(d, "population.penalties.sde_bounds"),
            sdl_bounds=_pair(d, "population.penalties.sdl_bounds"),
            theta=_num(d, "population.theta", nonneg=True),
            tau=_num(d, "population.tau", int, nonneg=True),
            dt=_num(d, "population.dt", positive=True),
            free_flow_speed=v_mps * SECONDS_PER_MINUTE,
            seed=master,
        )
        pop.validate()
    except PopulationError as exc:
        raise ConfigError("population", str(exc)) from None

    speed = SpeedFunction(v_free=v_mps * SECONDS_PER_MINUTE,
                          n_jam=_num(d, "network.n_jam", positive=True))
    try:
        scheme = Scheme(d["scheme"])
    except ValueError:
        choices = ", ".join(s.value for s in Scheme)
        raise ConfigError("scheme", f"unknown scheme {d['scheme']!r} (choose from {choices})") from None
    toll = parse_toll(d["toll"]) if d["toll"] is not None else None
    if scheme is not Scheme.NONE and toll is None:
        raise ConfigError("toll", f"missing required key for scheme {scheme.value}")

    warm = d["run"]["warm_start"]
    if warm is not None and not isinstance(warm, str):
        raise ConfigError("run.warm_start", "expected 'baseline' or a snapshot path")
    if warm is not None and warm != "baseline" and source is not None:
        warm = str((Path(source).parent / warm).resolve()) if not Path(warm).is_absolute() else warm
    keep = d["run"]["keep_days"]
    if not isinstance(keep, (list, tuple)) or any(not isinstance(x, int) for x in keep):
        raise ConfigError("run.keep_days", "expected a list of integer day indices")

    try:
        cfg = ScenarioConfig(
            population=pop,
            speed=speed,
            scheme=scheme,
            toll=toll,
            price0=_num(d, "market.price0", nonneg=True),
            endowment=_num(d, "market.endowment", nonneg=True),
            k=_num(d, "market.k", nonneg=True),
            omega=_num(d, "behavior.omega"),
            mu=_num(d, "behavior.mu", positive=True),
            w_distance=_num(d, "market.w_distance", nonneg=True),
            w_time=_num(d, "market.w_time", nonneg=True),
            days=_num(d, "run.days", int, positive=True),
            threshold=_num(d, "run.threshold", positive=True),
            patience=_num(d, "run.patience", int, positive=True),
            tail=_num(d, "run.tail", int, positive=True),
            min_days=_num(d, "run.min_days", int, nonneg=True),
            warm_start=warm if warm not in (None, "baseline") else None,
            seed=master,
        )
    except ValueError as exc:
        raise ConfigError("", str(exc)) from None

    opt = None
    if d["optimize"] is not None:
        opt = _merge(OPTIMIZE_SCHEMA, d["optimize"], "optimize")
        if opt["bounds"] is None:
            raise ConfigError("optimize.bounds", "missing required key")
        if not isinstance(opt["bounds"], dict) or not opt["bounds"]:
            raise ConfigError("optimize.bounds", "expected a mapping of name -> [lo, hi]")
        for name in opt["bounds"]:
            try:
                _pair(opt["bounds"], name)
            except ConfigError as exc:
                raise ConfigError(f"optimize.bounds.{name}", str(exc).split(": ", 1)[-1]) from None
        for key in ("n_init", "n_iter"):
            _num(opt, key, int, nonneg=True)
        if opt["n_init"] < 1:
            raise ConfigError("optimize.n_init", "must be at least 1")
        _num(opt, "beta", nonneg=True)

    return Scenario(
        name=str(d["name"]),
        config=cfg,
        raw=d,
        warm_start=warm,
        keep_days=tuple(keep),
        optimize=opt,
        source=source,
    )


def load(path: str | Path, *, seed: int | None = None, days: int | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{path} is not valid YAML: {exc}") from None
    return build(doc if doc is not None else {}, seed=seed, days=days, source=str(path))
