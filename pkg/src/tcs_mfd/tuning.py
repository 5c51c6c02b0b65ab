"""Toll-profile parameter vectors and the equilibrium-welfare objective."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .behavior import Scheme
from .day2day import RunResult, ScenarioConfig, SimState, run_to_convergence
from .market import N_STEPS, TollProfile, min_endowment

log = logging.getLogger(__name__)

# names of the optimized parameters per shape, in vector order
PARAMETERS = {
    "gaussian": ("amplitude", "center", "width"),
    "triangular": ("height", "base", "center"),
    "step": tuple(f"level{i + 1}" for i in range(N_STEPS)) + ("center",),
}

DEFAULT_BOUNDS = {
    "gaussian": {"amplitude": (5.0, 15.0), "center": (30.0, 90.0), "width": (10.0, 50.0)},
    "triangular": {"height": (5.0, 15.0), "base": (20.0, 200.0), "center": (30.0, 90.0)},
    "step": {**{f"level{i + 1}": (0.0, 15.0) for i in range(N_STEPS)}, "center": (30.0, 90.0)},
}


class NotConverged(RuntimeError):
    pass


class Infeasible(RuntimeError):
    """Endowment does not exceed the minimum consumption, so no equilibrium exists."""


def profile_from_vector(shape: str, x, *, basis: str = "distance", denomination: str = "credits",
                        band: float = 10.0) -> TollProfile:
    x = [float(v) for v in np.asarray(x, dtype=float).ravel()]
    names = PARAMETERS[shape]
    if len(x) != len(names):
        raise ValueError(f"{shape} profile takes {len(names)} parameters, got {len(x)}")
    if shape == "step":
        return TollProfile.step(x[:N_STEPS], x[N_STEPS], band=band, basis=basis,
                                denomination=denomination)
    return TollProfile(shape, dict(zip(names, x)), basis=basis, denomination=denomination)


def warm_state(base: SimState, price0: float) -> SimState:
    """Start a new run from a saved equilibrium: perceptions carried over,
    day counter reset, price set to ``price0``."""
    perceived = None if base.perceived is None else base.perceived.copy()
    return SimState(day=0, population=base.population, perceived=perceived, price=price0)


def baseline(config: ScenarioConfig) -> RunResult:
    """No-toll equilibrium of the same population and seed."""
    return run_to_convergence(replace(config, scheme=Scheme.NONE, toll=None, warm_start=None))


@dataclass
class WelfareObjective:
    """Maps a parameter vector to the equilibrium welfare (mean over the
    final ``tail`` days) of ``config`` with the corresponding toll.

    Each evaluation starts from ``start`` (typically the no-toll
    equilibrium). Non-convergence raises when ``require_convergence`` is set,
    which the optimizer records as a penalized evaluation.
    """

    config: ScenarioConfig
    shape: str
    start: SimState | None = None
    band: float = 10.0
    require_convergence: bool = True
    last: RunResult | None = None
    evaluations: int = 0

    def profile(self, x) -> TollProfile:
        basis = "time" if self.config.scheme is Scheme.TCS_TIME else "distance"
        denom = "money" if self.config.scheme is Scheme.CP else "credits"
        return profile_from_vector(self.shape, x, basis=basis, denomination=denom, band=self.band)

    def run(self, x) -> RunResult:
        cfg = replace(self.config, toll=self.profile(x), warm_start=None)
        state = warm_state(self.start, cfg.price0) if self.start is not None else None
        res = run_to_convergence(cfg, state=state)
        self.last = res
        self.evaluations += 1
        return res

    def i_min(self, x) -> float:
        if self.start is None or not self.config.scheme.uses_credits:
            return 0.0
        pop = self.start.population
        return min_endowment(pop.window(), pop.length, self.profile(x), self.config.w_distance,
                             self.config.w_time, self.config.speed.v_free)

    def __call__(self, x) -> float:
        if self.require_convergence:
            i_min = self.i_min(x)
            if self.config.endowment <= i_min:
                raise Infeasible(f"I_min {i_min:.3f} >= endowment {self.config.endowment:g}")
        res = self.run(x)
        value = res.summary["welfare"]["mean"]
        log.info("eval %d %s -> W=%.4f converged=%s", self.evaluations,
                 np.round(np.asarray(x, float), 3).tolist(), value, res.converged)
        if self.require_convergence and not res.converged:
            raise NotConverged(f"no convergence within {self.config.days} days")
        return value


def synthetic_objective(optimum, bounds_lower, bounds_upper):
    """Concave test objective with a known maximizer, scaled per dimension."""
    x0 = np.asarray(optimum, dtype=float)
    span = np.asarray(bounds_upper, float) - np.asarray(bounds_lower, float)

    def f(x):
        return -float(np.sum(((np.asarray(x, float) - x0) / span) ** 2))

    return f


def relative_change(new: float, old: float) -> float:
    """Signed improvement of ``new`` over ``old`` relative to ``|old|``."""
    if old == 0:
        return math.inf if new > 0 else (-math.inf if new < 0 else 0.0)
    return (new - old) / abs(old)
