"""Day-to-day loop: choose, simulate, settle, learn, reprice."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .behavior import Scheme, generalized_cost, learning_update, sample_choice, toll_consumption
from .market import TollProfile, Transactions, min_endowment, settle_day, update_price
from .mfd import DayTrajectory, SpeedFunction, fictional_travel_time, simulate_day
from .population import Population, PopulationSpec, generate_population

log = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1
HIST_EDGES = np.arange(-30.0, 215.0, 5.0)

# streams derived from the master seed; the day index is the second key
_CHOICE_STREAM = 1


@dataclass(frozen=True)
class ScenarioConfig:
    population: PopulationSpec = field(default_factory=PopulationSpec)
    speed: SpeedFunction = field(default_factory=SpeedFunction)
    scheme: Scheme = Scheme.NONE
    toll: TollProfile | None = None
    price0: float = 0.0
    endowment: float = 5.0
    k: float = 2e-4
    omega: float = 0.7
    mu: float = 0.15
    w_distance: float = 2e-4
    w_time: float = 0.08
    days: int = 60
    threshold: float = 0.5  # gap, percent
    patience: int = 5
    tail: int = 10
    min_days: int = 0
    warm_start: str | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if not 0 < self.omega < 1:
            raise ValueError("omega must lie in (0, 1)")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.price0 < 0 or self.k < 0 or self.endowment < 0:
            raise ValueError("price0, k and endowment must be nonnegative")
        if self.scheme is not Scheme.NONE and self.toll is None:
            raise ValueError(f"scheme {self.scheme.value} needs a toll profile")
        if self.scheme is Scheme.TCS_TIME and self.toll is not None and self.toll.basis != "time":
            object.__setattr__(self, "toll", replace(self.toll, basis="time"))
        if self.scheme is Scheme.TCS_DISTANCE and self.toll is not None and self.toll.basis != "distance":
            raise ValueError("tcs-distance needs a distance-based toll profile")

    def with_toll(self, toll: TollProfile) -> "ScenarioConfig":
        return replace(self, toll=toll)


@dataclass
class SimState:
    day: int
    population: Population
    perceived: np.ndarray | None
    price: float


@dataclass
class Welfare:
    cs: float
    tr: float
    rr: float
    rc: float
    te: float
    welfare: float
    welfare_direct: float


@dataclass
class DayRecord:
    day: int
    price: float
    next_price: float
    excess: float
    inconsistency: float
    gap: float
    travel_time_cost: float
    schedule_delay_cost: float
    random_utility: float
    toll_payment: float
    welfare: Welfare
    peak_accumulation: int
    mean_travel_time: float
    share_early: float
    credits_bought: float
    credits_sold: float
    price_clamped: bool
    departures: np.ndarray = field(repr=False)
    travel_times: np.ndarray = field(repr=False)
    epsilon: np.ndarray = field(repr=False)
    chosen_cost: np.ndarray = field(repr=False)
    histogram: np.ndarray = field(repr=False)
    transactions: Transactions | None = field(default=None, repr=False)
    trajectory: DayTrajectory | None = field(default=None, repr=False)

    def scalars(self) -> dict:
        row = {
            "day": self.day,
            "price": self.price,
            "next_price": self.next_price,
            "excess": self.excess,
            "inconsistency": self.inconsistency,
            "gap": self.gap,
            "travel_time_cost": self.travel_time_cost,
            "schedule_delay_cost": self.schedule_delay_cost,
            "random_utility": self.random_utility,
            "toll_payment": self.toll_payment,
        }
        row.update(asdict(self.welfare))
        row.update(
            peak_accumulation=self.peak_accumulation,
            mean_travel_time=self.mean_travel_time,
            share_early=self.share_early,
            credits_bought=self.credits_bought,
            credits_sold=self.credits_sold,
            price_clamped=int(self.price_clamped),
        )
        return row


DAY_COLUMNS = [
    "day", "price", "next_price", "excess", "inconsistency", "gap",
    "travel_time_cost", "schedule_delay_cost", "random_utility", "toll_payment",
    *(f.name for f in fields(Welfare)),
    "peak_accumulation", "mean_travel_time", "share_early",
    "credits_bought", "credits_sold", "price_clamped",
]


def welfare(scheme: Scheme | str, price: float, theta: float, time_cost, epsilon, payment,
            transactions: Transactions | None = None) -> Welfare:
    """Per-capita welfare components for the chosen alternatives.

    ``payment`` is the DKK paid per traveler (``p * credits`` under a credit
    scheme, the money toll under CP). Consumer surplus includes it with a
    negative sign; the transfer terms add it back.
    """
    scheme = Scheme(scheme)
    time_cost = np.asarray(time_cost, dtype=float)
    epsilon = np.asarray(epsilon, dtype=float)
    payment = np.asarray(payment, dtype=float)
    n = time_cost.size
    cs = float(np.sum(-theta * time_cost - payment + epsilon) / n)
    tr = rr = rc = te = 0.0
    if scheme.uses_credits:
        if transactions is None:
            raise ValueError("credit schemes need the day's transactions")
        tr = float(transactions.sold.sum() * price / n)
        rr = float(transactions.bought.sum() * price / n)
        rc = tr
        te = float(transactions.from_endowment.sum() * price / n)
        total = cs + tr + rr - rc + te
    elif scheme is Scheme.CP:
        rr = float(payment.sum() / n)
        total = cs + rr
    else:
        total = cs
    direct = float(np.sum(-theta * time_cost + epsilon) / n)
    return Welfare(cs=cs, tr=tr, rr=rr, rc=rc, te=te, welfare=total, welfare_direct=direct)


def choice_rng(seed: int, day: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_CHOICE_STREAM, day)))


def initial_state(config: ScenarioConfig, population: Population | None = None) -> SimState:
    pop = population if population is not None else generate_population(config.population)
    if config.warm_start:
        state = restore(config.warm_start, population=pop)
        return SimState(day=0, population=pop, perceived=state.perceived, price=config.price0)
    return SimState(day=0, population=pop, perceived=None, price=config.price0)


def run_day(state: SimState, config: ScenarioConfig, keep_trajectory: bool = False) -> DayRecord:
    """Advance ``state`` by one day in place and return the day's record."""
    pop = state.population
    n = pop.size
    rows = np.arange(n)
    window = pop.window()
    scheme = config.scheme
    price = state.price

    if state.perceived is None:
        idx = np.full(n, pop.tau)
        eps = np.zeros(n)
    else:
        idx, eps = sample_choice(state.perceived, config.mu, choice_rng(config.seed, state.day))
    departures = window[rows, idx]

    traj = simulate_day(departures, pop.length, config.speed)
    travel = fictional_travel_time(traj, window, pop.length[:, None])
    travel[rows, idx] = traj.travel_times

    costs = generalized_cost(
        pop.theta, pop.desired_arrival[:, None], pop.sde[:, None], pop.sdl[:, None],
        window, travel,
        length=pop.length[:, None], price=price, toll=config.toll, scheme=scheme,
        w_distance=config.w_distance, w_time=config.w_time,
    )
    experienced = costs.total
    chosen_tc = costs.time_cost[rows, idx]
    chosen_pay = costs.toll_payment[rows, idx]

    tx = None
    excess = 0.0
    next_price = price
    clamped = False
    if scheme.uses_credits:
        tx, excess = settle_day(
            departures, traj.travel_times, pop.length, config.toll, config.endowment, price,
            config.w_distance, config.w_time,
        )
        next_price = update_price(price, excess, config.k)
        clamped = price > 0 and price + config.k * excess < 0

    if state.perceived is None:
        inconsistency = gap = math.nan
    else:
        diff = float(np.abs(state.perceived - experienced).sum())
        inconsistency = diff / n
        gap = 100.0 * diff / float(np.abs(state.perceived).sum())

    wf = welfare(scheme, price, pop.theta, chosen_tc, eps, chosen_pay, tx)
    record = DayRecord(
        day=state.day,
        price=price,
        next_price=next_price,
        excess=excess,
        inconsistency=inconsistency,
        gap=gap,
        travel_time_cost=float(-costs.travel_time_cost[rows, idx].sum() / n),
        schedule_delay_cost=float(-costs.schedule_delay_cost[rows, idx].sum() / n),
        random_utility=float(eps.mean()),
        toll_payment=float(chosen_pay.mean()),
        welfare=wf,
        peak_accumulation=traj.peak_accumulation,
        mean_travel_time=float(traj.travel_times.mean()),
        share_early=float(costs.early[rows, idx].mean()),
        credits_bought=tx.total_bought if tx is not None else 0.0,
        credits_sold=tx.total_sold if tx is not None else 0.0,
        price_clamped=clamped,
        departures=departures,
        travel_times=traj.travel_times,
        epsilon=eps,
        chosen_cost=experienced[rows, idx],
        histogram=np.histogram(departures, bins=HIST_EDGES)[0],
        transactions=tx,
        trajectory=traj if keep_trajectory else None,
    )

    if state.perceived is None:
        state.perceived = experienced
    else:
        state.perceived = learning_update(state.perceived, experienced, config.omega)
    state.price = next_price
    state.day += 1
    return record


@dataclass
class RunResult:
    history: list[DayRecord]
    converged: bool
    converged_day: int | None
    summary: dict
    state: SimState
    i_min: float | None = None


SUMMARY_KEYS = (
    "travel_time_cost", "schedule_delay_cost", "random_utility", "cs", "welfare",
    "toll_payment", "price", "gap", "inconsistency", "peak_accumulation",
    "mean_travel_time", "share_early", "excess", "credits_bought", "credits_sold",
)


def summarize(history: list[DayRecord], tail: int = 10) -> dict:
    """Mean and std of each reported metric over the final ``tail`` days."""
    window = history[-tail:]
    out = {}
    for key in SUMMARY_KEYS:
        vals = np.array([rec.scalars()[key] for rec in window], dtype=float)
        vals = vals[np.isfinite(vals)]
        out[key] = {
            "mean": float(vals.mean()) if vals.size else math.nan,
            "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
        }
    return out


def check_feasibility(config: ScenarioConfig, pop: Population) -> float | None:
    if not config.scheme.uses_credits:
        return None
    i_min = min_endowment(pop.window(), pop.length, config.toll, config.w_distance,
                          config.w_time, config.speed.v_free)
    if config.endowment <= i_min:
        log.warning("endowment %.3f does not exceed I_min %.3f; no equilibrium is guaranteed",
                    config.endowment, i_min)
    return i_min


def run_to_convergence(config: ScenarioConfig, state: SimState | None = None,
                       keep_days=(), callback=None) -> RunResult:
    """Iterate days until the gap stays below ``threshold`` for ``patience``
    consecutive days, then run until ``tail`` days cover the converged stretch.

    Stops at ``config.days`` regardless; non-convergence is reported, not raised.
    """
    if state is None:
        state = initial_state(config)
    i_min = check_feasibility(config, state.population)
    keep = set(keep_days)
    history: list[DayRecord] = []
    streak = 0
    converged_day = None
    stop_after = None
    for _ in range(config.days):
        rec = run_day(state, config, keep_trajectory=state.day in keep)
        history.append(rec)
        if callback is not None:
            callback(rec)
        if converged_day is None:
            streak = streak + 1 if rec.gap < config.threshold else 0
            if streak >= config.patience:
                converged_day = rec.day
                stop_after = len(history) + max(0, config.tail - config.patience)
        if stop_after is not None and len(history) >= max(stop_after, config.min_days):
            break
    # only days >= 1 carry metrics under a cold start
    scored = [r for r in history if not math.isnan(r.gap)] or history
    return RunResult(
        history=history,
        converged=converged_day is not None,
        converged_day=converged_day,
        summary=summarize(scored, config.tail),
        state=state,
        i_min=i_min,
    )


def mean_consumption(history: list[DayRecord], lengths, toll: TollProfile,
                     w_distance: float = 2e-4, w_time: float = 0.08, tail: int = 10) -> float:
    """Average per-traveler credit consumption that ``toll`` would charge for
    the departures recorded in the last ``tail`` days (I_UE when ``history`` is
    a no-toll equilibrium)."""
    vals = [
        float(np.mean(toll_consumption(toll, rec.departures, lengths, rec.travel_times,
                                       w_distance, w_time)))
        for rec in history[-tail:]
    ]
    return float(np.mean(vals)) if vals else math.nan


def sweep_endowment(config: ScenarioConfig, endowments, workers: int | None = None):
    """Equilibrium price per endowment value; returns ``(I, p*, converged)`` rows."""
    from .parallel import map_configs

    configs = [replace(config, endowment=float(i)) for i in endowments]
    results = map_configs(_equilibrium_price, configs, workers)
    return [(float(i), p, ok) for i, (p, ok) in zip(endowments, results)]


def _equilibrium_price(config: ScenarioConfig):
    res = run_to_convergence(config)
    return res.summary["price"]["mean"], res.converged


def snapshot(state: SimState, path: str | Path, seed: int | None = None) -> None:
    meta = {
        "version": SNAPSHOT_VERSION,
        "day": state.day,
        "price": state.price,
        "n_travelers": state.population.size,
        "n_slots": state.population.n_slots,
        "seed": seed,
    }
    perceived = state.perceived if state.perceived is not None else np.empty((0, 0))
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), perceived=perceived)


def restore(path: str | Path, population: Population) -> SimState:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        perceived = data["perceived"]
    if meta.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"snapshot version {meta.get('version')} != {SNAPSHOT_VERSION}")
    if meta["n_travelers"] != population.size or meta["n_slots"] != population.n_slots:
        raise ValueError(
            f"snapshot shape (N={meta['n_travelers']}, slots={meta['n_slots']}) does not match "
            f"population (N={population.size}, slots={population.n_slots})"
        )
    return SimState(
        day=int(meta["day"]),
        population=population,
        perceived=perceived.copy() if perceived.size else None,
        price=float(meta["price"]),
    )
