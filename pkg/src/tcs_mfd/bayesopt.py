"""Gaussian-process Bayesian optimization of toll-profile parameters.

Latin hypercube initial design, zero-mean GP surrogate with a Matérn-5/2
kernel, and an upper-confidence-bound acquisition maximized by multi-start
probing plus coordinate refinement.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import qmc

log = logging.getLogger(__name__)

SQRT5 = math.sqrt(5.0)
JITTER_MAX = 1e-4
LENGTHSCALE_GRID = (0.05, 0.1, 0.2, 0.35, 0.6, 1.0, 2.0)
FAILURE_PENALTY = -1e6


class GpFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError(f"each lower bound must be below its upper bound: {lo} vs {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        names = tuple(self.names) or tuple(f"x{i}" for i in range(lo.size))
        if len(names) != lo.size:
            raise ValueError("one name per dimension")
        object.__setattr__(self, "names", names)

    @classmethod
    def from_pairs(cls, pairs: dict | Sequence) -> "Bounds":
        """From ``{"name": (lo, hi)}`` or a list of ``(lo, hi)``."""
        if isinstance(pairs, dict):
            names = tuple(pairs)
            vals = [pairs[k] for k in names]
        else:
            names = ()
            vals = list(pairs)
        lo, hi = zip(*vals)
        return cls(np.array(lo, float), np.array(hi, float), names)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def to_unit(self, x):
        return (np.asarray(x, float) - self.lower) / (self.upper - self.lower)

    def from_unit(self, u):
        return self.lower + np.asarray(u, float) * (self.upper - self.lower)


def lhs_sample(bounds: Bounds, m: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube design: each dimension cut into ``m`` equal strata,
    one uniform point per stratum, strata shuffled independently per dimension."""
    if m < 1:
        raise ValueError("m must be >= 1")
    u = np.empty((m, bounds.dim))
    for j in range(bounds.dim):
        strata = rng.permutation(m)
        u[:, j] = (strata + rng.random(m)) / m
    return bounds.from_unit(u)


def matern52(X1, X2, lengthscales, signal_var: float) -> np.ndarray:
    """Matérn nu=5/2 covariance between the rows of X1 and X2."""
    X1 = np.atleast_2d(X1) / lengthscales
    X2 = np.atleast_2d(X2) / lengthscales
    sq = (X1 * X1).sum(1)[:, None] + (X2 * X2).sum(1)[None, :] - 2.0 * X1 @ X2.T
    r = np.sqrt(np.maximum(sq, 0.0))
    return signal_var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


@dataclass
class GpModel:
    X: np.ndarray  # unit-box inputs
    y: np.ndarray  # centered outputs
    center: float
    lengthscales: np.ndarray
    signal_var: float
    jitter: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    bounds: Bounds | None = None
    log_marginal: float = math.nan

    def kernel(self, A, B) -> np.ndarray:
        return matern52(A, B, self.lengthscales, self.signal_var)


def _factorize(K: np.ndarray, jitter: float):
    """Cholesky of K + jitter*I, escalating jitter tenfold up to JITTER_MAX."""
    eye = np.eye(K.shape[0])
    j = jitter
    while True:
        try:
            return np.linalg.cholesky(K + j * eye), j
        except np.linalg.LinAlgError:
            if j >= JITTER_MAX:
                raise GpFitError(
                    f"covariance not positive definite even with jitter {j:g}; "
                    "check for duplicate inputs"
                ) from None
            j = min(JITTER_MAX, max(j * 10.0, 1e-8))
            log.debug("raising GP jitter to %g", j)


def _log_marginal(L: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    a = solve_triangular(L, y, lower=True)
    alpha = solve_triangular(L.T, a, lower=False)
    lml = -0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * y.size * math.log(2 * math.pi)
    return float(lml), alpha


def _profile_signal(R: np.ndarray, y: np.ndarray, jitter: float) -> float:
    # maximum-likelihood signal variance for a unit-variance correlation matrix
    L, _ = _factorize(R, max(jitter, 1e-10))
    a = solve_triangular(L, y, lower=True)
    return max(float(a @ a) / y.size, 1e-12)


def _fit_hyper(X: np.ndarray, y: np.ndarray, jitter: float, grid=LENGTHSCALE_GRID):
    """Lengthscales on a grid (isotropic pass, then per-dimension coordinate
    sweeps) with the signal variance profiled out; scored by log marginal likelihood."""
    dim = X.shape[1]
    if not np.any(y):
        return np.full(dim, 1.0), 1.0

    def score(ls):
        R = matern52(X, X, ls, 1.0)
        s2 = _profile_signal(R, y, jitter)
        try:
            L, _ = _factorize(s2 * R, jitter)
        except GpFitError:
            return -math.inf, s2
        return _log_marginal(L, y)[0], s2

    best_ls, best, best_s2 = None, -math.inf, 1.0
    for g in grid:
        ls = np.full(dim, g)
        val, s2 = score(ls)
        if val > best:
            best_ls, best, best_s2 = ls, val, s2
    if best_ls is None:
        return np.full(dim, 1.0), float(np.var(y)) or 1.0
    if dim > 1:
        for _ in range(2):
            improved = False
            for j in range(dim):
                for g in grid:
                    if g == best_ls[j]:
                        continue
                    ls = best_ls.copy()
                    ls[j] = g
                    val, s2 = score(ls)
                    if val > best + 1e-9:
                        best_ls, best, best_s2, improved = ls, val, s2, True
            if not improved:
                break
    return best_ls, best_s2


def gp_fit(X, W, bounds: Bounds | None = None, lengthscales=None, signal_var: float | None = None,
           jitter: float = 1e-6) -> GpModel:
    """Fit a zero-mean GP to (X, W).

    ``X`` is in original units when ``bounds`` is given (normalized to the unit
    box internally), otherwise taken as already normalized. Outputs are
    centered. Hyperparameters left as ``None`` are fitted by log marginal
    likelihood.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    W = np.asarray(W, dtype=float).ravel()
    if X.shape[0] != W.size or W.size < 1:
        raise ValueError("X and W must have the same, nonzero number of rows")
    U = bounds.to_unit(X) if bounds is not None else X
    center = float(W.mean())
    y = W - center
    if lengthscales is None:
        ls, s2 = _fit_hyper(U, y, jitter)
        if signal_var is None:
            signal_var = s2
        lengthscales = ls
    elif signal_var is None:
        signal_var = _profile_signal(matern52(U, U, np.asarray(lengthscales, float), 1.0), y, jitter)
    lengthscales = np.broadcast_to(np.asarray(lengthscales, dtype=float), (U.shape[1],)).copy()
    K = matern52(U, U, lengthscales, signal_var)
    L, used = _factorize(K, jitter)
    lml, alpha = _log_marginal(L, y)
    return GpModel(U, y, center, lengthscales, float(signal_var), used, L, alpha, bounds, lml)


def gp_predict(model: GpModel, x, unit: bool = False):
    """Posterior mean and variance at ``x`` (rows). ``x`` is in original units
    when the model carries bounds, unless ``unit`` is set."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if model.bounds is not None and not unit:
        x = model.bounds.to_unit(x)
    ks = model.kernel(model.X, x)
    mean = ks.T @ model.alpha + model.center
    v = solve_triangular(model.chol, ks, lower=True)
    var = np.maximum(model.signal_var - (v * v).sum(0), 0.0)
    return mean, var


def ucb(model: GpModel, x, beta: float, unit: bool = False) -> np.ndarray:
    mean, var = gp_predict(model, x, unit=unit)
    return mean + beta * np.sqrt(var)


def suggest_next(model: GpModel, bounds: Bounds, beta: float = 2.0, rng=None,
                 n_probes: int = 2048, n_refine: int = 8, sweeps: int = 4):
    """Approximate argmax of the UCB over the box; returns (point, ucb value).

    Scrambled Sobol probes pick starting points; the best ``n_refine`` are
    polished by coordinate search with shrinking steps.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    rng = np.random.default_rng(rng)
    probes = qmc.Sobol(bounds.dim, scramble=True, seed=rng).random(n_probes)
    vals = ucb(model, probes, beta, unit=True)
    order = np.argsort(-vals, kind="stable")[:n_refine]
    best_u, best_v = probes[order[0]].copy(), float(vals[order[0]])
    for idx in order:
        u, v = probes[idx].copy(), float(vals[idx])
        step = 0.1
        for _ in range(sweeps):
            for j in range(bounds.dim):
                cand = np.repeat(u[None, :], 2, axis=0)
                cand[0, j] = min(1.0, u[j] + step)
                cand[1, j] = max(0.0, u[j] - step)
                cv = ucb(model, cand, beta, unit=True)
                k = int(np.argmax(cv))
                if cv[k] > v:
                    u, v = cand[k], float(cv[k])
            step *= 0.5
        if v > best_v:
            best_u, best_v = u, v
    return bounds.from_unit(best_u), best_v


@dataclass
class TraceRow:
    iteration: int
    phase: str  # "lhs" or "ucb"
    params: np.ndarray
    objective: float
    acquisition: float
    best: float
    failed: bool = False


@dataclass
class OptimizeResult:
    best_params: np.ndarray
    best_value: float
    trace: list[TraceRow]
    bounds: Bounds
    model: GpModel | None = None

    def best_dict(self) -> dict:
        return dict(zip(self.bounds.names, map(float, self.best_params)))


def _evaluate(objective, x) -> tuple[float, bool]:
    try:
        val = float(objective(x))
    except Exception as exc:  # noqa: BLE001 - failures are scored, not raised
        log.warning("objective failed at %s: %s", np.round(x, 4).tolist(), exc)
        return FAILURE_PENALTY, True
    if not math.isfinite(val):
        return FAILURE_PENALTY, True
    return val, False


def optimize(objective: Callable[[np.ndarray], float], bounds: Bounds, n_init: int = 30,
             n_iter: int = 40, beta: float = 2.0, seed: int = 0, jitter: float = 1e-6,
             on_row: Callable[[TraceRow], None] | None = None) -> OptimizeResult:
    """Maximize ``objective`` over ``bounds``.

    Objective exceptions and non-finite values are recorded at
    FAILURE_PENALTY and the loop carries on. The surrogate sees failed points
    at the worst successful value instead, so it learns to avoid them without
    the penalty's scale swamping the fit.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    trace: list[TraceRow] = []
    X: list[np.ndarray] = []
    Y: list[float] = []
    failed_at: list[bool] = []
    best = -math.inf
    best_x = None

    def record(x, phase, acq):
        nonlocal best, best_x
        val, failed = _evaluate(objective, x)
        if val > best:
            best, best_x = val, np.array(x, dtype=float)
        row = TraceRow(len(trace), phase, np.array(x, dtype=float), val, acq, best, failed)
        trace.append(row)
        X.append(row.params)
        Y.append(val)
        failed_at.append(failed)
        if on_row is not None:
            on_row(row)

    for x in lhs_sample(bounds, n_init, rng):
        record(x, "lhs", math.nan)

    model = None
    for _ in range(n_iter):
        ok = ~np.array(failed_at)
        if not ok.any():
            x, acq = lhs_sample(bounds, 1, rng)[0], math.nan
        else:
            y = np.array(Y)
            y[~ok] = y[ok].min()
            model = gp_fit(np.array(X), y, bounds=bounds, jitter=jitter)
            x, acq = suggest_next(model, bounds, beta, rng)
        record(x, "ucb", acq)

    if best_x is None:
        best_x = trace[0].params
    return OptimizeResult(best_x, best, trace, bounds, model)


TRACE_FIELDS = ("iteration", "phase", "objective", "acquisition", "best", "failed")


class TraceWriter:
    """Appends trace rows to CSV, flushing after every row so an interrupted
    run leaves a usable partial trace."""

    def __init__(self, path: str | Path, names: Sequence[str]):
        self.names = tuple(names)
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(list(TRACE_FIELDS[:2]) + list(self.names) + list(TRACE_FIELDS[2:]))
        self._fh.flush()

    def __call__(self, row: TraceRow) -> None:
        self._w.writerow(
            [row.iteration, row.phase]
            + [repr(float(v)) for v in row.params]
            + [repr(row.objective), repr(row.acquisition), repr(row.best), int(row.failed)]
        )
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_best_json(path: str | Path, result: OptimizeResult, extra: dict | None = None) -> None:
    doc = {"params": result.best_dict(), "objective": result.best_value}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def grid_points(bounds: Bounds, per_dim: int) -> np.ndarray:
    """Full tensor grid, mainly for tests and small diagnostics."""
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(bounds.lower, bounds.upper)]
    return np.array(list(itertools.product(*axes)))
