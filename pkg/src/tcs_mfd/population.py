"""Heterogeneous traveler population drawn from truncated Gaussians."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_REJECTION_TRIES = 10_000


class PopulationError(ValueError):
    pass


@dataclass(frozen=True)
class PopulationSpec:
    """Distributions for the traveler population.

    All times are in minutes, lengths in meters. ``departure_sd`` is a
    standard deviation. Penalty rates are drawn jointly from a bivariate
    Gaussian and then truncated per component.
    """

    n_travelers: int = 3700
    length_mean: float = 4600.0
    length_sd: float = 920.0
    length_min: float = 0.0
    departure_mean: float = 80.0
    departure_sd: float = 18.0
    departure_bounds: tuple[float, float] = (20.0, 150.0)
    penalty_mean: tuple[float, float] = (0.5, 4.0)
    penalty_cov: tuple[tuple[float, float], tuple[float, float]] = (
        (0.05**2, 0.1**2),
        (0.1**2, 0.4**2),
    )
    sde_bounds: tuple[float, float] = (0.3, 0.7)
    sdl_bounds: tuple[float, float] = (2.5, 5.5)
    theta: float = 1.1
    tau: int = 30
    dt: float = 1.0
    free_flow_speed: float = 9.78 * 60.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_travelers <= 0:
            raise PopulationError("n_travelers must be positive")
        if self.length_sd < 0 or self.departure_sd < 0:
            raise PopulationError("standard deviations must be nonnegative")
        for name in ("departure_bounds", "sde_bounds", "sdl_bounds"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise PopulationError(f"{name}: lower bound must be below upper bound")
        if self.tau < 0 or self.dt <= 0:
            raise PopulationError("tau must be >= 0 and dt > 0")
        if self.free_flow_speed <= 0 or self.theta < 0:
            raise PopulationError("free_flow_speed must be positive, theta nonnegative")
        cov = np.asarray(self.penalty_cov, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
            raise PopulationError("penalty_cov must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(cov).min() < -1e-15:
            raise PopulationError("penalty_cov must be positive semidefinite")


@dataclass(frozen=True)
class Population:
    """Column-oriented traveler table; row ``i`` is traveler ``i``."""

    length: np.ndarray
    t0: np.ndarray
    desired_arrival: np.ndarray
    sde: np.ndarray
    sdl: np.ndarray
    theta: float
    tau: int
    dt: float
    offsets: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.length.size

    @property
    def n_slots(self) -> int:
        return self.offsets.size

    def window(self) -> np.ndarray:
        """Candidate departure minutes, shape (N, 2*tau+1)."""
        return self.t0[:, None] + self.offsets[None, :]

    def traveler(self, i: int) -> dict:
        return {
            "id": i,
            "L": float(self.length[i]),
            "t0": float(self.t0[i]),
            "T_star": float(self.desired_arrival[i]),
            "sde": float(self.sde[i]),
            "sdl": float(self.sdl[i]),
        }

    def to_records(self, path: str | Path) -> None:
        """Write one traveler per line: id, L, t0, T*, sde, sdl."""
        with open(path, "w", newline="") as fh:
            fh.write(f"# theta={float(self.theta)!r} tau={int(self.tau)} dt={float(self.dt)!r}\n")
            fh.write("id,L,t0,T_star,sde,sdl\n")
            cols = (self.length, self.t0, self.desired_arrival, self.sde, self.sdl)
            for i, row in enumerate(zip(*(c.tolist() for c in cols))):
                fh.write(f"{i}," + ",".join(repr(v) for v in row) + "\n")

    @classmethod
    def from_records(cls, path: str | Path) -> "Population":
        with open(path) as fh:
            header = fh.readline().lstrip("# ").split()
            meta = dict(item.split("=") for item in header)
            data = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2)
        return _assemble(
            length=data[:, 1],
            t0=data[:, 2],
            desired_arrival=data[:, 3],
            sde=data[:, 4],
            sdl=data[:, 5],
            theta=float(meta["theta"]),
            tau=int(meta["tau"]),
            dt=float(meta["dt"]),
        )


def _assemble(*, tau: int, dt: float, **columns) -> Population:
    offsets = np.arange(-tau, tau + 1, dtype=float) * dt
    return Population(tau=tau, dt=dt, offsets=offsets, **columns)


def _truncated(draw, lower, upper, n: int) -> np.ndarray:
    """Rejection-sample ``n`` values of ``draw(k)`` inside [lower, upper]."""
    out = np.empty(n)
    filled = 0
    tries = 0
    while filled < n:
        tries += 1
        if tries > MAX_REJECTION_TRIES:
            raise PopulationError(
                f"rejection sampling exceeded {MAX_REJECTION_TRIES} rounds; "
                f"bounds [{lower}, {upper}] look degenerate"
            )
        x = draw(n - filled)
        keep = x[(x >= lower) & (x <= upper)]
        out[filled:filled + keep.size] = keep
        filled += keep.size
    return out


def _truncated_pairs(rng, mean, cov, lo, hi, n: int) -> np.ndarray:
    out = np.empty((n, 2))
    filled = 0
    tries = 0
    while filled < n:
        tries += 1
        if tries > MAX_REJECTION_TRIES:
            raise PopulationError("rejection sampling of penalty rates did not terminate")
        x = rng.multivariate_normal(mean, cov, size=n - filled)
        ok = np.all((x >= lo) & (x <= hi), axis=1)
        keep = x[ok]
        out[filled:filled + keep.shape[0]] = keep
        filled += keep.shape[0]
    return out


def generate_population(spec: PopulationSpec) -> Population:
    spec.validate()
    n = spec.n_travelers
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(0,)))

    length = _truncated(
        lambda k: rng.normal(spec.length_mean, spec.length_sd, k),
        # strict positivity: nudge a zero lower bound to the smallest positive float
        max(spec.length_min, np.nextafter(0.0, 1.0)),
        np.inf,
        n,
    )
    lo, hi = spec.departure_bounds
    t0 = _truncated(lambda k: rng.normal(spec.departure_mean, spec.departure_sd, k), lo, hi, n)
    pen = _truncated_pairs(
        rng,
        np.asarray(spec.penalty_mean, dtype=float),
        np.asarray(spec.penalty_cov, dtype=float),
        np.array([spec.sde_bounds[0], spec.sdl_bounds[0]]),
        np.array([spec.sde_bounds[1], spec.sdl_bounds[1]]),
        n,
    )
    return _assemble(
        length=length,
        t0=t0,
        desired_arrival=t0 + length / spec.free_flow_speed,
        sde=pen[:, 0].copy(),
        sdl=pen[:, 1].copy(),
        theta=spec.theta,
        tau=spec.tau,
        dt=spec.dt,
    )
