"""Credit toll profiles, daily settlement and the price adjustment rule."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SHAPES = ("gaussian", "step", "triangular", "flat")
N_STEPS = 5


@dataclass(frozen=True)
class TollProfile:
    """Time-of-day tariff.

    ``params`` depends on ``shape``:

    * gaussian: ``amplitude``, ``center``, ``width`` (the Gaussian sigma)
    * step: ``levels`` (5 values, innermost band first), ``center``, ``band`` (minutes)
    * triangular: ``height``, ``base``, ``center``
    * flat: ``amplitude``

    ``basis`` is ``"distance"`` (per meter, scaled by ``w``) or ``"time"``
    (per minute, scaled by ``w'``). ``denomination`` is ``"credits"`` or
    ``"money"``.
    """

    shape: str = "gaussian"
    params: dict = field(default_factory=dict)
    basis: str = "distance"
    denomination: str = "credits"

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown toll shape {self.shape!r}")
        if self.basis not in ("distance", "time"):
            raise ValueError(f"unknown toll basis {self.basis!r}")
        if self.denomination not in ("credits", "money"):
            raise ValueError(f"unknown denomination {self.denomination!r}")
        p = self.params
        required = {
            "gaussian": ("amplitude", "center", "width"),
            "step": ("levels", "center", "band"),
            "triangular": ("height", "base", "center"),
            "flat": ("amplitude",),
        }[self.shape]
        missing = [k for k in required if k not in p]
        if missing:
            raise ValueError(f"{self.shape} toll missing parameters: {missing}")
        if self.shape == "gaussian" and (p["amplitude"] < 0 or p["width"] <= 0):
            raise ValueError("gaussian toll needs amplitude >= 0 and width > 0")
        if self.shape == "step":
            if len(p["levels"]) != N_STEPS or min(p["levels"]) < 0 or p["band"] <= 0:
                raise ValueError(f"step toll needs {N_STEPS} nonnegative levels and band > 0")
        if self.shape == "triangular" and (p["height"] < 0 or p["base"] <= 0):
            raise ValueError("triangular toll needs height >= 0 and base > 0")
        if self.shape == "flat" and p["amplitude"] < 0:
            raise ValueError("flat toll amplitude must be nonnegative")

    @classmethod
    def gaussian(cls, amplitude, center, width, **kw) -> "TollProfile":
        return cls("gaussian", {"amplitude": amplitude, "center": center, "width": width}, **kw)

    @classmethod
    def step(cls, levels, center, band=10.0, **kw) -> "TollProfile":
        return cls("step", {"levels": tuple(float(x) for x in levels), "center": center, "band": band}, **kw)

    @classmethod
    def triangular(cls, height, base, center, **kw) -> "TollProfile":
        return cls("triangular", {"height": height, "base": base, "center": center}, **kw)

    @classmethod
    def flat(cls, amplitude, **kw) -> "TollProfile":
        return cls("flat", {"amplitude": amplitude}, **kw)

    def __call__(self, t):
        return eval_toll(self, t)

    def to_dict(self) -> dict:
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()}
        return {"shape": self.shape, "params": params, "basis": self.basis, "denomination": self.denomination}

    @classmethod
    def from_dict(cls, d: dict) -> "TollProfile":
        params = dict(d.get("params", {}))
        if "levels" in params:
            params["levels"] = tuple(float(x) for x in params["levels"])
        return cls(
            shape=d.get("shape", "gaussian"),
            params=params,
            basis=d.get("basis", "distance"),
            denomination=d.get("denomination", "credits"),
        )

    def write_curve_csv(self, path: str | Path, start=0.0, stop=240.0, dt=1.0) -> None:
        ts = np.arange(start, stop + 0.5 * dt, dt)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "toll"])
            for t, v in zip(ts, self(ts)):
                w.writerow([repr(float(t)), repr(float(v))])


def eval_toll(profile: TollProfile, t):
    t = np.asarray(t, dtype=float)
    p = profile.params
    if profile.shape == "gaussian":
        out = p["amplitude"] * np.exp(-((t - p["center"]) ** 2) / (2.0 * p["width"] ** 2))
    elif profile.shape == "triangular":
        out = p["height"] * np.maximum(0.0, 1.0 - 2.0 * np.abs(t - p["center"]) / p["base"])
    elif profile.shape == "step":
        band = np.floor(np.abs(t - p["center"]) / p["band"]).astype(np.int64)
        levels = np.append(np.asarray(p["levels"], dtype=float), 0.0)
        out = levels[np.minimum(band, N_STEPS)]
    else:
        out = np.full(t.shape, float(p["amplitude"]))
    return float(out) if out.ndim == 0 else out


@dataclass
class Transactions:
    """Per-traveler credit flows for one day (all in credits)."""

    consumed: np.ndarray
    from_endowment: np.ndarray
    bought: np.ndarray
    sold: np.ndarray

    @property
    def total_bought(self) -> float:
        return float(self.bought.sum())

    @property
    def total_sold(self) -> float:
        return float(self.sold.sum())


@dataclass
class MarketState:
    price: float = 0.0
    endowment: float = 5.0
    k: float = 2e-4
    excess: float = 0.0

    def __post_init__(self):
        if self.price < 0:
            raise ValueError("credit price must be nonnegative")


def settle_day(departures, travel_times, lengths, profile: TollProfile, endowment: float,
               price: float = 0.0, w_distance: float = 2e-4, w_time: float = 0.08):
    """Charge each traveler and trade the balance with the regulator at ``price``.

    Returns ``(Transactions, Z)`` where ``Z`` is total consumption minus total
    endowment. ``price`` does not change the credit flows; it is accepted so
    the call mirrors the daily settlement.
    """
    if price < 0:
        raise ValueError("price must be nonnegative")
    rate = profile(np.asarray(departures, dtype=float))
    if profile.basis == "time":
        consumed = rate * np.asarray(travel_times, dtype=float) * w_time
    else:
        consumed = rate * np.asarray(lengths, dtype=float) * w_distance
    consumed = np.asarray(consumed, dtype=float)
    from_endowment = np.minimum(endowment, consumed)
    tx = Transactions(
        consumed=consumed,
        from_endowment=from_endowment,
        bought=consumed - from_endowment,
        sold=np.maximum(0.0, endowment - consumed),
    )
    excess = float(consumed.sum() - endowment * consumed.size)
    return tx, excess


def update_price(price: float, excess: float, k: float) -> float:
    """``p + Q(p, Z)`` with ``Q = kZ`` for ``p > 0`` and ``max(0, kZ)`` at ``p = 0``.

    A step that would cross below zero is clamped at zero.
    """
    if price < 0:
        raise ValueError("price must be nonnegative")
    if price > 0:
        return max(0.0, price + k * excess)
    return max(0.0, k * excess)


def min_endowment(window, lengths, profile: TollProfile, w_distance: float = 2e-4,
                  w_time: float = 0.08, v_free: float | None = None) -> float:
    """Per-capita credit use if everyone picked their cheapest window slot.

    ``window`` has shape (N, slots). Under a time basis the free-flow travel
    time ``L / v_free`` stands in for the unknown experienced time.
    """
    window = np.asarray(window, dtype=float)
    lengths = np.asarray(lengths, dtype=float)
    cheapest = profile(window).min(axis=1)
    if profile.basis == "time":
        if v_free is None:
            raise ValueError("time-based tolls need v_free for the free-flow approximation")
        per_trip = cheapest * (lengths / v_free) * w_time
    else:
        per_trip = cheapest * lengths * w_distance
    return float(per_trip.mean())
