"""Event-driven trip-based MFD for a single reservoir.

All travelers in the reservoir share the speed ``V(n)``, which only changes
at departure and arrival events. Rather than decrementing every residual
length at every event, the simulator tracks the cumulative distance
``D(t)`` a vehicle would have covered since the start of the day. Traveler
``i`` arrives when ``D`` reaches ``D(t_dep_i) + L_i``; the traveler with the
smallest such target is always the next to leave, so a heap suffices. The
stored breakpoints of ``D`` also answer fictional-traveler queries by
inversion without touching the accumulation.
"""
from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEPARTURE = 1
ARRIVAL = -1
RESIDUAL_EPS = 1e-9  # meters; a trip with less than this left is complete


class GridlockError(RuntimeError):
    def __init__(self, time: float, remaining: int):
        self.time = time
        self.remaining = remaining
        super().__init__(
            f"gridlock at t={time:.4f} min: accumulation reached jam capacity "
            f"with {remaining} travelers still unserved"
        )


@dataclass(frozen=True)
class SpeedFunction:
    """``V(n) = v_f * (1 - n / n_jam) ** 2`` with ``v_f`` in m/min."""

    v_free: float = 9.78 * 60.0
    n_jam: float = 4500.0

    def __call__(self, n):
        return eval_speed(self, n)


def eval_speed(speed: SpeedFunction, n):
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 0) or np.any(n_arr > speed.n_jam):
        raise ValueError(f"accumulation out of range [0, {speed.n_jam}]: {n}")
    v = speed.v_free * (1.0 - n_arr / speed.n_jam) ** 2
    return float(v) if v.ndim == 0 else v


@dataclass
class DayTrajectory:
    """Outcome of one simulated day.

    ``times``/``cum_distance``/``accumulation`` are breakpoints: between
    ``times[k]`` and ``times[k+1]`` the accumulation is ``accumulation[k]``
    and ``D`` grows with slope ``V(accumulation[k])``. Outside the recorded
    span the reservoir is empty.
    """

    times: np.ndarray
    cum_distance: np.ndarray
    accumulation: np.ndarray
    event_kind: np.ndarray
    event_traveler: np.ndarray
    departure: np.ndarray
    arrival: np.ndarray
    v_free: float

    @property
    def travel_times(self) -> np.ndarray:
        return self.arrival - self.departure

    @property
    def peak_accumulation(self) -> int:
        return int(self.accumulation.max()) if self.accumulation.size else 0

    def distance_at(self, t) -> np.ndarray:
        """Evaluate ``D(t)``, extending with free-flow slope outside the events."""
        t = np.asarray(t, dtype=float)
        if self.times.size == 0:
            return t * self.v_free
        t_first, t_last = self.times[0], self.times[-1]
        d = np.interp(t, self.times, self.cum_distance)
        d = np.where(t < t_first, self.cum_distance[0] - (t_first - t) * self.v_free, d)
        return np.where(t > t_last, self.cum_distance[-1] + (t - t_last) * self.v_free, d)

    def time_at_distance(self, d) -> np.ndarray:
        """Inverse of :meth:`distance_at`; ``D`` is strictly increasing."""
        d = np.asarray(d, dtype=float)
        if self.times.size == 0:
            return d / self.v_free
        d_first, d_last = self.cum_distance[0], self.cum_distance[-1]
        t = np.interp(d, self.cum_distance, self.times)
        t = np.where(d < d_first, self.times[0] - (d_first - d) / self.v_free, t)
        return np.where(d > d_last, self.times[-1] + (d - d_last) / self.v_free, t)

    def events(self) -> list[tuple[float, str, int, int]]:
        kinds = {DEPARTURE: "departure", ARRIVAL: "arrival"}
        return [
            (float(t), kinds[int(k)], int(i), int(n))
            for t, k, i, n in zip(self.times, self.event_kind, self.event_traveler, self.accumulation)
        ]

    def write_accumulation_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "accumulation"])
            for t, n in zip(self.times, self.accumulation):
                w.writerow([repr(float(t)), int(n)])

    def write_travelers_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "depart", "arrive", "travel_time"])
            for i, (a, b) in enumerate(zip(self.departure, self.arrival)):
                w.writerow([i, repr(float(a)), repr(float(b)), repr(float(b - a))])


def simulate_day(departures, lengths, speed: SpeedFunction) -> DayTrajectory:
    """Run the event-based trip-based MFD for one day.

    Simultaneous events: arrivals before departures, then by traveler id.
    Raises :class:`GridlockError` if the accumulation hits ``n_jam``.
    """
    dep = np.asarray(departures, dtype=float)
    lengths = np.asarray(lengths, dtype=float)
    if dep.shape != lengths.shape or dep.ndim != 1:
        raise ValueError("departures and lengths must be 1-D and aligned")
    if not np.all(np.isfinite(dep)):
        raise ValueError("departure times must be finite")
    if np.any(lengths <= 0):
        raise ValueError("trip lengths must be positive")

    n_trav = dep.size
    order = np.lexsort((np.arange(n_trav), dep))
    dep_sorted = dep[order].tolist()
    dep_ids = order.tolist()
    len_list = lengths.tolist()

    v_free = speed.v_free
    n_jam = speed.n_jam

    n_events = 2 * n_trav
    times = np.empty(n_events)
    cum = np.empty(n_events)
    acc = np.empty(n_events, dtype=np.int64)
    kind = np.empty(n_events, dtype=np.int8)
    who = np.empty(n_events, dtype=np.int64)
    arrival = np.empty(n_trav)

    heap: list[tuple[float, int]] = []  # (target cumulative distance, id)
    t_now = dep_sorted[0] if n_trav else 0.0
    d_now = 0.0
    n = 0
    v = v_free
    nxt = 0
    inf = float("inf")
    for j in range(n_events):
        t_dep = dep_sorted[nxt] if nxt < n_trav else inf
        if heap:
            gap = heap[0][0] - d_now
            t_arr = t_now if gap <= RESIDUAL_EPS else t_now + gap / v
        else:
            t_arr = inf
        if t_arr <= t_dep:
            target, i = heapq.heappop(heap)
            # snap to the target to keep D(t_arr) - D(t_dep) == L exactly
            d_now = max(d_now, target)
            t_now = t_arr
            n -= 1
            arrival[i] = t_now
            kind[j] = ARRIVAL
        else:
            d_now += v * (t_dep - t_now)
            t_now = t_dep
            i = dep_ids[nxt]
            nxt += 1
            n += 1
            heapq.heappush(heap, (d_now + len_list[i], i))
            kind[j] = DEPARTURE
        times[j] = t_now
        cum[j] = d_now
        acc[j] = n
        who[j] = i
        if n >= n_jam:
            raise GridlockError(t_now, n_trav - (j + 1 - nxt))
        v = v_free * (1.0 - n / n_jam) ** 2

    return DayTrajectory(
        times=times,
        cum_distance=cum,
        accumulation=acc,
        event_kind=kind,
        event_traveler=who,
        departure=dep.copy(),
        arrival=arrival,
        v_free=v_free,
    )


def fictional_travel_time(traj: DayTrajectory, depart, length, speed: SpeedFunction | None = None):
    """Travel time of a traveler who does not load the network.

    Found by inverting the day's cumulative distance: ``D(t') - D(depart) = length``.
    Broadcasts over ``depart`` and ``length``.
    """
    depart = np.asarray(depart, dtype=float)
    target = traj.distance_at(depart) + np.asarray(length, dtype=float)
    out = traj.time_at_distance(target) - depart
    return float(out) if out.ndim == 0 else out
