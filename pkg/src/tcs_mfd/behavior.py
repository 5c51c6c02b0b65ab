"""Generalized cost, logit departure-time choice and day-to-day learning."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .market import TollProfile


class Scheme(str, Enum):
    NONE = "none"
    TCS_DISTANCE = "tcs-distance"
    TCS_TIME = "tcs-time"
    CP = "cp"

    @property
    def uses_credits(self) -> bool:
        return self in (Scheme.TCS_DISTANCE, Scheme.TCS_TIME)


@dataclass
class CostBreakdown:
    """Cost terms in DKK; arrays broadcast over travelers and slots.

    ``total`` is the (negative) money-metric utility, ``time_cost`` the
    composite in minutes so that ``total == -theta*time_cost - toll_payment``.
    """

    travel_time_cost: np.ndarray
    schedule_delay_cost: np.ndarray
    toll_payment: np.ndarray
    time_cost: np.ndarray
    early: np.ndarray
    total: np.ndarray


def toll_consumption(profile: TollProfile | None, depart, length, travel_time, w_distance, w_time):
    """Credits (or DKK under CP) charged for a trip, before multiplying by price."""
    if profile is None:
        return np.zeros(np.broadcast_shapes(np.shape(depart), np.shape(length)))
    rate = profile(depart)
    if profile.basis == "time":
        return rate * np.asarray(travel_time) * w_time
    return rate * np.asarray(length) * w_distance


def generalized_cost(
    theta,
    desired_arrival,
    sde,
    sdl,
    depart,
    travel_time,
    *,
    length=None,
    price: float = 0.0,
    toll: TollProfile | None = None,
    scheme: Scheme | str = Scheme.NONE,
    w_distance: float = 2e-4,
    w_time: float = 0.08,
) -> CostBreakdown:
    scheme = Scheme(scheme)
    depart = np.asarray(depart, dtype=float)
    travel_time = np.asarray(travel_time, dtype=float)
    arrive = depart + travel_time
    early = arrive < desired_arrival
    delay = np.where(early, sde * (desired_arrival - arrive), sdl * (arrive - desired_arrival))
    tc = travel_time + delay

    if scheme is Scheme.NONE or toll is None:
        payment = np.zeros_like(tc)
    else:
        consumed = toll_consumption(toll, depart, length, travel_time, w_distance, w_time)
        payment = consumed if scheme is Scheme.CP else price * consumed
        payment = np.broadcast_to(payment, tc.shape)

    return CostBreakdown(
        travel_time_cost=theta * travel_time,
        schedule_delay_cost=theta * delay,
        toll_payment=payment,
        time_cost=tc,
        early=early,
        total=-theta * tc - payment,
    )


def choice_probabilities(perceived, mu: float) -> np.ndarray:
    """Logit probabilities along the last axis, max-shifted for stability."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    u = mu * np.asarray(perceived, dtype=float)
    u = u - u.max(axis=-1, keepdims=True)
    e = np.exp(u)
    return e / e.sum(axis=-1, keepdims=True)


def sample_choice(perceived, mu: float, rng: np.random.Generator):
    """Gumbel-argmax choice.

    Returns ``(index, epsilon)``: the chosen alternative index along the last
    axis and the realized error term of that alternative. Errors are
    Gumbel(0, 1/mu), independent across alternatives.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    perceived = np.asarray(perceived, dtype=float)
    eps = rng.gumbel(0.0, 1.0 / mu, size=perceived.shape)
    idx = np.argmax(perceived + eps, axis=-1)
    chosen_eps = np.take_along_axis(eps, idx[..., None], axis=-1)[..., 0]
    return idx, chosen_eps


def learning_update(perceived, experienced, omega: float) -> np.ndarray:
    if not 0.0 < omega < 1.0:
        raise ValueError("omega must lie in (0, 1)")
    perceived = np.asarray(perceived, dtype=float)
    experienced = np.asarray(experienced, dtype=float)
    if perceived.shape != experienced.shape:
        raise ValueError(
            f"perception and experience windows misaligned: {perceived.shape} vs {experienced.shape}"
        )
    return omega * perceived + (1.0 - omega) * experienced
