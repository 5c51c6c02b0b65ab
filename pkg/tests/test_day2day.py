import logging
import math
from dataclasses import replace

import numpy as np
import pytest

from tcs_mfd.behavior import Scheme
from tcs_mfd.day2day import (
    ScenarioConfig, SimState, Welfare, initial_state, mean_consumption, restore, run_day,
    run_to_convergence, snapshot, summarize, sweep_endowment, welfare,
)
from tcs_mfd.market import TollProfile, Transactions, update_price
from tcs_mfd.mfd import GridlockError, SpeedFunction
from tcs_mfd.population import PopulationSpec

V_FREE = 586.8


def V(n):
    return V_FREE * (1 - n / 4500.0) ** 2


def small(n=250, **kw):
    return ScenarioConfig(population=PopulationSpec(n_travelers=n, seed=3), **kw)


def one_traveler_cost(dep_real, t, L, t_star, sde, sdl, theta=1.1):
    """Experienced cost of departing at t when the only real trip runs
    [dep_real, dep_real + L/V(1)] at V(1); free flow elsewhere."""
    a, b = dep_real, dep_real + L / V(1)

    def speed(s):
        return V(1) if a <= s < b else V_FREE

    # integrate piecewise: at most three pieces
    s, left = t, L
    for edge in sorted({a, b}):
        if edge <= s:
            continue
        v = speed(s)
        if v * (edge - s) >= left:
            break
        left -= v * (edge - s)
        s = edge
    arrive = s + left / speed(s)
    tt = arrive - t
    delay = sde * (t_star - arrive) if arrive < t_star else sdl * (arrive - t_star)
    return -theta * (tt + delay)


def test_one_traveler_two_step_recursion():
    spec = PopulationSpec(n_travelers=1, seed=1, tau=3)
    cfg = ScenarioConfig(population=spec, omega=0.7, mu=0.15)
    state = initial_state(cfg)
    pop = state.population
    L, ts, sde, sdl = pop.length[0], pop.desired_arrival[0], pop.sde[0], pop.sdl[0]
    window = pop.window()[0]

    r0 = run_day(state, cfg)
    c0 = np.array([one_traveler_cost(pop.t0[0], t, L, ts, sde, sdl) for t in window])
    np.testing.assert_allclose(state.perceived[0], c0, rtol=1e-11)  # C_1 = c_0
    assert r0.departures[0] == pop.t0[0]

    C1 = state.perceived.copy()
    r1 = run_day(state, cfg)
    c1 = np.array([one_traveler_cost(r1.departures[0], t, L, ts, sde, sdl) for t in window])
    np.testing.assert_allclose(state.perceived[0], 0.7 * C1[0] + 0.3 * c1, rtol=1e-11)
    run_day(state, cfg)
    assert state.day == 3


def test_degenerate_population_day0():
    spec = PopulationSpec(n_travelers=20, length_sd=0.0, departure_sd=0.0,
                          penalty_cov=((0.0, 0.0), (0.0, 0.0)))
    cfg = ScenarioConfig(population=spec)
    rec = run_day(initial_state(cfg), cfg, keep_trajectory=True)
    np.testing.assert_array_equal(rec.departures, 80.0)
    assert rec.peak_accumulation == 20
    # identical trips that start together finish together, at the speed of 20 vehicles
    np.testing.assert_allclose(rec.travel_times, 4600.0 / V(20), rtol=1e-12)
    assert math.isnan(rec.gap) and rec.random_utility == 0.0


def test_zero_toll_keeps_price_at_zero():
    cfg = small(scheme="tcs-distance", toll=TollProfile.flat(0.0), days=6)
    res = run_to_convergence(cfg)
    assert all(r.price == 0.0 and r.next_price == 0.0 for r in res.history)
    assert all(r.excess == -5.0 * 250 for r in res.history)


def test_excess_equals_net_trade_every_day():
    cfg = small(scheme="tcs-distance", toll=TollProfile.gaussian(11, 80, 18), days=8,
                threshold=1e-9)
    for rec in run_to_convergence(cfg).history:
        assert rec.credits_bought - rec.credits_sold == pytest.approx(rec.excess, abs=1e-8)
        assert rec.next_price == update_price(rec.price, rec.excess, cfg.k)


@pytest.mark.parametrize("scheme,toll", [
    ("none", None),
    ("tcs-distance", TollProfile.gaussian(11, 80, 18)),
    ("tcs-time", TollProfile.gaussian(11, 80, 18, basis="time")),
    ("cp", TollProfile.gaussian(5, 80, 18, denomination="money")),
])
def test_welfare_identity_all_schemes(scheme, toll):
    cfg = small(scheme=scheme, toll=toll, days=8, threshold=1e-9, price0=1.5)
    for rec in run_to_convergence(cfg).history:
        w = rec.welfare
        assert abs(w.welfare - w.welfare_direct) <= 1e-9
        assert w.tr == w.rc


def test_welfare_hand_table():
    tx = Transactions(
        consumed=np.array([7.0, 3.0]),
        from_endowment=np.array([5.0, 3.0]),
        bought=np.array([2.0, 0.0]),
        sold=np.array([0.0, 2.0]),
    )
    tc = np.array([20.0, 10.0])
    eps = np.array([1.0, -0.5])
    pay = 2.0 * tx.consumed  # price 2
    w = welfare("tcs-distance", 2.0, 1.1, tc, eps, pay, tx)
    # CS = ((-22 - 14 + 1) + (-11 - 6 - 0.5)) / 2
    assert w.cs == pytest.approx(-26.25)
    assert w.tr == pytest.approx(2.0) and w.rc == pytest.approx(2.0)
    assert w.rr == pytest.approx(2.0)
    assert w.te == pytest.approx(8.0)
    assert w.welfare == pytest.approx(-26.25 + 2 + 2 - 2 + 8)
    assert w.welfare == pytest.approx((-22 + 1 - 11 - 0.5) / 2)
    assert w.welfare_direct == pytest.approx(w.welfare)


def test_welfare_zero_price_collapses():
    tx = Transactions(np.ones(3), np.ones(3), np.zeros(3), np.full(3, 4.0))
    tc, eps = np.array([10.0, 12.0, 9.0]), np.array([0.3, 0.1, -0.2])
    a = welfare("tcs-distance", 0.0, 1.1, tc, eps, np.zeros(3), tx)
    b = welfare("none", 0.0, 1.1, tc, eps, np.zeros(3))
    assert a.welfare == b.welfare == b.cs


def test_welfare_cp_adds_revenue():
    tc, eps, pay = np.array([10.0, 12.0]), np.array([0.5, 0.1]), np.array([3.0, 1.0])
    w = welfare("cp", 0.0, 1.1, tc, eps, pay)
    assert w.rr == pytest.approx(2.0)
    assert w.welfare == pytest.approx(w.cs + w.rr)


def test_credit_scheme_needs_transactions():
    with pytest.raises(ValueError):
        welfare("tcs-distance", 1.0, 1.1, np.ones(2), np.zeros(2), np.ones(2))


def test_run_is_deterministic():
    cfg = small(days=5, threshold=1e-9)
    a = run_to_convergence(cfg).history
    b = run_to_convergence(cfg).history
    for ra, rb in zip(a, b):
        assert ra.scalars() == pytest.approx(rb.scalars(), nan_ok=True)
        np.testing.assert_array_equal(ra.departures, rb.departures)


def test_converges_and_summarizes():
    cfg = small(n=400, days=60)
    res = run_to_convergence(cfg)
    assert res.converged
    tail = res.history[-10:]
    assert all(r.gap < cfg.threshold for r in tail)
    assert res.summary["welfare"]["mean"] == pytest.approx(np.mean([r.welfare.welfare for r in tail]))
    assert res.summary["welfare"]["std"] == pytest.approx(
        np.std([r.welfare.welfare for r in tail], ddof=1))


def test_non_convergence_reported_not_raised():
    res = run_to_convergence(small(days=3, threshold=1e-12))
    assert not res.converged and res.converged_day is None
    assert len(res.history) == 3


def test_min_days_extends_run():
    res = run_to_convergence(small(n=400, days=60, min_days=40))
    assert res.converged and len(res.history) == 40


def test_gridlock_propagates():
    cfg = replace(small(n=300), speed=SpeedFunction(n_jam=50.0))
    with pytest.raises(GridlockError):
        run_day(initial_state(cfg), cfg)


def test_infeasible_endowment_warns(caplog):
    cfg = small(scheme="tcs-distance", toll=TollProfile.flat(10.0), endowment=1.0, days=1)
    with caplog.at_level(logging.WARNING, logger="tcs_mfd.day2day"):
        res = run_to_convergence(cfg)
    assert res.i_min > 1.0
    assert "I_min" in caplog.text


def test_snapshot_round_trip(tmp_path):
    cfg = small(days=4)
    state = initial_state(cfg)
    for _ in range(3):
        run_day(state, cfg)
    snapshot(state, tmp_path / "s.snapshot", seed=cfg.seed)
    restored = restore(tmp_path / "s.snapshot", state.population)
    assert restored.day == 3 and restored.price == state.price
    np.testing.assert_array_equal(restored.perceived, state.perceived)
    a = run_day(state, cfg)
    b = run_day(restored, cfg)
    assert a.scalars() == b.scalars()
    np.testing.assert_array_equal(a.departures, b.departures)
    np.testing.assert_array_equal(a.epsilon, b.epsilon)


def test_restore_rejects_other_population(tmp_path):
    cfg = small(days=2)
    state = initial_state(cfg)
    run_day(state, cfg)
    snapshot(state, tmp_path / "s.snapshot")
    other = initial_state(small(n=251)).population
    with pytest.raises(ValueError, match="does not match"):
        restore(tmp_path / "s.snapshot", other)


def test_warm_start_first_price_step(tmp_path):
    base = run_to_convergence(small(n=400, days=40))
    snapshot(base.state, tmp_path / "nte.snapshot")
    toll = TollProfile.gaussian(11, 80, 18)
    cfg = small(n=400, scheme="tcs-distance", toll=toll, price0=0.0,
                warm_start=str(tmp_path / "nte.snapshot"), days=2)
    state = initial_state(cfg)
    np.testing.assert_array_equal(state.perceived, base.state.perceived)
    rec = run_day(state, cfg)
    consumed = toll(rec.departures) * state.population.length * 2e-4
    z = consumed.sum() - 5.0 * 400
    assert rec.excess == pytest.approx(z, rel=1e-12)
    assert state.price == pytest.approx(max(0.0, 2e-4 * z), rel=1e-12)


def test_mean_consumption():
    res = run_to_convergence(small(n=300, days=12, threshold=1e-9))
    toll = TollProfile.flat(2.0)
    lengths = res.state.population.length
    assert mean_consumption(res.history, lengths, toll) == pytest.approx(2.0 * 2e-4 * lengths.mean())


def test_sweep_duplicates_identical():
    cfg = small(scheme="tcs-distance", toll=TollProfile.gaussian(11, 80, 18), days=15,
                threshold=1e-9)
    rows = sweep_endowment(cfg, [4.0, 4.0, 9.0], workers=1)
    assert rows[0][1] == rows[1][1]
    assert rows[2][1] == 0.0  # far above the no-toll consumption


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(days=0)
    with pytest.raises(ValueError):
        ScenarioConfig(omega=1.0)
    with pytest.raises(ValueError):
        ScenarioConfig(scheme="tcs-distance")
    cfg = ScenarioConfig(scheme="tcs-time", toll=TollProfile.gaussian(1, 80, 10))
    assert cfg.toll.basis == "time" and cfg.scheme is Scheme.TCS_TIME


def test_summarize_ignores_nan():
    res = run_to_convergence(small(days=3, threshold=1e-9))
    s = summarize(res.history, 10)
    assert math.isfinite(s["gap"]["mean"])
    assert isinstance(res.history[0].welfare, Welfare)
    assert isinstance(res.state, SimState)
