import math

import numpy as np
import pytest
from scipy import integrate, stats

from shockmaint.model import build_grid
from shockmaint.simulator import (
    BLOCK_SIZE,
    SimulationConfigError,
    _run_block,
    estimate_profit,
    horizon_for,
    sample_path,
    uncontrolled_failure_time_stats,
)
from shockmaint.solver import INTERVENE, extract_policy, solve

from conftest import exp_shock_model, point_mass_model


def test_horizon_matches_tail_bound():
    model = exp_shock_model()
    t = horizon_for(model, 1e-6)
    assert math.exp(-model.delta * t) * model.value_bound == pytest.approx(1e-6, rel=1e-12)


def test_no_shock_path_is_deterministic():
    model = exp_shock_model(lam=0.0)
    t_max = horizon_for(model)
    profit, events = sample_path(model, None, 1.0, np.random.default_rng(0), t_max)
    assert events == []
    expected = float(model.utility(1.0)) * (1 - math.exp(-model.delta * t_max)) / model.delta
    assert profit == pytest.approx(expected, rel=1e-14)

    rep = estimate_profit(model, None, 0.4, paths=10, seed=1)
    expected = float(model.utility(0.4)) * (1 - math.exp(-model.delta * rep.horizon)) / model.delta
    assert rep.mean_profit == pytest.approx(expected, rel=1e-14)
    assert rep.std_error == 0.0


def test_single_fatal_shock_path():
    model = point_mass_model(1.5)
    rng = np.random.default_rng(11)
    t1 = np.random.default_rng(11).exponential(1 / model.lam, 1)[0]
    profit, events = sample_path(model, None, 0.7, rng, 1e3)
    assert [e.kind for e in events] == ["failure"]
    assert events[0].time == t1
    expected = float(model.utility(0.7)) * (1 - math.exp(-model.delta * t1)) / model.delta
    assert profit == pytest.approx(expected, rel=1e-13)


@pytest.fixture(scope="module")
def exp_run():
    model = exp_shock_model()
    grid = build_grid(model, 0.01)
    vf = solve(model, grid)
    return model, grid, vf, extract_policy(vf, model)


def test_intervention_at_time_zero(exp_run):
    model, grid, _, pol = exp_run
    r0 = grid.nodes[1]
    assert pol.labels[1] == INTERVENE
    _, events = sample_path(model, pol, r0, np.random.default_rng(0), 100.0)
    assert events[0].kind == "intervention"
    assert events[0].time == 0.0
    assert events[0].size == pytest.approx(pol.zeta[1])


def test_path_event_invariants(exp_run):
    model, _, _, pol = exp_run
    rng = np.random.default_rng(5)
    for _ in range(50):
        _, events = sample_path(model, pol, 0.8, rng, horizon_for(model))
        shock_times = [e.time for e in events if e.kind != "intervention"]
        assert all(a < b for a, b in zip(shock_times, shock_times[1:]))
        for e in events:
            if e.kind == "failure":
                assert e.state_after <= 0
                assert e is events[-1]
            else:
                assert 0 < e.state_after <= model.ceiling


def test_block_engine_matches_scalar_paths(exp_run):
    model, _, _, pol = exp_run
    t_max = horizon_for(model)
    for seed in range(20):
        out = _run_block((model, pol, 0.45, 1, seed, 0, t_max, False))
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
        profit, _ = sample_path(model, pol, 0.45, rng, t_max)
        assert out.profits[0] == pytest.approx(profit, rel=1e-12, abs=1e-12)


def test_discount_integral_against_quadrature(exp_run):
    model, _, _, pol = exp_run
    rng = np.random.default_rng(2024)
    t_max = 30.0
    for _ in range(100):
        profit, events = sample_path(model, pol, 0.9, rng, t_max)
        costs = sum(math.exp(-model.delta * e.time) * e.cost for e in events if e.kind == "intervention")
        # piecewise-constant state between event times
        times = [0.0]
        states = [0.9]
        for e in events:
            if e.time == times[-1]:
                states[-1] = e.state_after
            else:
                times.append(e.time)
                states.append(e.state_after)
        end = events[-1].time if events and events[-1].kind == "failure" else t_max
        bounds = times + [end] if times[-1] < end else times
        total = 0.0
        for k in range(len(bounds) - 1):
            g = float(model.utility(max(states[k], 0.0)))
            total += integrate.quad(lambda s: math.exp(-model.delta * s) * g, bounds[k], bounds[k + 1])[0]
        assert profit == pytest.approx(total - costs, rel=1e-8, abs=1e-12)


def test_estimate_is_reproducible_and_parallel_safe(exp_run):
    model, _, _, pol = exp_run
    paths = 3 * BLOCK_SIZE + 17
    a = estimate_profit(model, pol, 0.5, paths, seed=3)
    b = estimate_profit(model, pol, 0.5, paths, seed=3)
    c = estimate_profit(model, pol, 0.5, paths, seed=3, workers=3)
    assert a == b == c
    assert estimate_profit(model, pol, 0.5, paths, seed=4) != a


def test_report_fields(exp_run):
    model, _, _, pol = exp_run
    rep = estimate_profit(model, pol, 0.5, 5000, seed=1)
    assert rep.paths == 5000
    assert rep.std_error > 0
    assert rep.mean_profit <= model.value_bound + rep.discount_truncation_bound
    assert 0 < rep.mean_lifetime <= rep.horizon


def test_estimate_validates_inputs(exp_run):
    model, _, _, pol = exp_run
    with pytest.raises(SimulationConfigError):
        estimate_profit(model, pol, 0.5, paths=1)
    with pytest.raises(SimulationConfigError):
        estimate_profit(model, pol, 0.0, paths=10)
    other = exp_shock_model(ceiling=2.0)
    with pytest.raises(SimulationConfigError):
        estimate_profit(other, pol, 0.5, paths=10)


def test_value_agreement_exponential_model(exp_run):
    model, grid, vf, pol = exp_run
    from shockmaint.solver import lipschitz_bound

    slack = grid.h * lipschitz_bound(vf) + 1e-6
    for r0 in (0.2, 0.5, 0.9):
        rep = estimate_profit(model, pol, r0, 40_000, seed=17)
        v = float(np.interp(r0, grid.nodes, vf.values))
        assert abs(rep.mean_profit - v) <= 3 * rep.std_error + slack


def test_first_arrival_failure_mean():
    model = point_mass_model(0.51)
    st = uncontrolled_failure_time_stats(model, 0.5, 50_000, seed=9)
    assert abs(st.mean - 1 / model.lam) <= 3 * st.std_error
    assert st.capped_paths == 0


def test_erlang_three_failure_mean():
    r0 = 0.6
    model = point_mass_model(r0 / 2 - 0.01)
    st = uncontrolled_failure_time_stats(model, r0, 50_000, seed=10)
    assert abs(st.mean - 3 / model.lam) <= 3 * st.std_error
    assert st.quantiles[0.5] == pytest.approx(stats.gamma(3, scale=1 / model.lam).median(), rel=0.05)


def test_gap_distribution_is_exponential():
    model = exp_shock_model()
    _, gaps = uncontrolled_failure_time_stats(model, 1.0, 20_000, seed=12, return_gaps=True)
    res = stats.kstest(gaps, stats.expon(scale=1 / model.lam).cdf)
    assert res.pvalue > 0.01
