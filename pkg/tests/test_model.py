import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shockmaint.model import (
    AdmissibilityError,
    ConfigurationError,
    DomainError,
    ExponentialAversionUtility,
    ExponentialShocks,
    LognormalShocks,
    ModelError,
    ModelSpec,
    QuadraticCost,
    TabulatedShocks,
    build_grid,
    cost_matrix,
    discretize_shock_density,
    evaluate_cost,
    evaluate_utility,
)

from conftest import exp_shock_model, reference_model

G = ExponentialAversionUtility(5.0, 2.0)


def test_utility_values():
    assert evaluate_utility(G, 0.0) == 0.0
    assert evaluate_utility(G, 0.5) == pytest.approx(2.5 * (1 - math.exp(-1)), rel=1e-14)
    assert evaluate_utility(G, 1.0) == pytest.approx(2.5 * (1 - math.exp(-2)), rel=1e-14)
    assert evaluate_utility(G, 0.5) == pytest.approx(1.58030, abs=1e-5)
    assert evaluate_utility(G, 1.0) == pytest.approx(2.16166, abs=1e-5)


@pytest.mark.parametrize("r", [-0.01, 1.01])
def test_utility_domain(r):
    with pytest.raises(DomainError):
        evaluate_utility(G, r)


def test_cost_values():
    c = QuadraticCost(0.1)
    assert evaluate_cost(c, 0.0, 0.0) == pytest.approx(0.1)
    assert evaluate_cost(c, 0.3, 0.64) == pytest.approx(0.8096, abs=1e-15)
    with pytest.raises(AdmissibilityError):
        evaluate_cost(c, 0.5, 0.6)


def test_cost_requires_positive_fixed_part():
    with pytest.raises(ModelError):
        QuadraticCost(0.0)


def test_exponential_density_closed_form():
    p = discretize_shock_density(ExponentialShocks(1.0), 0.5, 2)
    expected = [1 - math.exp(-0.25), math.exp(-0.25) - math.exp(-0.75), math.exp(-0.75) - math.exp(-1.25)]
    np.testing.assert_allclose(p, expected, rtol=1e-14)


@pytest.mark.parametrize("n", [1, 4, 10])
def test_point_mass_lands_in_bin_one(n):
    h = 1.0 / n
    p = discretize_shock_density(TabulatedShocks(((h, 1.0),)), h, n)
    assert p[1] == 1.0
    assert np.count_nonzero(p) == 1


def test_lognormal_tail_leaks_past_ceiling():
    shocks = reference_model("moments").shocks
    p = discretize_shock_density(shocks, 0.01, 100)
    assert p.sum() < 1.0
    assert p.sum() == pytest.approx(float(shocks.cdf(100.5 * 0.01)), abs=1e-10)


def test_lognormal_moment_conversion():
    s = LognormalShocks.from_moments(0.3, 1.0)
    assert s.location == pytest.approx(-2.451, abs=1e-3)
    assert s.scale == pytest.approx(1.579, abs=1e-3)
    # the converted law reproduces the requested moments
    mean = math.exp(s.location + s.scale**2 / 2)
    var = (math.exp(s.scale**2) - 1) * math.exp(2 * s.location + s.scale**2)
    assert mean == pytest.approx(0.3, rel=1e-12)
    assert math.sqrt(var) == pytest.approx(1.0, rel=1e-12)


def test_logspace_point_three_one_has_mean_2_23_sd_2_9():
    # the pair reported next to (0.3, 1) matches the moments of the log-space law
    loc, scale = 0.3, 1.0
    mean = math.exp(loc + scale**2 / 2)
    sd = math.sqrt((math.exp(scale**2) - 1) * math.exp(2 * loc + scale**2))
    assert round(mean, 2) == 2.23
    assert round(sd, 1) == 2.9


def test_build_grid():
    g = build_grid(exp_shock_model(), 0.25)
    np.testing.assert_array_equal(g.nodes, [0, 0.25, 0.5, 0.75, 1.0])
    assert g.n == 4
    with pytest.raises(ConfigurationError):
        build_grid(exp_shock_model(), 0.3)
    g2 = build_grid(exp_shock_model(ceiling=2.0), 0.01)
    assert g2.n == 200 and g2.nodes[200] == 2.0 and g2.nodes[0] == 0.0


@pytest.mark.parametrize(
    "kw",
    [dict(delta=0.0), dict(lam=-1.0), dict(ceiling=0.0), dict(threshold=0.1)],
)
def test_model_invariants(kw):
    with pytest.raises(ModelError):
        exp_shock_model(**kw)


def test_tabulated_shock_probabilities_must_sum_to_one():
    with pytest.raises(ModelError):
        TabulatedShocks(((0.1, 0.5), (0.2, 0.4)))


@settings(max_examples=50, deadline=None)
@given(
    alpha=st.floats(0.1, 10),
    scale=st.floats(0.1, 10),
    n=st.integers(2, 300),
)
def test_utility_nondecreasing_on_grid(alpha, scale, n):
    nodes = np.linspace(0.0, 1.0, n + 1)
    g = ExponentialAversionUtility(scale, alpha)(nodes)
    assert g[0] == 0.0
    assert np.all(np.diff(g) >= 0)


@settings(max_examples=50, deadline=None)
@given(k=st.floats(1e-6, 10), n=st.integers(1, 100))
def test_cost_positive_on_admissible_pairs(k, n):
    model = exp_shock_model(cost=QuadraticCost(k))
    c = cost_matrix(model.cost, build_grid(model, 1.0 / n))
    assert np.min(c[np.isfinite(c)]) > 0


@settings(max_examples=50, deadline=None)
@given(
    rate=st.floats(0.05, 50),
    loc=st.floats(-4, 2),
    scale=st.floats(0.1, 3),
    n=st.integers(1, 200),
)
def test_density_weights(rate, loc, scale, n):
    h = 1.0 / n
    for shocks in (ExponentialShocks(rate), LognormalShocks(loc, scale)):
        p = discretize_shock_density(shocks, h, n)
        assert np.all(p >= 0)
        assert p.sum() == pytest.approx(float(shocks.cdf((n + 0.5) * h)), abs=1e-10)
        # refinement only moves mass across the tail split
        p2 = discretize_shock_density(shocks, h / 2, 2 * n)
        bound = float(shocks.cdf((n + 0.5) * h) - shocks.cdf((2 * n + 0.25) * (h / 2)))
        assert abs(p.sum() - p2.sum()) <= abs(bound) + 1e-10


def test_model_is_immutable():
    model = exp_shock_model()
    with pytest.raises(Exception):
        model.lam = 2.0  # type: ignore[misc]


def test_zero_lambda_allowed_as_degenerate_case():
    m = ModelSpec(0.0, ExponentialShocks(1.0), G, QuadraticCost(0.1), 0.2)
    assert m.lam == 0.0
