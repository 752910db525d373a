import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import central_difference, naive_log_posterior, relative_error

from rankmargin.match_data import EncodedDataset, EncodedMatch
from rankmargin.model import (
    NonCentered,
    ParameterVector,
    Posterior,
    Variant,
    ability,
    log_likelihood,
    log_posterior,
    make_spec,
    point_params,
    predictor_mean,
    spec_from_names,
)

TRACKED = ("EGY", "ENG", "USA")


def one_match(r1=1, r2=1, b=0, y=3.0, country=None, tracked=TRACKED):
    bc = {c: 0 for c in tracked}
    bc.update(country or {})
    return EncodedDataset([EncodedMatch(r1, r2, b, bc, y)], 30, tracked)


@pytest.fixture(scope="module", params=["global", "country"])
def spec(request):
    return make_spec(request.param, 30, TRACKED)


# -- layout ---------------------------------------------------------------------


def test_dimensions():
    assert make_spec("global", 30).dimension == 34
    assert make_spec("country", 30, TRACKED).dimension == 37
    assert make_spec("country", 30, TRACKED, fixed_scales=(1.9, 0.15)).dimension == 35


def test_invalid_R():
    with pytest.raises(ValueError):
        make_spec("global", 1)


def test_default_prior_scales():
    s = make_spec("country", 30)
    assert (s.h_scale, s.country_scale, s.beta_scale, s.gamma_scale, s.sigma_scale) == (
        0.5, 0.2, 2.0, 2.0, 2.0)
    assert s.tracked_countries == TRACKED


def test_names_round_trip():
    s = make_spec("country", 12, ("EGY",))
    back = spec_from_names(s.constrained_names)
    assert back.variant is Variant.CountryIntercepts and back.R == 12
    assert back.tracked_countries == ("EGY",)


def test_ability_pinned_and_range():
    p = ParameterVector(np.arange(1.0, 30.0), 0.0, 0.0, 0.0, 0.0, 0.0)
    assert ability(p, 1) == 0.0 and ability(p, 2) == 1.0 and ability(p, 30) == 29.0
    with pytest.raises(ValueError):
        ability(p, 31)
    with pytest.raises(ValueError):
        ability(p, 0)


def test_predictor_mean_examples():
    p = ParameterVector(np.zeros(29), 0.4, 0.0, 0.0, 0.0, 0.0)
    m = EncodedMatch(1, 1, 1, {}, 1.0)
    assert predictor_mean(p, m) == pytest.approx(0.4)
    p.country_h = {"EGY": 0.05, "ENG": 0.0, "USA": 0.0}
    m = EncodedMatch(1, 1, 1, {"EGY": 1, "ENG": 0, "USA": 0}, 1.0)
    assert predictor_mean(p, m) == pytest.approx(0.45)
    p.a[3] = -0.6  # rank 5
    m = EncodedMatch(1, 5, -1, {"EGY": -1, "ENG": 0, "USA": 0}, 1.0)
    assert predictor_mean(p, m) == pytest.approx(0.6 - 0.45)


def test_parameter_vector_round_trip(spec):
    theta = np.random.default_rng(0).standard_normal(spec.dimension)
    np.testing.assert_array_equal(ParameterVector.from_array(theta, spec).to_array(spec), theta)


# -- density values -------------------------------------------------------------


def test_single_match_data_term():
    spec = make_spec("global", 30)
    lik = log_likelihood(np.zeros(spec.dimension), one_match(tracked=()), spec)
    assert lik.log_density == pytest.approx(-0.5 * 9 - 0.5 * math.log(2 * math.pi), abs=1e-12)


def test_h_gradient_by_hand():
    spec = make_spec("global", 30)
    theta = np.zeros(spec.dimension)
    h, log_sy, y = 0.3, math.log(1.7), 2.0
    theta[29], theta[-2] = h, log_sy
    grad = log_posterior(theta, one_match(b=1, y=y, tracked=()), spec).gradient
    expected = (y - h) / 1.7**2 * 1 - h / 0.25
    assert grad[29] == pytest.approx(expected, rel=1e-12)


def test_matches_naive_oracle(spec, data500):
    rng = np.random.default_rng(11)
    post = Posterior(data500, spec)
    for _ in range(5):
        theta = rng.standard_normal(spec.dimension)
        ref = float(naive_log_posterior(theta, data500, spec))
        assert post(theta)[0] == pytest.approx(ref, rel=1e-10)
        lik = float(naive_log_posterior(theta, data500, spec, likelihood_only=True))
        assert post.evaluate(theta, likelihood_only=True)[0] == pytest.approx(lik, rel=1e-10)


def test_gradient_against_naive_oracle(spec, data500):
    rng = np.random.default_rng(12)
    post = Posterior(data500, spec)
    for _ in range(3):
        theta = rng.standard_normal(spec.dimension)
        fd = central_difference(lambda t: naive_log_posterior(t, data500, spec), theta)
        assert relative_error(post(theta)[1], fd).max() < 1e-6


def test_fixed_scale_mode_matches_full(data500):
    full = make_spec("country", 30, TRACKED)
    fixed = make_spec("country", 30, TRACKED, fixed_scales=(1.9, 0.15))
    theta = np.random.default_rng(2).standard_normal(fixed.dimension)
    ext = np.concatenate([theta, np.log([1.9, 0.15])])
    lp_full, g_full = Posterior(data500, full)(ext)
    lp_fixed, g_fixed = Posterior(data500, fixed)(theta)
    # the fixed mode drops only the scale priors and Jacobians
    scale_terms = sum(
        math.log(2) - 0.5 * (s / 2.0) ** 2 - math.log(2.0) - 0.5 * math.log(2 * math.pi) + math.log(s)
        for s in (1.9, 0.15)
    )
    assert lp_full - scale_terms == pytest.approx(lp_fixed, rel=1e-12)
    np.testing.assert_allclose(g_full[:-2], g_fixed, rtol=1e-12, atol=1e-12)


def test_errors(spec, data500):
    with pytest.raises(ValueError, match="expected"):
        log_posterior(np.zeros(spec.dimension + 1), data500, spec)
    bad = np.zeros(spec.dimension)
    bad[0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        log_posterior(bad, data500, spec)


def test_country_model_needs_columns():
    ds = one_match(tracked=())
    with pytest.raises(ValueError, match="b_egy"):
        Posterior(ds, make_spec("country", 30, TRACKED))


def test_extreme_scales_are_minus_inf(data500):
    spec = make_spec("global", 30)
    post = Posterior(data500, spec)
    theta = np.zeros(spec.dimension)
    theta[-2] = -400.0
    assert post(theta)[0] == -math.inf
    theta[-2] = 400.0
    assert post(theta)[0] == -math.inf


# -- invariants -----------------------------------------------------------------

thetas = st.lists(st.floats(-2, 2), min_size=37, max_size=37).map(np.array)


def _full_ability_likelihood(a_full, h, sy, data):
    """Likelihood from an explicit ability vector including rank 1."""
    total = 0.0
    for m in data.matches:
        mu = a_full[m.rank1 - 1] - a_full[m.rank2 - 1] + h * m.b
        total += -0.5 * ((m.y - mu) / sy) ** 2 - math.log(sy) - 0.5 * math.log(2 * math.pi)
    return total


@settings(max_examples=25, deadline=None)
@given(thetas, st.floats(-3, 3))
def test_translation(data500, theta, shift):
    spec = make_spec("global", 30)
    theta = theta[: spec.dimension]
    a_full = np.concatenate([[0.0], theta[:29]])
    sy = math.exp(theta[-2])
    base = log_likelihood(theta, data500, spec).log_density
    assert _full_ability_likelihood(a_full, theta[29], sy, data500) == pytest.approx(base, rel=1e-9)
    shifted = _full_ability_likelihood(a_full + shift, theta[29], sy, data500)
    assert shifted == pytest.approx(base, rel=1e-9)
    if abs(shift) > 1e-3:
        moved = theta.copy()
        moved[:29] += shift
        assert log_posterior(moved, data500, spec).log_density != pytest.approx(
            log_posterior(theta, data500, spec).log_density, rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(thetas, st.sampled_from(["global", "country"]))
def test_player_swap(data500, theta, variant):
    spec = make_spec(variant, 30, TRACKED)
    theta = theta[: spec.dimension]
    a = log_posterior(theta, data500, spec)
    b = log_posterior(theta, data500.swapped(), spec)
    assert b.log_density == pytest.approx(a.log_density, rel=1e-10, abs=1e-9)
    np.testing.assert_allclose(b.gradient, a.gradient, rtol=1e-8, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(thetas)
def test_model_nesting(data500, theta):
    g, c = make_spec("global", 30), make_spec("country", 30, TRACKED)
    shared = theta[: g.dimension]
    ext = np.concatenate([shared[:30], np.zeros(3), shared[30:]])
    assert log_likelihood(ext, data500, c).log_density == pytest.approx(
        log_likelihood(shared, data500, g).log_density, rel=1e-12)


@given(st.floats(0, 5), st.floats(1e-3, 2))
def test_h_prior_monotone(h, step):
    spec = make_spec("global", 30)
    data = one_match(tracked=())

    def prior(hv):
        theta = np.zeros(spec.dimension)
        theta[29] = hv
        return (log_posterior(theta, data, spec).log_density
                - log_likelihood(theta, data, spec).log_density)

    for sign in (1, -1):
        assert prior(sign * (h + step)) < prior(sign * h)


def test_non_centered_equivalence(spec, data500):
    post = Posterior(data500, spec)
    nc = NonCentered(post)
    rng = np.random.default_rng(3)
    for _ in range(10):
        # moderate points keep the float64 difference quotient well conditioned
        z = 0.5 * rng.standard_normal(spec.dimension)
        theta = nc.to_centered(z)
        np.testing.assert_allclose(nc.from_centered(theta), z, atol=1e-12)
        log_sa = z[-1]
        assert nc(z)[0] == pytest.approx(post(theta)[0] + 29 * log_sa, rel=1e-10)
        fd = central_difference(lambda t: nc(t)[0], z)
        assert relative_error(nc(z)[1], fd).max() < 1e-6


def test_point_params(spec):
    values = {n: 0.1 * i for i, n in enumerate(spec.constrained_names)}
    values["sigma_y"], values["sigma_a"] = 1.9, 0.15
    p = point_params(values, spec)
    assert p.sigma_y == pytest.approx(1.9) and p.a[0] == 0.0 and p.h == pytest.approx(2.9)
