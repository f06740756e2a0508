import numpy as np
import pytest

from conftest import PUBLISHED_CACE
from shadowcace.causal import (
    PI_FLOOR,
    CaceEstimate,
    bootstrap_cace,
    cace,
    conditional_ipw_mean,
    ipw_mean,
    stratified_cace,
    treated_rate_by_z,
    wald_ratio,
)
from shadowcace.errors import EmptyStratum, WeakInstrument
from shadowcace.gmm import two_step_fit
from shadowcace.model import LOGISTIC, Dataset, Theta, propensity, validate_dataset
from shadowcace.simulation import SimConfig, simulate_dataset

THETA0 = Theta(1.0, -0.1, -0.1)
SURE = Theta(500.0, 0.0, 0.0)  # propensity exactly 1.0


@pytest.fixture(scope="module")
def big():
    return simulate_dataset(SimConfig(n=20000), 3)


def _mc_se(data, theta, z=None):
    pi = np.ones(data.n)
    obs = data.r == 1
    pi[obs] = propensity(theta, data.y[obs], data.a[obs])
    v = np.where(obs, np.nan_to_num(data.y) / pi, 0.0)
    if z is not None:
        v = v[data.z == z]
    return v.std(ddof=1) / np.sqrt(len(v))


def _fully_observed(seed=0, n=400, perfect=False):
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 2, n)
    a = z.copy() if perfect else np.where(rng.random(n) < 0.8, z, 1 - z)
    y = rng.choice([1.0, 2.0, 3.0], n) + a
    return Dataset.from_arrays(z, a, np.ones(n, int), y)


def test_ipw_mean_two_records():
    d = validate_dataset([(0, 0, 1, 2.0), (1, 1, 0, None)])
    assert ipw_mean(d, Theta(0, 0, 0)) == 2.0


def test_ipw_mean_all_observed_is_sample_mean():
    d = _fully_observed()
    assert ipw_mean(d, SURE) == pytest.approx(np.mean(d.y), abs=1e-14)


def test_ipw_mean_unbiased_at_truth(big):
    assert abs(ipw_mean(big, THETA0) - 2.98) <= 3 * _mc_se(big, THETA0)


@pytest.mark.parametrize("z,expected", [(1, 3.09), (0, 2.87)])
def test_conditional_ipw_mean_closed_form(big, z, expected):
    assert abs(conditional_ipw_mean(big, THETA0, z) - expected) <= 3 * _mc_se(big, THETA0, z)


def test_conditional_mean_single_stratum():
    d = validate_dataset([(1, 0, 1, 2.0), (1, 1, 0, None), (1, 1, 1, 4.0)])
    assert conditional_ipw_mean(d, THETA0, 1) == ipw_mean(d, THETA0)
    with pytest.raises(EmptyStratum):
        conditional_ipw_mean(d, THETA0, 0)


def test_propensity_floor_is_applied():
    d = validate_dataset([(0, 0, 1, 2.0), (1, 1, 0, None)])
    low = Theta(-100.0, 0.0, 0.0)
    assert ipw_mean(d, low) == pytest.approx(2.0 / PI_FLOOR / 2)
    assert wald_ratio(validate_dataset([(0, 0, 1, 2.0), (1, 1, 1, 2.0)]), low).clipped == 2


def test_treated_rate_table4(table4):
    assert treated_rate_by_z(table4, 1) == pytest.approx(218 / 453, abs=1e-15)
    assert treated_rate_by_z(table4, 0) == pytest.approx(79 / 217, abs=1e-15)


def test_treated_rate_all_treated():
    assert treated_rate_by_z(validate_dataset([(1, 1, 1, 2.0), (1, 1, 0, None)]), 1) == 1.0


# -- Wald ratio ------------------------------------------------------------------------

def test_wald_ratio_point_is_quotient(table4):
    w = wald_ratio(table4, THETA0)
    assert abs(w.point - w.numerator / w.denominator) <= 1e-12


def test_weak_instrument():
    d = validate_dataset([(0, 1, 1, 2.0), (1, 1, 1, 3.0), (0, 0, 1, 1.0), (1, 0, 0, None)])
    with pytest.raises(WeakInstrument):
        wald_ratio(d, THETA0)


def test_all_observed_perfect_compliance_is_mean_difference():
    d = _fully_observed(perfect=True)
    w = wald_ratio(d, SURE)
    assert w.denominator == 1.0
    assert w.point == np.mean(d.y[d.z == 1]) - np.mean(d.y[d.z == 0])


def test_all_observed_reproduces_standard_wald():
    d = _fully_observed(seed=1)
    y1, y0 = d.y[d.z == 1], d.y[d.z == 0]
    a1, a0 = d.a[d.z == 1], d.a[d.z == 0]
    standard = (y1.mean() - y0.mean()) / (a1.mean() - a0.mean())
    assert wald_ratio(d, SURE).point == standard


def test_all_observed_fitted_propensity_close_to_standard_wald():
    # the fit stops at a large but finite alpha, so propensities are 1 - O(1e-7)
    d = _fully_observed(seed=1)
    y1, y0 = d.y[d.z == 1], d.y[d.z == 0]
    standard = (y1.mean() - y0.mean()) / (d.a[d.z == 1].mean() - d.a[d.z == 0].mean())
    est = cace(d, n_boot=0)
    assert est.point == pytest.approx(standard, rel=1e-5)


@pytest.mark.parametrize("c", [2.0, 0.5, 8.0])
def test_numerator_scale_equivariance_exact(c):
    d = _fully_observed(seed=2)
    scaled = Dataset.from_arrays(d.z, d.a, d.r, c * d.y)
    w, ws = wald_ratio(d, SURE), wald_ratio(scaled, SURE)
    assert ws.numerator == c * w.numerator
    assert ws.denominator == w.denominator


def test_numerator_scale_equivariance_general():
    d = _fully_observed(seed=2)
    scaled = Dataset.from_arrays(d.z, d.a, d.r, 3.7 * d.y)
    assert wald_ratio(scaled, SURE).numerator == pytest.approx(3.7 * wald_ratio(d, SURE).numerator,
                                                                rel=1e-14)


# -- CACE with bootstrap ----------------------------------------------------------------

def _check_estimate_invariants(est: CaceEstimate):
    assert abs(est.point - est.numerator / est.denominator) <= 1e-12
    assert est.ci_low <= est.point <= est.ci_high
    assert est.se >= 0


def test_cace_table4_root_value(table4):
    est = cace(table4, n_boot=100, seed=1)
    assert est.point == pytest.approx(0.8801, abs=5e-4)
    assert est.denominator == pytest.approx(218 / 453 - 79 / 217, abs=1e-15)
    _check_estimate_invariants(est)


@pytest.mark.xfail(strict=True, reason="the unique moment root of the bundled data gives 0.880; "
                   "the published 1.3234 corresponds to a non-root parameter value")
def test_cace_table4_matches_published(table4):
    assert abs(cace(table4, n_boot=0).point - PUBLISHED_CACE) <= 0.10


def test_cace_simulated_within_three_bootstrap_se(sim2000):
    est = cace(sim2000, n_boot=200, seed=4)
    _check_estimate_invariants(est)
    assert abs(est.point - 0.4) <= 3 * est.se


@pytest.mark.xfail(strict=True, reason="sampling SD of the estimator at n=2000 is about 0.11, "
                   "so a single dataset lands within 0.05 of the truth only about a third of the time")
def test_cace_simulated_within_005(sim2000):
    assert abs(cace(sim2000, n_boot=0).point - 0.4) <= 0.05


def test_bootstrap_determinism(sim2000):
    fit = two_step_fit(sim2000)
    a = cace(sim2000, fit, n_boot=60, seed=11)
    b = cace(sim2000, fit, n_boot=60, seed=11)
    assert a == b
    c = cace(sim2000, fit, n_boot=60, seed=12)
    assert c.se != a.se


def test_bootstrap_draws_count(sim2000):
    draws, skipped = bootstrap_cace(sim2000, 40, seed=3)
    assert len(draws) + skipped == 40


def test_cace_json_block(table4):
    d = cace(table4, n_boot=10).to_dict()
    assert set(d) >= {"point", "numerator", "denominator", "se", "ci", "skipped_resamples"}


# -- stratification ------------------------------------------------------------------------

def test_stratified_single_level_matches_unstratified(sim2000):
    out = stratified_cace(sim2000, np.zeros(sim2000.n), n_boot=30, seed=5)
    assert list(out) == [0.0]
    assert out[0.0].estimate == cace(sim2000, n_boot=30, seed=5)


def test_stratified_irrelevant_covariate(big):
    v = np.random.default_rng(8).integers(0, 2, big.n)
    out = stratified_cace(big, v, n_boot=100, seed=6)
    for res in out.values():
        assert res.ok
        assert abs(res.estimate.point - 0.4) <= 3 * res.estimate.se


def test_stratified_constant_instrument_stratum(sim2000):
    # level 1 holds a third of the z=1 records and nothing else
    v = np.where((sim2000.z == 1) & (np.arange(sim2000.n) % 3 == 0), 1, 0)
    out = stratified_cace(sim2000, v, n_boot=5)
    assert out[0].ok
    assert not out[1].ok
    assert isinstance(out[1].error, (EmptyStratum, WeakInstrument))
