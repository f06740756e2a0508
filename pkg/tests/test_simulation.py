import json
import math
from dataclasses import replace

import numpy as np
import pytest

from shadowcace.errors import ExcessiveNonConvergence, InvalidConfig
from shadowcace.identification import identify_full_law, odds_ratio_from_joint
from shadowcace.model import LOGISTIC
from shadowcace.simulation import (
    CSV_FIELDS,
    PARAMETERS,
    STRATA,
    SimConfig,
    population_joint,
    population_missing_rate,
    population_observed_law,
    run_replications,
    simulate_dataset,
    simulate_latent,
    summaries_to_csv,
    table3,
    treatment_of,
    true_cace_closed_form,
)
from shadowcace.io import dataset_to_csv

BIG = 100_000


@pytest.fixture(scope="module")
def latent_big():
    return simulate_latent(SimConfig(n=BIG), 0)


def test_same_seed_and_index_identical():
    cfg = SimConfig(n=500)
    a, b = simulate_dataset(cfg, 4), simulate_dataset(cfg, 4)
    assert a.equals(b)
    assert dataset_to_csv(a) == dataset_to_csv(b)
    assert not a.equals(simulate_dataset(cfg, 5))
    assert not a.equals(simulate_dataset(replace(cfg, seed=cfg.seed + 1), 4))


def test_complier_share(latent_big):
    share = np.mean(latent_big["u"] == STRATA.index("cp"))
    assert abs(share - 0.55) <= 3 * math.sqrt(0.55 * 0.45 / BIG)


def test_missing_rate_band(latent_big):
    rate = 1 - latent_big["r"].mean()
    assert 0.30 <= rate <= 0.40
    assert abs(rate - population_missing_rate(SimConfig())) <= 3 * math.sqrt(0.25 / BIG)


def test_population_missing_rate_value():
    assert population_missing_rate(SimConfig()) == pytest.approx(0.34252, abs=5e-6)


def test_no_defiers_drawn(latent_big):
    u, z, a = latent_big["u"], latent_big["z"], latent_big["a"]
    expected = np.array([treatment_of(STRATA[k], zz) for k, zz in zip(u, z)])
    assert np.array_equal(a, expected)


@pytest.mark.parametrize("stratum", ["at", "nt"])
def test_exclusion_restriction_in_draws(latent_big, stratum):
    d = latent_big
    s = d["u"] == STRATA.index(stratum)
    p1 = np.mean(d["y"][s & (d["z"] == 1)] == 4.0)
    p0 = np.mean(d["y"][s & (d["z"] == 0)] == 4.0)
    n1, n0 = np.sum(s & (d["z"] == 1)), np.sum(s & (d["z"] == 0))
    p = SimConfig().outcome_laws[stratum][0][4.0]
    assert abs(p1 - p0) <= 4 * math.sqrt(p * (1 - p) * (1 / n1 + 1 / n0))


def test_config_rejects_exclusion_violation():
    laws = SimConfig().outcome_laws
    laws = {s: dict(v) for s, v in laws.items()}
    laws["at"] = {0: {2.0: 0.5, 4.0: 0.5}, 1: {2.0: 0.3, 4.0: 0.7}}
    with pytest.raises(InvalidConfig):
        SimConfig(outcome_laws=laws)


def test_config_rejects_defiers_and_bad_sums():
    with pytest.raises(InvalidConfig):
        SimConfig(compliance_probs={"at": 0.2, "nt": 0.2, "cp": 0.5, "df": 0.1})
    with pytest.raises(InvalidConfig):
        SimConfig(compliance_probs={"at": 0.2, "nt": 0.25, "cp": 0.5})


def test_config_json_round_trip():
    cfg = SimConfig(n=321, seed=9)
    back = SimConfig.from_json(json.dumps(cfg.to_dict()))
    assert back == cfg
    assert SimConfig.from_json('{"n": 50}') == SimConfig(n=50)
    with pytest.raises(InvalidConfig):
        SimConfig.from_json('{"sample_size": 50}')


def test_true_cace_defaults():
    assert true_cace_closed_form(SimConfig()) == 0.4


def test_true_cace_null_and_swapped():
    laws = {s: dict(v) for s, v in SimConfig().outcome_laws.items()}
    cp = laws["cp"]
    null = dict(laws, cp={0: cp[0], 1: cp[0]})
    swapped = dict(laws, cp={0: cp[1], 1: cp[0]})
    assert true_cace_closed_form(SimConfig(outcome_laws=null)) == 0.0
    assert true_cace_closed_form(SimConfig(outcome_laws=swapped)) == -0.4


def test_true_cace_matches_ratio_of_population_contrasts():
    # intention-to-treat effect divided by the complier share
    cfg = SimConfig()
    t = population_joint(cfg).table
    y = np.array(cfg.support.values)
    ey = [(t[:, :, z, :].sum(axis=(0, 2)) @ y) / t[:, :, z, :].sum() for z in (0, 1)]
    ea = [t[1, :, z, :].sum() / t[:, :, z, :].sum() for z in (0, 1)]
    assert (ey[1] - ey[0]) / (ea[1] - ea[0]) == pytest.approx(0.4, abs=1e-14)


def test_population_joint_sums_to_one():
    assert abs(population_joint(SimConfig()).table.sum() - 1.0) <= 1e-14


def test_population_propensity_matches_link():
    cfg = SimConfig()
    j = population_joint(cfg)
    y = np.array(cfg.support.values)
    for a in (0, 1):
        for z in (0, 1):
            cond = j.table[a, :, z, 1] / j.table[a, :, z, :].sum(axis=1)
            np.testing.assert_allclose(cond, LOGISTIC.psi(1 - 0.1 * y - 0.1 * a), rtol=0, atol=1e-15)


def test_population_satisfies_shadow_condition():
    odds_ratio_from_joint(population_joint(SimConfig()))


def test_population_identification_recovers_propensity():
    cfg = SimConfig()
    rec = identify_full_law(population_observed_law(cfg))
    y = np.array(cfg.support.values)
    expected = np.array([LOGISTIC.psi(1 - 0.1 * y - 0.1 * a) for a in (0, 1)])
    np.testing.assert_allclose(rec.propensity(), expected, atol=1e-10)


# -- replication harness ---------------------------------------------------------------

def test_two_replicates_deterministic():
    cfg = SimConfig(n=800, replicates=2, n_boot=20, max_drop_rate=1.0)
    a, b = run_replications(cfg), run_replications(cfg)
    assert a.replicates == 2
    assert a.n_failed + len(a.estimates) == 2
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert summaries_to_csv([a]) == summaries_to_csv([b])


def test_parallel_matches_serial():
    pytest.importorskip("joblib")
    cfg = SimConfig(n=600, replicates=6, n_boot=10, max_drop_rate=1.0)
    serial = run_replications(cfg, n_jobs=1)
    parallel = run_replications(cfg, n_jobs=2)
    assert json.dumps(serial.to_dict()) == json.dumps(parallel.to_dict())


def test_summary_invariants_and_csv_layout():
    cfg = SimConfig(replicates=8, n_boot=10, max_drop_rate=1.0)
    sums = table3(cfg, (300, 900))
    for s in sums:
        for row in s.rows:
            assert row.sd >= 0
            assert math.isnan(row.coverage) or 0 <= row.coverage <= 1
    lines = summaries_to_csv(sums).strip().split("\n")
    assert tuple(lines[0].split(",")) == CSV_FIELDS
    assert len(lines) == 1 + len(PARAMETERS) * 2
    assert [ln.split(",")[0] for ln in lines[1:3]] == ["alpha", "alpha"]
    assert [ln.split(",")[2] for ln in lines[1:3]] == ["300", "900"]


def test_drop_rate_enforced():
    cfg = SimConfig(n=100, replicates=40, n_boot=0, max_drop_rate=0.0)
    with pytest.raises(ExcessiveNonConvergence):
        run_replications(cfg)
    summary = run_replications(cfg, enforce_drop_rate=False)
    assert summary.n_failed > 0
    assert len(summary.failures) == summary.n_failed


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="finite-sample bias of the ratio estimator is about -0.07 at "
                   "both n=500 and n=2000 (MC SE 0.02 and 0.008) before shrinking at n=8000")
def test_mean_cace_approaches_truth():
    errs = []
    for n in (500, 2000, 8000):
        s = run_replications(SimConfig(n=n, replicates=200, n_boot=0), enforce_drop_rate=False)
        errs.append(abs(s.row("cace").bias))
    assert errs[1] <= 1.1 * errs[0]
    assert errs[2] <= 1.1 * errs[1]


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="boundary and weakly identified fits inflate the sandwich SE "
                   "of alpha, so its Wald interval over-covers")
def test_alpha_coverage_band():
    s = run_replications(SimConfig(n=2000, replicates=500, n_boot=0), enforce_drop_rate=False)
    assert 0.90 <= s.row("alpha").coverage <= 0.99
