"""Data-generating process with principal strata and a logistic response
mechanism, plus the Monte Carlo harness that tabulates bias, spread,
interval endpoints and coverage.

Random streams: every replicate draws from its own PCG64 generator seeded by
``SeedSequence(seed, spawn_key=(replicate,))``; bootstrap resamples inside a
replicate use a seed derived from ``SeedSequence(seed, spawn_key=(replicate, 1))``.
Results therefore do not depend on scheduling or worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction

import numpy as np

from .causal import cace
from .errors import (
    AllReplicatesFailed,
    ExcessiveNonConvergence,
    InvalidConfig,
    ShadowCaceError,
)
from .gmm import OptimizerSettings, fit_cells
from .identification import JointLaw, ObservedLaw, observed_law_from_joint
from .model import LOGISTIC, Dataset, OutcomeSupport, Theta

STRATA = ("at", "nt", "cp")


def _default_laws():
    at = {2.0: 0.3, 4.0: 0.7}
    nt = {2.0: 0.7, 4.0: 0.3}
    return {
        "at": {0: dict(at), 1: dict(at)},
        "nt": {0: dict(nt), 1: dict(nt)},
        "cp": {0: {2.0: 0.6, 4.0: 0.4}, 1: {2.0: 0.4, 4.0: 0.6}},
    }


def treatment_of(stratum: str, z: int) -> int:
    return {"at": 1, "nt": 0, "cp": z}[stratum]


@dataclass(frozen=True)
class SimConfig:
    """Simulation design. ``outcome_laws[stratum][z]`` maps outcome value -> probability."""

    p_z: float = 0.5
    compliance_probs: dict = field(default_factory=lambda: {"at": 0.2, "nt": 0.25, "cp": 0.55})
    outcome_laws: dict = field(default_factory=_default_laws)
    theta0: Theta = Theta(1.0, -0.1, -0.1)
    n: int = 2000
    replicates: int = 1000
    seed: int = 20230501
    n_boot: int = 200
    max_drop_rate: float = 0.02

    def __post_init__(self):
        if not 0.0 < self.p_z < 1.0:
            raise InvalidConfig("p_z must lie strictly between 0 and 1")
        probs = {str(k): float(v) for k, v in self.compliance_probs.items()}
        unknown = set(probs) - set(STRATA)
        if unknown:
            raise InvalidConfig(f"unknown compliance strata {sorted(unknown)} (defiers are not allowed)")
        if any(v < 0 for v in probs.values()) or abs(sum(probs.values()) - 1.0) > 1e-12:
            raise InvalidConfig("compliance probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "compliance_probs", {s: probs.get(s, 0.0) for s in STRATA})
        laws = {}
        for s in STRATA:
            raw = self.outcome_laws.get(s)
            if raw is None:
                raise InvalidConfig(f"missing outcome law for stratum {s!r}")
            laws[s] = {}
            for z in (0, 1):
                law = raw.get(z, raw.get(str(z)))
                if law is None:
                    raise InvalidConfig(f"missing outcome law for stratum {s!r}, z={z}")
                law = {float(y): float(p) for y, p in law.items()}
                if any(p < 0 for p in law.values()) or abs(sum(law.values()) - 1.0) > 1e-12:
                    raise InvalidConfig(f"outcome law ({s}, z={z}) is not a distribution")
                laws[s][z] = law
        for s in ("at", "nt"):
            if _clean(laws[s][0]) != _clean(laws[s][1]):
                raise InvalidConfig(f"outcome law of {s!r} depends on z (exclusion restriction)")
        object.__setattr__(self, "outcome_laws", laws)
        if isinstance(self.theta0, dict):
            object.__setattr__(self, "theta0", Theta(**self.theta0))
        if self.n < 1 or self.replicates < 1 or self.n_boot < 0:
            raise InvalidConfig("n and replicates must be positive, n_boot non-negative")

    @property
    def support(self) -> OutcomeSupport:
        ys = sorted({y for s in STRATA for z in (0, 1) for y, p in self.outcome_laws[s][z].items()})
        return OutcomeSupport(tuple(ys))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta0"] = self.theta0.to_dict()
        d["outcome_laws"] = {
            s: {str(z): {format(y, ".17g"): p for y, p in law.items()} for z, law in by_z.items()}
            for s, by_z in self.outcome_laws.items()
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "theta0" in d:
            t = d["theta0"]
            d["theta0"] = Theta(**t) if isinstance(t, dict) else Theta(*t)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        try:
            return cls.from_dict(json.loads(text))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ShadowCaceError):
                raise
            raise InvalidConfig(str(exc)) from None


def _clean(law):
    return {y: p for y, p in law.items() if p > 0}


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def bootstrap_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(index, 1)).generate_state(1)[0])


def simulate_latent(config: SimConfig, replicate_index: int = 0) -> dict:
    """Draw ``config.n`` units including the latent compliance stratum.

    Returns arrays ``z``, ``u`` (0=at, 1=nt, 2=cp), ``a``, ``y`` (complete
    outcome) and ``r``.
    """
    rng = replicate_rng(config.seed, replicate_index)
    n = config.n
    support = np.array(config.support.values)
    z = (rng.random(n) < config.p_z).astype(np.int64)
    cum = np.cumsum([config.compliance_probs[s] for s in STRATA])
    u = np.minimum(np.searchsorted(cum, rng.random(n), side="right"), len(STRATA) - 1)
    a = np.where(u == 0, 1, np.where(u == 1, 0, z))
    # outcome CDF for each (stratum, z), row 2*u + z
    cdf = np.array([
        np.cumsum([config.outcome_laws[s][zz].get(y, 0.0) for y in support])
        for s in STRATA for zz in (0, 1)
    ])
    k = np.minimum((rng.random(n)[:, None] >= cdf[2 * u + z]).sum(axis=1), len(support) - 1)
    y = support[k]
    t0 = config.theta0
    pi = LOGISTIC.psi(t0.alpha + t0.beta * y + t0.gamma * a)
    r = (rng.random(n) < pi).astype(np.int64)
    return {"z": z, "u": u, "a": a, "y": y, "r": r}


def simulate_dataset(config: SimConfig, replicate_index: int = 0) -> Dataset:
    """Draw an observed dataset; outcomes of non-respondents are blanked."""
    d = simulate_latent(config, replicate_index)
    return Dataset.from_arrays(d["z"], d["a"], d["r"], np.where(d["r"] == 1, d["y"], np.nan))


def true_cace_closed_form(config: SimConfig) -> float:
    """``E[Y(1) - Y(0) | complier]`` from the complier outcome laws.

    Probabilities are read as the decimals they were written as, so the
    arithmetic is exact.
    """
    def mean(law):
        return sum(Fraction(y).limit_denominator(10**9) * Fraction(p).limit_denominator(10**9)
                   for y, p in law.items())

    laws = config.outcome_laws["cp"]
    return float(mean(laws[1]) - mean(laws[0]))


def population_joint(config: SimConfig) -> JointLaw:
    """Exact joint law of ``(A, Y, Z, R)`` implied by the design."""
    support = config.support
    t0 = config.theta0
    table = np.zeros((2, len(support), 2, 2))
    for zz in (0, 1):
        pz = config.p_z if zz else 1.0 - config.p_z
        for s in STRATA:
            aa = treatment_of(s, zz)
            for y, py in config.outcome_laws[s][zz].items():
                pi = float(LOGISTIC.psi(t0.alpha + t0.beta * y + t0.gamma * aa))
                base = pz * config.compliance_probs[s] * py
                yi = support.index(y)
                table[aa, yi, zz, 1] += base * pi
                table[aa, yi, zz, 0] += base * (1.0 - pi)
    return JointLaw(table, support)


def population_observed_law(config: SimConfig) -> ObservedLaw:
    return observed_law_from_joint(population_joint(config))


def population_missing_rate(config: SimConfig) -> float:
    return float(population_joint(config).table[..., 0].sum())


# -- replication harness -----------------------------------------------------

PARAMETERS = ("alpha", "beta", "gamma", "cace")


@dataclass(frozen=True)
class ReplicateResult:
    index: int
    ok: bool
    estimates: tuple = ()
    ses: tuple = ()
    ci_low: tuple = ()
    ci_high: tuple = ()
    boundary: bool = False
    reason: str = ""


def run_replicate(config: SimConfig, index: int,
                  settings: OptimizerSettings | None = None) -> ReplicateResult:
    data = simulate_dataset(config, index)
    try:
        fit = fit_cells(data.cells, settings)
        if not fit.converged:
            return ReplicateResult(index, False, reason="gmm did not converge")
        est = cace(data, fit, n_boot=config.n_boot, seed=bootstrap_seed(config.seed, index),
                   settings=settings)
    except ShadowCaceError as exc:
        return ReplicateResult(index, False, reason=f"{type(exc).__name__}: {exc}")
    ci = fit.ci
    return ReplicateResult(
        index, True,
        estimates=(*fit.theta_hat.as_array().tolist(), est.point),
        ses=(*fit.se.tolist(), est.se),
        ci_low=(*ci[:, 0].tolist(), est.ci_low),
        ci_high=(*ci[:, 1].tolist(), est.ci_high),
        boundary=fit.boundary,
    )


@dataclass(frozen=True)
class SummaryRow:
    parameter: str
    true_value: float
    n: int
    bias: float
    sd: float
    mean_se: float
    ci_low: float
    ci_high: float
    coverage: float
    n_used: int


@dataclass(frozen=True)
class ReplicationSummary:
    n: int
    replicates: int
    n_failed: int
    n_boundary: int
    rows: tuple[SummaryRow, ...]
    estimates: np.ndarray = field(repr=False, compare=False)
    failures: tuple = field(default=(), repr=False, compare=False)

    def row(self, parameter: str) -> SummaryRow:
        return next(r for r in self.rows if r.parameter == parameter)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "replicates": self.replicates,
            "n_failed": self.n_failed,
            "n_boundary": self.n_boundary,
            "rows": [asdict(r) for r in self.rows],
        }


CSV_FIELDS = ("parameter", "true_value", "n", "bias", "sd", "mean_se", "ci_low", "ci_high",
              "coverage", "n_used", "replicates", "n_failed", "n_boundary")


def summaries_to_csv(summaries) -> str:
    """Table of bias / SD / mean interval rows, grouped by parameter then ``n``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for p in PARAMETERS:
        for s in summaries:
            row = asdict(s.row(p))
            row.update(replicates=s.replicates, n_failed=s.n_failed, n_boundary=s.n_boundary)
            w.writerow([_csv_value(row[f]) for f in CSV_FIELDS])
    return buf.getvalue()


def _csv_value(v):
    if isinstance(v, float):
        return format(v, ".6f") if math.isfinite(v) else "nan"
    return v


def summarize(config: SimConfig, results) -> ReplicationSummary:
    ok = [r for r in results if r.ok]
    failed = [r for r in results if not r.ok]
    if not ok:
        raise AllReplicatesFailed(f"all {len(results)} replicates failed")
    truth = (*config.theta0.as_array().tolist(), true_cace_closed_form(config))
    est = np.array([r.estimates for r in ok])
    ses = np.array([r.ses for r in ok])
    lo = np.array([r.ci_low for r in ok])
    hi = np.array([r.ci_high for r in ok])
    rows = []
    for j, name in enumerate(PARAMETERS):
        valid = np.isfinite(lo[:, j]) & np.isfinite(hi[:, j])
        cover = (lo[valid, j] <= truth[j]) & (truth[j] <= hi[valid, j])
        rows.append(SummaryRow(
            parameter=name,
            true_value=float(truth[j]),
            n=config.n,
            bias=float(np.mean(est[:, j]) - truth[j]),
            sd=float(np.std(est[:, j], ddof=1)) if len(ok) > 1 else math.nan,
            mean_se=float(np.nanmean(ses[:, j])) if np.any(np.isfinite(ses[:, j])) else math.nan,
            ci_low=float(np.mean(lo[valid, j])) if valid.any() else math.nan,
            ci_high=float(np.mean(hi[valid, j])) if valid.any() else math.nan,
            coverage=float(np.mean(cover)) if valid.any() else math.nan,
            n_used=int(valid.sum()),
        ))
    return ReplicationSummary(config.n, len(results), len(failed),
                              sum(r.boundary for r in ok), tuple(rows), est,
                              tuple((r.index, r.reason) for r in failed))


def run_replications(config: SimConfig, n_jobs: int = 1, settings: OptimizerSettings | None = None,
                     enforce_drop_rate: bool = True) -> ReplicationSummary:
    """Simulate, fit and estimate ``config.replicates`` times; aggregate in index order.

    Replicates that fail (non-convergence, degenerate design, weak
    instrument) are dropped and counted. Raises
    :class:`ExcessiveNonConvergence` when more than ``config.max_drop_rate``
    of them fail and ``enforce_drop_rate`` is set.
    """
    idx = range(config.replicates)
    if n_jobs == 1:
        results = [run_replicate(config, i, settings) for i in idx]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(run_replicate)(config, i, settings) for i in idx)
    results.sort(key=lambda r: r.index)
    summary = summarize(config, results)
    rate = summary.n_failed / summary.replicates
    if enforce_drop_rate and rate > config.max_drop_rate:
        raise ExcessiveNonConvergence(
            f"{summary.n_failed} of {summary.replicates} replicates failed "
            f"(limit {config.max_drop_rate:.1%})"
        )
    return summary


def table3(config: SimConfig, n_list=(100, 500, 1000, 2000), n_jobs: int = 1,
           enforce_drop_rate: bool = True) -> list[ReplicationSummary]:
    return [run_replications(replace(config, n=n), n_jobs, enforce_drop_rate=enforce_drop_rate)
            for n in n_list]
