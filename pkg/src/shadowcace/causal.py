"""Inverse-probability-weighted outcome means and the Wald-ratio CACE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDesign, EmptyStratum, NumericalError, ShadowCaceError, WeakInstrument
from .gmm import GmmFit, OptimizerSettings, fit_cells
from .model import LOGISTIC, Cells, Dataset, LinkFunction, Theta, propensity

PI_FLOOR = 1e-6
WEAK_INSTRUMENT_TOL = 1e-8
DEFAULT_BOOT = 200


def _weights(cells: Cells, theta: Theta, link: LinkFunction):
    """``r * y / pi`` per cell and a mask of cells whose ``pi`` was clipped."""
    obs = cells.r == 1
    pi = np.ones(len(cells.y))
    pi[obs] = propensity(theta, cells.y[obs], cells.a[obs], link)
    clipped = obs & (pi < PI_FLOOR)
    pi = np.clip(pi, PI_FLOOR, 1.0)
    return np.where(obs, cells.y / pi, 0.0), clipped


def _ipw_mean_cells(cells: Cells, theta: Theta, link: LinkFunction, z: int | None = None):
    """Mean and the number of records (in the stratum) whose ``pi`` was clipped."""
    v, clipped = _weights(cells, theta, link)
    cnt = cells.count if z is None else np.where(cells.z == z, cells.count, 0)
    m = cnt.sum()
    if m == 0:
        raise EmptyStratum(f"no records with z={z}")
    return float(np.dot(cnt, v) / m), int(cnt[clipped].sum())


def _treated_rate_cells(cells: Cells, z: int) -> float:
    cnt = np.where(cells.z == z, cells.count, 0)
    m = cnt.sum()
    if m == 0:
        raise EmptyStratum(f"no records with z={z}")
    return float(np.dot(cnt, cells.a) / m)


def ipw_mean(data: Dataset, theta: Theta, link: LinkFunction = LOGISTIC) -> float:
    """``n^-1 sum r_i y_i / pi(y_i, a_i; theta)`` with ``pi`` floored at 1e-6."""
    return _ipw_mean_cells(data.cells, theta, link)[0]


def conditional_ipw_mean(data: Dataset, theta: Theta, z: int, link: LinkFunction = LOGISTIC) -> float:
    """IPW mean of the outcome within the instrument stratum ``Z = z``."""
    return _ipw_mean_cells(data.cells, theta, link, z)[0]


def treated_rate_by_z(data: Dataset, z: int) -> float:
    return _treated_rate_cells(data.cells, z)


@dataclass(frozen=True)
class WaldRatio:
    point: float
    numerator: float
    denominator: float
    clipped: int


def _wald_cells(cells: Cells, theta: Theta, link: LinkFunction) -> WaldRatio:
    m1, c1 = _ipw_mean_cells(cells, theta, link, 1)
    m0, c0 = _ipw_mean_cells(cells, theta, link, 0)
    den = _treated_rate_cells(cells, 1) - _treated_rate_cells(cells, 0)
    if abs(den) <= WEAK_INSTRUMENT_TOL:
        raise WeakInstrument(f"first-stage difference {den:.3g} is numerically zero")
    num = m1 - m0
    return WaldRatio(num / den, num, den, c1 + c0)


def wald_ratio(data: Dataset, theta: Theta, link: LinkFunction = LOGISTIC) -> WaldRatio:
    """Point estimate of the complier effect at fixed propensity parameters."""
    return _wald_cells(data.cells, theta, link)


@dataclass(frozen=True)
class CaceEstimate:
    point: float
    numerator: float
    denominator: float
    se: float
    ci_low: float
    ci_high: float
    n_boot: int
    n_skipped: int = 0
    clipped: int = 0

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "se": self.se,
            "ci": [self.ci_low, self.ci_high],
            "n_boot": self.n_boot,
            "skipped_resamples": self.n_skipped,
            "clipped_propensities": self.clipped,
        }


def resample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent PCG64 stream for bootstrap resample ``index``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def bootstrap_cace(data: Dataset, n_boot: int, seed: int,
                   settings: OptimizerSettings | None = None,
                   link: LinkFunction = LOGISTIC) -> tuple[np.ndarray, int]:
    """Nonparametric bootstrap of the full pipeline (re-fit, then Wald ratio).

    Resamples that fail (degenerate design, weak instrument or a
    non-converged fit) are skipped. Returns ``(draws, n_skipped)``.
    """
    cells = data.cells
    inverse = data.cell_inverse
    n = data.n
    m = len(cells.count)
    draws = []
    skipped = 0
    for b in range(n_boot):
        idx = resample_rng(seed, b).integers(0, n, size=n)
        boot = cells.with_counts(np.bincount(inverse[idx], minlength=m))
        try:
            fit = fit_cells(boot, settings, link)
            if not fit.converged:
                skipped += 1
                continue
            draws.append(_wald_cells(boot, fit.theta_hat, link).point)
        except (DegenerateDesign, EmptyStratum, NumericalError):
            skipped += 1
    return np.asarray(draws), skipped


def cace(data: Dataset, fit: GmmFit | None = None, n_boot: int = DEFAULT_BOOT, seed: int = 0,
         settings: OptimizerSettings | None = None, link: LinkFunction = LOGISTIC) -> CaceEstimate:
    """Complier average causal effect with a percentile bootstrap interval.

    The propensity is fit once on the full sample (it does not involve ``z``);
    only the outcome means are stratified by the instrument.
    """
    if fit is None:
        fit = fit_cells(data.cells, settings, link)
    w = _wald_cells(data.cells, fit.theta_hat, link)
    draws, skipped = bootstrap_cace(data, n_boot, seed, settings, link)
    if len(draws) >= 2:
        se = float(np.std(draws, ddof=1))
        lo, hi = (float(v) for v in np.percentile(draws, [2.5, 97.5]))
    else:
        se = lo = hi = math.nan
    return CaceEstimate(w.point, w.numerator, w.denominator, se, lo, hi, n_boot, skipped, w.clipped)


@dataclass(frozen=True)
class StratumResult:
    value: object
    n: int
    estimate: CaceEstimate | None = None
    fit: GmmFit | None = None
    error: ShadowCaceError | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def stratified_cace(data: Dataset, v, n_boot: int = DEFAULT_BOOT, seed: int = 0,
                    settings: OptimizerSettings | None = None,
                    link: LinkFunction = LOGISTIC) -> dict:
    """Run the fit and the Wald ratio separately within each level of covariate ``v``.

    Returns ``{level: StratumResult}``; a failing stratum carries its error
    instead of an estimate.
    """
    v = np.asarray(v)
    if len(v) != data.n:
        raise ValueError("covariate length does not match the dataset")
    out = {}
    for level in np.unique(v):
        mask = v == level
        key = level.item() if hasattr(level, "item") else level
        try:
            sub = data.subset(mask)
            for z in (0, 1):
                if not np.any(sub.z == z):
                    raise EmptyStratum(f"no records with z={z} in stratum {key!r}")
            fit = fit_cells(sub.cells, settings, link)
            est = cace(sub, fit, n_boot, seed, settings, link)
            out[key] = StratumResult(key, int(mask.sum()), est, fit)
        except ShadowCaceError as exc:
            out[key] = StratumResult(key, int(mask.sum()), error=exc)
    return out
