"""Exact identification of the full data law on finite supports.

All tables are numpy arrays indexed in the fixed order ``[a, y, z, r]`` with
``y`` running over the positions of an :class:`OutcomeSupport`. Under the
shadow condition (R independent of Z given Y and A) and completeness of the
respondent outcome kernel ``f(y | r=1, a, z)``, the joint law
``f(a, y, z, r)`` is recovered from the observed-data law alone::

    observed law --solve_or_tilde--> normalized odds ratio
                 --or_from_tilde---> OR(a, y)
                 --baseline_propensity--> f(r=1 | a, y_ref)
                 --reconstruct_joint----> f(a, y, z, r)
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateConditional,
    InvalidLaw,
    NegativeSolution,
    NormalizationFailure,
    ShadowViolation,
    SingularSystem,
    UnderdeterminedSystem,
    ZeroDensity,
    ZeroMargin,
    ZeroReference,
)
from .model import OutcomeSupport

SUM_TOL = 1e-12
SHADOW_TOL = 1e-9
NORMALIZATION_TOL = 1e-9
COMPLETENESS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class JointLaw:
    """Probability table ``p[a, y, z, r]`` on ``{0,1} x support x {0,1} x {0,1}``."""

    table: np.ndarray
    support: OutcomeSupport

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        k = len(self.support)
        if t.shape != (2, k, 2, 2):
            raise InvalidLaw(f"table shape {t.shape} does not match (2, {k}, 2, 2)")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise InvalidLaw("probabilities must be finite and non-negative")
        if abs(t.sum() - 1.0) > SUM_TOL:
            raise InvalidLaw(f"probabilities sum to {t.sum():.17g}, not 1")
        if np.any(t.sum(axis=(1, 3)) <= 0):
            raise ZeroMargin("some (a, z) cell has zero probability")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def margin_az(self) -> np.ndarray:
        return self.table.sum(axis=(1, 3))

    def y_given_r_az(self) -> np.ndarray:
        """``f(y | r, a, z)`` indexed ``[a, y, z, r]``; NaN where ``f(r | a, z) = 0``."""
        denom = self.table.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(denom > 0, self.table / denom, np.nan)

    def propensity(self) -> np.ndarray:
        """``f(r=1 | a, y)`` indexed ``[a, y]``."""
        ay = self.table.sum(axis=2)
        tot = ay.sum(axis=2)
        if np.any(tot <= 0):
            raise ZeroDensity("some (a, y) cell has zero probability")
        return ay[:, :, 1] / tot

    def to_json(self) -> dict:
        """Nested ``{a: {y: {z: {r: p}}}}`` mapping with string keys."""
        out = {}
        for ai in range(2):
            out[str(ai)] = {
                _fmt(yv): {
                    str(zi): {str(ri): float(self.table[ai, yi, zi, ri]) for ri in range(2)}
                    for zi in range(2)
                }
                for yi, yv in enumerate(self.support.values)
            }
        return {"support": list(self.support.values), "y_ref": self.support.y_ref, "law": out}

    @classmethod
    def from_json(cls, obj: dict) -> "JointLaw":
        law = obj.get("law", obj)
        try:
            ys = sorted({float(y) for a in law.values() for y in a})
            support = OutcomeSupport(tuple(ys), obj.get("y_ref"))
            t = np.zeros((2, len(ys), 2, 2))
            for a_key, by_y in law.items():
                for y_key, by_z in by_y.items():
                    for z_key, by_r in by_z.items():
                        for r_key, p in by_r.items():
                            t[int(a_key), support.index(float(y_key)), int(z_key), int(r_key)] = float(p)
        except (AttributeError, TypeError, ValueError, IndexError, KeyError) as exc:
            raise InvalidLaw(f"malformed joint law: {exc}") from None
        return cls(t, support)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _fmt(v: float) -> str:
    return format(v, ".17g")


@dataclass(frozen=True, eq=False)
class ObservedLaw:
    """Observed-data functionals.

    ``f_y_r1[a, y, z] = f(y | r=1, a, z)``, ``f_r0[a, z] = f(r=0 | a, z)`` and
    ``f_az[a, z] = f(a, z)``.
    """

    f_y_r1: np.ndarray
    f_r0: np.ndarray
    f_az: np.ndarray
    support: OutcomeSupport

    def __post_init__(self):
        if abs(np.sum(self.f_az) - 1.0) > SUM_TOL:
            raise InvalidLaw("f(a, z) does not sum to 1")
        if np.any(self.f_az <= 0):
            raise ZeroMargin("some (a, z) cell has zero probability")
        if np.any(self.f_r0 >= 1.0):
            raise ZeroDensity("no respondents in some (a, z) cell")
        sums = self.f_y_r1.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > SUM_TOL):
            raise InvalidLaw("f(y | r=1, a, z) does not sum to 1")

    @property
    def f_r1(self) -> np.ndarray:
        return 1.0 - self.f_r0

    def z_given_a(self) -> np.ndarray:
        return self.f_az / self.f_az.sum(axis=1, keepdims=True)

    def r1_given_a(self) -> np.ndarray:
        return (self.f_r1 * self.z_given_a()).sum(axis=1)

    def z_given_r_a(self, r: int) -> np.ndarray:
        """``f(z | r, a)`` indexed ``[a, z]``."""
        fr = self.f_r1 if r == 1 else self.f_r0
        joint = fr * self.z_given_a()
        tot = joint.sum(axis=1, keepdims=True)
        if np.any(tot <= 0):
            raise ZeroDensity(f"f(r={r} | a) is zero for some a")
        return joint / tot

    def y_given_r1_a(self) -> np.ndarray:
        """``f(y | r=1, a)`` indexed ``[a, y]``."""
        return np.einsum("ayz,az->ay", self.f_y_r1, self.z_given_r_a(1))


def observed_law_from_joint(joint: JointLaw) -> ObservedLaw:
    t = joint.table
    f_az = t.sum(axis=(1, 3))
    if np.any(f_az <= 0):
        raise ZeroMargin("some (a, z) cell has zero probability")
    r1 = t[:, :, :, 1].sum(axis=1)
    if np.any(r1 <= 0):
        raise ZeroDensity("no respondents in some (a, z) cell")
    f_y_r1 = t[:, :, :, 1] / r1[:, None, :]
    f_r0 = t[:, :, :, 0].sum(axis=1) / f_az
    return ObservedLaw(f_y_r1, f_r0, f_az, joint.support)


@dataclass(frozen=True, eq=False)
class OddsRatioTable:
    """``OR(a, y)`` relative to the reference outcome value (``values[a, y]``)."""

    values: np.ndarray
    support: OutcomeSupport

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (2, len(self.support)):
            raise ValueError("odds-ratio table shape does not match the support")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("odds ratios must be positive and finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __call__(self, a: int, y: float) -> float:
        return float(self.values[a, self.support.index(y)])

    @property
    def y_ref(self) -> float:
        return self.support.y_ref


def odds_ratio_by_z(joint: JointLaw) -> np.ndarray:
    """``OR(a, y, z)`` indexed ``[a, y, z]``, computed at each instrument level."""
    c = joint.y_given_r_az()
    if not np.all(np.isfinite(c)) or np.any(c <= 0):
        raise ZeroDensity("f(y | r, a, z) has a zero cell")
    i = joint.support.ref_index
    r0, r1 = c[..., 0], c[..., 1]
    return (r0 * r1[:, i:i + 1, :]) / (r1 * r0[:, i:i + 1, :])


def odds_ratio_from_joint(joint: JointLaw) -> OddsRatioTable:
    by_z = odds_ratio_by_z(joint)
    gap = np.max(np.abs(by_z - by_z[:, :, :1]))
    if gap > SHADOW_TOL:
        raise ShadowViolation(f"odds ratio varies with z by {gap:.3g}")
    return OddsRatioTable(by_z[:, :, 0], joint.support)


def _or_mean_r1_a(observed: ObservedLaw, or_table: OddsRatioTable) -> np.ndarray:
    return (or_table.values * observed.y_given_r1_a()).sum(axis=1)


def baseline_propensity(observed: ObservedLaw, or_table: OddsRatioTable) -> np.ndarray:
    """``f(r=1 | a, y_ref)`` for ``a = 0, 1``.

    Accepts a :class:`JointLaw` too, in which case its observed law is used.
    """
    if isinstance(observed, JointLaw):
        observed = observed_law_from_joint(observed)
    p1 = observed.r1_given_a()
    if np.any(p1 <= 0):
        raise ZeroMargin("f(r=1 | a) is zero")
    m = _or_mean_r1_a(observed, or_table)
    return m / ((1.0 - p1) / p1 + m)


def propensity_from_or(or_table: OddsRatioTable, baseline) -> np.ndarray:
    """``f(r=1 | a, y)`` indexed ``[a, y]`` from the odds ratio and baseline."""
    b = np.asarray(baseline, dtype=float).reshape(2, 1)
    if np.any(b <= 0) or np.any(b > 1):
        raise ValueError("baseline propensity must lie in (0, 1]")
    out = b / (b + or_table.values * (1.0 - b))
    out[:, or_table.support.ref_index] = b[:, 0]
    return out


def recover_missing_outcome_law(observed: ObservedLaw, or_table: OddsRatioTable) -> np.ndarray:
    """``f(y | r=0, a, z)`` indexed ``[a, y, z]``."""
    num = or_table.values[:, :, None] * observed.f_y_r1
    norm = num.sum(axis=1, keepdims=True)
    if np.any(norm <= 0):
        raise DegenerateConditional("E[OR | r=1, a, z] is zero")
    return num / norm


@dataclass(frozen=True)
class CompletenessReport:
    a: int
    complete: bool
    condition_number: float
    singular_values: tuple[float, ...]


def check_completeness(observed: ObservedLaw, tol: float = COMPLETENESS_TOL) -> list[CompletenessReport]:
    """Rank check of the kernel matrix ``M[y, z] = f(y | r=1, a, z)`` per treatment arm."""
    out = []
    k = len(observed.support)
    for a in range(2):
        M = observed.f_y_r1[a]
        sv = np.linalg.svd(M, compute_uv=False)
        rank = int(np.sum(sv > tol * sv[0])) if sv[0] > 0 else 0
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
        out.append(CompletenessReport(a, rank == k, cond, tuple(float(s) for s in sv)))
    return out


def solve_or_tilde(observed: ObservedLaw, tol: float = COMPLETENESS_TOL) -> np.ndarray:
    """Solve ``sum_y ORt(a, y) f(y | r=1, a, z) = f(z | r=0, a) / f(z | r=1, a)``.

    Returns the normalized odds ratio indexed ``[a, y]``.
    """
    k = len(observed.support)
    n_levels = observed.f_y_r1.shape[2]
    if k > n_levels:
        raise UnderdeterminedSystem(
            f"support of size {k} exceeds the {n_levels} instrument levels"
        )
    rhs = observed.z_given_r_a(0) / observed.z_given_r_a(1)
    out = np.empty((2, k))
    for rep in check_completeness(observed, tol):
        a = rep.a
        if not rep.complete:
            raise SingularSystem(f"kernel f(y | r=1, a={a}, z) is rank deficient")
        M = observed.f_y_r1[a]  # [y, z]
        if k == n_levels:
            x = np.linalg.solve(M.T, rhs[a])
        else:
            x, *_ = np.linalg.lstsq(M.T, rhs[a], rcond=None)
            resid = np.max(np.abs(M.T @ x - rhs[a]))
            if resid > SHADOW_TOL:
                raise ShadowViolation(f"overdetermined system inconsistent (residual {resid:.3g})")
        out[a] = x
    if np.any(out <= 0):
        raise NegativeSolution("normalized odds ratio has a non-positive entry")
    return out


def or_from_tilde(or_tilde, support: OutcomeSupport) -> OddsRatioTable:
    or_tilde = np.asarray(or_tilde, dtype=float)
    ref = or_tilde[:, support.ref_index:support.ref_index + 1]
    if np.any(ref <= 0):
        raise ZeroReference("normalized odds ratio is not positive at the reference value")
    vals = or_tilde / ref
    vals[:, support.ref_index] = 1.0
    return OddsRatioTable(vals, support)


def normalizing_constant(or_table: OddsRatioTable, baseline, observed: ObservedLaw) -> np.ndarray:
    """``c(a, z)`` of the pattern-mixture factorization, indexed ``[a, z]``."""
    b = np.asarray(baseline, dtype=float)
    return (observed.r1_given_a() / b)[:, None] * observed.z_given_r_a(1) / observed.z_given_a()


def reconstruct_joint(or_table: OddsRatioTable, baseline, observed: ObservedLaw) -> JointLaw:
    """Rebuild ``f(a, y, z, r)`` from the odds ratio, baseline propensity and observed law."""
    b = np.asarray(baseline, dtype=float)
    c = normalizing_constant(or_table, b, observed)
    k = len(observed.support)
    t = np.empty((2, k, 2, 2))
    # f(y, r | a, z) = c(a, z) f(r | a, y_ref) f(y | r=1, a, z) OR(a, y)^(1 - r)
    t[..., 1] = c[:, None, :] * b[:, None, None] * observed.f_y_r1
    t[..., 0] = (c[:, None, :] * (1.0 - b)[:, None, None] * observed.f_y_r1
                 * or_table.values[:, :, None])
    slice_sums = t.sum(axis=(1, 3))
    dev = np.max(np.abs(slice_sums - 1.0))
    if dev > NORMALIZATION_TOL:
        raise NormalizationFailure(f"f(y, r | a, z) sums deviate from 1 by {dev:.3g}")
    t *= observed.f_az[:, None, :, None]
    return JointLaw(t / t.sum(), observed.support)


@dataclass(frozen=True, eq=False)
class Identification:
    """Intermediate results of :func:`identify`."""

    joint: JointLaw
    or_tilde: np.ndarray
    odds_ratio: OddsRatioTable
    baseline: np.ndarray
    propensity: np.ndarray
    missing_outcome_law: np.ndarray
    completeness: list[CompletenessReport]


def identify(observed: ObservedLaw) -> Identification:
    completeness = check_completeness(observed)
    or_tilde = solve_or_tilde(observed)
    or_table = or_from_tilde(or_tilde, observed.support)
    baseline = baseline_propensity(observed, or_table)
    return Identification(
        joint=reconstruct_joint(or_table, baseline, observed),
        or_tilde=or_tilde,
        odds_ratio=or_table,
        baseline=baseline,
        propensity=propensity_from_or(or_table, baseline),
        missing_outcome_law=recover_missing_outcome_law(observed, or_table),
        completeness=completeness,
    )


def identify_full_law(observed: ObservedLaw) -> JointLaw:
    """Recover the full joint law from the observed-data law."""
    return identify(observed).joint


def shadow_joint(f_az, f_y_given_az, pi_ay, support: OutcomeSupport) -> JointLaw:
    """Joint law with response depending on ``(a, y)`` only.

    ``f_az[a, z]``, ``f_y_given_az[a, y, z]`` and ``pi_ay[a, y] = f(r=1 | a, y)``.
    """
    f_az = np.asarray(f_az, dtype=float)
    fy = np.asarray(f_y_given_az, dtype=float)
    pi = np.asarray(pi_ay, dtype=float)[:, :, None]
    t = np.empty((2, len(support), 2, 2))
    base = f_az[:, None, :] * fy
    t[..., 1] = base * pi
    t[..., 0] = base * (1.0 - pi)
    return JointLaw(t / t.sum(), support)


def random_shadow_joint(rng: np.random.Generator, support: OutcomeSupport | None = None,
                        response_range=(0.05, 0.95)) -> JointLaw:
    """Random shadow-compatible joint law; generically satisfies completeness."""
    support = support or OutcomeSupport((0.0, 1.0))
    k = len(support)
    f_az = rng.dirichlet(np.ones(4)).reshape(2, 2)
    fy = rng.dirichlet(np.ones(k), size=(2, 2)).transpose(0, 2, 1)  # [a, y, z]
    pi = rng.uniform(*response_range, size=(2, k))
    return shadow_joint(f_az, fy, pi, support)
