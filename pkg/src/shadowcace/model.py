"""Core domain types: unit records, datasets, outcome supports, propensity
parameters and the response link function."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import special

from .errors import EmptyData, MissingnessMismatch, NonBinaryField

#: Linear predictors are clamped to this range before exponentiation.
PREDICTOR_CLAMP = 500.0


@dataclass(frozen=True)
class Record:
    """One unit: instrument ``z``, treatment ``a``, response indicator ``r``
    and the outcome ``y`` (``None`` when ``r == 0``)."""

    z: int
    a: int
    r: int
    y: float | None = None

    def __post_init__(self):
        for name in ("z", "a", "r"):
            if getattr(self, name) not in (0, 1):
                raise NonBinaryField(f"{name}={getattr(self, name)!r} is not in {{0, 1}}")
        if self.r == 1 and self.y is None:
            raise MissingnessMismatch("r=1 but y is missing")
        if self.r == 0 and self.y is not None:
            raise MissingnessMismatch("r=0 but y is present")
        if self.y is not None and not math.isfinite(self.y):
            raise NonBinaryField(f"y={self.y!r} is not finite")


@dataclass(frozen=True)
class OutcomeSupport:
    values: tuple[float, ...]
    y_ref: float | None = None

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise EmptyData("outcome support is empty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("support values must be strictly ascending")
        object.__setattr__(self, "values", vals)
        ref = vals[0] if self.y_ref is None else float(self.y_ref)
        if ref not in vals:
            raise ValueError(f"reference value {ref} is not in the support")
        object.__setattr__(self, "y_ref", ref)

    def __len__(self):
        return len(self.values)

    @property
    def ref_index(self) -> int:
        return self.values.index(self.y_ref)

    def index(self, y: float) -> int:
        return self.values.index(float(y))


@dataclass(frozen=True)
class Theta:
    """Propensity parameters: intercept, outcome and treatment coefficients."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "Theta":
        return cls(*(float(v) for v in x))

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma}


@dataclass(frozen=True)
class LinkFunction:
    """A strictly increasing map ``psi: R -> (0, 1]`` with two derivatives.

    The callables must accept scalars and numpy arrays.
    """

    name: str
    psi: Callable
    dpsi: Callable
    d2psi: Callable

    def __call__(self, t):
        return self.psi(t)


def _logistic_d1(t):
    p = special.expit(t)
    return p * (1.0 - p)


def _logistic_d2(t):
    p = special.expit(t)
    return p * (1.0 - p) * (1.0 - 2.0 * p)


def _probit_d1(t):
    return np.exp(-0.5 * np.square(t)) / math.sqrt(2.0 * math.pi)


def _probit_d2(t):
    return -t * _probit_d1(t)


LOGISTIC = LinkFunction("logistic", special.expit, _logistic_d1, _logistic_d2)
PROBIT = LinkFunction("probit", special.ndtr, _probit_d1, _probit_d2)


def linear_predictor(theta: Theta, y, a):
    return theta.alpha + theta.beta * y + theta.gamma * a


def propensity(theta: Theta, y, a, link: LinkFunction = LOGISTIC):
    """Probability that the outcome is observed, ``psi(alpha + beta*y + gamma*a)``."""
    t = np.clip(linear_predictor(theta, y, a), -PREDICTOR_CLAMP, PREDICTOR_CLAMP)
    out = link.psi(t)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Cells:
    """A dataset collapsed to its distinct ``(y, a, z, r)`` patterns.

    ``weight`` holds cell frequencies divided by ``n``; for ``r == 0`` cells
    the ``y`` slot is a placeholder and never read.
    """

    y: np.ndarray
    a: np.ndarray
    z: np.ndarray
    r: np.ndarray
    count: np.ndarray
    n: int

    @property
    def weight(self) -> np.ndarray:
        return self.count / self.n

    def with_counts(self, count: np.ndarray) -> "Cells":
        return Cells(self.y, self.a, self.z, self.r, np.asarray(count, dtype=np.int64),
                     int(np.sum(count)))


@dataclass(frozen=True, eq=False)
class Dataset:
    """A validated collection of records stored column-wise.

    Use :func:`validate_dataset` or :meth:`from_arrays` to build one.
    """

    z: np.ndarray
    a: np.ndarray
    r: np.ndarray
    y: np.ndarray  # NaN where r == 0
    support: OutcomeSupport = field(repr=False)

    @classmethod
    def from_arrays(cls, z, a, r, y, y_ref: float | None = None) -> "Dataset":
        z = np.asarray(z)
        a = np.asarray(a)
        r = np.asarray(r)
        y = np.asarray(y, dtype=float)
        n = len(z)
        if n == 0:
            raise EmptyData("dataset has no records")
        if not (len(a) == len(r) == len(y) == n):
            raise ValueError("column lengths differ")
        cols = {}
        for name, col in (("z", z), ("a", a), ("r", r)):
            bad = np.flatnonzero((col != 0) & (col != 1))
            if bad.size:
                raise NonBinaryField(f"record {bad[0]}: {name}={col[bad[0]]!r} is not in {{0, 1}}")
            cols[name] = col.astype(np.int8)
        observed = cols["r"] == 1
        bad = np.flatnonzero(observed & ~np.isfinite(y))
        if bad.size:
            raise MissingnessMismatch(f"record {bad[0]}: r=1 but y is missing")
        bad = np.flatnonzero(~observed & ~np.isnan(y))
        if bad.size:
            raise MissingnessMismatch(f"record {bad[0]}: r=0 but y is present")
        if not observed.any():
            raise EmptyData("no record has an observed outcome")
        support = OutcomeSupport(tuple(np.unique(y[observed])), y_ref)
        for col in (*cols.values(), y):
            col.setflags(write=False)
        return cls(cols["z"], cols["a"], cols["r"], y, support)

    @property
    def n(self) -> int:
        return len(self.z)

    def __len__(self):
        return self.n

    @property
    def records(self) -> tuple[Record, ...]:
        return tuple(
            Record(int(z), int(a), int(r), float(y) if r else None)
            for z, a, r, y in zip(self.z, self.a, self.r, self.y)
        )

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset.from_arrays(self.z[mask], self.a[mask], self.r[mask], self.y[mask])

    @cached_property
    def _cell_index(self):
        y = np.where(self.r == 1, self.y, 0.0)
        keys = np.column_stack([y, self.a, self.z, self.r])
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        return uniq, inverse.reshape(-1)

    @property
    def cell_inverse(self) -> np.ndarray:
        """Cell id of every record, aligned with :attr:`cells`."""
        return self._cell_index[1]

    @cached_property
    def cells(self) -> Cells:
        uniq, inverse = self._cell_index
        count = np.bincount(inverse, minlength=len(uniq)).astype(np.int64)
        return Cells(
            y=np.ascontiguousarray(uniq[:, 0]),
            a=np.ascontiguousarray(uniq[:, 1].astype(np.int64)),
            z=np.ascontiguousarray(uniq[:, 2].astype(np.int64)),
            r=np.ascontiguousarray(uniq[:, 3].astype(np.int64)),
            count=count,
            n=self.n,
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.r, other.r)
            and np.array_equal(self.y, other.y, equal_nan=True)
        )


def _coerce_record(rec) -> Record:
    if isinstance(rec, Record):
        return rec
    if isinstance(rec, Mapping):
        return Record(rec["z"], rec["a"], rec["r"], rec.get("y"))
    return Record(*rec)


def validate_dataset(records: Iterable, y_ref: float | None = None) -> Dataset:
    """Validate raw records (``Record``, mappings or ``(z, a, r, y)`` tuples)."""
    recs = []
    for i, raw in enumerate(records):
        try:
            recs.append(_coerce_record(raw))
        except (MissingnessMismatch, NonBinaryField) as exc:
            raise type(exc)(f"record {i}: {exc}") from None
    if not recs:
        raise EmptyData("dataset has no records")
    return Dataset.from_arrays(
        [rc.z for rc in recs],
        [rc.a for rc in recs],
        [rc.r for rc in recs],
        [np.nan if rc.y is None else rc.y for rc in recs],
        y_ref=y_ref,
    )
