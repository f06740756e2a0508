"""Two-step GMM for the response-propensity parameters.

Moment functions, one row per unit::

    G = ( 1{z=0} b, 1{z=1} b, 1{a=0} b, 1{a=1} b ),   b = r / pi(y, a; theta) - 1

with ``pi = psi(alpha + beta*y + gamma*a)``. Because the z-block and the
a-block each sum to ``b``, the four moments span at most three dimensions and
the sample covariance ``Omega`` has rank <= 3. The optimal weight is therefore
taken as the Moore-Penrose pseudo-inverse of ``Omega``.

All sample averages are computed on the dataset collapsed to its distinct
``(y, a, z, r)`` cells; see :attr:`shadowcace.model.Dataset.cells`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    DegenerateDesign,
    NonFiniteObjective,
    RankDeficientH,
    SingularWeight,
)
from .model import LOGISTIC, PREDICTOR_CLAMP, Cells, Dataset, LinkFunction, Record, Theta

N_MOMENTS = 4
N_PARAMS = 3
PINV_RCOND = 1e-10
# Jacobians with smaller singular-value ratio are treated as rank deficient;
# fits that drift off to infinity along a flat direction land far below it.
H_RANK_RTOL = 1e-7
Z95 = 1.959963984540054


@dataclass(frozen=True)
class OptimizerSettings:
    """Quasi-Newton settings. ``start=None`` means ``(logit(response rate), 0, 0)``."""

    start: Theta | None = None
    gtol: float = 1e-10
    max_iter: int = 500
    free: tuple[bool, bool, bool] = (True, True, True)


@dataclass(frozen=True)
class MinimizeResult:
    theta: Theta
    objective: float
    grad_norm: float
    iterations: int
    converged: bool


def _bracket(r, y, a, theta: Theta, link: LinkFunction):
    """``r / pi - 1`` and its derivative in the linear predictor."""
    if not r:
        return -1.0, 0.0
    t = min(max(theta.alpha + theta.beta * y + theta.gamma * a, -PREDICTOR_CLAMP), PREDICTOR_CLAMP)
    p = float(link.psi(t))
    return 1.0 / p - 1.0, -float(link.dpsi(t)) / (p * p)


def moment_vector(record: Record, theta: Theta, link: LinkFunction = LOGISTIC) -> np.ndarray:
    """Moment functions of one record; ``y`` is never read when ``r == 0``."""
    b, _ = _bracket(record.r, record.y, record.a, theta, link)
    g = np.zeros(N_MOMENTS)
    g[record.z] = b
    g[2 + record.a] = b
    return g


def moment_jacobian(record: Record, theta: Theta, link: LinkFunction = LOGISTIC) -> np.ndarray:
    """``d G / d theta`` for one record (4 x 3)."""
    _, d = _bracket(record.r, record.y, record.a, theta, link)
    out = np.zeros((N_MOMENTS, N_PARAMS))
    if d:
        x = np.array([1.0, record.y, record.a])
        out[record.z] = d * x
        out[2 + record.a] = d * x
    return out


def _cell_contributions(cells: Cells, theta: Theta, link: LinkFunction):
    """Per-cell moment vectors (m x 4)."""
    b = np.full(len(cells.y), -1.0)
    obs = cells.r == 1
    t = np.clip(theta.alpha + theta.beta * cells.y[obs] + theta.gamma * cells.a[obs],
                -PREDICTOR_CLAMP, PREDICTOR_CLAMP)
    b[obs] = 1.0 / link.psi(t) - 1.0
    G = np.zeros((len(b), N_MOMENTS))
    rows = np.arange(len(b))
    G[rows, cells.z] = b
    G[rows, 2 + cells.a] = b
    return G


def moment_contributions(data: Dataset, theta: Theta, link: LinkFunction = LOGISTIC) -> np.ndarray:
    """Moment vectors of every record (n x 4)."""
    return _cell_contributions(data.cells, theta, link)[data.cell_inverse]


def _cells_of(data) -> Cells:
    return data.cells if isinstance(data, Dataset) else data


def _kernel_moments(cells: Cells, theta: Theta, link: LinkFunction):
    kern, klink = _kernels.for_link(link)
    return kern.moments(theta.as_array(), cells.y, cells.a, cells.z, cells.r, cells.weight, klink)


def sample_moments(data: Dataset | Cells, theta: Theta, link: LinkFunction = LOGISTIC) -> np.ndarray:
    """Average of the moment functions over the sample."""
    return _kernel_moments(_cells_of(data), theta, link)[0]


def h_hat(data: Dataset | Cells, theta: Theta, link: LinkFunction = LOGISTIC) -> np.ndarray:
    """Average Jacobian of the moment functions (4 x 3), analytic through ``psi'``."""
    return _kernel_moments(_cells_of(data), theta, link)[1]


def omega_hat(data: Dataset | Cells, theta: Theta, link: LinkFunction = LOGISTIC) -> np.ndarray:
    """Average outer product of the moment functions (4 x 4)."""
    cells = _cells_of(data)
    G = _cell_contributions(cells, theta, link)
    return (G * cells.weight[:, None]).T @ G


def check_weight_matrix(W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.shape != (N_MOMENTS, N_MOMENTS):
        raise ValueError(f"weight matrix must be {N_MOMENTS}x{N_MOMENTS}")
    if np.max(np.abs(W - W.T)) > 1e-12 * max(1.0, np.max(np.abs(W))):
        raise ValueError("weight matrix is not symmetric")
    if np.min(np.linalg.eigvalsh(W)) < -1e-10 * max(1.0, np.max(np.abs(W))):
        raise ValueError("weight matrix is not positive semi-definite")
    return W


def objective(data: Dataset | Cells, theta: Theta, W, link: LinkFunction = LOGISTIC) -> float:
    g = sample_moments(data, theta, link)
    return float(g @ np.asarray(W) @ g)


def default_start(cells: Cells) -> Theta:
    rate = cells.count[cells.r == 1].sum() / cells.n
    rate = min(max(rate, 1e-6), 1 - 1e-6)
    return Theta(math.log(rate / (1 - rate)), 0.0, 0.0)


def _minimize_cells(cells: Cells, W, settings: OptimizerSettings, link: LinkFunction) -> MinimizeResult:
    start = settings.start or default_start(cells)
    kern, klink = _kernels.for_link(link)
    x, f, gnorm, it, conv = kern.minimize(
        start.as_array(), cells.y, cells.a, cells.z, cells.r, cells.weight,
        np.ascontiguousarray(W, dtype=float), settings.free, settings.gtol,
        settings.max_iter, klink,
    )
    if not math.isfinite(f):
        raise NonFiniteObjective(f"objective is not finite at the start point {start}")
    return MinimizeResult(Theta.from_array(x), float(f), float(gnorm), int(it), bool(conv))


def minimize(data: Dataset | Cells, W, settings: OptimizerSettings | None = None,
             link: LinkFunction = LOGISTIC) -> MinimizeResult:
    """Minimize ``Q(theta) = g(theta)' W g(theta)`` by BFGS with analytic gradients."""
    W = check_weight_matrix(W)
    return _minimize_cells(_cells_of(data), W, settings or OptimizerSettings(), link)


def optimal_weight(omega: np.ndarray) -> np.ndarray:
    """Pseudo-inverse of ``Omega`` dropping singular values below ``1e-10 * max``."""
    if not np.all(np.isfinite(omega)):
        raise SingularWeight("moment covariance is not finite")
    if np.max(np.abs(omega)) == 0:
        raise SingularWeight("moment covariance is zero")
    W = np.linalg.pinv(omega, rcond=PINV_RCOND, hermitian=True)
    return 0.5 * (W + W.T)


def sandwich(H, W, omega) -> np.ndarray:
    """``(H'WH)^-1 H'W Omega W H (H'WH)^-1``."""
    H = np.asarray(H, dtype=float)
    W = np.asarray(W, dtype=float)
    bread = H.T @ W @ H
    sv = np.linalg.svd(H, compute_uv=False)
    if sv[-1] <= H_RANK_RTOL * sv[0] or sv[0] == 0:
        raise RankDeficientH("Jacobian of the moments is not of full column rank")
    try:
        bread_inv = np.linalg.inv(bread)
    except np.linalg.LinAlgError:
        raise RankDeficientH("H'WH is singular") from None
    meat = H.T @ W @ omega @ W @ H
    out = bread_inv @ meat @ bread_inv
    return 0.5 * (out + out.T)


def standard_errors(delta: np.ndarray, n: int) -> np.ndarray:
    return np.sqrt(np.clip(np.diag(delta), 0.0, None) / n)


@dataclass(frozen=True, eq=False)
class GmmFit:
    theta_hat: Theta
    theta_tilde: Theta
    W_hat: np.ndarray
    omega_hat: np.ndarray
    h_hat: np.ndarray
    delta_hat: np.ndarray
    objective_value: float
    converged: bool
    iterations: int
    n: int
    first_step: MinimizeResult = field(repr=False)
    second_step: MinimizeResult = field(repr=False)

    @property
    def boundary(self) -> bool:
        """True when the Jacobian at the estimate is rank deficient.

        This happens when the sample moments have no finite root and the
        minimizer runs off along a flat direction; the sandwich is undefined.
        """
        return not bool(np.all(np.isfinite(self.delta_hat)))

    @property
    def se(self) -> np.ndarray:
        return standard_errors(self.delta_hat, self.n)

    @property
    def ci(self) -> np.ndarray:
        """Wald 95% intervals, one ``(low, high)`` row per parameter."""
        est = self.theta_hat.as_array()
        half = Z95 * self.se
        return np.column_stack([est - half, est + half])

    def to_dict(self) -> dict:
        names = ("alpha", "beta", "gamma")
        est = self.theta_hat.as_array()
        return {
            "parameters": {
                name: {"estimate": float(est[i]), "se": float(self.se[i]),
                       "ci": [float(self.ci[i, 0]), float(self.ci[i, 1])]}
                for i, name in enumerate(names)
            },
            "theta_tilde": self.theta_tilde.to_dict(),
            "objective": self.objective_value,
            "converged": self.converged,
            "boundary": self.boundary,
            "iterations": self.iterations,
            "n": self.n,
            "W_hat": self.W_hat.tolist(),
            "omega_hat": self.omega_hat.tolist(),
            "h_hat": self.h_hat.tolist(),
            "delta_hat": self.delta_hat.tolist(),
        }


def check_design(cells: Cells) -> None:
    for name, col in (("z", cells.z), ("a", cells.a)):
        present = {int(v) for v, c in zip(col, cells.count) if c > 0}
        if present != {0, 1}:
            raise DegenerateDesign(f"{name} takes only the value(s) {sorted(present)}")


def fit_cells(cells: Cells, settings: OptimizerSettings | None = None,
              link: LinkFunction = LOGISTIC) -> GmmFit:
    """Two-step GMM on collapsed cells (see :func:`two_step_fit`)."""
    settings = settings or OptimizerSettings()
    check_design(cells)
    first = _minimize_cells(cells, np.eye(N_MOMENTS), settings, link)
    W_hat = optimal_weight(omega_hat(cells, first.theta, link))
    second_settings = OptimizerSettings(first.theta, settings.gtol, settings.max_iter, settings.free)
    second = _minimize_cells(cells, W_hat, second_settings, link)
    theta = second.theta
    omega = omega_hat(cells, theta, link)
    H = h_hat(cells, theta, link)
    try:
        delta = sandwich(H, W_hat, omega)
    except RankDeficientH:
        delta = np.full((N_PARAMS, N_PARAMS), np.nan)
    return GmmFit(
        theta_hat=theta,
        theta_tilde=first.theta,
        W_hat=W_hat,
        omega_hat=omega,
        h_hat=H,
        delta_hat=delta,
        objective_value=second.objective,
        converged=first.converged and second.converged,
        iterations=first.iterations + second.iterations,
        n=cells.n,
        first_step=first,
        second_step=second,
    )


def two_step_fit(data: Dataset, settings: OptimizerSettings | None = None,
                 link: LinkFunction = LOGISTIC) -> GmmFit:
    """Identity-weighted first step, then re-minimize with ``pinv(Omega(theta_tilde))``."""
    return fit_cells(data.cells, settings, link)
