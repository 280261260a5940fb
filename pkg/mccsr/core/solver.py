"""
Module that solves l1-regularized convex quadratics

    min_x  x'Qx - b'x + c + lam * ||x||_1

with FISTA (accelerated proximal gradient with adaptive restart), plus a
brute-force sign-pattern oracle for small instances and a LASSO wrapper.
"""

import itertools
import logging
import threading
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidParameterError,
    NonFiniteValueError,
    OracleSizeError,
)
from .operators import JointQuadratic, symmetrize

logger = logging.getLogger(__name__)

ORACLE_MAX_DIMENSION = 12
CONVERGENCE_STREAK = 3
POWER_MAX_ITERATIONS = 5000
POWER_TOLERANCE = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    """
    FISTA settings.

    Attributes:
        max_iterations (int): Iteration cap (>= 1).
        tolerance (float): Relative objective change that counts as
            stalled; three stalled iterations in a row mean converged.
        lipschitz_safety (float): Multiplier (>= 1) on the Lipschitz
            estimate.
    """

    max_iterations: int = 300
    tolerance: float = 1e-7
    lipschitz_safety: float = 1.05

    def __post_init__(self):
        if not isinstance(self.max_iterations, int) or self.max_iterations < 1:
            raise InvalidParameterError(
                "max_iterations", self.max_iterations, "an integer >= 1"
            )
        if not self.tolerance > 0:
            raise InvalidParameterError("tolerance", self.tolerance, "positive")
        if not self.lipschitz_safety >= 1:
            raise InvalidParameterError(
                "lipschitz_safety", self.lipschitz_safety, ">= 1"
            )


@dataclass
class SolverResult:
    """Solution of one problem: code, objective, iterations, converged flag."""

    x: np.ndarray
    objective: float
    iterations: int
    converged: bool


@dataclass
class BatchResult:
    """Column-wise solutions of a batch of problems."""

    x: np.ndarray
    objectives: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray


def soft_threshold(v, theta):
    """
    Shrink values toward zero: sign(v) * max(|v| - theta, 0).

    Args:
        v (float|np.ndarray): Value(s) to shrink.
        theta (float|np.ndarray): Non-negative threshold(s).

    Raises:
        InvalidParameterError: If any threshold is negative.
    """
    if np.any(np.asarray(theta) < 0):
        raise InvalidParameterError("theta", theta, "non-negative")
    shrunk = np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)
    return float(shrunk) if np.ndim(shrunk) == 0 else shrunk


def largest_eigenvalue(matrix):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteValueError("Curvature matrix")
    n = matrix.shape[0]
    vector = np.random.default_rng(0).standard_normal(n)
    vector /= np.linalg.norm(vector)
    previous = 0.0
    value = 0.0
    for k in range(POWER_MAX_ITERATIONS):
        image = matrix @ vector
        norm = np.linalg.norm(image)
        if norm == 0.0:
            return 0.0
        value = float(vector @ image)
        vector = image / norm
        if k > 0 and abs(value - previous) <= POWER_TOLERANCE * abs(value):
            break
        previous = value
    return value


def estimate_lipschitz(q_sym, safety=SolverConfig.lipschitz_safety):
    """
    Lipschitz constant of the gradient 2Qx - b, with a safety margin.

    Returns:
        float: safety * 2 * lambda_max(q_sym), floored at machine epsilon.

    Raises:
        NonFiniteValueError: If q_sym has non-finite entries.
    """
    return max(safety * 2.0 * largest_eigenvalue(q_sym), np.finfo(float).eps)


class QuadraticCache:
    """
    Thread-safe cache of tau -> (Q_sym, L) for one split curvature.

    Reads take no lock; insertion is serialized so each tau is computed
    once.
    """

    def __init__(self, curvature, safety=SolverConfig.lipschitz_safety):
        self.curvature = curvature
        self.safety = safety
        self._entries = {}
        self._lock = threading.Lock()

    def get(self, tau):
        tau = float(tau)
        entry = self._entries.get(tau)
        if entry is not None:
            return entry
        with self._lock:
            entry = self._entries.get(tau)
            if entry is None:
                q_sym = self.curvature.at(tau)
                entry = (q_sym, estimate_lipschitz(q_sym, self.safety))
                self._entries[tau] = entry
                logger.debug("cached curvature for tau=%g (L=%g)", tau, entry[1])
        return entry

    def __len__(self):
        return len(self._entries)


def _column_objectives(x, qx, b, lam):
    return (
        np.einsum("ij,ij->j", x, qx)
        - np.einsum("ij,ij->j", b, x)
        + lam * np.abs(x).sum(axis=0)
    )


def _fista(apply_q, b, lam, lipschitz, cfg, x0):
    """FISTA over the columns of b with per-column restart and freezing.

    apply_q(v, columns) must return Q_j v_j for the listed columns.
    """
    n = b.shape[1]
    x_prev = x0.copy()
    y = x0.copy()
    t = np.ones(n)
    f_prev = _column_objectives(x_prev, apply_q(x_prev, np.arange(n)), b, lam)
    best_x = x0.copy()
    best_f = f_prev.copy()
    streak = np.zeros(n, dtype=int)
    iterations = np.zeros(n, dtype=int)
    converged = np.zeros(n, dtype=bool)
    active = np.arange(n)
    tiny = np.finfo(float).tiny

    for _ in range(cfg.max_iterations):
        if active.size == 0:
            break
        y_a = y[:, active]
        b_a = b[:, active]
        step = 1.0 / lipschitz[active]
        gradient = 2.0 * apply_q(y_a, active) - b_a
        x_a = soft_threshold(y_a - gradient * step, lam * step)
        f_a = _column_objectives(x_a, apply_q(x_a, active), b_a, lam)

        xp_a = x_prev[:, active]
        fp_a = f_prev[active]
        t_a = t[active]
        increased = f_a > fp_a
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_a * t_a))
        y_next = x_a + ((t_a - 1.0) / t_next) * (x_a - xp_a)
        # Restart: drop the step and the momentum.
        x_a[:, increased] = xp_a[:, increased]
        f_a[increased] = fp_a[increased]
        y_next[:, increased] = xp_a[:, increased]
        t_next[increased] = 1.0

        change = np.abs(fp_a - f_a) / np.maximum(
            np.maximum(np.abs(fp_a), np.abs(f_a)), tiny
        )
        stalled = (change < cfg.tolerance) & ~increased
        s_a = streak[active]
        s_a = np.where(stalled, s_a + 1, np.where(increased, s_a, 0))

        x_prev[:, active] = x_a
        f_prev[active] = f_a
        y[:, active] = y_next
        t[active] = t_next
        streak[active] = s_a
        iterations[active] += 1

        better = f_a <= best_f[active]
        improved = active[better]
        best_x[:, improved] = x_a[:, better]
        best_f[improved] = f_a[better]

        done = s_a >= CONVERGENCE_STREAK
        converged[active[done]] = True
        active = active[~done]

    return best_x, best_f, iterations, converged


def _initial_point(x0, shape):
    if x0 is None:
        return np.zeros(shape)
    x0 = np.array(x0, dtype=np.float64).reshape(shape)
    if not np.all(np.isfinite(x0)):
        raise NonFiniteValueError("Initial point")
    return x0


def fista_solve(q, cfg=None, x0=None):
    """
    Minimize a JointQuadratic with FISTA.

    Momentum follows t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2 with gradient
    step 1/L; whenever the objective increases the step is discarded and the
    momentum restarted. The best iterate seen is returned.

    Args:
        q (JointQuadratic): Problem to solve.
        cfg (SolverConfig, optional): Solver settings.
        x0 (np.ndarray, optional): Warm start. Defaults to zeros.

    Returns:
        SolverResult: converged is False when max_iterations ran out.

    Raises:
        NonFiniteValueError: If x0 or the curvature is not finite.
    """
    cfg = cfg or SolverConfig()
    x0 = _initial_point(x0, (q.dimension, 1))
    lipschitz = np.array([estimate_lipschitz(q.q_sym, cfg.lipschitz_safety)])

    def apply_q(v, _cols):
        return q.q_sym @ v

    x, objectives, iterations, converged = _fista(
        apply_q, q.b[:, None], q.lam, lipschitz, cfg, x0
    )
    return SolverResult(
        x[:, 0], float(objectives[0]) + q.c, int(iterations[0]), bool(converged[0])
    )


def fista_solve_batch(curvature, taus, b, lam, cfg=None, x0=None, cache=None):
    """
    Solve one problem per column of ``b`` sharing a split curvature.

    Column j minimizes x'(data + taus[j] * edge)x - b_j'x + lam ||x||_1.
    When every column uses the same tau the exact curvature and Lipschitz
    constant come from the cache; otherwise each column steps with the
    bound 2 * safety * (lambda_max(data) + tau_j * lambda_max(edge)).
    Converged columns are frozen, so a column's result does not depend on
    the rest of the batch.

    Args:
        curvature (SplitCurvature): Shared curvature parts.
        taus (float|np.ndarray): Per-column (or shared) tau values.
        b (np.ndarray): (d, n) linear terms.
        lam (float): Sparsity weight.
        cfg (SolverConfig, optional): Solver settings.
        x0 (np.ndarray, optional): (d, n) warm starts.
        cache (QuadraticCache, optional): Shared tau cache.

    Returns:
        BatchResult: Objectives exclude any constant term.
    """
    cfg = cfg or SolverConfig()
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 1:
        b = b[:, None]
    d, n = b.shape
    if d != curvature.dimension:
        raise DimensionMismatchError("linear terms", curvature.dimension, d)
    taus = np.broadcast_to(np.asarray(taus, dtype=np.float64), (n,)).copy()
    if np.any(taus < 0):
        raise InvalidParameterError("tau", taus.min(), "non-negative")
    if lam < 0:
        raise InvalidParameterError("lam", lam, "non-negative")
    x0 = _initial_point(x0, (d, n))
    if n == 0:
        empty = np.zeros(0)
        return BatchResult(x0, empty, empty.astype(int), empty.astype(bool))

    if np.all(taus == taus[0]):
        if cache is None:
            cache = QuadraticCache(curvature, cfg.lipschitz_safety)
        q_sym, lipschitz = cache.get(taus[0])
        steps = np.full(n, lipschitz)

        def apply_q(v, _cols):
            return q_sym @ v
    else:
        data_bound, edge_bound = spectral_bounds(curvature)
        steps = np.maximum(
            2.0 * cfg.lipschitz_safety * (data_bound + taus * edge_bound),
            np.finfo(float).eps,
        )

        def apply_q(v, cols):
            return curvature.data @ v + (curvature.edge @ v) * taus[cols]

    x, objectives, iterations, converged = _fista(apply_q, b, lam, steps, cfg, x0)
    return BatchResult(x, objectives, iterations, converged)


def spectral_bounds(curvature):
    """Largest eigenvalues of the data and edge parts, computed once."""
    if curvature.spectral_bounds is None:
        curvature.spectral_bounds = (
            largest_eigenvalue(curvature.data),
            largest_eigenvalue(curvature.edge),
        )
    return curvature.spectral_bounds


def brute_force_l1_qp(q):
    """
    Globally minimize a small JointQuadratic by sign-pattern enumeration.

    For every pattern in {-, 0, +}^dim the stationarity system
    2 Q_SS x_S = b_S - lam * s_S is solved on the support S; candidates
    whose signs agree with the pattern are kept and the best is returned.

    Raises:
        OracleSizeError: If the dimension exceeds 12.
    """
    dim = q.dimension
    if dim > ORACLE_MAX_DIMENSION:
        raise OracleSizeError(dim, ORACLE_MAX_DIMENSION)
    best_x = np.zeros(dim)
    best_value = q.objective(best_x)
    patterns = 0
    for signs in itertools.product((-1.0, 0.0, 1.0), repeat=dim):
        patterns += 1
        signs = np.array(signs)
        support = np.flatnonzero(signs)
        if support.size == 0:
            continue
        system = 2.0 * q.q_sym[np.ix_(support, support)]
        rhs = q.b[support] - q.lam * signs[support]
        solution = np.linalg.lstsq(system, rhs, rcond=None)[0]
        if np.any(solution * signs[support] < 0):
            continue
        candidate = np.zeros(dim)
        candidate[support] = solution
        value = q.objective(candidate)
        if value < best_value:
            best_x, best_value = candidate, value
    return SolverResult(best_x, best_value, patterns, True)


def lasso_solve(d, y, lam, cfg=None, x0=None):
    """
    Solve min_x ½||y - Dx||² + lam ||x||_1 with FISTA.

    Args:
        d (np.ndarray): (rows, atoms) dictionary.
        y (np.ndarray): Signal of length rows.
        lam (float): Sparsity weight.

    Returns:
        SolverResult: The objective includes the ½||y||² constant.
    """
    d = np.asarray(d, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if d.ndim != 2 or d.shape[0] != y.shape[0]:
        raise DimensionMismatchError("LASSO signal", d.shape[0], y.shape[0])
    q = JointQuadratic(symmetrize(0.5 * (d.T @ d)), d.T @ y, 0.5 * float(y @ y), lam)
    return fista_solve(q, cfg, x0)
