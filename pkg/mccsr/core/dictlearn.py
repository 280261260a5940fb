"""
Module that learns coupled LR/HR color dictionaries.

Training alternates three steps until the outer iteration budget is spent:

1. Sparse-code every training pair against the current dictionaries
   (columns are independent and share one curvature matrix).
2. Update each channel's LR dictionary by column-wise block coordinate
   descent under unit-ball column constraints.
3. Update the HR dictionary with ADMM, splitting the bilinear cross-channel
   edge term with a slack matrix Z and a scaled dual U.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    InsufficientPatchesError,
    InvalidParameterError,
)
from .operators import (
    CHANNELS,
    BlockDiagonalDictionary,
    apply_channel_shift,
    build_edge_operator,
    edge_image,
    edge_penalty_matrix,
    training_curvature,
    training_linear_terms,
)
from .solver import (
    QuadraticCache,
    SolverConfig,
    fista_solve_batch,
    largest_eigenvalue,
)

logger = logging.getLogger(__name__)

CODING_CHUNK = 256


class TrainingSet:
    """
    Paired LR feature vectors and HR patches, one pair per column.

    Attributes:
        y_l (np.ndarray): (3q, N) channel-stacked LR feature vectors.
        y_h (np.ndarray): (3p, N) channel-stacked HR patch targets.
        patch_side (int): Side of the HR patch, p = patch_side**2.
    """

    def __init__(self, y_l, y_h, patch_side):
        """
        Initialize a TrainingSet.

        Raises:
            DimensionMismatchError: If column counts differ, rows are not
                channel-stacked, or y_h rows do not match patch_side.
        """
        y_l = np.asarray(y_l, dtype=np.float64)
        y_h = np.asarray(y_h, dtype=np.float64)
        if y_l.ndim != 2 or y_h.ndim != 2 or y_l.shape[1] != y_h.shape[1]:
            raise DimensionMismatchError("training columns", y_l.shape, y_h.shape)
        if y_l.shape[0] % CHANNELS:
            raise DimensionMismatchError(
                "stacked LR rows", "a multiple of 3", y_l.shape[0]
            )
        if y_h.shape[0] != CHANNELS * patch_side * patch_side:
            raise DimensionMismatchError(
                "stacked HR rows", CHANNELS * patch_side * patch_side, y_h.shape[0]
            )
        self.y_l = y_l
        self.y_h = y_h
        self.patch_side = int(patch_side)

    @property
    def n(self):
        return self.y_l.shape[1]

    @property
    def q(self):
        return self.y_l.shape[0] // CHANNELS

    @property
    def p(self):
        return self.y_h.shape[0] // CHANNELS

    def lr_channel(self, c):
        return self.y_l[c * self.q:(c + 1) * self.q]

    def hr_channel(self, c):
        return self.y_h[c * self.p:(c + 1) * self.p]

    def __repr__(self):
        return f"TrainingSet(N={self.n}, q={self.q}, p={self.p})"

    def __eq__(self, other):
        return (
            isinstance(other, TrainingSet)
            and self.patch_side == other.patch_side
            and np.array_equal(self.y_l, other.y_l)
            and np.array_equal(self.y_h, other.y_h)
        )


@dataclass
class SparseCodeMatrix:
    """Codes of a training set, one (3m,) column per sample."""

    x: np.ndarray
    objectives: np.ndarray
    converged: np.ndarray


@dataclass
class AdmmState:
    """
    Iterate of the HR dictionary ADMM.

    Attributes:
        d_h (BlockDiagonalDictionary): Current HR dictionary.
        z (np.ndarray): (3p, 3m) slack copy of D_h.
        u (np.ndarray): (3p, 3m) scaled dual variable.
        rho (float): Penalty parameter.
        t (int): Iterations run.
        converged (bool): Whether the stopping rule was met.
    """

    d_h: BlockDiagonalDictionary
    z: np.ndarray
    u: np.ndarray
    rho: float
    t: int = 0
    converged: bool = False

    @property
    def primal_residual(self):
        """Frobenius norm of D_h - Z."""
        return float(np.linalg.norm(self.d_h.dense() - self.z))


@dataclass(frozen=True)
class TrainConfig:
    """
    Dictionary learning settings.

    Attributes:
        atoms (int): Atoms per channel.
        lam (float): Sparsity weight.
        tau (float): Cross-channel edge weight used during training.
        gamma (float): LR/HR balance in [0, 1].
        rho (float): ADMM penalty, relative to the curvature scale of the
            HR dictionary step (see admm_penalty).
        outer_iterations (int): Alternations of the three steps.
        admm_tolerance (float): ADMM stopping tolerance.
        admm_max_iterations (int): ADMM iteration cap.
        seed (int): Seed of the dictionary initialization.
        solver (SolverConfig): Settings of the sparse coding step.
        column_sweeps (int): Sweep cap of the column descent.
        sweep_tolerance (float): Relative objective change that stops the
            column descent.
    """

    atoms: int = 512
    lam: float = 0.1
    tau: float = 0.01
    gamma: float = 0.5
    rho: float = 1.0
    outer_iterations: int = 20
    admm_tolerance: float = 1e-4
    admm_max_iterations: int = 100
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    column_sweeps: int = 50
    sweep_tolerance: float = 1e-8

    def __post_init__(self):
        for name in ("atoms", "outer_iterations", "admm_max_iterations", "column_sweeps"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise InvalidParameterError(name, value, "an integer >= 1")
        for name in ("rho", "admm_tolerance", "sweep_tolerance"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(name, getattr(self, name), "positive")
        for name in ("lam", "tau"):
            if not getattr(self, name) >= 0:
                raise InvalidParameterError(name, getattr(self, name), "non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidParameterError("gamma", self.gamma, "within [0, 1]")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidParameterError("seed", self.seed, "a non-negative integer")


@dataclass
class TrainResult:
    """
    Outcome of joint dictionary learning.

    Attributes:
        d_l, d_h (BlockDiagonalDictionary): Learned dictionaries.
        objectives (list[float]): Training objective after each outer
            iteration.
        trace (list[tuple[int, str, float]]): Objective after every
            sub-step, starting with the initialization.
        codes (SparseCodeMatrix): Codes of the last coding step.
        admm (AdmmState): Final state of the last HR update.
    """

    d_l: BlockDiagonalDictionary
    d_h: BlockDiagonalDictionary
    objectives: list
    trace: list
    codes: SparseCodeMatrix = None
    admm: AdmmState = None


def parallel_map(fn, items, threads):
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _check_dictionaries(ts, d_l, d_h):
    if d_l.rows != ts.q:
        raise DimensionMismatchError("LR dictionary rows", ts.q, d_l.rows)
    if d_h.rows != ts.p:
        raise DimensionMismatchError("HR dictionary rows", ts.p, d_h.rows)
    if d_l.atoms != d_h.atoms:
        raise DimensionMismatchError("atoms per channel", d_l.atoms, d_h.atoms)


def sparse_code_batch(ts, d_l, d_h, s_op, tau, gamma, lam, cfg=None, x0=None, threads=1):
    """
    Sparse-code every training pair against the current dictionaries.

    The curvature A is built once and shared; columns are solved in fixed
    chunks so the result does not depend on the thread count.

    Args:
        ts (TrainingSet): Training pairs.
        d_l, d_h (BlockDiagonalDictionary): Current dictionaries.
        s_op (EdgeOperator): HR edge operator.
        tau, gamma, lam (float): Problem weights.
        cfg (SolverConfig, optional): Solver settings.
        x0 (np.ndarray, optional): (3m, N) warm start.
        threads (int, optional): Worker threads.

    Returns:
        SparseCodeMatrix: Codes, per-column objectives (including the
        constant term) and converged flags.
    """
    _check_dictionaries(ts, d_l, d_h)
    cfg = cfg or SolverConfig()
    curvature = training_curvature(d_l, d_h, s_op, gamma)
    b = training_linear_terms(d_l, d_h, gamma, ts.y_l, ts.y_h)
    if x0 is None:
        x0 = np.zeros_like(b)
    cache = QuadraticCache(curvature, cfg.lipschitz_safety)
    cache.get(tau)
    starts = list(range(0, ts.n, CODING_CHUNK))

    def solve(start):
        cols = slice(start, start + CODING_CHUNK)
        return fista_solve_batch(curvature, tau, b[:, cols], lam, cfg, x0[:, cols], cache)

    results = parallel_map(solve, starts, threads)
    if results:
        x = np.concatenate([r.x for r in results], axis=1)
        objectives = np.concatenate([r.objectives for r in results])
        converged = np.concatenate([r.converged for r in results])
    else:
        x, objectives, converged = b.copy(), np.zeros(0), np.zeros(0, dtype=bool)
    objectives = objectives + 0.5 * gamma * np.sum(ts.y_l ** 2, axis=0) \
        + 0.5 * (1.0 - gamma) * np.sum(ts.y_h ** 2, axis=0)
    if not np.all(converged):
        logger.debug("%d of %d codes hit the iteration cap",
                     int(np.sum(~converged)), ts.n)
    return SparseCodeMatrix(x, objectives, converged)


def _project_column(column):
    norm = np.linalg.norm(column)
    return column / norm if norm > 1.0 else column


def column_descent(d, gram, cross, max_sweeps=50, tolerance=1e-8):
    """
    Minimize Tr(D C D') - 2 Tr(B D') over ||d_k|| <= 1 column by column.

    Each column takes its exact minimizer with the others fixed,
    d_k = (b_k - sum_{j != k} d_j C[j, k]) / C[k, k], then is projected on
    the unit ball. Columns with C[k, k] = 0 are left unchanged.

    Args:
        d (np.ndarray): (rows, K) starting dictionary.
        gram (np.ndarray): (K, K) symmetric PSD matrix C.
        cross (np.ndarray): (rows, K) matrix B.

    Returns:
        np.ndarray: Updated dictionary; the objective never increases.
    """
    d = np.array(d, dtype=np.float64)
    diagonal = np.diag(gram)
    objective = _descent_objective(d, gram, cross)
    for _ in range(max_sweeps):
        for k in range(d.shape[1]):
            if diagonal[k] <= 0:
                continue
            residual = cross[:, k] - d @ gram[:, k]
            d[:, k] = _project_column(d[:, k] + residual / diagonal[k])
        updated = _descent_objective(d, gram, cross)
        settled = abs(objective - updated) <= tolerance * max(1.0, abs(objective))
        objective = updated
        if settled:
            break
    return d


def _descent_objective(d, gram, cross):
    return float(np.sum((d @ gram) * d) - 2.0 * np.sum(cross * d))


def learn_lr_dictionary(y_lc, x_c, init=None, max_sweeps=50, tolerance=1e-8):
    """
    Update one channel's LR dictionary with the codes fixed.

    Minimizes ||Y_lc - D X_c||_F^2 over unit-ball columns with
    C = X_c X_c' and B = Y_lc X_c'. Atoms whose code row is all zero keep
    their current value.

    Args:
        y_lc (np.ndarray): (q, N) LR features of one channel.
        x_c (np.ndarray): (K, N) codes of that channel.
        init (np.ndarray, optional): (q, K) starting point. Defaults to
            zeros.

    Returns:
        np.ndarray: (q, K) dictionary.
    """
    y_lc = np.asarray(y_lc, dtype=np.float64)
    x_c = np.asarray(x_c, dtype=np.float64)
    if y_lc.shape[1] != x_c.shape[1]:
        raise DimensionMismatchError("LR samples", y_lc.shape[1], x_c.shape[1])
    if init is None:
        init = np.zeros((y_lc.shape[0], x_c.shape[0]))
    return column_descent(init, x_c @ x_c.T, y_lc @ x_c.T, max_sweeps, tolerance)


def compute_ef(x, y_h, z, u, rho, gamma, tau, s_op, n=None, gram=None):
    """
    Assemble E and F of the ADMM dictionary step.

    F = ((1-gamma)/2N) XX' + (rho/2) I
    E = ((1-gamma)/2N) Y_h X' + (rho/2)(Z - U) - (tau/N) S'(I - P_s')S Z XX'

    Returns:
        tuple[np.ndarray, np.ndarray]: E of shape (3p, 3m), F of shape
        (3m, 3m).
    """
    n = x.shape[1] if n is None else n
    if y_h.shape[1] != x.shape[1]:
        raise DimensionMismatchError("HR samples", x.shape[1], y_h.shape[1])
    if z.shape != (y_h.shape[0], x.shape[0]) or u.shape != z.shape:
        raise DimensionMismatchError("slack/dual", (y_h.shape[0], x.shape[0]), z.shape)
    gram = x @ x.T if gram is None else gram
    weight = (1.0 - gamma) / (2.0 * n)
    f = weight * gram + 0.5 * rho * np.eye(gram.shape[0])
    e = weight * (y_h @ x.T) + 0.5 * rho * (z - u)
    if tau:
        e -= (tau / n) * (edge_penalty_matrix(s_op) @ (z @ gram))
    return e, f


def admm_step1_update_dh(e, f, d_h, max_sweeps=50, tolerance=1e-8):
    """
    Solve the constrained D_h step channel by channel.

    Only the diagonal blocks E_cc (p x m) and F_cc (m x m) enter, because
    the block-diagonal D_h splits both trace terms by channel.

    Returns:
        BlockDiagonalDictionary: Updated HR dictionary.
    """
    p, m = d_h.rows, d_h.atoms
    blocks = []
    for c in range(CHANNELS):
        f_cc = f[c * m:(c + 1) * m, c * m:(c + 1) * m]
        e_cc = e[c * p:(c + 1) * p, c * m:(c + 1) * m]
        blocks.append(column_descent(d_h.blocks[c], f_cc, e_cc, max_sweeps, tolerance))
    return BlockDiagonalDictionary(blocks)


def admm_step2_update_z(d_h, u, x, s_op, tau, rho, n=None, gram=None):
    """Closed-form slack update Z = D_h + U - (2tau/(N rho)) S'(I - P_s)S D_h XX'."""
    n = x.shape[1] if n is None else n
    dense = d_h.dense()
    if u.shape != dense.shape:
        raise DimensionMismatchError("dual", dense.shape, u.shape)
    z = dense + u
    if tau:
        gram = x @ x.T if gram is None else gram
        penalty_t = edge_penalty_matrix(s_op).T
        z -= (2.0 * tau / (n * rho)) * (penalty_t @ (dense @ gram))
    return z


def admm_step3_update_u(u, d_h, z):
    """Scaled dual ascent U + D_h - Z."""
    dense = d_h.dense() if isinstance(d_h, BlockDiagonalDictionary) else d_h
    return u + dense - z


def admm_penalty(gram, n, s_op, cfg):
    """
    Absolute ADMM penalty: cfg.rho times twice the curvature scale
    ((1-gamma)/2N + 2 (tau/N) ||S'(I - P_s')S||_2) ||XX'||_2 of the D_h step.

    Falls back to cfg.rho when the codes are all zero.
    """
    energy = largest_eigenvalue(gram) if gram.size else 0.0
    coupling = 0.0
    if cfg.tau:
        coupling = float(np.linalg.norm(edge_penalty_matrix(s_op).toarray(), 2))
    scale = 2.0 * ((1.0 - cfg.gamma) / (2.0 * n) + 2.0 * cfg.tau * coupling / n) * energy
    return cfg.rho * scale if scale > 0.0 else cfg.rho


def learn_hr_dictionary(ts, x, s_op, cfg, init_dh):
    """
    Learn the HR dictionary with the codes fixed, by ADMM.

    Iterates the D_h, Z and U updates until both ||D_h^{t+1} - D_h^t||_F
    and ||D_h - Z||_F fall below cfg.admm_tolerance, or the iteration cap
    is reached.

    Args:
        ts (TrainingSet): Training pairs (N > 0).
        x (np.ndarray): (3m, N) fixed codes.
        s_op (EdgeOperator): HR edge operator.
        cfg (TrainConfig): Weights and ADMM settings.
        init_dh (BlockDiagonalDictionary): Starting dictionary.

    Returns:
        AdmmState: Final iterate; ``converged`` is False when the cap was
        hit.

    Raises:
        InsufficientPatchesError: If the training set is empty.
    """
    if ts.n == 0:
        raise InsufficientPatchesError(0, 1)
    gram = x @ x.T
    rho = admm_penalty(gram, ts.n, s_op, cfg)
    d_h = init_dh.copy()
    state = AdmmState(d_h, d_h.dense(), np.zeros((CHANNELS * ts.p, x.shape[0])), rho)
    for t in range(1, cfg.admm_max_iterations + 1):
        e, f = compute_ef(
            x, ts.y_h, state.z, state.u, rho, cfg.gamma, cfg.tau, s_op, ts.n, gram
        )
        updated = admm_step1_update_dh(
            e, f, state.d_h, cfg.column_sweeps, cfg.sweep_tolerance
        )
        z = admm_step2_update_z(updated, state.u, x, s_op, cfg.tau, rho, ts.n, gram)
        u = admm_step3_update_u(state.u, updated, z)
        change = float(np.linalg.norm(updated.dense() - state.d_h.dense()))
        state = AdmmState(updated, z, u, rho, t)
        if change < cfg.admm_tolerance and state.primal_residual < cfg.admm_tolerance:
            state.converged = True
            break
    logger.debug(
        "ADMM stopped after %d iterations (residual %.3g, converged=%s)",
        state.t, state.primal_residual, state.converged,
    )
    return state


def training_objective(ts, x, d_l, d_h, s_op, tau, gamma, lam):
    """
    Evaluate the joint training objective

    (gamma/2N)||Y_l - D_l X||² + ((1-gamma)/2N)||Y_h - D_h X||²
    + (lam/N)||X||_1 + (2tau/N) Tr(X'D_h'S'(I - P_s')S D_h X).
    """
    n = ts.n
    lr = np.sum((ts.y_l - d_l.reconstruct(x)) ** 2)
    hr = np.sum((ts.y_h - d_h.reconstruct(x)) ** 2)
    edges = edge_image(d_h, s_op) @ x
    shifted = apply_channel_shift(edges, ts.p, transpose=True)
    penalty = np.sum(edges * edges) - np.sum(edges * shifted)
    return float(
        gamma / (2.0 * n) * lr
        + (1.0 - gamma) / (2.0 * n) * hr
        + lam / n * np.abs(x).sum()
        + 2.0 * tau / n * penalty
    )


def _normalized_columns(matrix):
    norms = np.linalg.norm(matrix, axis=0)
    return matrix / np.where(norms > 0, norms, 1.0)


def initial_dictionaries(ts, atoms, seed):
    """Pick ``atoms`` random training pairs and normalize them per channel."""
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(ts.n, size=atoms, replace=False))
    d_l = BlockDiagonalDictionary([
        _normalized_columns(ts.lr_channel(c)[:, picks]) for c in range(CHANNELS)
    ])
    d_h = BlockDiagonalDictionary([
        _normalized_columns(ts.hr_channel(c)[:, picks]) for c in range(CHANNELS)
    ])
    return d_l, d_h


def replace_unused_atoms(ts, x, d_l, d_h, gamma):
    """
    Re-seed atoms whose code row is all zero with the worst reconstructed
    samples of their channel.

    Unused atoms do not contribute to any reconstruction, so the training
    objective is unchanged.

    Returns:
        int: Number of atoms replaced.
    """
    m = d_l.atoms
    replaced = 0
    for c in range(CHANNELS):
        x_c = x[c * m:(c + 1) * m]
        unused = np.flatnonzero(~np.any(x_c, axis=1))
        if unused.size == 0:
            continue
        y_lc, y_hc = ts.lr_channel(c), ts.hr_channel(c)
        errors = gamma * np.sum((y_lc - d_l.blocks[c] @ x_c) ** 2, axis=0) \
            + (1.0 - gamma) * np.sum((y_hc - d_h.blocks[c] @ x_c) ** 2, axis=0)
        worst = np.argsort(-errors, kind="stable")[:unused.size]
        for atom, sample in zip(unused, worst):
            d_l.blocks[c][:, atom] = _normalized_columns(y_lc[:, [sample]])[:, 0]
            d_h.blocks[c][:, atom] = _normalized_columns(y_hc[:, [sample]])[:, 0]
            replaced += 1
    return replaced


def joint_dictionary_learning(ts, cfg, threads=1):
    """
    Learn coupled color dictionaries by alternating minimization.

    Each outer iteration (1) sparse-codes all pairs warm-started from the
    previous codes, (2) updates the LR dictionary per channel, (3) updates
    the HR dictionary by ADMM, then re-seeds unused atoms. Coding keeps the
    best iterate per column and an HR update that raises the objective is
    dropped, so the trace does not increase.

    Args:
        ts (TrainingSet): Training pairs with N >= cfg.atoms.
        cfg (TrainConfig): Settings.
        threads (int, optional): Worker threads for coding and the
            per-channel LR updates.

    Returns:
        TrainResult: Dictionaries with column norms <= 1 and the objective
        trace.

    Raises:
        InsufficientPatchesError: If N < cfg.atoms.

    Side Effects:
        Logs one INFO record ``iteration=<n> objective=<value>`` per outer
        iteration.
    """
    if ts.n < cfg.atoms:
        raise InsufficientPatchesError(ts.n, cfg.atoms)
    s_op = build_edge_operator(ts.patch_side)
    d_l, d_h = initial_dictionaries(ts, cfg.atoms, cfg.seed)
    m = cfg.atoms
    x = np.zeros((CHANNELS * m, ts.n))

    def objective():
        return training_objective(ts, x, d_l, d_h, s_op, cfg.tau, cfg.gamma, cfg.lam)

    trace = [(0, "init", objective())]
    objectives = []
    codes = None
    state = None
    for iteration in range(1, cfg.outer_iterations + 1):
        codes = sparse_code_batch(
            ts, d_l, d_h, s_op, cfg.tau, cfg.gamma, cfg.lam, cfg.solver, x, threads
        )
        x = codes.x
        trace.append((iteration, "codes", objective()))

        def update_lr(c):
            return learn_lr_dictionary(
                ts.lr_channel(c), x[c * m:(c + 1) * m], d_l.blocks[c],
                cfg.column_sweeps, cfg.sweep_tolerance,
            )

        d_l = BlockDiagonalDictionary(parallel_map(update_lr, list(range(CHANNELS)), threads))
        trace.append((iteration, "lr_dictionary", objective()))

        before = trace[-1][2]
        state = learn_hr_dictionary(ts, x, s_op, cfg, d_h)
        previous_dh, d_h = d_h, state.d_h
        after = objective()
        if after > before:
            # ADMM stops on residuals, not on the objective.
            logger.debug(
                "HR update raised the objective (%.6g > %.6g), kept previous", after, before
            )
            d_h, after = previous_dh, before
        trace.append((iteration, "hr_dictionary", after))

        replaced = replace_unused_atoms(ts, x, d_l, d_h, cfg.gamma)
        if replaced:
            logger.debug("re-seeded %d unused atoms", replaced)
        value = objective()
        objectives.append(value)
        logger.info("iteration=%d objective=%.12g", iteration, value)
    return TrainResult(d_l, d_h, objectives, trace, codes, state)
