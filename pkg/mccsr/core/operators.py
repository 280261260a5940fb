"""
Module that builds the block-structured linear algebra of the joint color
sparse coding problem.

Channel-stacked vectors are ordered (r, g, b). Dictionaries are block
diagonal so that a stacked code ``x = [x_r; x_g; x_b]`` is reconstructed
channel by channel; the edge operator S is a patch Laplacian shared by all
channels, and the channel shift P maps (r, g, b) to (b, r, g).
"""

import numpy as np
from scipy import linalg, sparse

from .errors import DimensionMismatchError, InvalidParameterError

CHANNELS = 3
CHANNEL_NAMES = ("r", "g", "b")


class BlockDiagonalDictionary:
    """
    Three per-channel dictionaries arranged on a block diagonal.

    Attributes:
        blocks (list[np.ndarray]): Dictionaries D_r, D_g, D_b, each of shape
            (rows, atoms).
    """

    def __init__(self, blocks):
        """
        Initialize a BlockDiagonalDictionary.

        Args:
            blocks (sequence[array-like]): Exactly three matrices of equal
                shape.

        Raises:
            InvalidParameterError: If there are not three 2-D blocks.
            DimensionMismatchError: If the blocks differ in shape.
        """
        blocks = [np.array(block, dtype=np.float64) for block in blocks]
        if len(blocks) != CHANNELS or any(block.ndim != 2 for block in blocks):
            raise InvalidParameterError(
                "blocks", len(blocks), "three 2-D per-channel matrices"
            )
        for block in blocks[1:]:
            if block.shape != blocks[0].shape:
                raise DimensionMismatchError(
                    "dictionary blocks", blocks[0].shape, block.shape
                )
        self.blocks = blocks

    @classmethod
    def from_dense(cls, matrix, rows, atoms):
        """Pick the diagonal blocks out of a (3*rows, 3*atoms) matrix."""
        return cls([
            matrix[c * rows:(c + 1) * rows, c * atoms:(c + 1) * atoms]
            for c in range(CHANNELS)
        ])

    @property
    def rows(self):
        return self.blocks[0].shape[0]

    @property
    def atoms(self):
        return self.blocks[0].shape[1]

    def dense(self):
        """Return the (3*rows, 3*atoms) block-diagonal matrix."""
        return linalg.block_diag(*self.blocks)

    def reconstruct(self, codes):
        """
        Multiply stacked codes by the dictionary channel-wise.

        Args:
            codes (np.ndarray): (3*atoms,) vector or (3*atoms, n) matrix.

        Returns:
            np.ndarray: (3*rows,) vector or (3*rows, n) matrix.
        """
        codes = np.asarray(codes, dtype=np.float64)
        if codes.shape[0] != CHANNELS * self.atoms:
            raise DimensionMismatchError(
                "stacked codes", CHANNELS * self.atoms, codes.shape[0]
            )
        m = self.atoms
        return np.concatenate([
            self.blocks[c] @ codes[c * m:(c + 1) * m] for c in range(CHANNELS)
        ])

    def transpose_apply(self, signals):
        """Multiply stacked signals by the transposed dictionary."""
        signals = np.asarray(signals, dtype=np.float64)
        if signals.shape[0] != CHANNELS * self.rows:
            raise DimensionMismatchError(
                "stacked signals", CHANNELS * self.rows, signals.shape[0]
            )
        p = self.rows
        return np.concatenate([
            self.blocks[c].T @ signals[c * p:(c + 1) * p] for c in range(CHANNELS)
        ])

    def column_norms(self):
        """Return the (3, atoms) array of column l2 norms."""
        return np.stack([np.linalg.norm(block, axis=0) for block in self.blocks])

    def copy(self):
        return BlockDiagonalDictionary([block.copy() for block in self.blocks])

    def __repr__(self):
        return f"BlockDiagonalDictionary(3 x {self.rows}x{self.atoms})"

    def __eq__(self, other):
        return isinstance(other, BlockDiagonalDictionary) and all(
            np.array_equal(a, b) for a, b in zip(self.blocks, other.blocks)
        )


class EdgeOperator:
    """
    High-pass filter acting on a column-major vectorized square patch.

    Attributes:
        side (int): Patch side.
        matrix (scipy.sparse.csr_matrix): The (side**2, side**2) operator.
    """

    def __init__(self, side, matrix):
        self.side = side
        self.matrix = sparse.csr_matrix(matrix)
        # S'(I - P_s')S on stacked patches, built on first use.
        self.penalty = None

    @property
    def size(self):
        return self.side * self.side

    def stacked(self):
        """Return block_diag(S, S, S) acting on channel-stacked patches."""
        return sparse.block_diag([self.matrix] * CHANNELS, format="csr")

    def apply(self, patch_vector):
        return self.matrix @ patch_vector


class SplitCurvature:
    """
    The curvature of a joint quadratic split into a tau-independent data
    part and the edge part that tau multiplies.

    Attributes:
        data (np.ndarray): Symmetric (3m, 3m) data curvature.
        edge (np.ndarray): Symmetric PSD (3m, 3m) edge curvature, so that the
            full curvature is ``data + tau * edge``.
    """

    def __init__(self, data, edge):
        self.data = data
        self.edge = edge
        # (lambda_max(data), lambda_max(edge)), filled in by the solver.
        self.spectral_bounds = None

    @property
    def dimension(self):
        return self.data.shape[0]

    def at(self, tau):
        """Return the symmetric curvature matrix for one tau."""
        return self.data + tau * self.edge


class JointQuadratic:
    """
    Convex objective ``x'Qx - b'x + c + lam * ||x||_1``.

    Attributes:
        q_sym (np.ndarray): Symmetric PSD curvature matrix.
        b (np.ndarray): Linear term.
        c (float): Constant term.
        lam (float): Sparsity weight.
    """

    def __init__(self, q_sym, b, c=0.0, lam=0.0):
        q_sym = np.asarray(q_sym, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        if q_sym.ndim != 2 or q_sym.shape[0] != q_sym.shape[1]:
            raise InvalidParameterError("q_sym", q_sym.shape, "a square matrix")
        if b.shape[0] != q_sym.shape[0]:
            raise DimensionMismatchError("linear term", q_sym.shape[0], b.shape[0])
        if lam < 0:
            raise InvalidParameterError("lam", lam, "non-negative")
        self.q_sym = q_sym
        self.b = b
        self.c = float(c)
        self.lam = float(lam)

    @property
    def dimension(self):
        return self.b.shape[0]

    def smooth(self, x):
        """Smooth part x'Qx - b'x + c."""
        return float(x @ (self.q_sym @ x) - self.b @ x + self.c)

    def objective(self, x):
        return self.smooth(x) + self.lam * float(np.abs(x).sum())

    def gradient(self, x):
        """Gradient 2Qx - b of the smooth part."""
        return 2.0 * (self.q_sym @ x) - self.b


def symmetrize(matrix):
    return 0.5 * (matrix + matrix.T)


def build_edge_operator(patch_side):
    """
    Build the 3x3 Laplacian [0,-1,0; -1,4,-1; 0,-1,0] as a matrix acting on
    column-major vectorized patches, with a replicate boundary.

    Args:
        patch_side (int): Side of the square patch (>= 2).

    Returns:
        EdgeOperator: Operator whose rows all sum to zero.

    Raises:
        InvalidParameterError: If patch_side < 2.
    """
    if not isinstance(patch_side, (int, np.integer)) or patch_side < 2:
        raise InvalidParameterError("patch_side", patch_side, "an integer >= 2")
    n = int(patch_side)
    # 1-D second difference; the replicated neighbour cancels at the ends.
    second = sparse.diags(
        [-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1],
        format="lil",
    )
    second[0, 0] = 1.0
    second[n - 1, n - 1] = 1.0
    second = second.tocsr()
    eye = sparse.identity(n, format="csr")
    # Column-major vectorization: index = col * n + row.
    laplacian = sparse.kron(eye, second) + sparse.kron(second, eye)
    return EdgeOperator(n, laplacian.tocsr())


def apply_channel_shift(v, n, transpose=False):
    """
    Apply the block-cyclic channel shift P (or its transpose).

    P maps stacked blocks (r, g, b) to (b, r, g); P' maps them to (g, b, r).

    Args:
        v (np.ndarray): (3n,) vector or (3n, k) matrix.
        n (int): Block size.
        transpose (bool, optional): Apply P' instead of P.

    Raises:
        DimensionMismatchError: If the leading length is not 3n.
    """
    v = np.asarray(v)
    if v.shape[0] != CHANNELS * n or v.shape[0] % CHANNELS:
        raise DimensionMismatchError("shifted operand", CHANNELS * n, v.shape[0])
    return np.roll(v, -n if transpose else n, axis=0)


def _check_pair(d_l, d_h):
    if d_l.atoms != d_h.atoms:
        raise DimensionMismatchError("atoms per channel", d_l.atoms, d_h.atoms)


def edge_image(d_h, s_op):
    """Return the dense block-diagonal product S D_h of shape (3p, 3m)."""
    if s_op.size != d_h.rows:
        raise DimensionMismatchError("edge operator size", d_h.rows, s_op.size)
    return linalg.block_diag(*[s_op.matrix @ block for block in d_h.blocks])


def edge_penalty_matrix(s_op):
    """Return the sparse (3p, 3p) matrix S'(I - P_s')S."""
    if s_op.penalty is None:
        stacked = s_op.stacked()
        p = s_op.size
        eye = sparse.identity(CHANNELS * p, format="csr")
        shift_t = sparse.csr_matrix(
            apply_channel_shift(np.eye(CHANNELS * p), p, transpose=True)
        )
        s_op.penalty = (stacked.T @ (eye - shift_t) @ stacked).tocsr()
    return s_op.penalty


def edge_curvature(d_h, s_op):
    """
    Return the symmetrized edge curvature 2 D_h'S'(I - P_s')S D_h.

    The form equals the sum of the three pairwise squared edge differences,
    hence it is positive semidefinite.
    """
    g = edge_image(d_h, s_op)
    shifted = apply_channel_shift(g, s_op.size, transpose=True)
    return symmetrize(2.0 * (g.T @ g - g.T @ shifted))


def color_curvature(d_l, d_h, s_op):
    """Split curvature of the reconstruction problem: ½D_l'D_l + tau * edge."""
    _check_pair(d_l, d_h)
    data = linalg.block_diag(*[0.5 * (block.T @ block) for block in d_l.blocks])
    return SplitCurvature(symmetrize(data), edge_curvature(d_h, s_op))


def training_curvature(d_l, d_h, s_op, gamma):
    """Split curvature of the training problem (gamma-weighted LR/HR terms)."""
    _check_gamma(gamma)
    _check_pair(d_l, d_h)
    data = linalg.block_diag(*[
        0.5 * gamma * (dl.T @ dl) + 0.5 * (1.0 - gamma) * (dh.T @ dh)
        for dl, dh in zip(d_l.blocks, d_h.blocks)
    ])
    return SplitCurvature(symmetrize(data), edge_curvature(d_h, s_op))


def training_linear_terms(d_l, d_h, gamma, y_l, y_h):
    """Return gamma D_l'y_l + (1 - gamma) D_h'y_h (vector or column matrix)."""
    _check_gamma(gamma)
    return gamma * d_l.transpose_apply(y_l) + (1.0 - gamma) * d_h.transpose_apply(y_h)


def _check_gamma(gamma):
    if not 0.0 <= gamma <= 1.0:
        raise InvalidParameterError("gamma", gamma, "within [0, 1]")


def build_joint_quadratic(d_l, d_h, s_op, tau, lam, y_l):
    """
    Build the joint color sparse coding objective for one patch.

    Q = ½ D_l'D_l + 2 tau D_h'S'(I - P_s')S D_h, b = D_l'y_l,
    c = ½ y_l'y_l, so that ``objective(x)`` equals the per-channel
    reconstruction cost plus lam * ||x||_1 plus tau times the three pairwise
    cross-channel edge differences.

    Args:
        d_l, d_h (BlockDiagonalDictionary): LR and HR dictionaries.
        s_op (EdgeOperator): Edge operator of the HR patch.
        tau (float): Cross-channel weight (>= 0).
        lam (float): Sparsity weight (>= 0).
        y_l (np.ndarray): Stacked LR feature vector of length 3q.

    Returns:
        JointQuadratic: With symmetrized curvature.

    Raises:
        DimensionMismatchError: On incompatible dimensions.
        InvalidParameterError: If tau or lam is negative.
    """
    if tau < 0:
        raise InvalidParameterError("tau", tau, "non-negative")
    y_l = np.asarray(y_l, dtype=np.float64).reshape(-1)
    curvature = color_curvature(d_l, d_h, s_op)
    return JointQuadratic(
        curvature.at(tau), d_l.transpose_apply(y_l), 0.5 * float(y_l @ y_l), lam
    )


def build_training_quadratic(d_l, d_h, s_op, tau, gamma, lam, y_l, y_h):
    """
    Build the per-sample objective of the batch sparse coding step.

    A = (gamma/2) D_l'D_l + ((1-gamma)/2) D_h'D_h + 2 tau D_h'S'(I-P_s')S D_h
    and b = gamma D_l'y_l + (1-gamma) D_h'y_h; the constant makes the value
    equal the gamma-weighted reconstruction costs.

    Raises:
        InvalidParameterError: If gamma is outside [0, 1] or tau < 0.
    """
    if tau < 0:
        raise InvalidParameterError("tau", tau, "non-negative")
    y_l = np.asarray(y_l, dtype=np.float64).reshape(-1)
    y_h = np.asarray(y_h, dtype=np.float64).reshape(-1)
    curvature = training_curvature(d_l, d_h, s_op, gamma)
    b = training_linear_terms(d_l, d_h, gamma, y_l, y_h)
    c = 0.5 * gamma * float(y_l @ y_l) + 0.5 * (1.0 - gamma) * float(y_h @ y_h)
    return JointQuadratic(curvature.at(tau), b, c, lam)


def pairwise_edge_differences(d_h, s_op, x):
    """
    Return the three squared cross-channel edge differences of a code.

    ||S D_r x_r - S D_g x_g||², ||S D_g x_g - S D_b x_b||² and
    ||S D_b x_b - S D_r x_r||².
    """
    m = d_h.atoms
    edges = [
        s_op.apply(d_h.blocks[c] @ x[c * m:(c + 1) * m]) for c in range(CHANNELS)
    ]
    return [
        float(np.sum((edges[c] - edges[(c + 1) % CHANNELS]) ** 2))
        for c in range(CHANNELS)
    ]


def eval_color_cost(x, y_l, d_l, d_h, s_op, lam, tau):
    """
    Evaluate the joint color cost literally, channel by channel.

    Returns:
        float: sum_c ½||y_lc - D_lc x_c||² + lam ||x||_1 + tau * (sum of the
        three pairwise edge differences).
    """
    _check_pair(d_l, d_h)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y_l = np.asarray(y_l, dtype=np.float64).reshape(-1)
    m, q = d_l.atoms, d_l.rows
    if x.shape[0] != CHANNELS * m:
        raise DimensionMismatchError("stacked code", CHANNELS * m, x.shape[0])
    if y_l.shape[0] != CHANNELS * q:
        raise DimensionMismatchError("stacked LR features", CHANNELS * q, y_l.shape[0])
    if s_op.size != d_h.rows:
        raise DimensionMismatchError("edge operator size", d_h.rows, s_op.size)
    reconstruction = sum(
        0.5 * float(np.sum((y_l[c * q:(c + 1) * q] - d_l.blocks[c] @ x[c * m:(c + 1) * m]) ** 2))
        for c in range(CHANNELS)
    )
    edges = sum(pairwise_edge_differences(d_h, s_op, x))
    return reconstruction + lam * float(np.abs(x).sum()) + tau * edges
