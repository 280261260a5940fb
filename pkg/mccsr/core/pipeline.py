"""
Module that super-resolves color images with coupled dictionaries.

The working patch grid lives on the bicubic-upscaled image. Each patch is
coded jointly across its three channels with a cross-channel edge weight
tau chosen from the patch's color variance, then rebuilt as the bicubic
patch plus the sparse-coded HR detail and averaged over overlaps. Feature
columns are divided by their norm before coding and the detail is scaled
back by the same factor.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .dictlearn import TrainingSet, parallel_map
from .errors import (
    ColorSpaceError,
    DictionaryMismatchError,
    InsufficientPatchesError,
    InvalidParameterError,
    PatchGeometryError,
)
from .images import (
    RGB,
    YCBCR,
    PlanarImage,
    assemble_patches,
    bicubic_resize,
    extract_feature_maps,
    extract_patches,
    patches_at_origins,
    rgb_to_ycbcr,
)
from .operators import (
    CHANNELS,
    SplitCurvature,
    build_edge_operator,
    color_curvature,
    symmetrize,
)
from .solver import QuadraticCache, SolverConfig, fista_solve_batch

logger = logging.getLogger(__name__)

SUPPORTED_SCALES = (2, 3, 4)
ROW_CHUNK = 8
DENOMINATOR_GUARD = 1e-8
HISTOGRAM_BINS = 10
FEATURE_NORM_FLOOR = 1.0

_SCHARR = np.array([[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]]) / 16.0


@dataclass(frozen=True)
class TauMap:
    """
    Logistic map from color variance to cross-channel weight.

    Attributes:
        tau_max (float): Upper asymptote (>= 0).
        steepness (float): Slope k of the logistic (>= 0).
        midpoint (float): Color variance at which tau = tau_max / 2.
    """

    tau_max: float = 0.1
    steepness: float = 10.0
    midpoint: float = 0.5

    def __post_init__(self):
        if not self.tau_max >= 0:
            raise InvalidParameterError("tau_max", self.tau_max, "non-negative")
        if not self.steepness >= 0:
            raise InvalidParameterError("steepness", self.steepness, "non-negative")


@dataclass(frozen=True)
class SrConfig:
    """
    Reconstruction settings.

    Attributes:
        scale (int): Magnification, one of 2, 3, 4.
        patch_side (int): Patch side on the upscaled grid.
        overlap (int): Overlap between adjacent patches on the upscaled grid.
        lam (float): Sparsity weight; replaced by noise_sigma / 10 in noise
            mode.
        tau_map (TauMap): Color variance to tau mapping.
        beta_normalizer (float): Normalizer s of the color variance (> 0).
        noise_sigma (float): Noise standard deviation of the input, or None.
        noise_tau_scale (float): Factor applied to tau in noise mode.
        force_tau (float): Use this tau for every patch instead of the map.
        solver (SolverConfig): FISTA settings.
    """

    scale: int = 2
    patch_side: int = 5
    overlap: int = 4
    lam: float = 0.1
    tau_map: TauMap = field(default_factory=TauMap)
    beta_normalizer: float = 1.0
    noise_sigma: float = None
    noise_tau_scale: float = 0.5
    force_tau: float = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.scale not in SUPPORTED_SCALES:
            raise InvalidParameterError("scale", self.scale, "one of 2, 3, 4")
        if not isinstance(self.patch_side, int) or self.patch_side < 2:
            raise InvalidParameterError("patch_side", self.patch_side, "an integer >= 2")
        if not isinstance(self.overlap, int) or not 0 <= self.overlap < self.patch_side:
            raise InvalidParameterError(
                "overlap", self.overlap, f"an integer in [0, {self.patch_side})"
            )
        if not self.lam >= 0:
            raise InvalidParameterError("lam", self.lam, "non-negative")
        if not self.beta_normalizer > 0:
            raise InvalidParameterError(
                "beta_normalizer", self.beta_normalizer, "positive"
            )
        if self.noise_sigma is not None and not self.noise_sigma >= 0:
            raise InvalidParameterError("noise_sigma", self.noise_sigma, "non-negative")
        if not self.noise_tau_scale >= 0:
            raise InvalidParameterError(
                "noise_tau_scale", self.noise_tau_scale, "non-negative"
            )
        if self.force_tau is not None and not self.force_tau >= 0:
            raise InvalidParameterError("force_tau", self.force_tau, "non-negative")

    @property
    def noise_mode(self):
        return self.noise_sigma is not None and self.noise_sigma > 0

    @property
    def effective_lam(self):
        """Sparsity weight actually used: one tenth of sigma in noise mode."""
        return self.noise_sigma / 10.0 if self.noise_mode else self.lam

    @property
    def feature_count(self):
        return 4 * self.patch_side * self.patch_side


@dataclass
class SrReport:
    """
    Per-patch statistics of one reconstruction.

    Attributes:
        betas (np.ndarray): Color variance per grid patch, row-major.
        taus (np.ndarray): Cross-channel weight used per grid patch.
        beta_histogram (tuple[np.ndarray, np.ndarray]): Counts and bin edges.
        edge_discrepancy (float): Mean cross-channel edge discrepancy of the
            sparse-coded HR detail.
        converged (float): Fraction of patches whose solve converged.
    """

    betas: np.ndarray
    taus: np.ndarray
    beta_histogram: tuple
    edge_discrepancy: float
    converged: float

    @property
    def mean_tau(self):
        return float(np.mean(self.taus)) if self.taus.size else 0.0

    def summary_lines(self):
        """Human-readable histogram of beta plus the mean tau."""
        counts, edges = self.beta_histogram
        lines = ["beta histogram:"]
        for count, low, high in zip(counts, edges[:-1], edges[1:]):
            lines.append(f"  [{low:.3f}, {high:.3f}) {int(count)}")
        lines.append(f"mean tau: {self.mean_tau:.6g}")
        return lines


def _scharr_norms(planes):
    """l2 norms of the horizontal and vertical Scharr responses.

    planes has shape (n, channels, h, w); returns two (n, channels) arrays.
    """
    horizontal = _SCHARR[None, None]
    vertical = _SCHARR.T[None, None]
    h1 = ndimage.correlate(planes, horizontal, mode="nearest")
    h2 = ndimage.correlate(planes, vertical, mode="nearest")
    return (
        np.sqrt(np.sum(h1 * h1, axis=(2, 3))),
        np.sqrt(np.sum(h2 * h2, axis=(2, 3))),
    )


def _guarded_ratio(chroma, luma):
    ratio = np.zeros_like(luma)
    keep = luma >= DENOMINATOR_GUARD
    ratio[keep] = chroma[keep] / luma[keep]
    return ratio


def _betas_from_planes(planes, s):
    n1, n2 = _scharr_norms(planes)
    first = _guarded_ratio(n1[:, 1] + n1[:, 2], n1[:, 0])
    second = _guarded_ratio(n2[:, 1] + n2[:, 2], n2[:, 0])
    return (first + second) / (2.0 * s)


def color_variance_beta(patch_ycbcr, s=1.0):
    """
    Measure the chroma-to-luma gradient energy of one YCbCr patch.

    Args:
        patch_ycbcr (PlanarImage|np.ndarray): A patch tagged "YCbCr", or its
            raw (3, h, w) planes.
        s (float, optional): Normalizer (> 0).

    Returns:
        float: Non-negative color variance; a fraction whose luma
        denominator vanishes contributes 0.

    Raises:
        ColorSpaceError: If a PlanarImage is not tagged "YCbCr".
        InvalidParameterError: If s <= 0.
    """
    if not s > 0:
        raise InvalidParameterError("s", s, "positive")
    if isinstance(patch_ycbcr, PlanarImage):
        if patch_ycbcr.space != YCBCR:
            raise ColorSpaceError(YCBCR, patch_ycbcr.space)
        planes = patch_ycbcr.planes
    else:
        planes = np.asarray(patch_ycbcr, dtype=np.float64)
    return float(_betas_from_planes(planes[None], s)[0])


def color_variance_betas(patches, side, s=1.0):
    """Color variance of every column of a (3*side**2, n) YCbCr patch matrix."""
    if not s > 0:
        raise InvalidParameterError("s", s, "positive")
    n = patches.shape[1]
    # Columns are channel-stacked and column-major within each channel.
    planes = patches.reshape(CHANNELS, side, side, n).transpose(3, 0, 2, 1)
    return _betas_from_planes(planes, s)


def beta_to_tau(beta, tau_map=None):
    """
    Map color variance to a cross-channel weight with a logistic curve.

    Returns:
        float|np.ndarray: tau_max / (1 + exp(-k (beta - midpoint))), within
        [0, tau_max] and non-decreasing in beta.
    """
    tau_map = tau_map or TauMap()
    beta = np.asarray(beta, dtype=np.float64)
    exponent = np.clip(-tau_map.steepness * (beta - tau_map.midpoint), -700.0, 700.0)
    tau = tau_map.tau_max / (1.0 + np.exp(exponent))
    return float(tau) if tau.ndim == 0 else tau


def patch_taus(betas, cfg):
    """Per-patch tau for a reconstruction, honoring force_tau and noise mode."""
    if cfg.force_tau is not None:
        return np.full(np.shape(betas), float(cfg.force_tau))
    taus = np.asarray(beta_to_tau(betas, cfg.tau_map), dtype=np.float64)
    if cfg.noise_mode:
        taus = taus * cfg.noise_tau_scale
    return taus


def feature_planes(img):
    """Stack the four feature maps of each channel into a (12, h, w) array."""
    return np.concatenate([
        extract_feature_maps(img.planes[c]).maps for c in range(img.channels)
    ])


def _check_dictionaries(d_l, d_h, cfg):
    if d_h.rows != cfg.patch_side * cfg.patch_side:
        raise DictionaryMismatchError("HR rows", d_h.rows, cfg.patch_side ** 2)
    if d_l.rows != cfg.feature_count:
        raise DictionaryMismatchError("feature count", d_l.rows, cfg.feature_count)
    if d_l.atoms != d_h.atoms:
        raise DictionaryMismatchError("HR atoms", d_h.atoms, d_l.atoms)


def normalize_features(y_l):
    """
    Divide each feature column by its norm.

    Columns whose norm is below FEATURE_NORM_FLOOR (flat patches) are left
    as they are.

    Returns:
        tuple[np.ndarray, np.ndarray]: Normalized columns and the (n,)
        per-column factors that were divided out.
    """
    norms = np.linalg.norm(y_l, axis=0)
    factors = np.maximum(norms, FEATURE_NORM_FLOOR)
    return y_l / factors, factors


def _upscaled_patches(lr, cfg):
    if lr.space != RGB:
        raise ColorSpaceError(RGB, lr.space)
    bicubic = bicubic_resize(lr, cfg.scale)
    features, _ = extract_patches(feature_planes(bicubic), cfg.patch_side, cfg.overlap)
    base, grid = extract_patches(bicubic, cfg.patch_side, cfg.overlap)
    y_l, factors = normalize_features(features)
    return bicubic, grid, y_l, factors, base


def _row_chunks(n_rows):
    return [range(start, min(start + ROW_CHUNK, n_rows))
            for start in range(0, n_rows, ROW_CHUNK)]


def _solve_rows(curvature, taus, b, grid, lam, solver_cfg, cache, threads):
    """Solve every patch; each grid row warm-starts from the row above."""
    n_rows, n_cols = grid.shape
    dim = curvature.dimension

    def solve_chunk(rows):
        x = np.zeros((dim, len(rows) * n_cols))
        converged = np.zeros(len(rows) * n_cols, dtype=bool)
        previous = None
        for i, row in enumerate(rows):
            cols = slice(row * n_cols, (row + 1) * n_cols)
            result = fista_solve_batch(
                curvature, taus[cols], b[:, cols], lam, solver_cfg, previous, cache
            )
            x[:, i * n_cols:(i + 1) * n_cols] = result.x
            converged[i * n_cols:(i + 1) * n_cols] = result.converged
            previous = result.x
        return x, converged

    results = parallel_map(solve_chunk, _row_chunks(n_rows), threads)
    x = np.concatenate([r[0] for r in results], axis=1)
    converged = np.concatenate([r[1] for r in results])
    return x, converged


def edge_discrepancy(patches, side):
    """
    Mean over patches of the summed pairwise cross-channel edge differences.

    Args:
        patches (np.ndarray): (3*side**2, n) channel-stacked patch matrix.
        side (int): Patch side.

    Returns:
        float: mean_j sum_{c} ||S patch_c - S patch_(c+1 mod 3)||^2.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape[1] == 0:
        return 0.0
    s_op = build_edge_operator(side)
    p = side * side
    edges = [s_op.matrix @ patches[c * p:(c + 1) * p] for c in range(CHANNELS)]
    total = sum(
        np.sum((edges[c] - edges[(c + 1) % CHANNELS]) ** 2, axis=0)
        for c in range(CHANNELS)
    )
    return float(np.mean(total))


def super_resolve_with_report(lr, d_l, d_h, cfg=None, threads=1):
    """
    Super-resolve an RGB image and report per-patch statistics.

    Args:
        lr (PlanarImage): Low-resolution image tagged "RGB".
        d_l, d_h (BlockDiagonalDictionary): Trained dictionaries.
        cfg (SrConfig, optional): Settings.
        threads (int, optional): Worker threads over row chunks; the result
            does not depend on it.

    Returns:
        tuple[PlanarImage, SrReport]: Clamped RGB image of size
        scale * (width, height) and its report.

    Raises:
        ColorSpaceError: If lr is not tagged "RGB".
        DictionaryMismatchError: If the dictionaries do not fit cfg.
        PatchGeometryError: If the upscaled image is smaller than a patch.
    """
    cfg = cfg or SrConfig()
    _check_dictionaries(d_l, d_h, cfg)
    bicubic, grid, y_l, factors, base = _upscaled_patches(lr, cfg)
    ycbcr, _ = extract_patches(rgb_to_ycbcr(bicubic), cfg.patch_side, cfg.overlap)
    betas = color_variance_betas(ycbcr, cfg.patch_side, cfg.beta_normalizer)
    taus = patch_taus(betas, cfg)
    logger.debug("coding %d patches on %r", len(grid), grid)

    s_op = build_edge_operator(cfg.patch_side)
    curvature = color_curvature(d_l, d_h, s_op)
    cache = QuadraticCache(curvature, cfg.solver.lipschitz_safety)
    x, converged = _solve_rows(
        curvature, taus, d_l.transpose_apply(y_l), grid,
        cfg.effective_lam, cfg.solver, cache, threads,
    )
    detail = d_h.reconstruct(x) * factors
    image = assemble_patches(base + detail, grid, RGB).clamped()

    report = SrReport(
        betas=betas,
        taus=taus,
        beta_histogram=np.histogram(betas, bins=HISTOGRAM_BINS),
        edge_discrepancy=edge_discrepancy(detail, cfg.patch_side),
        converged=float(np.mean(converged)),
    )
    if report.converged < 1.0:
        logger.info("%.1f%% of patches hit the iteration cap",
                    100.0 * (1.0 - report.converged))
    return image, report


def super_resolve(lr, d_l, d_h, cfg=None, threads=1):
    """Super-resolve an RGB image; see super_resolve_with_report."""
    image, _ = super_resolve_with_report(lr, d_l, d_h, cfg, threads)
    return image


def super_resolve_separate(lr, d_l, d_h, cfg=None, threads=1):
    """
    Super-resolve each channel with its own LASSO, ignoring the other two.

    Every patch column of channel c solves
    min ½||y_lc - D_lc x||² + lam ||x||_1 independently.
    """
    cfg = cfg or SrConfig()
    _check_dictionaries(d_l, d_h, cfg)
    _, grid, y_l, factors, base = _upscaled_patches(lr, cfg)
    q, p, m = d_l.rows, d_h.rows, d_l.atoms
    zero_edge = np.zeros((m, m))
    detail = np.empty_like(base)
    for c in range(CHANNELS):
        block = d_l.blocks[c]
        curvature = SplitCurvature(symmetrize(0.5 * (block.T @ block)), zero_edge)
        cache = QuadraticCache(curvature, cfg.solver.lipschitz_safety)
        x_c, _ = _solve_rows(
            curvature, np.zeros(len(grid)), block.T @ y_l[c * q:(c + 1) * q], grid,
            cfg.effective_lam, cfg.solver, cache, threads,
        )
        detail[c * p:(c + 1) * p] = (d_h.blocks[c] @ x_c) * factors
    return assemble_patches(base + detail, grid, RGB).clamped()


def crop_to_multiple(img, scale):
    """Crop the bottom/right edge so both dimensions divide by scale."""
    height = img.height - img.height % scale
    width = img.width - img.width % scale
    if height == img.height and width == img.width:
        return img
    return PlanarImage(img.planes[:, :height, :width], img.space)


def degrade(hr, scale, patch_side=5):
    """
    Bicubic-downsample an image by 1 / scale.

    Dimensions not divisible by scale are cropped first, so that upscaling
    the result by scale restores the cropped dimensions exactly.

    Raises:
        InvalidParameterError: If scale < 1.
        PatchGeometryError: If the result is smaller than patch_side.
    """
    if not isinstance(scale, (int, np.integer)) or scale < 1:
        raise InvalidParameterError("scale", scale, "an integer >= 1")
    hr = crop_to_multiple(hr, scale)
    height, width = hr.height // scale, hr.width // scale
    if min(height, width) < patch_side:
        raise PatchGeometryError(patch_side, 0, width, height)
    return bicubic_resize(hr, 1.0 / scale)


def add_gaussian_noise(img, sigma, seed=0):
    """
    Add seeded i.i.d. Gaussian noise and clamp to [0, 255].

    Raises:
        InvalidParameterError: If sigma < 0.
    """
    if not sigma >= 0:
        raise InvalidParameterError("sigma", sigma, "non-negative")
    if sigma == 0:
        return PlanarImage(img.planes.copy(), img.space)
    rng = np.random.default_rng(seed)
    noisy = img.planes + rng.normal(0.0, sigma, size=img.planes.shape)
    return PlanarImage(noisy, img.space).clamped()


def _textured_origins(hr, side, threshold):
    windows = sliding_window_view(hr.planes, (side, side), axis=(1, 2))
    variance = windows.var(axis=(3, 4)).mean(axis=0)
    tops, lefts = np.nonzero(variance >= threshold)
    return list(zip(tops.tolist(), lefts.tolist()))


def _mean_free(patches, p):
    n = patches.shape[1]
    blocks = patches.reshape(CHANNELS, p, n)
    return (blocks - blocks.mean(axis=1, keepdims=True)).reshape(CHANNELS * p, n)


def build_training_set(hr_images, cfg, count, seed=0, variance_threshold=10.0):
    """
    Sample aligned LR-feature / HR-detail pairs from ground-truth images.

    Each image is degraded by cfg.scale and bicubic-upscaled back. Patches
    whose HR per-channel variance (averaged over channels) reaches the
    threshold qualify; ``count`` of them are drawn uniformly without
    replacement. The HR target of a pair is the mean-free HR patch minus the
    mean-free bicubic patch, per channel. Both sides of a pair are divided
    by the norm of its LR feature vector (see normalize_features).

    Args:
        hr_images (list[PlanarImage]): RGB ground-truth images.
        cfg (SrConfig): Scale and patch geometry.
        count (int): Number of pairs N (>= 1).
        seed (int, optional): Sampling seed.
        variance_threshold (float, optional): Minimum patch variance in
            8-bit units.

    Returns:
        TrainingSet: y_l of shape (3q, N) and y_h of shape (3p, N).

    Raises:
        InsufficientPatchesError: If fewer than ``count`` patches qualify.
    """
    if not isinstance(count, (int, np.integer)) or count < 1:
        raise InvalidParameterError("count", count, "an integer >= 1")
    side = cfg.patch_side
    prepared = []
    candidates = []
    for index, hr in enumerate(hr_images):
        if hr.space != RGB:
            raise ColorSpaceError(RGB, hr.space)
        hr = crop_to_multiple(hr, cfg.scale)
        bicubic = bicubic_resize(degrade(hr, cfg.scale, side), cfg.scale)
        prepared.append((hr, bicubic, feature_planes(bicubic)))
        origins = _textured_origins(hr, side, variance_threshold)
        candidates.extend((index, top, left) for top, left in origins)
    logger.info("%d textured patches qualify, sampling %d", len(candidates), count)
    if len(candidates) < count:
        raise InsufficientPatchesError(len(candidates), count)

    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(len(candidates), size=count, replace=False))
    p = side * side
    lr_parts, hr_parts = [], []
    chosen = [candidates[i] for i in picks]
    for index, (hr, bicubic, features) in enumerate(prepared):
        origins = [(top, left) for i, top, left in chosen if i == index]
        if not origins:
            continue
        y_l, factors = normalize_features(patches_at_origins(features, origins, side))
        target = _mean_free(patches_at_origins(hr.planes, origins, side), p)
        detail = _mean_free(patches_at_origins(bicubic.planes, origins, side), p)
        lr_parts.append(y_l)
        hr_parts.append((target - detail) / factors)
    return TrainingSet(np.concatenate(lr_parts, axis=1),
                       np.concatenate(hr_parts, axis=1), side)
