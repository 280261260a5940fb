"""
Module that scores a reconstruction against its ground truth with PSNR,
SSIM and the spatial CIELAB color difference.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.metrics import structural_similarity

from .errors import DimensionMismatchError, InvalidParameterError
from .images import RGB, rgb_to_ycbcr

logger = logging.getLogger(__name__)

PEAK = 255.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
DEFAULT_SAMPLES_PER_DEGREE = 23.0

_SRGB_TO_XYZ = np.array([
    [0.4124, 0.3576, 0.1805],
    [0.2126, 0.7152, 0.0722],
    [0.0193, 0.1192, 0.9505],
]) * 100.0
_D65_WHITE = np.array([95.047, 100.0, 108.883])
_XYZ_TO_OPPONENT = np.array([
    [0.279, 0.72, -0.107],
    [-0.449, 0.29, -0.077],
    [0.086, -0.59, 0.501],
])
_OPPONENT_TO_XYZ = np.linalg.inv(_XYZ_TO_OPPONENT)

# (weights, spreads in degrees of visual angle) per opponent plane.
_OPPONENT_FILTERS = (
    ((1.00327, 0.114416, -0.117686), (0.05, 0.225, 7.0)),
    ((0.616725, 0.383275), (0.0685, 0.826)),
    ((0.567885, 0.432115), (0.0920, 0.6451)),
)


@dataclass(frozen=True)
class MetricReport:
    """
    Quality of a test image against a reference.

    Attributes:
        psnr_db (float): PSNR in dB, inf for identical images.
        ssim (float): Luma SSIM in [-1, 1].
        scielab_total (float): S-CIELAB error summed over pixels.
    """

    psnr_db: float
    ssim: float
    scielab_total: float

    def machine_line(self):
        return (
            f"PSNR={self.psnr_db:.6f} SSIM={self.ssim:.6f} "
            f"SCIELAB={self.scielab_total:.6g}"
        )

    def text_block(self):
        return "\n".join([
            f"PSNR:     {self.psnr_db:.4f} dB",
            f"SSIM:     {self.ssim:.6f}",
            f"S-CIELAB: {self.scielab_total:.6g}",
        ])


def _check_same_shape(a, b):
    if a.planes.shape != b.planes.shape:
        raise DimensionMismatchError("compared images", a.planes.shape, b.planes.shape)


def psnr(a, b):
    """
    Peak signal-to-noise ratio with the MSE pooled over every channel.

    Returns:
        float: 10 log10(255² / MSE), or inf when the images are identical.

    Raises:
        DimensionMismatchError: If the images differ in shape.
    """
    _check_same_shape(a, b)
    mse = float(np.mean((a.planes - b.planes) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def _luma(img):
    # YCbCr and gray images already carry luma in the first plane.
    if img.space == RGB:
        return rgb_to_ycbcr(img).planes[0]
    return img.planes[0]


def ssim(a, b):
    """
    Structural similarity of the luma planes.

    An 11x11 Gaussian window (sigma 1.5) is used with K1 = 0.01,
    K2 = 0.03 and dynamic range 255; the map is averaged over windows that
    lie fully inside the image.

    Raises:
        DimensionMismatchError: If the images differ in shape.
        InvalidParameterError: If the image is smaller than the window.
    """
    _check_same_shape(a, b)
    window = 2 * SSIM_RADIUS + 1
    if min(a.height, a.width) < window:
        raise InvalidParameterError(
            "image size", (a.width, a.height), f"at least {window}x{window}"
        )
    x, y = _luma(a), _luma(b)
    return float(structural_similarity(
        x, y,
        data_range=PEAK,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
    ))


def _srgb_to_xyz(planes):
    c = planes / PEAK
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    return np.einsum("ij,jhw->ihw", _SRGB_TO_XYZ, linear)


def _xyz_to_lab(xyz):
    t = xyz / _D65_WHITE[:, None, None]
    delta = 6.0 / 29.0
    f = np.where(
        t > delta ** 3,
        np.cbrt(t),
        t / (3.0 * delta * delta) + 4.0 / 29.0,
    )
    return np.stack([
        116.0 * f[1] - 16.0,
        500.0 * (f[0] - f[1]),
        200.0 * (f[1] - f[2]),
    ])


def _spatial_filter(plane, weights, spreads, samples_per_degree):
    total = np.zeros_like(plane)
    for weight, spread in zip(weights, spreads):
        sigma = spread * samples_per_degree / math.sqrt(2.0)
        total += weight * ndimage.gaussian_filter(plane, sigma, mode="nearest")
    return total / sum(weights)


def scielab_lab(img, samples_per_degree=DEFAULT_SAMPLES_PER_DEGREE):
    """Spatially filtered CIELAB planes of an RGB image."""
    opponent = np.einsum("ij,jhw->ihw", _XYZ_TO_OPPONENT, _srgb_to_xyz(img.planes))
    filtered = np.stack([
        _spatial_filter(opponent[k], weights, spreads, samples_per_degree)
        for k, (weights, spreads) in enumerate(_OPPONENT_FILTERS)
    ])
    return _xyz_to_lab(np.einsum("ij,jhw->ihw", _OPPONENT_TO_XYZ, filtered))


def scielab(a, b, samples_per_degree=DEFAULT_SAMPLES_PER_DEGREE):
    """
    Spatial CIELAB color difference, summed over pixels.

    Both images go to an opponent space, each opponent plane is blurred by
    its sum-of-Gaussians contrast sensitivity filter (scaled by
    samples_per_degree) and the per-pixel ΔE*ab of the filtered images is
    summed.

    Raises:
        DimensionMismatchError: If the images differ in shape.
        InvalidParameterError: If samples_per_degree <= 0.
    """
    _check_same_shape(a, b)
    if not samples_per_degree > 0:
        raise InvalidParameterError(
            "samples_per_degree", samples_per_degree, "positive"
        )
    difference = scielab_lab(a, samples_per_degree) - scielab_lab(b, samples_per_degree)
    return float(np.sum(np.sqrt(np.sum(difference * difference, axis=0))))


def evaluate_images(reference, test, samples_per_degree=DEFAULT_SAMPLES_PER_DEGREE):
    """Score ``test`` against ``reference`` with all three measures."""
    report = MetricReport(
        psnr(reference, test),
        ssim(reference, test),
        scielab(reference, test, samples_per_degree),
    )
    logger.debug("evaluated %s", report.machine_line())
    return report
