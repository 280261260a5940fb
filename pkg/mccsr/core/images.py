"""
Module that handles image containers and the pixel-level plumbing of the
super-resolution pipeline.

Provides the PlanarImage container, full-range BT.601 color conversion,
separable bicubic resampling, gradient feature maps, and overlapping patch
extraction/assembly on a PatchGrid.
"""

import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image
from scipy import ndimage, sparse

from .errors import (
    ColorSpaceError,
    DimensionMismatchError,
    InvalidParameterError,
    NonFiniteValueError,
    PatchGeometryError,
)

logger = logging.getLogger(__name__)

RGB = "RGB"
YCBCR = "YCbCr"
GRAY = "GRAY"
COLOR_SPACES = (RGB, YCBCR, GRAY)

# Full-range BT.601, samples in [0, 255].
_RGB_TO_YCBCR = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ],
    dtype=np.float64,
)
_YCBCR_TO_RGB = np.linalg.inv(_RGB_TO_YCBCR)
_CHROMA_OFFSET = np.array([0.0, 128.0, 128.0])

CATMULL_ROM_A = -0.5

# First and second order gradient kernels, correlated along one axis.
_FIRST_ORDER = np.array([-1.0, 0.0, 1.0])
_SECOND_ORDER = np.array([1.0, 0.0, -2.0, 0.0, 1.0])
FEATURE_MAPS_PER_CHANNEL = 4


class PlanarImage:
    """
    A multi-channel raster of floating-point samples with a color-space tag.

    Attributes:
        planes (np.ndarray): Samples of shape (channels, height, width).
        space (str): One of "RGB", "YCbCr" or "GRAY".
    """

    def __init__(self, planes, space=RGB):
        """
        Initialize a PlanarImage.

        Args:
            planes (array-like): (channels, height, width) samples, or a
                single (height, width) plane for grayscale images.
            space (str, optional): Color-space tag. Defaults to "RGB".

        Raises:
            InvalidParameterError: If the tag is unknown, the channel count
                does not fit the tag, or the image is empty.
            NonFiniteValueError: If any sample is NaN or infinite.
        """
        planes = np.asarray(planes, dtype=np.float64)
        if planes.ndim == 2:
            planes = planes[np.newaxis]
        if space not in COLOR_SPACES:
            raise InvalidParameterError("space", space, f"one of {COLOR_SPACES}")
        if planes.ndim != 3 or planes.shape[1] == 0 or planes.shape[2] == 0:
            raise InvalidParameterError(
                "planes", planes.shape, "a non-empty (channels, height, width) array"
            )
        expected_channels = 1 if space == GRAY else 3
        if planes.shape[0] != expected_channels:
            raise InvalidParameterError(
                "channels", planes.shape[0], f"{expected_channels} for {space}"
            )
        if not np.all(np.isfinite(planes)):
            raise NonFiniteValueError("Image planes")
        self.planes = planes
        self.space = space

    @classmethod
    def from_array(cls, array, space=RGB):
        """Build an image from an interleaved (height, width, channels) array."""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 2:
            return cls(array, GRAY if space == GRAY else space)
        return cls(np.moveaxis(array, -1, 0), space)

    @property
    def channels(self):
        return self.planes.shape[0]

    @property
    def height(self):
        return self.planes.shape[1]

    @property
    def width(self):
        return self.planes.shape[2]

    def to_array(self):
        """Return the samples interleaved as (height, width, channels)."""
        return np.moveaxis(self.planes, 0, -1).copy()

    def clamped(self):
        """Return a copy with samples clamped to [0, 255]."""
        return PlanarImage(np.clip(self.planes, 0.0, 255.0), self.space)

    def __repr__(self):
        return f"PlanarImage({self.space}, {self.width}x{self.height})"

    def __eq__(self, other):
        return (
            isinstance(other, PlanarImage)
            and self.space == other.space
            and self.planes.shape == other.planes.shape
            and np.array_equal(self.planes, other.planes)
        )


class FeatureStack:
    """
    Gradient feature maps of one channel plane.

    Attributes:
        maps (np.ndarray): Signed maps of shape (4, height, width), ordered
            first-order horizontal, first-order vertical, second-order
            horizontal, second-order vertical.
    """

    def __init__(self, maps):
        maps = np.asarray(maps, dtype=np.float64)
        if maps.ndim != 3 or maps.shape[0] != FEATURE_MAPS_PER_CHANNEL:
            raise InvalidParameterError(
                "maps", maps.shape, "a (4, height, width) array"
            )
        self.maps = maps

    def __len__(self):
        return self.maps.shape[0]


class PatchGrid:
    """
    Geometry of square, overlapping patches laid over an image.

    Patch origins run with stride ``side - overlap``; the last row and
    column of patches are snapped to the image boundary so that every pixel
    is covered.

    Attributes:
        side (int): Patch side in pixels.
        overlap (int): Overlap between adjacent patches in pixels.
        rows (np.ndarray): Top offsets of the patch rows.
        cols (np.ndarray): Left offsets of the patch columns.
        width (int), height (int): Source image dimensions.
        channels (int): Channel count of the source image.
    """

    def __init__(self, side, overlap, width, height, channels=3):
        if (
            not isinstance(side, (int, np.integer))
            or not isinstance(overlap, (int, np.integer))
            or side < 1
            or overlap < 0
            or overlap >= side
            or side > min(width, height)
        ):
            raise PatchGeometryError(side, overlap, width, height)
        self.side = int(side)
        self.overlap = int(overlap)
        self.width = int(width)
        self.height = int(height)
        self.channels = int(channels)
        self.rows = _grid_offsets(self.height, self.side, self.stride)
        self.cols = _grid_offsets(self.width, self.side, self.stride)

    @property
    def stride(self):
        return self.side - self.overlap

    @property
    def shape(self):
        """Patch count along (rows, columns)."""
        return len(self.rows), len(self.cols)

    def __len__(self):
        return len(self.rows) * len(self.cols)

    def origins(self):
        """Return the (top, left) offset of every patch in row-major order."""
        return [(int(r), int(c)) for r in self.rows for c in self.cols]

    def __repr__(self):
        return (
            f"PatchGrid(side={self.side}, overlap={self.overlap}, "
            f"{self.width}x{self.height}, {len(self)} patches)"
        )


def _grid_offsets(length, side, stride):
    offsets = list(range(0, length - side + 1, stride))
    if offsets[-1] != length - side:
        offsets.append(length - side)
    return np.array(offsets, dtype=np.intp)


def rgb_to_ycbcr(img):
    """
    Convert an RGB image to full-range BT.601 YCbCr.

    Args:
        img (PlanarImage): Image tagged "RGB".

    Returns:
        PlanarImage: Unrounded, unclamped YCbCr planes.

    Raises:
        ColorSpaceError: If the image is not tagged "RGB".
    """
    if img.space != RGB:
        raise ColorSpaceError(RGB, img.space)
    converted = np.einsum("ij,jhw->ihw", _RGB_TO_YCBCR, img.planes)
    converted += _CHROMA_OFFSET[:, None, None]
    return PlanarImage(converted, YCBCR)


def ycbcr_to_rgb(img):
    """
    Convert a full-range BT.601 YCbCr image back to RGB.

    The conversion is the exact matrix inverse of rgb_to_ycbcr; no clamping
    is applied.

    Raises:
        ColorSpaceError: If the image is not tagged "YCbCr".
    """
    if img.space != YCBCR:
        raise ColorSpaceError(YCBCR, img.space)
    centered = img.planes - _CHROMA_OFFSET[:, None, None]
    return PlanarImage(np.einsum("ij,jhw->ihw", _YCBCR_TO_RGB, centered), RGB)


def cubic_kernel(x, a=CATMULL_ROM_A):
    """Evaluate the cubic convolution kernel with parameter ``a``."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    far = a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def _resampling_matrix(n_in, n_out, scale):
    """Sparse (n_out, n_in) matrix of normalized cubic weights.

    Downscaling stretches the kernel by 1/scale so it also low-passes.
    """
    stretch = min(1.0, scale)
    support = 2.0 / stretch
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    taps = int(np.ceil(2.0 * support)) + 2
    first = np.floor(centers - support).astype(np.intp)
    positions = first[:, None] + np.arange(taps)[None, :]
    weights = cubic_kernel((centers[:, None] - positions) * stretch) * stretch
    weights /= weights.sum(axis=1, keepdims=True)
    indices = np.clip(positions, 0, n_in - 1)
    rows = np.repeat(np.arange(n_out), taps)
    matrix = sparse.csr_matrix(
        (weights.ravel(), (rows, indices.ravel())), shape=(n_out, n_in)
    )
    matrix.sum_duplicates()
    return matrix


def bicubic_resize(img, scale):
    """
    Resample an image by separable cubic convolution.

    Args:
        img (PlanarImage): Image to resample.
        scale (float|Fraction): Positive scale factor; output dimensions are
            round(scale * input dimensions).

    Returns:
        PlanarImage: Resampled image with the same color-space tag.

    Raises:
        InvalidParameterError: If the scale is not positive or the output
            would have a zero dimension.
    """
    scale = float(scale)
    if not scale > 0:
        raise InvalidParameterError("scale", scale, "positive")
    out_h = int(round(scale * img.height))
    out_w = int(round(scale * img.width))
    if out_h < 1 or out_w < 1:
        raise InvalidParameterError(
            "scale", scale, f"large enough to give a non-empty output from "
            f"{img.width}x{img.height}"
        )
    row_weights = _resampling_matrix(img.height, out_h, scale)
    col_weights = _resampling_matrix(img.width, out_w, scale)
    out = np.empty((img.channels, out_h, out_w))
    for ch in range(img.channels):
        tmp = row_weights @ img.planes[ch]
        out[ch] = (col_weights @ tmp.T).T
    return PlanarImage(out, img.space)


def extract_feature_maps(channel_plane):
    """
    Compute the four gradient feature maps of one plane.

    Kernels [-1, 0, 1] and [1, 0, -2, 0, 1] are correlated horizontally and
    vertically with a replicate boundary.

    Args:
        channel_plane (np.ndarray): A (height, width) plane.

    Returns:
        FeatureStack: The signed feature maps.
    """
    plane = np.asarray(channel_plane, dtype=np.float64)
    if plane.ndim != 2:
        raise InvalidParameterError("channel_plane", plane.shape, "a 2-D plane")
    maps = [
        ndimage.correlate1d(plane, _FIRST_ORDER, axis=1, mode="nearest"),
        ndimage.correlate1d(plane, _FIRST_ORDER, axis=0, mode="nearest"),
        ndimage.correlate1d(plane, _SECOND_ORDER, axis=1, mode="nearest"),
        ndimage.correlate1d(plane, _SECOND_ORDER, axis=0, mode="nearest"),
    ]
    return FeatureStack(np.stack(maps))


def extract_patches(img, side, overlap):
    """
    Cut an image into overlapping square patches.

    Patches are returned as the columns of a matrix, in row-major grid
    order. Each column stacks the channels in order (r, g, b for RGB), and
    each channel block vectorizes its patch column-major.

    Args:
        img (PlanarImage|np.ndarray): Image, or raw (channels, height, width)
            planes.
        side (int): Patch side in pixels.
        overlap (int): Overlap between adjacent patches.

    Returns:
        tuple[np.ndarray, PatchGrid]: (channels * side**2, n_patches) matrix
        and the grid that produced it.

    Raises:
        PatchGeometryError: If the patch does not fit the image.
    """
    planes = img.planes if isinstance(img, PlanarImage) else np.asarray(img)
    channels, height, width = planes.shape
    grid = PatchGrid(side, overlap, width, height, channels)
    return _patches_at(planes, grid.rows, grid.cols, side), grid


def _patches_at(planes, rows, cols, side):
    windows = sliding_window_view(planes, (side, side), axis=(1, 2))
    chosen = windows[:, rows][:, :, cols]
    channels = planes.shape[0]
    return np.ascontiguousarray(
        chosen.transpose(0, 4, 3, 1, 2).reshape(
            channels * side * side, len(rows) * len(cols)
        )
    )


def patches_at_origins(planes, origins, side):
    """Extract column-vectorized patches at arbitrary (top, left) origins."""
    planes = np.asarray(planes, dtype=np.float64)
    windows = sliding_window_view(planes, (side, side), axis=(1, 2))
    tops = np.array([o[0] for o in origins], dtype=np.intp)
    lefts = np.array([o[1] for o in origins], dtype=np.intp)
    chosen = windows[:, tops, lefts]
    return np.ascontiguousarray(
        chosen.transpose(0, 3, 2, 1).reshape(planes.shape[0] * side * side, len(tops))
    )


def assemble_patches(patches, grid, space=RGB):
    """
    Rebuild an image from patch columns, averaging overlapping samples.

    Args:
        patches (np.ndarray): (channels * side**2, len(grid)) matrix laid
            out as produced by extract_patches.
        grid (PatchGrid): Geometry the patches were produced on.
        space (str, optional): Tag of the rebuilt image.

    Returns:
        PlanarImage: Each pixel is the mean of every patch value covering it.

    Raises:
        DimensionMismatchError: If the patch matrix does not fit the grid.
    """
    patches = np.asarray(patches, dtype=np.float64)
    side = grid.side
    expected = (grid.channels * side * side, len(grid))
    if patches.shape != expected:
        raise DimensionMismatchError("patch matrix", expected, patches.shape)
    n_rows, n_cols = grid.shape
    blocks = patches.reshape(grid.channels, side, side, n_rows, n_cols)
    total = np.zeros((grid.channels, grid.height, grid.width))
    count = np.zeros((grid.height, grid.width))
    for dr in range(side):
        for dc in range(side):
            rows = (grid.rows + dr)[:, None]
            cols = (grid.cols + dc)[None, :]
            total[:, rows, cols] += blocks[:, dc, dr]
            count[rows, cols] += 1.0
    return PlanarImage(total / count, space)


def read_png(path):
    """Read an 8-bit image file as an RGB PlanarImage."""
    with Image.open(path) as handle:
        rgb = np.asarray(handle.convert("RGB"), dtype=np.float64)
    logger.debug("read %s (%dx%d)", path, rgb.shape[1], rgb.shape[0])
    return PlanarImage.from_array(rgb, RGB)


def write_png(img, path):
    """
    Write an image as 8-bit PNG.

    Side Effects:
        Samples are clamped to [0, 255] and rounded; YCbCr images are
        converted to RGB first.
    """
    if img.space == YCBCR:
        img = ycbcr_to_rgb(img)
    data = np.clip(np.rint(img.planes), 0, 255).astype(np.uint8)
    if img.space == GRAY:
        Image.fromarray(data[0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(np.moveaxis(data, 0, -1), mode="RGB").save(path, format="PNG")
    logger.debug("wrote %s", path)
