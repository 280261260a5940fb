import math
import numpy as np
import pytest
from scipy import ndimage
from mccsr.core.images import GRAY, PlanarImage, rgb_to_ycbcr
from mccsr.core.metrics import (
    MetricReport,
    evaluate_images,
    psnr,
    scielab,
    ssim,
)
from mccsr.core.errors import DimensionMismatchError, InvalidParameterError


def _random_image(height, width, seed):
    rng = np.random.default_rng(seed)
    return PlanarImage(rng.uniform(0, 255, size=(3, height, width)))


def _checkerboard(size, low, high):
    rows, cols = np.indices((size, size))
    plane = np.where((rows + cols) % 2 == 0, low, high).astype(float)
    return PlanarImage(np.stack([plane] * 3))


def _uniform(height, width, color):
    planes = np.ones((3, height, width)) * np.asarray(color, dtype=float)[:, None, None]
    return PlanarImage(planes)


def test_psnr_identical_images():
    img = _random_image(8, 8, seed=0)
    assert psnr(img, img) == math.inf


def test_psnr_constant_offsets():
    base = _uniform(4, 6, (100.0, 120.0, 140.0))
    plus_16 = psnr(base, _uniform(4, 6, (116.0, 136.0, 156.0)))
    assert math.isclose(plus_16, 10.0 * math.log10(255.0 ** 2 / 256.0), abs_tol=1e-6)
    assert math.isclose(plus_16, 24.0484, abs_tol=1e-4)
    plus_1 = psnr(base, _uniform(4, 6, (101.0, 121.0, 141.0)))
    assert math.isclose(plus_1, 20.0 * math.log10(255.0), abs_tol=1e-6)


def test_psnr_pools_channels():
    base = _uniform(2, 2, (50.0, 50.0, 50.0))
    one_channel = _uniform(2, 2, (50.0, 50.0, 62.0))
    # MSE = 144 / 3
    assert math.isclose(psnr(base, one_channel), 10.0 * math.log10(255.0 ** 2 / 48.0))


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(1)
    base = np.full((3, 16, 16), 128.0)
    noise = rng.standard_normal(base.shape)
    values = [
        psnr(PlanarImage(base), PlanarImage(base + sigma * noise))
        for sigma in (1.0, 2.0, 5.0, 10.0)
    ]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_psnr_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        psnr(_random_image(4, 4, 0), _random_image(4, 5, 0))


def test_ssim_identical_images():
    img = _random_image(16, 16, seed=2)
    assert math.isclose(ssim(img, img), 1.0, rel_tol=1e-12)


def test_ssim_symmetric():
    a, b = _random_image(16, 20, seed=3), _random_image(16, 20, seed=4)
    assert math.isclose(ssim(a, b), ssim(b, a), rel_tol=1e-12)
    assert ssim(a, b) < 1.0


def test_ssim_inverted_and_offset_checkerboards():
    board = _checkerboard(16, 20.0, 220.0)
    inverted = _checkerboard(16, 220.0, 20.0)
    brighter = _checkerboard(16, 30.0, 230.0)
    assert ssim(board, inverted) < 0.0
    assert 0.5 < ssim(board, brighter) < 1.0


def test_ssim_uses_luma_of_ycbcr_and_gray():
    a, b = _random_image(12, 12, seed=5), _random_image(12, 12, seed=6)
    luma_a = PlanarImage(rgb_to_ycbcr(a).planes[0], GRAY)
    luma_b = PlanarImage(rgb_to_ycbcr(b).planes[0], GRAY)
    assert math.isclose(ssim(a, b), ssim(luma_a, luma_b), rel_tol=1e-12)
    assert math.isclose(ssim(a, b), ssim(rgb_to_ycbcr(a), rgb_to_ycbcr(b)), rel_tol=1e-12)


def test_ssim_matches_gaussian_window_formula():
    a, b = _random_image(20, 24, seed=11), _random_image(20, 24, seed=12)
    x, y = rgb_to_ycbcr(a).planes[0], rgb_to_ycbcr(b).planes[0]

    def blur(plane):
        return ndimage.gaussian_filter(plane, 1.5, truncate=3.5)

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x ** 2
    var_y = blur(y * y) - mu_y ** 2
    cov = blur(x * y) - mu_x * mu_y
    c1, c2 = (0.01 * 255.0) ** 2, (0.03 * 255.0) ** 2
    index = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    )
    expected = float(np.mean(index[5:-5, 5:-5]))
    assert math.isclose(ssim(a, b), expected, rel_tol=1e-9, abs_tol=1e-12)


def test_ssim_needs_full_window():
    with pytest.raises(InvalidParameterError):
        ssim(_random_image(10, 16, 0), _random_image(10, 16, 1))


def test_scielab_identical_and_symmetric():
    a, b = _random_image(12, 12, seed=7), _random_image(12, 12, seed=8)
    assert scielab(a, a) == 0.0
    assert math.isclose(scielab(a, b), scielab(b, a), rel_tol=1e-12)
    assert scielab(a, b) > 0.0


def test_scielab_uniform_field_sums_pixel_difference():
    red, orange = (200.0, 40.0, 30.0), (210.0, 120.0, 30.0)
    single = scielab(_uniform(1, 1, red), _uniform(1, 1, orange))
    assert single > 0.0
    field = scielab(_uniform(6, 9, red), _uniform(6, 9, orange))
    assert math.isclose(field, 54.0 * single, rel_tol=1e-9)


def test_scielab_blur_reduces_fine_pattern_error():
    flat = _uniform(24, 24, (120.0, 120.0, 120.0))
    board = _checkerboard(24, 100.0, 140.0)
    coarse = scielab(flat, board, samples_per_degree=1.0)
    fine = scielab(flat, board, samples_per_degree=60.0)
    assert fine < coarse


def test_scielab_invalid_sampling():
    img = _random_image(4, 4, 0)
    with pytest.raises(InvalidParameterError):
        scielab(img, img, samples_per_degree=0.0)


def test_evaluate_images_report():
    a, b = _random_image(12, 12, seed=9), _random_image(12, 12, seed=10)
    report = evaluate_images(a, b)
    assert report == MetricReport(psnr(a, b), ssim(a, b), scielab(a, b))
    assert report.machine_line() == (
        f"PSNR={report.psnr_db:.6f} SSIM={report.ssim:.6f} "
        f"SCIELAB={report.scielab_total:.6g}"
    )
    assert report.text_block().splitlines()[0].startswith("PSNR:")


def test_machine_line_format():
    report = MetricReport(30.5, 0.91234567, 1234.5678)
    assert report.machine_line() == "PSNR=30.500000 SSIM=0.912346 SCIELAB=1234.57"
    assert MetricReport(math.inf, 1.0, 0.0).machine_line() == (
        "PSNR=inf SSIM=1.000000 SCIELAB=0"
    )
