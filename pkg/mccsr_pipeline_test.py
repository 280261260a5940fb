import math
import numpy as np
import pytest
from mccsr.core.dictlearn import TrainConfig, joint_dictionary_learning
from mccsr.core.images import (
    GRAY,
    YCBCR,
    PlanarImage,
    bicubic_resize,
    extract_patches,
    rgb_to_ycbcr,
)
from mccsr.core.metrics import psnr, scielab
from mccsr.core.operators import BlockDiagonalDictionary
from mccsr.core.pipeline import (
    SrConfig,
    TauMap,
    add_gaussian_noise,
    beta_to_tau,
    build_training_set,
    color_variance_beta,
    color_variance_betas,
    crop_to_multiple,
    degrade,
    edge_discrepancy,
    feature_planes,
    normalize_features,
    patch_taus,
    super_resolve,
    super_resolve_separate,
    super_resolve_with_report,
)
from mccsr.core.solver import SolverConfig
from mccsr.core.errors import (
    ColorSpaceError,
    DictionaryMismatchError,
    InsufficientPatchesError,
    InvalidParameterError,
    PatchGeometryError,
)

TIGHT = SolverConfig(max_iterations=5000, tolerance=1e-15)


def _scene(size, seed):
    """Flat colored rectangles and disks over a smooth background."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    planes = np.stack([60.0 + 100.0 * xx / size + 20.0 * c for c in range(3)])
    for _ in range(8):
        color = rng.uniform(20.0, 235.0, size=3)
        if rng.random() < 0.5:
            top, left = rng.integers(0, size - 8, size=2)
            height, width = rng.integers(6, size // 2, size=2)
            planes[:, top:top + height, left:left + width] = color[:, None, None]
        else:
            cy, cx = rng.uniform(0.0, size, size=2)
            radius = rng.uniform(4.0, size / 4.0)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
            planes[:, mask] = color[:, None]
    return PlanarImage(planes)


def _random_image(height, width, seed):
    rng = np.random.default_rng(seed)
    return PlanarImage(rng.uniform(30.0, 220.0, size=(3, height, width)))


def _dictionaries(atoms=6, side=5, seed=0):
    rng = np.random.default_rng(seed)

    def unit(rows):
        block = rng.standard_normal((rows, atoms))
        return block / np.linalg.norm(block, axis=0)

    d_l = BlockDiagonalDictionary([unit(4 * side * side) for _ in range(3)])
    d_h = BlockDiagonalDictionary([unit(side * side) for _ in range(3)])
    return d_l, d_h


def _ycbcr_patch(y, cb, cr):
    return PlanarImage(np.stack([y, cb, cr]), YCBCR)


def test_valid_sr_config():
    cfg = SrConfig()
    assert cfg.scale == 2
    assert cfg.patch_side == 5
    assert cfg.overlap == 4
    assert cfg.feature_count == 100
    assert cfg.tau_map == TauMap(0.1, 10.0, 0.5)
    assert not cfg.noise_mode
    assert cfg.effective_lam == 0.1


def test_invalid_sr_config():
    with pytest.raises(InvalidParameterError):
        SrConfig(scale=5)
    with pytest.raises(InvalidParameterError):
        SrConfig(overlap=5)
    with pytest.raises(InvalidParameterError):
        SrConfig(patch_side=1, overlap=0)
    with pytest.raises(InvalidParameterError):
        SrConfig(lam=-1.0)
    with pytest.raises(InvalidParameterError):
        SrConfig(beta_normalizer=0.0)
    with pytest.raises(InvalidParameterError):
        SrConfig(force_tau=-0.5)
    with pytest.raises(InvalidParameterError):
        TauMap(tau_max=-0.1)


def test_noise_mode_settings():
    cfg = SrConfig(noise_sigma=8.0)
    assert cfg.noise_mode
    assert math.isclose(cfg.effective_lam, 0.8)
    betas = np.array([0.0, 0.5, 2.0])
    assert np.allclose(patch_taus(betas, cfg), 0.5 * patch_taus(betas, SrConfig()))
    assert not SrConfig(noise_sigma=0.0).noise_mode


def test_force_tau_overrides_map():
    betas = np.array([0.0, 0.5, 2.0])
    assert np.array_equal(patch_taus(betas, SrConfig(force_tau=0.3)), [0.3, 0.3, 0.3])
    forced_noisy = SrConfig(force_tau=0.3, noise_sigma=8.0)
    assert np.array_equal(patch_taus(betas, forced_noisy), [0.3, 0.3, 0.3])


def test_beta_of_gray_and_flat_patches():
    yy, xx = np.mgrid[0:5, 0:5].astype(float)
    flat_chroma = np.full((5, 5), 128.0)
    assert color_variance_beta(_ycbcr_patch(20.0 * xx, flat_chroma, flat_chroma)) == 0.0
    assert color_variance_beta(_ycbcr_patch(flat_chroma, flat_chroma, flat_chroma)) == 0.0
    # Chroma edges without a luma edge: both fractions are guarded to 0.
    assert color_variance_beta(_ycbcr_patch(flat_chroma, 10.0 * xx, 5.0 * yy)) == 0.0


def test_beta_of_colored_edge():
    yy, xx = np.mgrid[0:5, 0:5].astype(float)
    patch = _ycbcr_patch(10.0 * xx + 10.0 * yy, 128.0 + 5.0 * xx, 128.0 - 5.0 * yy)
    beta = color_variance_beta(patch)
    assert beta > 0.0
    assert math.isclose(color_variance_beta(patch, s=2.0), beta / 2.0)
    assert math.isclose(color_variance_beta(patch.planes), beta)


def test_invalid_beta_input():
    with pytest.raises(ColorSpaceError):
        color_variance_beta(PlanarImage(np.zeros((3, 5, 5))))
    with pytest.raises(InvalidParameterError):
        color_variance_beta(_ycbcr_patch(*np.zeros((3, 5, 5))), s=0.0)


def test_batched_betas_match_single_patches():
    ycbcr = rgb_to_ycbcr(_random_image(9, 8, seed=1))
    patches, grid = extract_patches(ycbcr, 5, 4)
    betas = color_variance_betas(patches, 5)
    assert betas.shape == (len(grid),)
    for j, (top, left) in enumerate(grid.origins()):
        window = ycbcr.planes[:, top:top + 5, left:left + 5]
        assert math.isclose(betas[j], color_variance_beta(window), rel_tol=1e-12)


def test_beta_to_tau():
    assert math.isclose(beta_to_tau(0.5), 0.05)
    assert math.isclose(beta_to_tau(0.0), 0.1 / (1.0 + math.exp(5.0)))
    assert math.isclose(beta_to_tau(100.0), 0.1)
    assert beta_to_tau(1.0, TauMap(tau_max=0.0)) == 0.0
    taus = beta_to_tau(np.linspace(0.0, 3.0, 31))
    assert np.all(np.diff(taus) >= 0.0)
    assert np.all((taus >= 0.0) & (taus <= 0.1))


def test_feature_planes_layout():
    img = _random_image(7, 6, seed=2)
    planes = feature_planes(img)
    assert planes.shape == (12, 7, 6)


def test_degrade_dimensions():
    hr = _random_image(31, 29, seed=3)
    lr = degrade(hr, 3)
    assert (lr.height, lr.width) == (10, 9)
    back = bicubic_resize(lr, 3)
    cropped = crop_to_multiple(hr, 3)
    assert (back.height, back.width) == (cropped.height, cropped.width) == (30, 27)
    assert crop_to_multiple(cropped, 3) is cropped


def test_degrade_constant_and_ramp():
    flat = degrade(PlanarImage(np.full((3, 20, 20), 77.0)), 2)
    assert np.allclose(flat.planes, 77.0, atol=1e-9)
    xx = np.tile(np.arange(40, dtype=float), (40, 1))
    lr = degrade(PlanarImage(np.stack([5.0 * xx] * 3)), 2)
    assert (lr.height, lr.width) == (20, 20)
    for j in range(2, 18):
        assert np.allclose(lr.planes[:, :, j], 5.0 * (2 * j + 0.5), atol=1e-9)


def test_degrade_invalid():
    with pytest.raises(PatchGeometryError):
        degrade(_random_image(8, 8, seed=4), 2)
    with pytest.raises(InvalidParameterError):
        degrade(_random_image(8, 8, seed=4), 0)


def test_gaussian_noise():
    img = PlanarImage(np.full((3, 128, 128), 128.0))
    assert add_gaussian_noise(img, 0.0) == img
    noisy = add_gaussian_noise(img, 8.0, seed=7)
    assert noisy == add_gaussian_noise(img, 8.0, seed=7)
    assert noisy != add_gaussian_noise(img, 8.0, seed=8)
    assert abs(np.std(noisy.planes - 128.0) - 8.0) <= 0.05 * 8.0
    with pytest.raises(InvalidParameterError):
        add_gaussian_noise(img, -1.0)


def test_build_training_set():
    images = [_scene(40, seed) for seed in range(3)]
    cfg = SrConfig()
    ts = build_training_set(images, cfg, 50, seed=1)
    assert ts.y_l.shape == (300, 50)
    assert ts.y_h.shape == (75, 50)
    assert ts.patch_side == 5
    assert np.all(np.linalg.norm(ts.y_l, axis=0) <= 1.0 + 1e-12)
    for c in range(3):
        assert np.allclose(ts.hr_channel(c).sum(axis=0), 0.0, atol=1e-9)
    assert build_training_set(images, cfg, 50, seed=1) == ts
    assert build_training_set(images, cfg, 50, seed=2) != ts


def test_build_training_set_needs_texture():
    flat = [PlanarImage(np.full((3, 20, 20), 100.0))]
    with pytest.raises(InsufficientPatchesError):
        build_training_set(flat, SrConfig(), 1)
    with pytest.raises(InsufficientPatchesError):
        build_training_set([_scene(20, 0)], SrConfig(), 100000)
    with pytest.raises(InvalidParameterError):
        build_training_set([_scene(20, 0)], SrConfig(), 0)


def test_constant_image_stays_constant():
    lr = PlanarImage(np.stack([np.full((8, 8), v) for v in (90.0, 140.0, 200.0)]))
    d_l, d_h = _dictionaries()
    out = super_resolve(lr, d_l, d_h)
    assert (out.height, out.width) == (16, 16)
    for c, value in enumerate((90.0, 140.0, 200.0)):
        assert np.allclose(out.planes[c], value, atol=1e-6)


def test_zero_codes_reproduce_bicubic():
    lr = _random_image(6, 7, seed=5)
    d_l, d_h = _dictionaries()
    out = super_resolve(lr, d_l, d_h, SrConfig(lam=1e9))
    expected = bicubic_resize(lr, 2).clamped()
    assert np.allclose(out.planes, expected.planes, atol=1e-9)


def test_non_square_image_assembles_on_color_grid():
    lr = _random_image(6, 9, seed=13)
    d_l, d_h = _dictionaries(seed=13)
    out, report = super_resolve_with_report(lr, d_l, d_h)
    assert (out.space, out.height, out.width) == (lr.space, 12, 18)
    assert report.taus.shape == (8 * 14,)
    assert np.all((out.planes >= 0.0) & (out.planes <= 255.0))


def test_zero_tau_matches_separate_channels():
    lr = _random_image(6, 6, seed=6)
    d_l, d_h = _dictionaries(seed=6)
    joint = super_resolve(lr, d_l, d_h, SrConfig(force_tau=0.0, solver=TIGHT))
    separate = super_resolve_separate(lr, d_l, d_h, SrConfig(solver=TIGHT))
    assert np.max(np.abs(joint.planes - separate.planes)) <= 1e-4


def test_result_independent_of_threads():
    lr = _random_image(10, 10, seed=7)
    d_l, d_h = _dictionaries(seed=7)
    one = super_resolve(lr, d_l, d_h, threads=1)
    three = super_resolve(lr, d_l, d_h, threads=3)
    assert one == three


def test_cross_channel_weight_reduces_edge_discrepancy():
    lr = _random_image(6, 6, seed=8)
    d_l, d_h = _dictionaries(seed=8)
    _, free = super_resolve_with_report(lr, d_l, d_h, SrConfig(force_tau=0.0, solver=TIGHT))
    _, tied = super_resolve_with_report(lr, d_l, d_h, SrConfig(force_tau=1.0, solver=TIGHT))
    assert tied.edge_discrepancy <= free.edge_discrepancy * (1.0 + 1e-9) + 1e-9
    assert np.all(tied.taus == 1.0)


def test_report_contents():
    lr = _random_image(6, 6, seed=9)
    d_l, d_h = _dictionaries(seed=9)
    _, report = super_resolve_with_report(lr, d_l, d_h)
    assert report.betas.shape == (64,)
    assert report.taus.shape == (64,)
    assert np.all((report.taus >= 0.0) & (report.taus <= 0.1))
    assert int(np.sum(report.beta_histogram[0])) == 64
    assert 0.0 <= report.converged <= 1.0
    lines = report.summary_lines()
    assert lines[0] == "beta histogram:"
    assert len(lines) == 12
    assert lines[-1].startswith("mean tau: ")


def test_edge_discrepancy_of_identical_channels():
    patch = np.random.default_rng(10).standard_normal(25)
    assert edge_discrepancy(np.tile(patch, 3)[:, None], 5) == 0.0
    assert edge_discrepancy(np.zeros((75, 0)), 5) == 0.0


def test_invalid_reconstruction_input():
    d_l, d_h = _dictionaries()
    with pytest.raises(ColorSpaceError):
        super_resolve(PlanarImage(np.zeros((6, 6)), GRAY), d_l, d_h)
    with pytest.raises(PatchGeometryError):
        super_resolve(_random_image(2, 2, seed=0), d_l, d_h)
    with pytest.raises(DictionaryMismatchError):
        super_resolve(_random_image(6, 6, seed=0), d_l, d_h, SrConfig(patch_side=3, overlap=2))
    small_l, _ = _dictionaries(atoms=4)
    with pytest.raises(DictionaryMismatchError):
        super_resolve(_random_image(6, 6, seed=0), small_l, d_h)


@pytest.fixture(scope="module")
def trained():
    training = [_scene(64, seed) for seed in range(6)]
    ts = build_training_set(training, SrConfig(), 2000, seed=0)
    result = joint_dictionary_learning(ts, TrainConfig(atoms=32, outer_iterations=5))
    return result.d_l, result.d_h


def test_learned_dictionaries_beat_bicubic(trained):
    d_l, d_h = trained
    hr = _scene(48, 100)
    lr = degrade(hr, 2)
    bicubic = bicubic_resize(lr, 2).clamped()
    upscaled = super_resolve(lr, d_l, d_h)
    assert psnr(hr, upscaled) >= psnr(hr, bicubic) + 0.3
    assert scielab(hr, upscaled) < scielab(hr, bicubic)


def test_adaptive_tau_reduces_edge_discrepancy(trained):
    d_l, d_h = trained
    lr = degrade(_scene(48, 101), 2)
    _, free = super_resolve_with_report(lr, d_l, d_h, SrConfig(force_tau=0.0, solver=TIGHT))
    _, adaptive = super_resolve_with_report(lr, d_l, d_h, SrConfig(solver=TIGHT))
    assert np.all(adaptive.taus > 0.0)
    assert adaptive.edge_discrepancy <= free.edge_discrepancy * (1.0 + 1e-6) + 1e-9


def test_noise_mode_beats_bicubic_of_noisy_input(trained):
    d_l, d_h = trained
    hr = _scene(48, 102)
    noisy = add_gaussian_noise(degrade(hr, 2), 8.0, seed=3)
    bicubic = bicubic_resize(noisy, 2).clamped()
    upscaled = super_resolve(noisy, d_l, d_h, SrConfig(noise_sigma=8.0))
    assert psnr(hr, upscaled) >= psnr(hr, bicubic)


def test_normalize_features():
    features = np.array([[3.0, 0.5, 0.0], [4.0, 0.0, 0.0]])
    y_l, factors = normalize_features(features)
    assert np.allclose(factors, [5.0, 1.0, 1.0])
    assert np.allclose(y_l, [[0.6, 0.5, 0.0], [0.8, 0.0, 0.0]])
