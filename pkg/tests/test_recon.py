import math

import numpy as np
import pytest

from ect3d import electrostatics as es
from ect3d import flow, recon
from ect3d.errors import ConfigError


def toy_matrix(values, n_pairs=None):
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    pairs = tuple((0, k + 1) for k in range(values.shape[0]))
    return es.SensitivityMatrix(
        matrix=values,
        pairs=pairs,
        grid_hash="toy",
        row_scale=np.ones(values.shape[0]),
    )


# -- lbp ----------------------------------------------------------------------


def test_lbp_zero_frame_gives_zero_volume():
    s = toy_matrix([[0.4, 0.6], [0.7, 0.3]])
    assert np.array_equal(recon.lbp(s, np.zeros(2)), np.zeros(2))


def test_lbp_raw_hand_product():
    s = toy_matrix([[0.5, 0.5]])
    raw = recon.lbp(s, np.array([1.0]), weighted=False, clamp=False)
    assert np.array_equal(raw, np.array([0.5, 0.5]))


def test_lbp_uniform_frame_gives_uniform_volume(sensitivity16, grid16):
    c = sensitivity16.predict(np.ones(grid16.n_lumen))  # = 1-vector
    g = recon.lbp(sensitivity16, c)
    assert np.abs(g - 1.0).max() < 1e-9


def test_lbp_linearity_before_clamp(sensitivity16):
    rng = np.random.default_rng(11)
    c1 = rng.random(66)
    c2 = rng.random(66)
    a, b = 0.7, -1.3
    lhs = recon.lbp(sensitivity16, a * c1 + b * c2, clamp=False)
    rhs = a * recon.lbp(sensitivity16, c1, clamp=False) + b * recon.lbp(
        sensitivity16, c2, clamp=False
    )
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_lbp_dimension_mismatch():
    s = toy_matrix([[0.5, 0.5]])
    with pytest.raises(ConfigError):
        recon.lbp(s, np.zeros(3))


# -- landweber ----------------------------------------------------------------


def test_landweber_scalar_recursion():
    s = toy_matrix([[2.0]])
    g1 = recon.landweber(s, np.array([4.0]), iterations=1, step=0.1,
                         clamp=False, g0=np.zeros(1))
    assert g1[0] == pytest.approx(0.8)
    g_many = recon.landweber(s, np.array([4.0]), iterations=200, step=0.1,
                             clamp=False, g0=np.zeros(1))
    assert g_many[0] == pytest.approx(2.0, abs=1e-8)


def test_landweber_converges_at_expected_rate():
    s = toy_matrix([[1.0, 0.3], [0.2, 0.8]])
    g_star = np.array([0.4, 0.7])
    c = s.matrix @ g_star
    sigma = np.linalg.svd(s.matrix, compute_uv=False)
    step = 0.5 / sigma[0] ** 2
    expected_rate = 1.0 - step * sigma[-1] ** 2

    g = np.zeros(2)
    errors = []
    for _ in range(60):
        g = g + step * (s.matrix.T @ (c - s.matrix @ g))
        errors.append(np.linalg.norm(g - g_star))
    rates = [errors[k + 1] / errors[k] for k in range(40, 59)]
    assert np.allclose(rates, expected_rate, atol=1e-6)


def test_landweber_step_bound_enforced():
    s = toy_matrix([[2.0]])  # sigma_max = 2, bound = 0.5
    with pytest.raises(ConfigError) as err:
        recon.landweber(s, np.array([1.0]), iterations=1, step=0.6)
    assert "0.5" in str(err.value)
    with pytest.raises(ConfigError):
        recon.landweber(s, np.array([1.0]), iterations=1, step=-0.1)
    with pytest.raises(ConfigError):
        recon.landweber(s, np.array([1.0]), iterations=0)


def test_landweber_residual_monotone_without_clamp(sensitivity16):
    rng = np.random.default_rng(5)
    c = rng.random(66)
    g = recon.lbp(sensitivity16, c)
    step = 1.0 / recon.estimate_max_singular_value(sensitivity16) ** 2
    prev = np.linalg.norm(c - sensitivity16.matrix @ g)
    for _ in range(30):
        g = g + step * (sensitivity16.matrix.T @ (c - sensitivity16.matrix @ g))
        res = np.linalg.norm(c - sensitivity16.matrix @ g)
        assert res <= prev * (1.0 + 1e-12)
        prev = res


def test_landweber_beats_lbp_on_phantoms(grid16, sensitivity16, calibration16,
                                         phantom_suite, props):
    c_low, c_high = calibration16
    for phi in phantom_suite[:3]:  # full suite runs in the acceptance module
        g_true = 1.0 - grid16.extract_lumen(phi)
        raw = es.measure_frame(grid16, flow.phase_to_permittivity(phi, grid16, props))
        c = es.normalize_frame(raw, c_low, c_high)
        rmse_lbp = recon.metrics(g_true, recon.lbp(sensitivity16, c)).rmse
        rmse_lw = recon.metrics(
            g_true, recon.landweber(sensitivity16, c, iterations=200)
        ).rmse
        assert rmse_lw <= rmse_lbp


# -- metrics ------------------------------------------------------------------


def test_metrics_identity():
    volume = np.linspace(0.0, 1.0, 64)
    report = recon.metrics(volume, volume.copy())
    assert report.ssim == pytest.approx(1.0)
    assert report.rmse == 0.0
    assert math.isinf(report.psnr)
    assert report.lvc == pytest.approx(volume.mean())


def test_metrics_constant_offset():
    truth = np.zeros(100)
    estimate = np.full(100, 0.1)
    report = recon.metrics(truth, estimate)
    assert report.rmse == pytest.approx(0.1)
    assert report.psnr == pytest.approx(20.0)


def test_metrics_toy_rmse():
    truth = np.zeros(8)
    truth[0] = 1.0
    report = recon.metrics(truth, np.zeros(8))
    assert report.rmse == pytest.approx(np.sqrt(1.0 / 8.0))


def test_rmse_symmetry_and_psnr_monotonicity():
    rng = np.random.default_rng(2)
    x = rng.random(50)
    y = rng.random(50)
    assert recon.metrics(x, y).rmse == pytest.approx(recon.metrics(y, x).rmse)
    reports = [recon.metrics(x, x + d) for d in (0.05, 0.1, 0.2)]
    assert reports[0].psnr > reports[1].psnr > reports[2].psnr
    assert reports[0].rmse < reports[1].rmse < reports[2].rmse


def test_metrics_shape_mismatch():
    with pytest.raises(ConfigError):
        recon.metrics(np.zeros(3), np.zeros(4))
    with pytest.raises(ConfigError):
        recon.metrics(np.array([np.nan]), np.array([0.0]))


# -- lvc ----------------------------------------------------------------------


def test_lvc_series_endpoints_and_order():
    ones = np.ones(10)
    zeros = np.zeros(10)
    series = recon.lvc_series([ones, zeros, ones, zeros])
    assert np.array_equal(series, [1.0, 0.0, 1.0, 0.0])


def test_lvc_clamps_before_averaging():
    series = recon.lvc_series([np.full(4, 1.5), np.full(4, -0.5)])
    assert np.array_equal(series, [1.0, 0.0])


def test_lvc_bounds_random():
    rng = np.random.default_rng(3)
    frames = [rng.normal(0.5, 1.0, size=20) for _ in range(10)]
    series = recon.lvc_series(frames)
    assert (series >= 0.0).all() and (series <= 1.0).all()


def test_lvc_empty_sequence_rejected():
    with pytest.raises(ConfigError):
        recon.lvc_series([])
