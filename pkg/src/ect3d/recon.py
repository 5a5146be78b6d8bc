"""Inverse solvers and volumetric image quality metrics.

Reconstructions are lumen-ordered vectors of normalized permittivity
(1 = liquid, 0 = gas) matching the sensitivity-matrix column order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .electrostatics import CapacitanceFrame, SensitivityMatrix
from .errors import ConfigError

# Global-SSIM constants on the unit data range.
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_L = 1.0


@dataclass(frozen=True)
class QualityReport:
    """Agreement between a reconstruction and the ground truth."""

    ssim: float
    rmse: float
    psnr: float
    lvc: float

    def to_dict(self) -> dict:
        return {
            "ssim": self.ssim,
            "rmse": self.rmse,
            "psnr": None if math.isinf(self.psnr) else self.psnr,
            "lvc": self.lvc,
        }


def _frame_values(c) -> np.ndarray:
    if isinstance(c, CapacitanceFrame):
        return c.values
    return np.asarray(c, dtype=np.float64)


def lbp(
    s: SensitivityMatrix,
    c: "CapacitanceFrame | np.ndarray",
    weighted: bool = True,
    clamp: bool = True,
) -> np.ndarray:
    """Linear back projection of a normalized capacitance frame.

    With ``weighted`` (the default) this is positive back projection:
    voxel j averages the measurements with the nonnegative weights
    max(S_mj, 0), so a uniform frame maps to a uniform volume exactly
    and voxels with vanishing net sensitivity stay bounded.  The raw
    transpose product S^T c is returned with ``weighted=False``.  The
    pre-clamp map is linear in c either way.
    """
    values = _frame_values(c)
    if values.shape != (s.shape[0],):
        raise ConfigError(f"frame length {values.shape} does not match matrix rows {s.shape[0]}")
    if weighted:
        positive = np.maximum(s.matrix, 0.0)
        g = (positive.T @ values) / (positive.T @ np.ones(s.shape[0]))
    else:
        g = s.matrix.T @ values
    if clamp:
        g = np.clip(g, 0.0, 1.0)
    return g


def estimate_max_singular_value(
    s: SensitivityMatrix, iterations: int = 50, tol: float = 1e-6
) -> float:
    """Largest singular value of S by power iteration on S^T S."""
    m = s.matrix
    v = np.ones(m.shape[1]) / np.sqrt(m.shape[1])
    sigma2 = 0.0
    for _ in range(iterations):
        w = m.T @ (m @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            raise ConfigError("sensitivity matrix is zero")
        v_new = w / norm
        sigma2_new = float(v_new @ (m.T @ (m @ v_new)))
        if abs(sigma2_new - sigma2) <= tol * sigma2_new:
            sigma2 = sigma2_new
            break
        v, sigma2 = v_new, sigma2_new
    return math.sqrt(sigma2)


def landweber(
    s: SensitivityMatrix,
    c: "CapacitanceFrame | np.ndarray",
    iterations: int = 200,
    step: float | None = None,
    clamp: bool = True,
    g0: np.ndarray | None = None,
) -> np.ndarray:
    """Landweber iteration g <- g + step * S^T (c - S g), seeded with LBP.

    ``step`` defaults to 1/sigma_max^2 and must lie in (0, 2/sigma_max^2)
    for the residual to be non-increasing; sigma_max is estimated by
    power iteration.
    """
    values = _frame_values(c)
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    sigma_max = estimate_max_singular_value(s)
    bound = 2.0 / sigma_max**2
    if step is None:
        step = 1.0 / sigma_max**2
    if not 0.0 < step < bound:
        raise ConfigError(
            f"step {step:g} outside the stability interval (0, {bound:g}) "
            f"(estimated sigma_max {sigma_max:g})"
        )
    g = lbp(s, values) if g0 is None else np.asarray(g0, dtype=np.float64).copy()
    for _ in range(iterations):
        g = g + step * (s.matrix.T @ (values - s.matrix @ g))
        if clamp:
            np.clip(g, 0.0, 1.0, out=g)
    return g


def metrics(truth: np.ndarray, estimate: np.ndarray) -> QualityReport:
    """Global SSIM, RMSE, PSNR (peak 1), and LVC of the estimate.

    Identical volumes report PSNR = +inf rather than raising.
    """
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if truth.shape != estimate.shape:
        raise ConfigError(f"volume shapes differ: {truth.shape} vs {estimate.shape}")
    if not (np.all(np.isfinite(truth)) and np.all(np.isfinite(estimate))):
        raise ConfigError("volumes must be finite")

    err = estimate - truth
    rmse = float(np.sqrt(np.mean(err**2)))
    psnr = math.inf if rmse == 0.0 else 20.0 * math.log10(1.0 / rmse)

    mu_x = truth.mean()
    mu_y = estimate.mean()
    var_x = truth.var()
    var_y = estimate.var()
    cov = float(np.mean((truth - mu_x) * (estimate - mu_y)))
    c1 = (_SSIM_K1 * _SSIM_L) ** 2
    c2 = (_SSIM_K2 * _SSIM_L) ** 2
    ssim = float(
        ((2 * mu_x * mu_y + c1) * (2 * cov + c2))
        / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    )
    return QualityReport(ssim=ssim, rmse=rmse, psnr=psnr, lvc=liquid_volumetric_concentration(estimate))


def liquid_volumetric_concentration(volume: np.ndarray) -> float:
    """Mean normalized permittivity over the lumen, clamped to [0, 1] first."""
    return float(np.mean(np.clip(np.asarray(volume, dtype=np.float64), 0.0, 1.0)))


def lvc_series(frames) -> np.ndarray:
    """Per-frame liquid volumetric concentration, order preserved."""
    frames = list(frames)
    if not frames:
        raise ConfigError("lvc_series needs at least one frame")
    return np.array([liquid_volumetric_concentration(f) for f in frames])
