"""CW-ODMR sensitivity and the localisation error budget.

The shot-noise-limited CW sensitivity of a Gaussian resonance is

    eta = 4/(3 sqrt(3)) * (1/gamma) * FWHM / (C sqrt(R))      [T/sqrt(Hz)]

and the position error of gradient-based localisation follows

    R_pos ~ S / (sqrt(t) * m)

for sensitivity S, integration time t, and field-magnitude gradient m
along the axis of interest.  Multi-sensor budgets combine per-sensor
gradient-to-noise ratios in quadrature, which reduces to the scalar
formula for a single sensor.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .constants import CW_SENSITIVITY_PREFACTOR
from .fields import MagneticSource, field_magnitude_gradient, total_field
from .nvspin import FrequencyGrid, ensemble_lineshape
from .odmr import OdmrSpectrum, SensorSpec
from .specfit import DoubleGaussianFit, fit_double_gaussian


def cw_odmr_sensitivity(
    linewidth: float, contrast: float, count_rate: float, gamma: float | None = None
) -> float:
    """Shot-noise CW-ODMR sensitivity in T/sqrt(Hz).

    Args:
        linewidth: Resonance FWHM in Hz.
        contrast: Fractional dip depth.
        count_rate: Detected photon rate in counts/s.
        gamma: Gyromagnetic ratio in Hz/T; package default when None.
    """
    if linewidth <= 0 or contrast <= 0 or count_rate <= 0:
        raise ValueError("linewidth, contrast, and count_rate must be positive")
    if gamma is None:
        from .constants import GYROMAGNETIC_RATIO_HZ_PER_T as gamma_default

        gamma = gamma_default
    return (
        CW_SENSITIVITY_PREFACTOR * linewidth / (gamma * contrast * math.sqrt(count_rate))
    )


@dataclass(frozen=True)
class SensitivityPoint:
    """One point of the sensitivity-vs-field curve."""

    field: float
    eta: float
    effective_linewidth: float
    effective_contrast: float
    fit_converged: bool


def effective_fit_parameters(fit: DoubleGaussianFit) -> tuple[float, float]:
    """Effective (FWHM, contrast) of a fitted double dip: the dip averages."""
    return (
        0.5 * (fit.fwhm1 + fit.fwhm2),
        0.5 * (fit.contrast1 + fit.contrast2),
    )


def sensitivity_at_field(
    sensor: SensorSpec, b_mag: float, grid: FrequencyGrid | None = None
) -> SensitivityPoint:
    """Sensitivity of an ensemble sensor at one field magnitude.

    Synthesises the noiseless orientation-averaged lineshape, fits the
    double dip, and feeds the effective width and contrast into the CW
    sensitivity formula.
    """
    grid = grid or FrequencyGrid()
    pl = ensemble_lineshape(b_mag, sensor.nv, grid)
    spectrum = OdmrSpectrum(
        grid=grid,
        counts=np.zeros(grid.n_points, dtype=np.int64),
        expected=pl,
        normalized=pl,
    )
    fit = fit_double_gaussian(spectrum, strain_hint=sensor.nv.strain)
    fwhm_eff, contrast_eff = effective_fit_parameters(fit)
    eta = cw_odmr_sensitivity(
        fwhm_eff, contrast_eff, sensor.count_rate, gamma=sensor.nv.gamma
    )
    return SensitivityPoint(
        field=b_mag,
        eta=eta,
        effective_linewidth=fwhm_eff,
        effective_contrast=contrast_eff,
        fit_converged=fit.converged,
    )


def sensitivity_vs_field(
    sensor: SensorSpec,
    fields: Sequence[float],
    grid: FrequencyGrid | None = None,
) -> list[SensitivityPoint]:
    """Sensitivity curve over a list of field magnitudes (tesla)."""
    return [sensitivity_at_field(sensor, b, grid) for b in fields]


def sensitivity_interpolator(
    points: Sequence[SensitivityPoint],
) -> Callable[[float], float]:
    """Piecewise-linear eta(|B|) from a computed curve, clamped at the ends."""
    fields = np.array([p.field for p in points])
    etas = np.array([p.eta for p in points])
    order = np.argsort(fields)
    fields, etas = fields[order], etas[order]

    def eta_of_field(b_mag: float) -> float:
        return float(np.interp(b_mag, fields, etas))

    return eta_of_field


def curve_to_csv(points: Sequence[SensitivityPoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["field_T", "eta_T_per_sqrtHz", "effective_fwhm_hz",
             "effective_contrast", "fit_converged"]
        )
        for p in points:
            writer.writerow(
                [repr(p.field), repr(p.eta), repr(p.effective_linewidth),
                 repr(p.effective_contrast), p.fit_converged]
            )


def predicted_position_error(
    sensitivity: float, integration_time: float, gradient: float
) -> float:
    """Single-sensor position error S / (sqrt(t) m), in metres.

    A zero gradient carries no position information; the error is then
    reported as the out-of-tracking-range sentinel (infinity).
    """
    if sensitivity <= 0 or integration_time <= 0:
        raise ValueError("sensitivity and integration_time must be positive")
    if gradient < 0:
        raise ValueError("gradient must be non-negative")
    if gradient == 0.0:
        return math.inf
    return sensitivity / (math.sqrt(integration_time) * gradient)


@dataclass(frozen=True)
class ErrorBudget:
    """Area-averaged localisation error predicted by the budget formula."""

    mean_error: float
    mean_error_x: float
    mean_error_y: float
    grid_x: np.ndarray
    grid_y: np.ndarray
    error_map: np.ndarray
    error_map_x: np.ndarray
    error_map_y: np.ndarray


def _axis_error(
    sensors: Sequence[SensorSpec],
    source_at: MagneticSource,
    bias: Iterable[MagneticSource],
    eta_of_field: Callable[[float], float],
    integration_time: float,
) -> tuple[float, float]:
    """Per-axis (x, y) predicted errors combining all sensors in quadrature."""
    info_x = 0.0
    info_y = 0.0
    sources = [source_at, *bias]
    for sensor in sensors:
        grad = field_magnitude_gradient(sources, sensor.position)
        b_mag = float(np.linalg.norm(total_field(sources, sensor.position)))
        eta = eta_of_field(b_mag)
        info_x += (grad[0] / eta) ** 2
        info_y += (grad[1] / eta) ** 2
    sqrt_t = math.sqrt(integration_time)
    err_x = 1.0 / (sqrt_t * math.sqrt(info_x)) if info_x > 0 else math.inf
    err_y = 1.0 / (sqrt_t * math.sqrt(info_y)) if info_y > 0 else math.inf
    return err_x, err_y


def error_budget_map(
    sensors: Sequence[SensorSpec],
    source: MagneticSource,
    area: tuple[tuple[float, float], tuple[float, float]],
    integration_time: float,
    eta_of_field: Callable[[float], float],
    grid_shape: tuple[int, int] = (20, 20),
    bias: Iterable[MagneticSource] = (),
) -> ErrorBudget:
    """Predicted error over a rectangle of source positions.

    The source is translated over a uniform grid spanning
    `area = ((x_min, x_max), (y_min, y_max))` at its own z height; the
    per-position error is the root-sum-square of the per-axis errors and
    the averages are arithmetic means over the grid.

    Args:
        sensors: Sensor array (positions and count rates are used).
        source: Source template; its moment and z position are kept.
        area: Sampled (x, y) extents in metres.
        integration_time: Per-estimate ODMR integration time, seconds.
        eta_of_field: Sensitivity curve, e.g. from
            `sensitivity_interpolator`.
        grid_shape: Sampling grid; at least 20 x 20 for averages.
        bias: Optional additional static sources.
    """
    (x_min, x_max), (y_min, y_max) = area
    nx, ny = grid_shape
    xs = np.linspace(x_min, x_max, nx)
    ys = np.linspace(y_min, y_max, ny)
    z = source.position[2]

    err = np.empty((nx, ny))
    err_x = np.empty((nx, ny))
    err_y = np.empty((nx, ny))
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            moved = source.moved_to((x, y, z))
            ex, ey = _axis_error(
                sensors, moved, bias, eta_of_field, integration_time
            )
            err_x[i, j] = ex
            err_y[i, j] = ey
            err[i, j] = math.hypot(ex, ey)
    return ErrorBudget(
        mean_error=float(err.mean()),
        mean_error_x=float(err_x.mean()),
        mean_error_y=float(err_y.mean()),
        grid_x=xs,
        grid_y=ys,
        error_map=err,
        error_map_x=err_x,
        error_map_y=err_y,
    )


def budget_map_to_csv(budget: ErrorBudget, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_m", "y_m", "error_m", "error_x_m", "error_y_m"])
        for i, x in enumerate(budget.grid_x):
            for j, y in enumerate(budget.grid_y):
                writer.writerow(
                    [repr(float(x)), repr(float(y)),
                     repr(float(budget.error_map[i, j])),
                     repr(float(budget.error_map_x[i, j])),
                     repr(float(budget.error_map_y[i, j]))]
                )


def min_frame_rate(speed: float, position_precision: float) -> float:
    """Frame rate needed to keep undersampling below the position precision."""
    if position_precision <= 0:
        raise ValueError("position_precision must be positive")
    if speed < 0:
        raise ValueError("speed must be non-negative")
    return speed / position_precision


def max_trackable_speed(frame_rate: float, position_precision: float) -> float:
    """Largest linear speed trackable at a given frame rate."""
    if frame_rate <= 0 or position_precision <= 0:
        raise ValueError("frame_rate and position_precision must be positive")
    return frame_rate * position_precision


def max_angular_speed(frame_rate: float, angle_precision: float) -> float:
    """Largest angular speed (rad/s) trackable at a given frame rate."""
    if frame_rate <= 0 or angle_precision <= 0:
        raise ValueError("frame_rate and angle_precision must be positive")
    return frame_rate * angle_precision
