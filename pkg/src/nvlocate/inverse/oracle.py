"""Least-squares pose inversion, independent of the learned model.

Given per-sensor Zeeman splittings and a source template with known
moment, recover the planar pose by Levenberg-Marquardt on the residual
between modelled and measured splittings, multi-started from a grid to
escape the reflection ambiguities of dipole inverse problems.

For ensemble sensors the modelled splitting uses a |B| -> splitting
calibration curve built once from noiseless lineshape fits; single-NV
splittings follow the resonance formula exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares

from ..errors import InversionError
from ..fields import MagneticSource, total_field
from ..nvspin import FrequencyGrid, NvParams, ensemble_lineshape, nv_resonances
from ..odmr import OdmrSpectrum, SensorSpec
from ..specfit import fit_double_gaussian

# |B| sampling for the ensemble splitting calibration curve, tesla.
_CURVE_MAX_FIELD = 3.0e-3
_CURVE_POINTS = 61


def ensemble_splitting_curve(
    params: NvParams,
    grid: FrequencyGrid | None = None,
    max_field: float = _CURVE_MAX_FIELD,
    n_points: int = _CURVE_POINTS,
) -> Callable[[float], float]:
    """Fitted double-Gaussian splitting versus field magnitude.

    Returns a piecewise-linear interpolator over noiseless-lineshape
    fits; the curve is monotone over the operating window, which is what
    makes the ensemble splitting invertible at all.
    """
    grid = grid or FrequencyGrid()
    fields = np.linspace(0.0, max_field, n_points)
    splittings = []
    for b in fields:
        pl = ensemble_lineshape(b, params, grid)
        spectrum = OdmrSpectrum(
            grid=grid,
            counts=np.zeros(grid.n_points, dtype=np.int64),
            expected=pl,
            normalized=pl,
        )
        fit = fit_double_gaussian(spectrum, strain_hint=params.strain)
        splittings.append(fit.splitting)
    splittings = np.asarray(splittings)

    def curve(b_mag):
        return np.interp(b_mag, fields, splittings)

    return curve


def predicted_splittings(
    sensors: Sequence[SensorSpec],
    source: MagneticSource,
    bias: Iterable[MagneticSource] = (),
    ensemble_curve: Callable | None = None,
) -> np.ndarray:
    """Modelled per-sensor splittings for a given source pose, in Hz."""
    curves = {}
    out = np.empty(len(sensors))
    sources = [source, *bias]
    for i, sensor in enumerate(sensors):
        b = total_field(sources, sensor.position)
        if sensor.mode == "ensemble":
            curve = ensemble_curve
            if curve is None:
                key = sensor.nv
                if key not in curves:
                    curves[key] = ensemble_splitting_curve(sensor.nv)
                curve = curves[key]
            out[i] = curve(float(np.linalg.norm(b)))
        else:
            lo, hi = nv_resonances(b, sensor.axis, sensor.nv)
            out[i] = hi - lo
    return out


@dataclass(frozen=True)
class InversionResult:
    pose: np.ndarray
    cost: float
    n_starts_converged: int


def least_squares_invert(
    splittings: Sequence[float],
    sensors: Sequence[SensorSpec],
    source_template: MagneticSource,
    area: tuple[tuple[float, float], tuple[float, float]],
    estimate_angle: bool = False,
    bias: Iterable[MagneticSource] = (),
    starts_per_axis: int = 5,
    angle_starts: int = 4,
    max_nfev: int = 400,
) -> InversionResult:
    """Recover the source pose that reproduces the measured splittings.

    The source z height and moment magnitude are taken from the
    template; only (x, y) and, optionally, the in-plane moment angle are
    free.  Starts form a `starts_per_axis`-squared grid over `area`
    (crossed with `angle_starts` angles when the angle is free).

    Raises:
        InversionError: When no start converges, or the splittings carry
            no pose information (zero Jacobian at the solution, e.g. a
            uniform-bias-only scene).
    """
    measured = np.asarray(splittings, dtype=np.float64)
    if measured.shape != (len(sensors),):
        raise ValueError("need exactly one splitting per sensor")

    curve = None
    if any(s.mode == "ensemble" for s in sensors):
        curve = ensemble_splitting_curve(sensors[0].nv)
    z = source_template.position[2]

    def pose_source(params: np.ndarray) -> MagneticSource:
        src = source_template.moved_to((params[0], params[1], z))
        if estimate_angle:
            src = src.rotated_to((np.cos(params[2]), np.sin(params[2]), 0.0))
        return src

    def residuals(params: np.ndarray) -> np.ndarray:
        model = predicted_splittings(
            sensors, pose_source(params), bias=bias, ensemble_curve=curve
        )
        return (model - measured) / 1e6  # MHz scale for LM conditioning

    (x_min, x_max), (y_min, y_max) = area
    xs = np.linspace(x_min, x_max, starts_per_axis)
    ys = np.linspace(y_min, y_max, starts_per_axis)
    angles = (
        np.linspace(0.0, 2.0 * np.pi, angle_starts, endpoint=False)
        if estimate_angle
        else [None]
    )

    best = None
    n_converged = 0
    for x0 in xs:
        for y0 in ys:
            for theta0 in angles:
                start = [x0, y0] if theta0 is None else [x0, y0, theta0]
                try:
                    result = least_squares(
                        residuals, np.asarray(start), method="lm",
                        max_nfev=max_nfev,
                    )
                except Exception:
                    continue
                if result.status <= 0 or not np.all(np.isfinite(result.x)):
                    continue
                n_converged += 1
                if best is None or result.cost < best.cost:
                    best = result
    if best is None:
        raise InversionError("no multi-start converged")

    # A vanishing Jacobian means the measurements do not constrain the
    # pose (e.g. a homogeneous field): refuse rather than return noise.
    if np.max(np.abs(best.jac)) < 1e-12:
        raise InversionError(
            "splittings are insensitive to the pose (zero gradient scene)"
        )

    pose = best.x.copy()
    if estimate_angle:
        pose[2] = np.arctan2(np.sin(pose[2]), np.cos(pose[2]))
    return InversionResult(
        pose=pose, cost=float(best.cost), n_starts_converged=n_converged
    )
