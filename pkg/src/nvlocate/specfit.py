"""Resonance recovery from noisy ODMR spectra.

The measurement pipeline mirrors the data preprocessing used on the
bench: two-point smoothing, then a double-Gaussian-dip least-squares fit
whose centres give the Zeeman splitting and whose covariance gives the
per-resonance centre uncertainties.  The (ln splitting, ln sigma1,
ln sigma2) triple per sensor is the input feature of the inverse models.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import FeatureExtractionError
from .nvspin import gaussian_dip
from .odmr import OdmrSpectrum

# Seed width for the fit, slightly above the typical zero-field FWHM.
_SEED_FWHM = 15e6

_MAX_NFEV = 500


@dataclass(frozen=True)
class DoubleGaussianFit:
    """Fitted double-dip parameters with centre uncertainties.

    Centres are ordered nu1 <= nu2; `splitting` is their difference.
    `sigma1`/`sigma2` are 1-sigma centre uncertainties from the scaled
    inverse Gauss-Newton Hessian.  `converged` is False on iteration-cap
    or singular-Jacobian exits, in which case the remaining fields hold
    best-effort values rather than nothing.
    """

    nu1: float
    nu2: float
    fwhm1: float
    fwhm2: float
    contrast1: float
    contrast2: float
    sigma1: float
    sigma2: float
    baseline: float
    residual_rms: float
    converged: bool

    @property
    def splitting(self) -> float:
        return self.nu2 - self.nu1

    def to_dict(self) -> dict:
        out = asdict(self)
        out["splitting"] = self.splitting
        return out


def smooth(spectrum: OdmrSpectrum) -> OdmrSpectrum:
    """Two-point forward average of the normalised PL; last bin unchanged."""
    return replace(spectrum, normalized=smooth_array(spectrum.normalized))


def smooth_array(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.size < 2:
        raise ValueError("smoothing needs at least two bins")
    out = y.copy()
    out[:-1] = 0.5 * (y[:-1] + y[1:])
    return out


def _double_dip(freqs: np.ndarray, p: np.ndarray) -> np.ndarray:
    nu1, nu2, fwhm1, fwhm2, c1, c2, base = p
    return (
        base
        - gaussian_dip(freqs, nu1, fwhm1, c1)
        - gaussian_dip(freqs, nu2, fwhm2, c2)
    )


def _seed_centres(
    freqs: np.ndarray, y_smooth: np.ndarray, baseline: float, strain_hint: float
) -> tuple[float, float, float, float]:
    """Initial centres and dip depths from local minima of the smoothed PL.

    Takes the two deepest local minima separated by at least one seed
    FWHM; a single detectable minimum (merged, strain-dominated regime)
    seeds the centres at that minimum -+ the strain splitting.  Minima
    shallower than a quarter of the deepest dip or buried in the tail
    noise are not dips and are ignored.
    """
    interior = (y_smooth[1:-1] <= y_smooth[:-2]) & (y_smooth[1:-1] <= y_smooth[2:])
    candidates = np.flatnonzero(interior) + 1
    candidates = candidates[np.argsort(y_smooth[candidates])]

    tail_noise = float(np.std(np.concatenate([y_smooth[:10], y_smooth[-10:]])))
    max_depth = baseline - float(y_smooth.min())
    depth_floor = max(0.25 * max_depth, 2.0 * tail_noise)

    chosen: list[int] = []
    for idx in candidates:
        if baseline - y_smooth[idx] < depth_floor:
            break  # candidates are depth-sorted; the rest are shallower
        if all(abs(freqs[idx] - freqs[j]) >= _SEED_FWHM for j in chosen):
            chosen.append(int(idx))
        if len(chosen) == 2:
            break

    if len(chosen) == 2:
        lo, hi = sorted(chosen, key=lambda j: freqs[j])
        depth_lo = max(baseline - y_smooth[lo], 1e-4)
        depth_hi = max(baseline - y_smooth[hi], 1e-4)
        return freqs[lo], freqs[hi], depth_lo, depth_hi

    if len(chosen) == 1:
        centre = freqs[chosen[0]]
        depth = max(baseline - y_smooth[chosen[0]], 1e-4)
        return (
            centre - strain_hint,
            centre + strain_hint,
            0.75 * depth,
            0.75 * depth,
        )

    # Flat spectrum: fall back to the grid midpoint.
    mid = 0.5 * (freqs[0] + freqs[-1])
    return mid - strain_hint, mid + strain_hint, 1e-3, 1e-3


def fit_double_gaussian(
    spectrum: OdmrSpectrum,
    strain_hint: float = 5.6e6,
) -> DoubleGaussianFit:
    """Levenberg-Marquardt double-Gaussian-dip fit of a normalised spectrum.

    The model is baseline - G1 - G2 with a fitted constant baseline.
    Initial centres come from the local minima of a smoothed copy; if
    the first attempt lands in a degenerate basin (negative contrast or
    coincident centres are common just above the strain-merged regime),
    progressively wider centre seeds around the deepest minimum are
    tried.  Non-convergence never raises: the result carries
    converged=False and the best parameters found, so one bad spectrum
    cannot abort a campaign.

    Args:
        spectrum: Spectrum whose `normalized` channel is fitted as-is
            (apply `smooth` beforehand to reproduce the standard
            preprocessing).
        strain_hint: Strain splitting used to split the centre seeds in
            the merged-dip regime, Hz.
    """
    freqs = spectrum.grid.frequencies
    y = spectrum.normalized
    y_seed = smooth_array(y)

    baseline0 = float(np.mean(np.concatenate([y_seed[:10], y_seed[-10:]])))
    nu1_0, nu2_0, depth1, depth2 = _seed_centres(freqs, y_seed, baseline0, strain_hint)
    deepest = freqs[int(np.argmin(y_seed))]
    depth0 = max(baseline0 - float(y_seed.min()), 1e-4)

    attempts = [
        np.array([nu1_0, nu2_0, _SEED_FWHM, _SEED_FWHM, depth1, depth2, baseline0])
    ]
    for offset in (0.5 * _SEED_FWHM, _SEED_FWHM):
        attempts.append(
            np.array(
                [deepest - offset, deepest + offset, _SEED_FWHM, _SEED_FWHM,
                 0.6 * depth0, 0.6 * depth0, baseline0]
            )
        )

    result = None
    for p0 in attempts:
        candidate = least_squares(
            lambda p: _double_dip(freqs, p) - y,
            p0,
            method="lm",
            max_nfev=_MAX_NFEV,
        )
        if result is None:
            result = candidate
        good = (
            candidate.status > 0
            and np.all(np.isfinite(candidate.x))
            and candidate.x[4] > 0
            and candidate.x[5] > 0
            and abs(candidate.x[2]) > 0
            and abs(candidate.x[3]) > 0
        )
        if good:
            result = candidate
            break

    p = result.x
    converged = result.status > 0 and bool(np.all(np.isfinite(p)))

    # The model is even in each width's sign; report magnitudes.
    p[2], p[3] = abs(p[2]), abs(p[3])

    n_res, n_par = len(y), len(p)
    ssr = float(np.sum(result.fun**2))
    resid_var = ssr / max(n_res - n_par, 1)
    # Column-scale the Jacobian before inverting: centres live on a Hz
    # scale and contrasts on a unit scale, so the raw J^T J spans ~36
    # decades and a direct pseudo-inverse truncates the centre block.
    jac = result.jac
    scale = np.linalg.norm(jac, axis=0)
    scale[scale == 0.0] = 1.0
    try:
        cov_scaled = np.linalg.pinv((jac / scale).T @ (jac / scale))
        cov_diag = np.diag(cov_scaled) / scale**2 * resid_var
        sig1 = float(np.sqrt(max(cov_diag[0], 0.0)))
        sig2 = float(np.sqrt(max(cov_diag[1], 0.0)))
    except np.linalg.LinAlgError:
        sig1 = sig2 = float("nan")
        converged = False

    if not (np.isfinite(sig1) and np.isfinite(sig2) and sig1 > 0 and sig2 > 0):
        converged = False
    if p[2] <= 0 or p[3] <= 0 or p[4] <= 0 or p[5] <= 0:
        converged = False

    if p[0] > p[1]:
        order = [1, 0, 3, 2, 5, 4]
        p[:6] = p[order]
        sig1, sig2 = sig2, sig1

    return DoubleGaussianFit(
        nu1=float(p[0]),
        nu2=float(p[1]),
        fwhm1=float(p[2]),
        fwhm2=float(p[3]),
        contrast1=float(p[4]),
        contrast2=float(p[5]),
        sigma1=sig1,
        sigma2=sig2,
        baseline=float(p[6]),
        residual_rms=float(np.sqrt(ssr / n_res)),
        converged=converged,
    )


def fit_spectrum(spectrum: OdmrSpectrum, strain_hint: float = 5.6e6) -> DoubleGaussianFit:
    """Standard pipeline: two-point smoothing, then the double-dip fit."""
    return fit_double_gaussian(smooth(spectrum), strain_hint=strain_hint)


def extract_features(fits: Sequence[DoubleGaussianFit]) -> np.ndarray:
    """Per-sensor (ln splitting, ln sigma1, ln sigma2) feature matrix.

    Raises:
        FeatureExtractionError: Identifying the offending sensor when a
            splitting or uncertainty is non-positive or non-finite.
    """
    rows = np.empty((len(fits), 3))
    for i, fit in enumerate(fits):
        values = (fit.splitting, fit.sigma1, fit.sigma2)
        if not all(np.isfinite(v) and v > 0.0 for v in values):
            raise FeatureExtractionError(
                f"sensor {i}: cannot take log of (splitting, sigma1, sigma2)"
                f" = {values}"
            )
        rows[i] = np.log(values)
    return rows


def fits_to_csv(fits: Sequence[DoubleGaussianFit], path: str | Path) -> None:
    fields = [
        "sensor", "nu1", "nu2", "splitting", "fwhm1", "fwhm2",
        "contrast1", "contrast2", "sigma1", "sigma2", "baseline",
        "residual_rms", "converged",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for i, fit in enumerate(fits):
            row = fit.to_dict()
            writer.writerow([i] + [row[k] for k in fields[1:]])


def fits_to_json(fits: Sequence[DoubleGaussianFit], path: str | Path) -> None:
    payload = [fit.to_dict() for fit in fits]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))
