"""Shot-noise-limited CW ODMR acquisition.

Expected photon counts per sweep bin are rate * dwell * passes * PL(f);
measured counts are Poisson draws around that expectation.  Poisson is
the only noise source, so the analytic CW sensitivity formula is exactly
this model's noise floor.

Randomness uses numpy's Philox counter-based generator keyed by
(seed, sensor index, stream index), so per-sensor noise streams are
independent and results do not depend on evaluation order.  Repeated
sweep passes share one draw per bin: a sum of independent Poisson
variables is Poisson in the summed mean, so aggregating passes is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ProtocolError
from .fields import MagneticSource, as_vec3, total_field
from .nvspin import FrequencyGrid, NvParams, ensemble_lineshape, single_nv_lineshape

_MAX_EXPECTED = float(2**53)


@dataclass(frozen=True)
class SensorSpec:
    """One NV sensor: position, readout mode, spin parameters, brightness."""

    position: np.ndarray
    nv: NvParams = field(default_factory=NvParams)
    mode: str = "ensemble"
    axis: np.ndarray | None = None
    count_rate: float = 2e5

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", as_vec3(self.position))
        if self.mode not in ("ensemble", "single"):
            raise ValueError(f"unknown sensor mode: {self.mode!r}")
        if self.count_rate <= 0.0:
            raise ValueError("count_rate must be positive")
        if self.mode == "single":
            if self.axis is None:
                raise ValueError("single-NV sensors require an axis")
            axis = as_vec3(self.axis)
            norm = np.linalg.norm(axis)
            if norm == 0.0:
                raise ValueError("axis must be a unit vector")
            object.__setattr__(self, "axis", axis / norm)
        elif self.axis is not None:
            object.__setattr__(self, "axis", as_vec3(self.axis))


@dataclass(frozen=True)
class SweepProtocol:
    """Repeated-sweep CW ODMR timing.

    Integration time is quantised to whole sweep passes; the remainder
    is discarded, matching how repeated CW sweeps accumulate in
    practice and keeping expected-count bookkeeping exact.
    """

    grid: FrequencyGrid = field(default_factory=FrequencyGrid)
    dwell: float = 1e-3
    integration_time: float = 360.0

    def __post_init__(self) -> None:
        if self.dwell <= 0.0:
            raise ValueError("dwell must be positive")
        if self.integration_time < self.grid.n_points * self.dwell:
            raise ProtocolError(
                "integration_time shorter than a single sweep pass "
                f"({self.integration_time} s < "
                f"{self.grid.n_points * self.dwell} s)"
            )

    @property
    def passes(self) -> int:
        return int(self.integration_time // (self.grid.n_points * self.dwell))

    @property
    def time_per_bin(self) -> float:
        """Accumulated dwell per frequency bin over all passes, seconds."""
        return self.dwell * self.passes


@dataclass(frozen=True)
class OdmrSpectrum:
    """Accumulated sweep: raw counts, their expectation, and normalised PL."""

    grid: FrequencyGrid
    counts: np.ndarray
    expected: np.ndarray
    normalized: np.ndarray

    def __post_init__(self) -> None:
        n = self.grid.n_points
        for name in ("counts", "expected", "normalized"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frequency_hz", "counts", "expected", "normalized"])
            for f, c, e, n in zip(
                self.grid.frequencies, self.counts, self.expected, self.normalized
            ):
                writer.writerow([repr(f), int(c), repr(e), repr(n)])


def counting_rng(
    seed: int, sensor_index: int = 0, stream: int = 0
) -> np.random.Generator:
    """Philox generator for one sensor's photon stream.

    Keyed by (seed, sensor_index, stream) through a SeedSequence spawn
    key: deterministic, portable, and independent of the order in which
    sensors or frames are evaluated.
    """
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(sensor_index, stream))
    return np.random.Generator(np.random.Philox(seq))


def noiseless_pl(sensor: SensorSpec, b_field: Sequence[float]) -> np.ndarray:
    """Normalised PL on the default grid of `sensor` for a field vector."""
    return noiseless_pl_on_grid(sensor, b_field, FrequencyGrid())


def noiseless_pl_on_grid(
    sensor: SensorSpec, b_field: Sequence[float], grid: FrequencyGrid
) -> np.ndarray:
    b = as_vec3(b_field)
    if sensor.mode == "ensemble":
        return ensemble_lineshape(float(np.linalg.norm(b)), sensor.nv, grid)
    return single_nv_lineshape(b, sensor.axis, sensor.nv, grid)


def expected_counts(
    sensor: SensorSpec, b_field: Sequence[float], protocol: SweepProtocol
) -> np.ndarray:
    """Expected counts per bin: R * dwell * passes * PL(f)."""
    pl = noiseless_pl_on_grid(sensor, b_field, protocol.grid)
    return sensor.count_rate * protocol.time_per_bin * pl


def sample_counts(expected: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Poisson counts for an expected-count array."""
    if np.any(expected < 0.0):
        raise ValueError("expected counts must be non-negative")
    if np.any(expected > _MAX_EXPECTED):
        raise ProtocolError(
            "expected counts exceed 2^53; shorten the protocol or reduce "
            "the count rate"
        )
    return rng.poisson(expected)


def spectrum_from_expected(
    expected: np.ndarray,
    baseline: float,
    grid: FrequencyGrid,
    rng: np.random.Generator,
) -> OdmrSpectrum:
    """Draw one spectrum around a precomputed expectation.

    `baseline` is the off-resonance count level (R * dwell * passes)
    used to normalise the raw counts.
    """
    counts = sample_counts(np.asarray(expected, dtype=np.float64), rng)
    return OdmrSpectrum(
        grid=grid,
        counts=counts,
        expected=np.asarray(expected, dtype=np.float64),
        normalized=counts / baseline,
    )


def simulate_odmr(
    sensor: SensorSpec,
    b_at_sensor: Sequence[float],
    protocol: SweepProtocol,
    rng_seed: int,
    sensor_index: int = 0,
    stream: int = 0,
) -> OdmrSpectrum:
    """Simulate one sensor's accumulated CW ODMR sweep."""
    expected = expected_counts(sensor, b_at_sensor, protocol)
    rng = counting_rng(rng_seed, sensor_index, stream)
    baseline = sensor.count_rate * protocol.time_per_bin
    return spectrum_from_expected(expected, baseline, protocol.grid, rng)


def acquire_array(
    sensors: Sequence[SensorSpec],
    source: MagneticSource | Iterable[MagneticSource],
    protocol: SweepProtocol,
    seed: int,
    stream: int = 0,
) -> list[OdmrSpectrum]:
    """Parallel acquisition: one spectrum per sensor at its local field.

    Noise streams derive deterministically from (seed, sensor index), so
    identical seeds give bit-identical counts regardless of evaluation
    order or concurrency.
    """
    if len(sensors) < 1:
        raise ValueError("need at least one sensor")
    spectra = []
    for index, sensor in enumerate(sensors):
        b = total_field(source, sensor.position)
        spectra.append(
            simulate_odmr(sensor, b, protocol, rng_seed=seed,
                          sensor_index=index, stream=stream)
        )
    return spectra
