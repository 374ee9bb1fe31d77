"""Magnetic sources and analytic field evaluation.

All sources reduce to two primitives: a point dipole (needle tip and
microrobot, the latter because a uniformly magnetised sphere is exactly
dipolar outside its own radius) and a uniform bias field.  Fields,
Jacobians, and magnitude gradients are evaluated analytically; the
finite-difference forms exist only as test oracles.

Units are SI: positions in metres, moments in A*m^2, fields in tesla,
gradients in tesla/metre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .constants import MU0_OVER_4PI
from .errors import CalibrationError, FieldSingularityError

# Below this separation the dipole kernel is treated as singular.
_SINGULARITY_RADIUS = 1e-12

# Central-difference step for the gradient oracle, two orders below the
# sensor pitch and far above the double-precision noise floor.
FD_STEP = 1e-7

_DEG45 = math.sqrt(0.5)

# Needle tilted 45 degrees out of the chip plane, pointing toward the
# first sensor of the array (negative x, downward z).
DEFAULT_NEEDLE_DIRECTION = (-_DEG45, 0.0, -_DEG45)


def as_vec3(v: Sequence[float] | np.ndarray) -> np.ndarray:
    """Coerce to a finite float64 vector of shape (3,)."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"vector has non-finite components: {arr}")
    return arr


@dataclass(frozen=True)
class MagneticSource:
    """A field-producing object: needle tip, microrobot, or uniform bias.

    Dipole kinds ("needle_tip", "microrobot") are parameterised by a
    position, a scalar moment magnitude, and a unit moment direction.
    The "uniform_bias" kind carries a constant field vector instead and
    ignores the dipole parameters.
    """

    kind: str
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    moment_magnitude: float = 0.0
    moment_direction: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, 1.0])
    )
    field_vector: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        if self.kind not in ("needle_tip", "microrobot", "uniform_bias"):
            raise ValueError(f"unknown source kind: {self.kind!r}")
        object.__setattr__(self, "position", as_vec3(self.position))
        object.__setattr__(self, "field_vector", as_vec3(self.field_vector))
        direction = as_vec3(self.moment_direction)
        if self.kind != "uniform_bias":
            norm = np.linalg.norm(direction)
            if abs(norm - 1.0) > 1e-12:
                if norm == 0.0:
                    raise ValueError("moment_direction must be a unit vector")
                direction = direction / norm
            if self.moment_magnitude < 0.0:
                raise ValueError("moment_magnitude must be non-negative")
        object.__setattr__(self, "moment_direction", direction)

    @property
    def moment(self) -> np.ndarray:
        """Moment vector in A*m^2 (zero for a uniform bias)."""
        if self.kind == "uniform_bias":
            return np.zeros(3)
        return self.moment_magnitude * self.moment_direction

    def moved_to(self, position: Sequence[float]) -> "MagneticSource":
        """Copy of this source translated to a new position."""
        return replace(self, position=as_vec3(position))

    def rotated_to(self, direction: Sequence[float]) -> "MagneticSource":
        """Copy of this source with a new moment direction."""
        return replace(self, moment_direction=as_vec3(direction))


def needle_tip(
    position: Sequence[float],
    moment_magnitude: float,
    moment_direction: Sequence[float] = DEFAULT_NEEDLE_DIRECTION,
) -> MagneticSource:
    """Magnetised needle tip modelled as a point dipole."""
    return MagneticSource(
        kind="needle_tip",
        position=position,
        moment_magnitude=moment_magnitude,
        moment_direction=moment_direction,
    )


def microrobot(
    position: Sequence[float],
    moment_magnitude: float,
    moment_direction: Sequence[float] = (1.0, 0.0, 0.0),
) -> MagneticSource:
    """Spherical magnetic microrobot; dipolar everywhere outside its body."""
    return MagneticSource(
        kind="microrobot",
        position=position,
        moment_magnitude=moment_magnitude,
        moment_direction=moment_direction,
    )


def uniform_bias(field_vector: Sequence[float]) -> MagneticSource:
    """Spatially homogeneous bias field."""
    return MagneticSource(kind="uniform_bias", field_vector=field_vector)


@dataclass(frozen=True)
class SensorLayout:
    """Positions of the sensor array plus fabrication metadata.

    The footprint records the nanodiamond deposition window (long edge
    along the waveguide); it does not enter any field calculation.
    """

    positions: np.ndarray
    pitch: float = 127e-6
    footprint: tuple[float, float] = (4e-6, 0.5e-6)

    def __post_init__(self) -> None:
        pos = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError("positions must be an (n, 3) array with n >= 1")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if pos.shape[0] > 1:
            spans = pos.max(axis=0) - pos.min(axis=0)
            axis = int(np.argmax(spans))
            if not np.all(np.diff(pos[:, axis]) > 0):
                raise ValueError(
                    "positions must be strictly ordered along the array axis"
                )
        object.__setattr__(self, "positions", pos)

    @property
    def n_sensors(self) -> int:
        return self.positions.shape[0]

    @property
    def centre(self) -> np.ndarray:
        return self.positions.mean(axis=0)


def linear_array(
    n_sensors: int = 8,
    pitch: float = 127e-6,
    origin: Sequence[float] = (0.0, 0.0, 0.0),
    axis: Sequence[float] = (0.0, 1.0, 0.0),
) -> SensorLayout:
    """Evenly pitched sensor line, by default along +y from the origin."""
    if n_sensors < 1:
        raise ValueError("n_sensors must be >= 1")
    origin_v = as_vec3(origin)
    axis_v = as_vec3(axis)
    axis_v = axis_v / np.linalg.norm(axis_v)
    offsets = np.arange(n_sensors)[:, None] * pitch * axis_v[None, :]
    return SensorLayout(positions=origin_v[None, :] + offsets, pitch=pitch)


def _separation(source_pos: np.ndarray, eval_pos: np.ndarray) -> np.ndarray:
    r = eval_pos - source_pos
    if np.linalg.norm(r) < _SINGULARITY_RADIUS:
        raise FieldSingularityError(
            f"field requested at the source location {source_pos}"
        )
    return r


def dipole_field(
    moment: Sequence[float],
    source_pos: Sequence[float],
    eval_pos: Sequence[float],
) -> np.ndarray:
    """Point-dipole field B = (mu0/4pi) [3(m.r^)r^ - m] / r^3, in tesla."""
    m = as_vec3(moment)
    r = _separation(as_vec3(source_pos), as_vec3(eval_pos))
    dist = np.linalg.norm(r)
    rhat = r / dist
    return MU0_OVER_4PI * (3.0 * np.dot(m, rhat) * rhat - m) / dist**3


def dipole_field_jacobian(
    moment: Sequence[float],
    source_pos: Sequence[float],
    eval_pos: Sequence[float],
) -> np.ndarray:
    """Jacobian dB_i/dx_j of the dipole field at eval_pos, shape (3, 3).

    Symmetric (curl-free) and traceless (divergence-free) away from the
    source; both properties are exercised by the test suite.
    """
    m = as_vec3(moment)
    r = _separation(as_vec3(source_pos), as_vec3(eval_pos))
    dist = np.linalg.norm(r)
    s = np.dot(m, r)
    outer_mr = np.outer(m, r)
    jac = (
        outer_mr
        + outer_mr.T
        + s * np.eye(3)
        - 5.0 * s * np.outer(r, r) / dist**2
    )
    return 3.0 * MU0_OVER_4PI * jac / dist**5


def field_at(source: MagneticSource, pos: Sequence[float]) -> np.ndarray:
    """Field of a single source at a point, in tesla."""
    if source.kind == "uniform_bias":
        return source.field_vector.copy()
    return dipole_field(source.moment, source.position, pos)


def field_jacobian(source: MagneticSource, pos: Sequence[float]) -> np.ndarray:
    """Spatial Jacobian of a single source's field at a point."""
    if source.kind == "uniform_bias":
        return np.zeros((3, 3))
    return dipole_field_jacobian(source.moment, source.position, pos)


def _as_source_list(
    source: MagneticSource | Iterable[MagneticSource],
) -> list[MagneticSource]:
    if isinstance(source, MagneticSource):
        return [source]
    return list(source)


def total_field(
    source: MagneticSource | Iterable[MagneticSource],
    pos: Sequence[float],
) -> np.ndarray:
    """Superposed field of one or more sources at a point."""
    sources = _as_source_list(source)
    out = np.zeros(3)
    for s in sources:
        out += field_at(s, pos)
    return out


def field_magnitude_gradient(
    source: MagneticSource | Iterable[MagneticSource],
    pos: Sequence[float],
) -> np.ndarray:
    """Gradient of |B| at a point, in tesla/metre.

    Uses the identity grad|B| = J^T B / |B| with the analytic Jacobian,
    which remains exact for superposed sources.  Returns zero where the
    total field vanishes (the magnitude has no defined gradient there,
    and a zero keeps downstream error budgets finite).
    """
    sources = _as_source_list(source)
    b = np.zeros(3)
    jac = np.zeros((3, 3))
    for s in sources:
        b += field_at(s, pos)
        jac += field_jacobian(s, pos)
    norm = np.linalg.norm(b)
    if norm == 0.0:
        return np.zeros(3)
    return jac.T @ b / norm


def field_magnitude_gradient_fd(
    source: MagneticSource | Iterable[MagneticSource],
    pos: Sequence[float],
    step: float = FD_STEP,
) -> np.ndarray:
    """Central-difference grad|B|; the independent oracle for the analytic form."""
    pos_v = as_vec3(pos)
    grad = np.zeros(3)
    for j in range(3):
        fwd = pos_v.copy()
        bwd = pos_v.copy()
        fwd[j] += step
        bwd[j] -= step
        b_fwd = np.linalg.norm(total_field(source, fwd))
        b_bwd = np.linalg.norm(total_field(source, bwd))
        grad[j] = (b_fwd - b_bwd) / (2.0 * step)
    return grad


def on_axis_gradient_magnitude(moment_magnitude: float, distance: float) -> float:
    """|grad|B|| on the dipole axis: 6 (mu0/4pi) m / r^4."""
    return 6.0 * MU0_OVER_4PI * moment_magnitude / distance**4


def calibrate_dipole_moment(
    target_gradient: float,
    standoff: float,
    rel_tol: float = 1e-6,
    bracket: tuple[float, float] | None = None,
    max_iter: int = 200,
) -> float:
    """Moment magnitude whose on-axis |grad|B|| at `standoff` hits the target.

    Solved by bisection against the same gradient evaluation used
    everywhere else, so re-evaluating the calibrated source reproduces
    the target by construction.

    Args:
        target_gradient: Desired |grad|B|| in T/m; must be positive.
        standoff: On-axis distance from the dipole in metres.
        rel_tol: Relative tolerance on the achieved gradient.
        bracket: Optional (low, high) moment bracket in A*m^2.  When
            omitted, a bracket is derived from the closed-form guess.
        max_iter: Bisection iteration cap.

    Raises:
        CalibrationError: If the bracket does not straddle the target.
    """
    if target_gradient <= 0.0 or standoff <= 0.0:
        raise ValueError("target_gradient and standoff must be positive")

    axis = np.array([0.0, 0.0, 1.0])

    def achieved(m: float) -> float:
        src = MagneticSource(
            kind="needle_tip",
            position=np.zeros(3),
            moment_magnitude=m,
            moment_direction=axis,
        )
        return float(
            np.linalg.norm(field_magnitude_gradient(src, standoff * axis))
        )

    if bracket is None:
        guess = target_gradient * standoff**4 / (6.0 * MU0_OVER_4PI)
        lo, hi = 0.25 * guess, 4.0 * guess
    else:
        lo, hi = bracket
    if lo <= 0.0 or hi <= lo:
        raise CalibrationError(f"invalid moment bracket ({lo}, {hi})")
    g_lo, g_hi = achieved(lo), achieved(hi)
    if not (g_lo <= target_gradient <= g_hi):
        raise CalibrationError(
            f"bracket ({lo:.3e}, {hi:.3e}) A*m^2 yields gradients "
            f"({g_lo:.3e}, {g_hi:.3e}) T/m which do not straddle "
            f"{target_gradient:.3e} T/m"
        )

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        g_mid = achieved(mid)
        if abs(g_mid - target_gradient) <= rel_tol * target_gradient:
            return mid
        if g_mid < target_gradient:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"bisection did not reach tolerance {rel_tol} in {max_iter} iterations"
    )
