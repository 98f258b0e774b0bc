"""Paraxial geometry of the lens-shift writing setup.

All lengths in this module are millimetres (so the calibration constant
``C`` is in mm^-1); angles are radians unless a name says otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ._lsq import gauss_newton
from .jones import DomainError

# long-focal lens, lens-objective distance, objective aperture and beam
LENS_FOCAL_MM = 500.0
LENS_DISTANCE_MM = 440.0
APERTURE_MM = 4.5
BEAM_DIAMETER_MM = 1.6
NA_FULL = 1.4

CALIBRATION_C = 0.39
CALIBRATION_S0 = -0.069

DEMONSTRATED_MAX_TILT = math.radians(32.0)
OFFSET_ANCHOR_UM = 11.2
OFFSET_ANCHOR_TILT = math.radians(22.5)


class TiltRangeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SetupGeometry:
    F: float = LENS_FOCAL_MM
    L: float = LENS_DISTANCE_MM
    f: float = LENS_DISTANCE_MM / (CALIBRATION_C * LENS_FOCAL_MM)
    D: float = APERTURE_MM
    beam_diameter: float = BEAM_DIAMETER_MM
    na_full: float = NA_FULL

    def __post_init__(self):
        for name in ("F", "L", "f", "D", "beam_diameter", "na_full"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0")

    @classmethod
    def from_calibration(cls, model: "CalibrationModel", **kw) -> "SetupGeometry":
        """Geometry whose objective focal length reproduces ``model.C``."""
        F = kw.pop("F", LENS_FOCAL_MM)
        L = kw.pop("L", LENS_DISTANCE_MM)
        return cls(F=F, L=L, f=L / (model.C * F), **kw)


@dataclass(frozen=True)
class CalibrationModel:
    C: float
    s0: float
    rms: float = 0.0
    covariance: Optional[Tuple[Tuple[float, float], Tuple[float, float]]] = None
    converged: bool = True

    def __post_init__(self):
        if not self.C > 0:
            raise DomainError("calibration constant C must be > 0")

    def to_json(self) -> dict:
        return {"C_per_mm": self.C, "s0_mm": self.s0, "rms_deg": math.degrees(self.rms)}


def beam_displacement(s: float, geom: SetupGeometry = SetupGeometry()) -> float:
    return geom.L / geom.F * s


def angular_deflection(s: float, geom: SetupGeometry = SetupGeometry()) -> float:
    return s / geom.F


def tilt_angle(d: float, geom: SetupGeometry = SetupGeometry()) -> float:
    return math.atan(d / geom.f)


def tilt_from_lens_shift(s: float, geom: SetupGeometry = SetupGeometry()) -> float:
    return math.atan(s * geom.L / (geom.f * geom.F))


def effective_na(geom: SetupGeometry = SetupGeometry()) -> float:
    if geom.beam_diameter > geom.D:
        raise DomainError("beam overfills the objective aperture")
    return geom.na_full * geom.beam_diameter / geom.D


def max_tilt(geom: SetupGeometry = SetupGeometry()) -> float:
    """Largest tilt with the whole beam still inside the aperture.

    The beam edge reaches the aperture rim at ``d = (D - 2w) / 2``.
    """
    return math.atan((geom.D - geom.beam_diameter) / (2 * geom.f))


def _model(x, s):
    return np.arctan((s - x[1]) * x[0])


def fit_calibration(samples: Iterable[Tuple[float, float]]) -> CalibrationModel:
    """Fit ``theta = arctan((s - s0) C)`` to ``(s_mm, theta_rad)`` pairs.

    A coarse grid over ``C in (0, 2]`` and ``s0 in [-1, 1]`` seeds a
    Gauss-Newton refinement.
    """
    data = np.asarray(list(samples), dtype=float)
    if data.ndim != 2 or data.shape[0] < 3 or data.shape[1] != 2:
        raise DomainError("need at least 3 (s, theta) samples")
    s, theta = data[:, 0], data[:, 1]
    if np.ptp(s) == 0:
        raise DomainError("all lens positions are equal")

    cs = np.linspace(0.01, 2.0, 200)
    s0s = np.linspace(-1.0, 1.0, 201)
    pred = np.arctan((s[None, None, :] - s0s[None, :, None]) * cs[:, None, None])
    cost = np.sum((pred - theta) ** 2, axis=-1)
    i, j = np.unravel_index(np.argmin(cost), cost.shape)

    def fun(x):
        return _model(x, s) - theta

    def jac(x):
        u = (s - x[1]) * x[0]
        w = 1.0 / (1.0 + u * u)
        return np.column_stack([(s - x[1]) * w, -x[0] * w])

    res = gauss_newton(fun, jac, [cs[i], s0s[j]], grad_tol=1e-10, max_iter=200)
    cov = res.covariance()
    return CalibrationModel(
        C=float(res.x[0]),
        s0=float(res.x[1]),
        rms=res.rms,
        covariance=tuple(map(tuple, cov.tolist())),
        converged=res.converged,
    )


def predict_tilt(model: CalibrationModel, s: float) -> float:
    theta = math.atan((s - model.s0) * model.C)
    if abs(theta) > DEMONSTRATED_MAX_TILT:
        warnings.warn(
            f"tilt {math.degrees(theta):.1f} deg exceeds the demonstrated 32 deg range",
            TiltRangeWarning,
            stacklevel=2,
        )
    return theta


def lens_shift_for_tilt(model: CalibrationModel, theta: float) -> float:
    """Inverse of :func:`predict_tilt`."""
    if not abs(theta) < math.pi / 2:
        raise DomainError("tilt must lie in (-90, 90) degrees")
    return model.s0 + math.tan(theta) / model.C


def lateral_offset_um(model: CalibrationModel, theta: float) -> float:
    """Focal-spot offset relative to the untilted section, micrometres.

    Linear in the lens shift (the deflection is ``s / F``) and pinned to
    11.2 um at 22.5 deg. With one anchor this is an extrapolation.
    """
    ds = lens_shift_for_tilt(model, theta) - model.s0
    ds_anchor = lens_shift_for_tilt(model, OFFSET_ANCHOR_TILT) - model.s0
    return OFFSET_ANCHOR_UM * ds / ds_anchor


def offset_compensation_table(
    angles: Sequence[float],
    model: CalibrationModel = CalibrationModel(CALIBRATION_C, CALIBRATION_S0),
) -> List[Tuple[float, float]]:
    return [(float(a), lateral_offset_um(model, a)) for a in angles]


def synthetic_calibration(model: CalibrationModel, s_values: Sequence[float],
                          noise_rad: float = 0.0, rng: Optional[np.random.Generator] = None):
    s = np.asarray(s_values, dtype=float)
    theta = np.arctan((s - model.s0) * model.C)
    if noise_rad:
        rng = rng if rng is not None else np.random.default_rng()
        theta = theta + rng.normal(0.0, noise_rad, size=theta.shape)
    return list(zip(s.tolist(), theta.tolist()))
