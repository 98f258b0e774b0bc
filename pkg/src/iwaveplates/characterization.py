"""Recovering axis tilt and birefringence from polarization measurements."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ._lsq import gauss_newton
from .algebra import PlateSpec, canonicalize
from .jones import (
    PAULI,
    DomainError,
    PolarizationState,
    StokesVector,
    apply,
    to_stokes,
    waveplate_matrix,
)
from .waveguide import WAVELENGTH

PLAUSIBLE_B = (1e-5, 1e-4)
PREFERRED_B = 2e-5
PAIR_SUM_TOL = 0.02


class AmbiguityError(DomainError):
    """The data cannot identify the requested parameters."""


class IllConditionedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PolarimetrySample:
    input_state: PolarizationState
    output_stokes: StokesVector

    def __post_init__(self):
        s = self.output_stokes
        if s.s0 <= 0:
            raise DomainError("output intensity must be positive")
        object.__setattr__(
            self, "output_stokes", StokesVector(1.0, s.s1 / s.s0, s.s2 / s.s0, s.s3 / s.s0)
        )


@dataclass(frozen=True)
class LengthScanSample:
    length: float
    p_H: Optional[float] = None
    p_V: Optional[float] = None
    p_D: Optional[float] = None
    p_A: Optional[float] = None

    def __post_init__(self):
        if self.length < 0:
            raise DomainError("length must be >= 0")
        for a, b in (("p_H", "p_V"), ("p_D", "p_A")):
            pa, pb = getattr(self, a), getattr(self, b)
            if pa is not None and pb is not None and abs(pa + pb - 1) > PAIR_SUM_TOL:
                raise DomainError(f"{a} + {b} = {pa + pb:.4f} is not normalized")

    def observed(self):
        return [(k, getattr(self, f"p_{k}")) for k in "HVDA" if getattr(self, f"p_{k}") is not None]


@dataclass
class AxisFit:
    theta: float
    delta: float
    rms: float
    covariance: np.ndarray
    converged: bool = True

    def to_json(self, length: Optional[float] = None, wavelength: float = WAVELENGTH) -> dict:
        out = {
            "theta_deg": math.degrees(self.theta),
            "delta_rad": self.delta,
            "rms": self.rms,
            "covariance": np.asarray(self.covariance).tolist(),
        }
        if length is not None:
            out["b"] = birefringence_from_retardance(self.delta, length, wavelength).b
        return out


@dataclass
class TiltFit:
    theta: float
    rms: float
    covariance: np.ndarray
    birefringence: Optional[float] = None
    converged: bool = True

    def to_json(self) -> dict:
        return {
            "theta_deg": math.degrees(self.theta),
            "b": self.birefringence,
            "rms": self.rms,
            "covariance": np.asarray(self.covariance).tolist(),
        }


@dataclass(frozen=True)
class BirefringenceEstimate:
    b: float
    branch: int
    ambiguous: bool
    candidates: Tuple[Tuple[int, float], ...] = field(default=())


def _dwaveplate(theta: float, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of the waveplate matrix in theta and delta."""
    e = complex(math.cos(delta), math.sin(delta))
    s2, c2 = math.sin(2 * theta), math.cos(2 * theta)
    c, s = math.cos(theta), math.sin(theta)
    d_theta = (1 - e) * np.array([[-s2, c2], [c2, s2]])
    d_delta = 1j * e * np.array([[s * s, -s * c], [-s * c, c * c]])
    return d_theta, d_delta


def _check_inputs(samples: Sequence[PolarimetrySample]):
    if len(samples) < 2:
        raise AmbiguityError("need at least two input polarizations")
    vecs = np.array([to_stokes(s.input_state.normalized()).vector for s in samples])
    if np.linalg.matrix_rank(vecs, tol=1e-6) < 2:
        raise AmbiguityError(
            "input states are collinear on the Poincare sphere; "
            "rotation about that axis is unobservable"
        )


def fit_axis_and_retardance(samples: Sequence[PolarimetrySample]) -> AxisFit:
    """Least-squares (theta, delta) of a retarder from input/output Stokes data.

    The result is folded to ``theta in [-pi/4, pi/4)``, ``delta in [0, 2 pi)``.
    """
    samples = list(samples)
    _check_inputs(samples)
    kets = np.array([s.input_state.normalized().amplitudes for s in samples])
    meas = np.array([s.output_stokes.vector for s in samples])
    sig = np.array(PAULI[1:])

    # coarse grid, 1 deg in theta x 2 deg in delta
    th = np.radians(np.arange(-90.0, 90.0, 1.0))
    de = np.radians(np.arange(0.0, 360.0, 2.0))
    T, Dg = np.meshgrid(th, de, indexing="ij")
    c, s, e = np.cos(T), np.sin(T), np.exp(1j * Dg)
    off = (1 - e) * s * c
    M = np.stack([np.stack([c * c + e * s * s, off], -1), np.stack([off, e * c * c + s * s], -1)], -2)
    out = M @ kets.T[None, None]
    out = np.swapaxes(out, -1, -2)
    a, b = out[..., 0], out[..., 1]
    cross = a.conj() * b
    stokes = np.stack([np.abs(a) ** 2 - np.abs(b) ** 2, 2 * cross.real, -2 * cross.imag], -1)
    cost = np.sum((stokes - meas) ** 2, axis=(-1, -2))
    i, j = np.unravel_index(np.argmin(cost), cost.shape)

    def fun(x):
        m = waveplate_matrix(x[0], x[1]).matrix
        psi = kets @ m.T
        return (np.real(np.einsum("ki,xij,kj->kx", psi.conj(), sig, psi)) - meas).ravel()

    def jac(x):
        m = waveplate_matrix(x[0], x[1]).matrix
        psi = kets @ m.T
        cols = []
        for dm in _dwaveplate(x[0], x[1]):
            dpsi = kets @ dm.T
            cols.append((2 * np.real(np.einsum("ki,xij,kj->kx", psi.conj(), sig, dpsi))).ravel())
        return np.column_stack(cols)

    res = gauss_newton(fun, jac, [th[i], de[j]], grad_tol=1e-12, max_iter=200)
    canon, _ = canonicalize(PlateSpec(float(res.x[0]), float(res.x[1])))
    cov = res.covariance()
    if not np.all(np.isfinite(cov)) or np.linalg.cond(res.jacobian.T @ res.jacobian) > 1e12:
        warnings.warn("axis fit is ill-conditioned (retardance near 0 or 2 pi?)",
                      IllConditionedWarning, stacklevel=2)
    return AxisFit(canon.theta, canon.delta, res.rms, cov, res.converged)


def birefringence_from_retardance(
    delta_total: float,
    length: float,
    wavelength: float = WAVELENGTH,
    branch: Optional[int] = None,
    plausible: Tuple[float, float] = PLAUSIBLE_B,
    preferred: float = PREFERRED_B,
) -> BirefringenceEstimate:
    """Invert ``delta = 2 pi b l / lambda`` on the branch ``delta + 2 pi k``.

    Without an explicit ``branch`` the non-negative branch whose ``b`` is
    closest to ``preferred`` is chosen (ties go to the lower ``k``); zero
    retardance always maps to ``b = 0``. The
    estimate is flagged ambiguous when more than one branch lands inside
    ``plausible``.
    """
    if not length > 0:
        raise DomainError("length must be > 0")
    if not wavelength > 0:
        raise DomainError("wavelength must be > 0")
    scale = wavelength / (2 * math.pi * length)
    k_min = math.ceil(-delta_total / (2 * math.pi) - 1e-12)
    k_max = max(k_min, math.ceil((plausible[1] / scale - delta_total) / (2 * math.pi)) + 1)
    cands = tuple((k, (delta_total + 2 * math.pi * k) * scale) for k in range(k_min, k_max + 1))
    in_range = [c for c in cands if plausible[0] <= c[1] <= plausible[1]]
    if branch is None and delta_total == 0:
        k, b = 0, 0.0
    elif branch is None:
        k, b = min(cands, key=lambda c: (abs(c[1] - preferred), c[0]))
    else:
        k, b = branch, (delta_total + 2 * math.pi * branch) * scale
    return BirefringenceEstimate(b, k, len(in_range) > 1, cands)


def _scan_arrays(samples: Sequence[LengthScanSample]):
    lengths, labels, values = [], [], []
    for smp in samples:
        for lab, val in smp.observed():
            lengths.append(smp.length)
            labels.append(lab)
            values.append(val)
    return np.array(lengths), labels, np.array(values)


_SCAN_KETS = {k: PolarizationState.from_label(k).amplitudes for k in "HVDA"}


def _scan_model(theta, b, wavelength, lengths, labels, with_jac=False):
    """H-launched output powers, vectorized over (length, label) pairs."""
    lengths = np.asarray(lengths, dtype=float)
    kets = np.array([_SCAN_KETS[k] for k in labels]).reshape(-1, 2)
    delta = 2 * math.pi * b * lengths / wavelength
    c, s = math.cos(theta), math.sin(theta)
    e = np.exp(1j * delta)
    # first column of the waveplate matrix
    psi = np.stack([c * c + e * s * s, (1 - e) * s * c], -1)
    amp = np.einsum("ni,ni->n", kets.conj(), psi)
    p = np.abs(amp) ** 2
    if not with_jac:
        return p
    s2, c2 = math.sin(2 * theta), math.cos(2 * theta)
    dth = np.stack([(e - 1) * s2, (1 - e) * c2], -1)
    dde = np.stack([1j * e * s * s, -1j * e * s * c], -1)
    jac = np.empty((len(lengths), 2))
    jac[:, 0] = 2 * np.real(amp.conj() * np.einsum("ni,ni->n", kets.conj(), dth))
    jac[:, 1] = (2 * np.real(amp.conj() * np.einsum("ni,ni->n", kets.conj(), dde))
                 * 2 * math.pi * lengths / wavelength)
    return p, jac


def fit_tilt_from_scan(
    samples: Sequence[LengthScanSample],
    birefringence: float,
    wavelength: float = WAVELENGTH,
    fit_birefringence: bool = False,
) -> TiltFit:
    """Fit the axis tilt of H-launched power-vs-length data.

    Parameters
    ----------
    samples : sequence of LengthScanSample
        Normalized powers at several lengths of the tilted section.
    birefringence : float
        Known (or starting) ``b``.
    fit_birefringence : bool
        Also refine ``b``.
    """
    samples = list(samples)
    lengths, labels, values = _scan_arrays(samples)
    if len({s.length for s in samples}) < 3:
        raise DomainError("need at least three distinct lengths")
    if birefringence <= 0:
        raise DomainError("birefringence must be > 0")
    if np.ptp(lengths) < wavelength / (2 * birefringence):
        warnings.warn("scan spans less than half a beat length; tilt is poorly constrained",
                      IllConditionedWarning, stacklevel=2)

    grid = np.radians(np.arange(-45.0, 45.0 + 1e-9, 0.25))
    cost = [np.sum((_scan_model(t, birefringence, wavelength, lengths, labels) - values) ** 2)
            for t in grid]
    t0 = grid[int(np.argmin(cost))]

    if fit_birefringence:
        bscale = birefringence

        def fun(x):
            return _scan_model(x[0], x[1] * bscale, wavelength, lengths, labels) - values

        def jac(x):
            _, j = _scan_model(x[0], x[1] * bscale, wavelength, lengths, labels, True)
            return np.column_stack([j[:, 0], j[:, 1] * bscale])

        res = gauss_newton(fun, jac, [t0, 1.0], grad_tol=1e-12)
        cov = res.covariance()
        cov[:, 1] *= bscale
        cov[1, :] *= bscale
        return TiltFit(float(res.x[0]), res.rms, cov, float(res.x[1] * bscale), res.converged)

    def fun1(x):
        return _scan_model(x[0], birefringence, wavelength, lengths, labels) - values

    def jac1(x):
        return _scan_model(x[0], birefringence, wavelength, lengths, labels, True)[1][:, :1]

    res = gauss_newton(fun1, jac1, [t0], grad_tol=1e-12)
    return TiltFit(float(res.x[0]), res.rms, res.covariance(), birefringence, res.converged)


def synthetic_polarimetry(theta: float, delta: float,
                          inputs: Sequence[str] = ("H", "V", "D", "A", "R", "L"),
                          noise: float = 0.0,
                          rng: Optional[np.random.Generator] = None) -> List[PolarimetrySample]:
    """Output Stokes vectors of a retarder for labelled inputs, optionally noisy."""
    m = waveplate_matrix(theta, delta)
    out = []
    for lab in inputs:
        psi_in = PolarizationState.from_label(lab)
        s = to_stokes(apply(m, psi_in))
        if noise:
            rng = rng if rng is not None else np.random.default_rng()
            v = s.vector + rng.normal(0, noise, 3)
            v = v / np.linalg.norm(v)
            s = StokesVector(1.0, *v)
        out.append(PolarimetrySample(psi_in, s))
    return out


def synthetic_scan(theta: float, birefringence: float, lengths: Sequence[float],
                   wavelength: float = WAVELENGTH, rel_noise: float = 0.0,
                   rng: Optional[np.random.Generator] = None) -> List[LengthScanSample]:
    """H-input scan with optional multiplicative Gaussian noise on each power.

    Noisy powers are renormalized within each basis, as measured data are.
    """
    out = []
    for length in lengths:
        p = _scan_model(theta, birefringence, wavelength, [length] * 4, list("HVDA"))
        if rel_noise:
            rng = rng if rng is not None else np.random.default_rng()
            p = p * (1 + rel_noise * rng.standard_normal(4))
            p = np.clip(p, 0, None)
            p[:2] /= p[:2].sum()
            p[2:] /= p[2:].sum()
        out.append(LengthScanSample(float(length), *map(float, p)))
    return out


def montecarlo_tilt(theta: float, birefringence: float, lengths: Sequence[float],
                    rel_noise: float, n_trials: int, seed: int = 0,
                    wavelength: float = WAVELENGTH) -> np.ndarray:
    """Fitted tilts over repeated noisy synthetic scans."""
    rng = np.random.default_rng(seed)
    fits = np.empty(n_trials)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedWarning)
        for n in range(n_trials):
            data = synthetic_scan(theta, birefringence, lengths, wavelength, rel_noise, rng)
            fits[n] = fit_tilt_from_scan(data, birefringence, wavelength).theta
    return fits
