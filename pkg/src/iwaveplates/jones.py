"""Jones-calculus primitives for polarization qubits.

Conventions used throughout the package:

* basis order is (H, V), H being linear polarization along x;
* R = (1, -i)/sqrt(2) and L = (1, i)/sqrt(2);
* Stokes / Pauli operators are defined as differences of projectors,
  ``sigma_X = Pi_X - Pi_X_perp`` for X in {H, D, R}, so that
  ``p_X = (1 + s_X) / 2`` holds for every state.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence, Union

import numpy as np

SQRT2 = math.sqrt(2.0)

LABELS = ("H", "V", "D", "A", "R", "L")
ORTHOGONAL = {"H": "V", "V": "H", "D": "A", "A": "D", "R": "L", "L": "R"}

_KETS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([1.0, 1.0], dtype=complex) / SQRT2,
    "A": np.array([1.0, -1.0], dtype=complex) / SQRT2,
    "R": np.array([1.0, -1j], dtype=complex) / SQRT2,
    "L": np.array([1.0, 1j], dtype=complex) / SQRT2,
}

PROJECTORS = {k: np.outer(v, v.conj()) for k, v in _KETS.items()}

# s1, s2, s3 operators (H-V, D-A, R-L)
PAULI = (
    np.eye(2, dtype=complex),
    PROJECTORS["H"] - PROJECTORS["V"],
    PROJECTORS["D"] - PROJECTORS["A"],
    PROJECTORS["R"] - PROJECTORS["L"],
)


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a model."""


class PolarizationState:
    """Pure polarization state given by its Jones vector (alpha, beta)."""

    __slots__ = ("_amps",)

    def __init__(self, alpha: complex, beta: complex, normalize: bool = True):
        amps = np.array([alpha, beta], dtype=complex)
        if not np.all(np.isfinite(amps)):
            raise DomainError("Jones amplitudes must be finite")
        if normalize:
            n = np.linalg.norm(amps)
            if n == 0:
                raise DomainError("cannot normalize the zero vector")
            amps = amps / n
        amps.setflags(write=False)
        self._amps = amps

    @classmethod
    def from_label(cls, label: str) -> "PolarizationState":
        try:
            a, b = _KETS[label]
        except KeyError:
            raise DomainError(f"unknown polarization label {label!r}") from None
        return cls(a, b, normalize=False)

    @classmethod
    def from_vector(cls, vec, normalize: bool = True) -> "PolarizationState":
        vec = np.asarray(vec, dtype=complex).reshape(2)
        return cls(vec[0], vec[1], normalize=normalize)

    @property
    def amplitudes(self) -> np.ndarray:
        return self._amps

    @property
    def alpha(self) -> complex:
        return complex(self._amps[0])

    @property
    def beta(self) -> complex:
        return complex(self._amps[1])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self._amps))

    def normalized(self) -> "PolarizationState":
        return PolarizationState(self._amps[0], self._amps[1], normalize=True)

    def density_matrix(self) -> "DensityMatrix":
        s = self.normalized().amplitudes
        return DensityMatrix(np.outer(s, s.conj()))

    def __repr__(self):
        return f"PolarizationState({self.alpha:.6g}, {self.beta:.6g})"


H = PolarizationState.from_label("H")
V = PolarizationState.from_label("V")
D = PolarizationState.from_label("D")
A = PolarizationState.from_label("A")
R = PolarizationState.from_label("R")
L = PolarizationState.from_label("L")


class PlateOperator:
    """A 2x2 Jones matrix.

    ``op @ state`` applies the operator to a :class:`PolarizationState`
    (without renormalizing), ``op2 @ op1`` composes ``op1`` first.
    """

    __slots__ = ("_m",)

    def __init__(self, matrix):
        m = np.array(matrix, dtype=complex)
        if m.shape != (2, 2):
            raise DomainError(f"Jones matrix must be 2x2, got {m.shape}")
        m.setflags(write=False)
        self._m = m

    @classmethod
    def identity(cls) -> "PlateOperator":
        return cls(np.eye(2))

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    @property
    def dagger(self) -> "PlateOperator":
        return PlateOperator(self._m.conj().T)

    def is_unitary(self, atol: float = 1e-10) -> bool:
        return bool(np.max(np.abs(self._m.conj().T @ self._m - np.eye(2))) < atol)

    def __matmul__(self, other):
        if isinstance(other, PlateOperator):
            return PlateOperator(self._m @ other._m)
        if isinstance(other, PolarizationState):
            return apply(self, other)
        return NotImplemented

    def __repr__(self):
        return f"PlateOperator({self._m.tolist()})"


class StokesVector(NamedTuple):
    s0: float
    s1: float
    s2: float
    s3: float

    @property
    def vector(self) -> np.ndarray:
        """The reduced (s1, s2, s3) part."""
        return np.array([self.s1, self.s2, self.s3])

    @property
    def degree_of_polarization(self) -> float:
        return math.sqrt(self.s1**2 + self.s2**2 + self.s3**2) / self.s0


class DensityMatrix:
    """Hermitian, positive semidefinite, unit-trace matrix of size 2 or 4.

    Parameters
    ----------
    matrix : array_like
        The d x d matrix.
    check : bool
        If True (default) the full physicality conditions are enforced.
        With ``check=False`` only shape, hermiticity and trace are enforced,
        which is what linear-inversion estimates need; ``is_physical`` then
        reports whether the matrix is positive semidefinite.
    """

    __slots__ = ("_m",)

    HERMITIAN_TOL = 1e-10
    TRACE_TOL = 1e-10
    EIG_TOL = 1e-9

    def __init__(self, matrix, check: bool = True):
        m = np.array(matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] not in (2, 4):
            raise DomainError(f"density matrix must be 2x2 or 4x4, got {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > self.HERMITIAN_TOL:
            raise DomainError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1) > self.TRACE_TOL:
            raise DomainError(f"density matrix trace is {np.trace(m).real!r}, not 1")
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        self._m = m
        if check and not self.is_physical:
            raise DomainError("density matrix is not positive semidefinite")

    @classmethod
    def from_stokes(cls, s1: float, s2: float, s3: float) -> "DensityMatrix":
        return cls(0.5 * (PAULI[0] + s1 * PAULI[1] + s2 * PAULI[2] + s3 * PAULI[3]))

    @classmethod
    def maximally_mixed(cls, dim: int = 2) -> "DensityMatrix":
        return cls(np.eye(dim) / dim)

    @classmethod
    def pure(cls, vec) -> "DensityMatrix":
        v = np.asarray(vec, dtype=complex).ravel()
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    @property
    def dim(self) -> int:
        return self._m.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self._m)

    @property
    def is_physical(self) -> bool:
        return bool(self.eigenvalues[0] >= -self.EIG_TOL)

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self._m @ self._m)))

    def fidelity(self, other: "DensityMatrix") -> float:
        return fidelity(self, other)

    def __repr__(self):
        return f"DensityMatrix(dim={self.dim}, purity={self.purity:.6f})"


State = Union[PolarizationState, DensityMatrix, np.ndarray]


def waveplate_matrix(theta: float, delta: float) -> PlateOperator:
    """Jones matrix of a retarder with fast axis at ``theta`` and retardance ``delta``.

    Parameters
    ----------
    theta : float
        Fast-axis angle from the x (H) axis, radians.
    delta : float
        Phase delay of the slow component, radians.

    Returns
    -------
    PlateOperator
        ``[[c^2 + e s^2, (1-e) s c], [(1-e) s c, e c^2 + s^2]]``
        with ``c = cos(theta)``, ``s = sin(theta)``, ``e = exp(i delta)``.
    """
    if not (math.isfinite(theta) and math.isfinite(delta)):
        raise DomainError("waveplate angles must be finite")
    c, s = math.cos(theta), math.sin(theta)
    e = complex(math.cos(delta), math.sin(delta))
    off = (1 - e) * s * c
    return PlateOperator([[c * c + e * s * s, off], [off, e * c * c + s * s]])


def half_waveplate(theta: float) -> PlateOperator:
    return waveplate_matrix(theta, math.pi)


def quarter_waveplate(theta: float) -> PlateOperator:
    return waveplate_matrix(theta, math.pi / 2)


def apply(op: PlateOperator, state: PolarizationState) -> PolarizationState:
    """Return ``M J``. The result is not renormalized."""
    return PolarizationState.from_vector(op.matrix @ state.amplitudes, normalize=False)


def to_stokes(state: PolarizationState) -> StokesVector:
    a, b = state.alpha, state.beta
    ab = a.conjugate() * b
    return StokesVector(
        abs(a) ** 2 + abs(b) ** 2,
        abs(a) ** 2 - abs(b) ** 2,
        2 * ab.real,
        -2 * ab.imag,
    )


def _as_matrix(state: State) -> np.ndarray:
    if isinstance(state, DensityMatrix):
        return state.matrix
    if isinstance(state, PolarizationState):
        v = state.amplitudes
        return np.outer(v, v.conj())
    arr = np.asarray(state, dtype=complex)
    if arr.ndim == 1:
        return np.outer(arr, arr.conj())
    return arr


def projector(label: Union[str, Sequence[str]]) -> np.ndarray:
    """Projector for one label (``"H"``) or a tensor product (``"HV"``, ``("H", "V")``)."""
    labels = tuple(label)
    for lab in labels:
        if lab not in PROJECTORS:
            raise DomainError(f"unknown projector label {lab!r}")
    out = PROJECTORS[labels[0]]
    for lab in labels[1:]:
        out = np.kron(out, PROJECTORS[lab])
    return out


def projector_probability(state: State, label: Union[str, Sequence[str]]) -> float:
    """``Tr[rho Pi]`` for a single-qubit label or a two-qubit label pair."""
    rho = _as_matrix(state)
    labels = tuple(label)
    if rho.shape != (2 ** len(labels),) * 2:
        raise DomainError(
            f"label {''.join(labels)!r} does not match a {rho.shape[0]}-dimensional state"
        )
    p = float(np.real(np.trace(rho @ projector(labels))))
    return min(max(p, 0.0), 1.0)


# eigenvalues below this fraction of the largest are rounding noise
_SQRT_CUTOFF = 1e-13


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    w = np.where(w <= _SQRT_CUTOFF * max(float(w[-1]), 0.0), 0.0, w)
    return (v * np.sqrt(w)) @ v.conj().T


def fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2``.

    Evaluated as the squared sum of singular values of
    ``sqrt(rho) sqrt(sigma)``, which is stable for rank-deficient inputs.
    """
    for m in (rho, sigma):
        if not isinstance(m, DensityMatrix):
            raise TypeError("fidelity expects DensityMatrix arguments")
        if not m.is_physical:
            raise DomainError("fidelity of a non-positive matrix is undefined")
    if rho.dim != sigma.dim:
        raise DomainError(f"dimension mismatch: {rho.dim} vs {sigma.dim}")
    sv = np.linalg.svd(_psd_sqrt(rho.matrix) @ _psd_sqrt(sigma.matrix), compute_uv=False)
    f = float(np.sum(sv) ** 2)
    return min(max(f, 0.0), 1.0)


def state_fidelity(target, rho) -> float:
    """Overlap ``<psi|rho|psi>`` of a pure target with any Hermitian estimate.

    Unlike :func:`fidelity` this does not require ``rho`` to be positive,
    so it can score raw linear-inversion estimates.
    """
    if isinstance(target, PolarizationState):
        psi = target.normalized().amplitudes
    else:
        psi = np.asarray(target, dtype=complex).ravel()
        psi = psi / np.linalg.norm(psi)
    m = _as_matrix(rho)
    return float(np.real(psi.conj() @ m @ psi))


def trace_distance(rho, sigma) -> float:
    diff = _as_matrix(rho) - _as_matrix(sigma)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


# two-photon states in the (A, B) product basis HH, HV, VH, VV
PSI_MINUS = np.array([0, 1, -1, 0], dtype=complex) / SQRT2
PSI_PLUS = np.array([0, 1, 1, 0], dtype=complex) / SQRT2
PHI_MINUS = np.array([1, 0, 0, -1], dtype=complex) / SQRT2
PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) / SQRT2


def product_state(a: PolarizationState, b: PolarizationState) -> np.ndarray:
    return np.kron(a.normalized().amplitudes, b.normalized().amplitudes)
