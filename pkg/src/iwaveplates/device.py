"""Simulator of the two-photon polarization-analysis chip.

Each photon enters a side of the chip: an (optional) unitary prefix for the
fibre and input-waveguide birefringence, an even 1x3 splitter, and three arms

* alpha: no rotation (vertical-axis waveguide),
* beta: half-wave plate at 22.5 deg,
* gamma: quarter-wave plate at 0 deg, then half-wave plate at 22.5 deg,

followed by a polarizing beam splitter transmitting H (port ``T``) and
reflecting V (port ``R``). The six (arm, port) outputs realise the projectors
H, V, D, A, R, L.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .algebra import PlateCascade, PlateSpec, cascade_evaluate
from .jones import (
    LABELS,
    PAULI,
    PSI_MINUS,
    DensityMatrix,
    DomainError,
    PlateOperator,
    PolarizationState,
    waveplate_matrix,
)
from .rng import PoissonStream

ARMS = ("alpha", "beta", "gamma")
PORTS = ("T", "R")
HWP_TILT = math.radians(22.5)

_PBS = {"T": np.array([[1, 0], [0, 0]], dtype=complex), "R": np.array([[0, 0], [0, 1]], dtype=complex)}

# nominal outcome of each (arm, port), in the module's circular convention
NOMINAL_MAP = {
    ("alpha", "T"): "H", ("alpha", "R"): "V",
    ("beta", "T"): "D", ("beta", "R"): "A",
    ("gamma", "T"): "R", ("gamma", "R"): "L",
}
_OUTPUT_OF = {lab: key for key, lab in NOMINAL_MAP.items()}


def ideal_arms() -> Tuple[PlateCascade, PlateCascade, PlateCascade]:
    return (
        PlateCascade(),
        PlateCascade([PlateSpec(HWP_TILT, math.pi)]),
        PlateCascade([PlateSpec(0.0, math.pi / 2), PlateSpec(HWP_TILT, math.pi)]),
    )


@dataclass(frozen=True)
class ChipSide:
    arm_plates: Tuple[PlateCascade, PlateCascade, PlateCascade] = field(default_factory=ideal_arms)
    splitter: Tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    prefix: PlateOperator = field(default_factory=PlateOperator.identity)

    def __post_init__(self):
        if len(self.arm_plates) != 3 or len(self.splitter) != 3:
            raise DomainError("a chip side has exactly three arms")
        if any(w < 0 for w in self.splitter) or sum(self.splitter) > 1 + 1e-12:
            raise DomainError("splitter fractions must be >= 0 and sum to <= 1")

    def arm_operator(self, arm: str) -> np.ndarray:
        return cascade_evaluate(self.arm_plates[ARMS.index(arm)]).matrix

    def kraus(self) -> Dict[str, np.ndarray]:
        """Measurement operator of every output, keyed by its nominal label."""
        out = {}
        for (arm, port), lab in NOMINAL_MAP.items():
            w = self.splitter[ARMS.index(arm)]
            out[lab] = math.sqrt(w) * _PBS[port] @ self.arm_operator(arm) @ self.prefix.matrix
        return out

    def povm(self) -> np.ndarray:
        """POVM elements, shape (6, 2, 2), ordered as ``LABELS``."""
        k = self.kraus()
        return np.array([k[lab].conj().T @ k[lab] for lab in LABELS])

    def output_probabilities(self, state) -> np.ndarray:
        """Detection probabilities of the six outputs for a single photon."""
        rho = _single_rho(state)
        return np.real(np.einsum("kij,ji->k", self.povm(), rho))


def _single_rho(state) -> np.ndarray:
    if isinstance(state, PolarizationState):
        v = state.normalized().amplitudes
        return np.outer(v, v.conj())
    if isinstance(state, DensityMatrix):
        return state.matrix
    if isinstance(state, str):
        v = PolarizationState.from_label(state).amplitudes
        return np.outer(v, v.conj())
    arr = np.asarray(state, dtype=complex)
    if arr.ndim == 1:
        arr = arr / np.linalg.norm(arr)
        return np.outer(arr, arr.conj())
    return arr


class TwoPhotonState:
    """Pure two-photon polarization state in the basis HH, HV, VH, VV (A then B)."""

    __slots__ = ("_amps",)

    def __init__(self, amplitudes):
        a = np.array(amplitudes, dtype=complex).reshape(4)
        n = np.linalg.norm(a)
        if n == 0 or not np.all(np.isfinite(a)):
            raise DomainError("two-photon amplitudes must be finite and non-zero")
        a = a / n
        a.setflags(write=False)
        self._amps = a

    @classmethod
    def psi_minus(cls) -> "TwoPhotonState":
        return cls(PSI_MINUS)

    @classmethod
    def product(cls, a: PolarizationState, b: PolarizationState) -> "TwoPhotonState":
        return cls(np.kron(a.normalized().amplitudes, b.normalized().amplitudes))

    @property
    def amplitudes(self) -> np.ndarray:
        return self._amps

    def density_matrix(self) -> DensityMatrix:
        return DensityMatrix(np.outer(self._amps, self._amps.conj()))


def werner_state(visibility: float) -> DensityMatrix:
    """``v |psi-><psi-| + (1 - v) I/4``, a singlet with white noise."""
    if not 0 <= visibility <= 1:
        raise DomainError("visibility must lie in [0, 1]")
    psi = np.outer(PSI_MINUS, PSI_MINUS.conj())
    return DensityMatrix(visibility * psi + (1 - visibility) * np.eye(4) / 4)


def _two_rho(state) -> np.ndarray:
    if isinstance(state, TwoPhotonState):
        return np.outer(state.amplitudes, state.amplitudes.conj())
    if isinstance(state, DensityMatrix):
        if state.dim != 4:
            raise DomainError("two-photon state must be 4-dimensional")
        return state.matrix
    arr = np.asarray(state, dtype=complex)
    if arr.shape == (4,):
        arr = arr / np.linalg.norm(arr)
        return np.outer(arr, arr.conj())
    if arr.shape == (4, 4):
        return arr
    raise DomainError("two-photon state must be a 4-vector or 4x4 matrix")


@dataclass(frozen=True)
class CountRecord:
    """Single-photon counts of the six outputs, ordered as ``labels``."""

    counts: Tuple[float, ...]
    total: int = 0
    seed: Optional[int] = None
    labels: Tuple[str, ...] = LABELS

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(self.counts))
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.counts) != 6 or sorted(self.labels) != sorted(LABELS):
            raise DomainError("single-qubit record needs the six projectors H,V,D,A,R,L")
        if any(c < 0 for c in self.counts):
            raise DomainError("counts must be non-negative")

    def as_array(self) -> np.ndarray:
        """Counts reordered to ``LABELS``."""
        idx = [self.labels.index(lab) for lab in LABELS]
        return np.asarray(self.counts, dtype=float)[idx]

    def to_csv(self) -> str:
        return "label,count\n" + "".join(f"{lab},{c}\n" for lab, c in zip(self.labels, self.counts))

    @classmethod
    def from_csv(cls, text: str) -> "CountRecord":
        rows = [ln.split(",") for ln in text.strip().splitlines()]
        if [h.strip() for h in rows[0]] != ["label", "count"]:
            raise DomainError("single-qubit CSV needs a 'label,count' header")
        labels = tuple(r[0].strip() for r in rows[1:])
        counts = tuple(_number(r[1]) for r in rows[1:])
        return cls(counts, int(sum(counts)), None, labels)


def _number(text: str):
    v = float(text)
    return int(v) if v.is_integer() else v


@dataclass(frozen=True)
class CoincidenceRecord:
    """6 x 6 coincidence counts indexed by (projector of A, projector of B)."""

    counts: np.ndarray
    total_pairs: int
    seed: Optional[int] = None
    labels: Tuple[str, ...] = LABELS

    def __post_init__(self):
        c = np.array(self.counts)
        if c.shape != (6, 6):
            raise DomainError(f"coincidence record must be 6x6, got {c.shape}")
        if np.any(c < 0):
            raise DomainError("counts must be non-negative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "labels", tuple(self.labels))
        if sorted(self.labels) != sorted(LABELS):
            raise DomainError("labels must be a permutation of H,V,D,A,R,L")

    def as_array(self) -> np.ndarray:
        idx = [self.labels.index(lab) for lab in LABELS]
        return np.asarray(self.counts, dtype=float)[np.ix_(idx, idx)]

    def to_json(self) -> str:
        c = self.counts
        cells = c.astype(int).tolist() if np.issubdtype(c.dtype, np.integer) else c.tolist()
        return json.dumps(
            {"seed": self.seed, "total_pairs": int(self.total_pairs),
             "labels": list(self.labels), "counts": cells},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: Union[str, dict]) -> "CoincidenceRecord":
        obj = json.loads(text) if isinstance(text, str) else text
        unknown = set(obj) - {"seed", "total_pairs", "labels", "counts"}
        if unknown:
            raise DomainError(f"unknown keys in coincidence record: {sorted(unknown)}")
        try:
            counts = np.array(obj["counts"])
            total = int(obj["total_pairs"])
        except KeyError as exc:
            raise DomainError(f"coincidence record is missing {exc}") from None
        if np.issubdtype(counts.dtype, np.floating) and np.all(counts == np.round(counts)):
            counts = counts.astype(np.int64)
        return cls(counts, total, obj.get("seed"), tuple(obj.get("labels", LABELS)))


def expected_coincidences(state, sides: Tuple[ChipSide, ChipSide], total_pairs: float,
                          detector_efficiency: float = 1.0, accidentals: float = 0.0,
                          transmittance: float = 1.0) -> np.ndarray:
    """Mean coincidences per (A output, B output) cell, ordered as ``LABELS``."""
    rho = _two_rho(state)
    ea, eb = sides[0].povm(), sides[1].povm()
    joint = np.einsum("aij,bkl->abikjl", ea, eb).reshape(6, 6, 4, 4)
    p = np.real(np.einsum("abij,ji->ab", joint, rho))
    p = np.clip(p, 0.0, None)
    return total_pairs * transmittance * detector_efficiency**2 * p + accidentals


def simulate_counts(state, sides: Tuple[ChipSide, ChipSide], total_pairs: int, seed: int,
                    detector_efficiency: float = 1.0, accidentals: float = 0.0,
                    transmittance: float = 1.0, stream: int = 0) -> CoincidenceRecord:
    """Poisson-sampled coincidence record; cells drawn row-major from one stream."""
    if total_pairs <= 0:
        raise DomainError("total_pairs must be > 0")
    mu = expected_coincidences(state, sides, total_pairs, detector_efficiency,
                               accidentals, transmittance)
    return CoincidenceRecord(PoissonStream(seed, stream).poisson_array(mu), total_pairs, seed)


def expected_single_counts(state, side: ChipSide, n_photons: float,
                           detector_efficiency: float = 1.0) -> np.ndarray:
    return n_photons * detector_efficiency * np.clip(side.output_probabilities(state), 0, None)


def simulate_single_counts(state, side: ChipSide, n_photons: int, seed: int,
                           detector_efficiency: float = 1.0, stream: int = 0) -> CountRecord:
    """Heralded single-photon counts of the six outputs of one side."""
    if n_photons <= 0:
        raise DomainError("n_photons must be > 0")
    mu = expected_single_counts(state, side, n_photons, detector_efficiency)
    counts = PoissonStream(seed, stream).poisson_array(mu)
    return CountRecord(tuple(int(c) for c in counts), n_photons, seed)


def ideal_projector_map(side: ChipSide, atol: float = 1e-12) -> Dict[Tuple[str, str], str]:
    """Identify which canonical polarization each (arm, port) detects with certainty.

    Every canonical state is launched; the output whose conditional
    probability (given the arm) is 1 is assigned that state's label.
    """
    found = {}
    for lab in LABELS:
        psi = PolarizationState.from_label(lab).amplitudes
        for arm in ARMS:
            out = side.arm_operator(arm) @ side.prefix.matrix @ psi
            for port in PORTS:
                p = float(np.real(np.vdot(out, _PBS[port] @ out)))
                if abs(p - 1) < atol:
                    if (arm, port) in found:
                        raise DomainError(f"output {(arm, port)} detects several states")
                    found[(arm, port)] = lab
    if len(found) != 6:
        raise DomainError("chip side does not realise six sharp projectors")
    return found


def conditional_port_probability(side: ChipSide, state, arm: str, port: str) -> float:
    psi = _single_rho(state)
    k = _PBS[port] @ side.arm_operator(arm) @ side.prefix.matrix
    return float(np.real(np.trace(k @ psi @ k.conj().T)))


def apply_prefix(side: ChipSide, u: PlateOperator) -> ChipSide:
    """Insert ``u`` just before the splitter (after any existing prefix)."""
    if not isinstance(u, PlateOperator):
        u = PlateOperator(u)
    if not u.is_unitary(1e-9):
        raise DomainError("prefix must be unitary")
    return replace(side, prefix=u @ side.prefix)


def random_unitary(rng: np.random.Generator) -> PlateOperator:
    """Haar-random 2x2 unitary."""
    z = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    return PlateOperator(q)


def unitary_at_distance(distance: float, rng) -> PlateOperator:
    """SU(2) rotation about a random axis whose up-to-phase distance to I is ``distance``.

    ``rng`` needs a ``random()`` method returning a float in [0, 1); both
    ``numpy.random.Generator`` and ``PoissonStream`` qualify.
    """
    if not 0 <= distance <= 2 * math.sqrt(2):
        raise DomainError("distance must lie in [0, 2 sqrt 2]")
    phi = math.acos(1 - distance**2 / 4)
    z = 2 * float(rng.random()) - 1
    az = 2 * math.pi * float(rng.random())
    r = math.sqrt(max(0.0, 1 - z * z))
    n = (r * math.cos(az), r * math.sin(az), z)
    gen = n[0] * PAULI[1] + n[1] * PAULI[2] + n[2] * PAULI[3]
    return PlateOperator(math.cos(phi) * np.eye(2) - 1j * math.sin(phi) * gen)


# compensation -------------------------------------------------------------

@dataclass(frozen=True)
class CompensationSettings:
    """Polarization-controller paddle angles and liquid-crystal phase.

    The compensator is traversed LC first, then the three paddles
    (quarter, half, quarter wave), then the chip prefix. All-zero settings
    are the identity.
    """

    pc_angles: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    lc_phase: float = 0.0
    alpha_residual: float = 0.0
    beta_residual: float = 0.0
    gamma_residual: float = 0.0
    converged: bool = True

    def operator(self) -> PlateOperator:
        return PlateOperator(controller_matrix(self.pc_angles) @ waveplate_matrix(0.0, self.lc_phase).matrix)


def controller_matrix(angles: Sequence[float]) -> np.ndarray:
    a1, a2, a3 = angles
    q = math.pi / 2
    return (waveplate_matrix(a3, q).matrix @ waveplate_matrix(a2, math.pi).matrix
            @ waveplate_matrix(a1, q).matrix)


def _unwanted_fraction(side: ChipSide, comp: np.ndarray, label: str) -> float:
    """Fraction of a probe photon exiting the wrong port of its nominal arm."""
    arm, port = _OUTPUT_OF[label]
    other = "R" if port == "T" else "T"
    out = side.arm_operator(arm) @ side.prefix.matrix @ comp @ PolarizationState.from_label(label).amplitudes
    good = float(np.real(np.vdot(out, _PBS[port] @ out)))
    bad = float(np.real(np.vdot(out, _PBS[other] @ out)))
    return bad / (good + bad)


def compensate(side: ChipSide, tol: float = 1e-12, max_iter: int = 4000) -> CompensationSettings:
    """Two-stage birefringence compensation with probe light.

    1. Launch H and turn the controller paddles until the alpha arm shows
       extinction of V.
    2. Launch D and tune the liquid-crystal phase until the beta arm shows
       extinction of A (the gamma arm is then checked with R).

    Only port intensities of the simulated chip are used, as on the bench.
    """
    zero = np.zeros(3)

    def stage1(a):
        return _unwanted_fraction(side, controller_matrix(a), "H")

    angles = zero
    best = stage1(zero)
    if best > tol:
        grid = np.radians(np.arange(-90.0, 90.0, 15.0))
        for a1 in grid:
            for a2 in grid:
                for a3 in grid:
                    v = stage1((a1, a2, a3))
                    if v < best:
                        best, angles = v, np.array([a1, a2, a3])
        for _ in range(3):
            res = minimize(stage1, angles, method="Nelder-Mead",
                           options={"xatol": 1e-13, "fatol": 1e-20, "maxiter": max_iter})
            angles, best = res.x, float(res.fun)
            if best <= tol:
                break
    pc = controller_matrix(angles)

    def stage2(phi):
        return _unwanted_fraction(side, pc @ waveplate_matrix(0.0, phi).matrix, "D")

    phi = 0.0
    b_res = stage2(0.0)
    if b_res > tol:
        grid = np.linspace(-math.pi, math.pi, 361)
        vals = [stage2(p) for p in grid]
        p0 = grid[int(np.argmin(vals))]
        step = grid[1] - grid[0]
        res = minimize_scalar(stage2, bounds=(p0 - step, p0 + step), method="bounded",
                              options={"xatol": 1e-14, "maxiter": 500})
        phi, b_res = float(res.x), float(res.fun)
    comp = pc @ waveplate_matrix(0.0, phi).matrix
    g_res = _unwanted_fraction(side, comp, "R")
    ok = best < 1e-6 and b_res < 1e-6
    return CompensationSettings(tuple(float(a) for a in angles), phi, float(best),
                                b_res, g_res, ok)


def apply_compensation(side: ChipSide, settings: CompensationSettings) -> ChipSide:
    """Side whose effective prefix includes the compensator."""
    return replace(side, prefix=side.prefix @ settings.operator())
