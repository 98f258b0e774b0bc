"""One- and two-qubit state reconstruction from projector counts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from .device import (
    ChipSide,
    CoincidenceRecord,
    CountRecord,
    TwoPhotonState,
    apply_prefix,
    expected_coincidences,
    expected_single_counts,
    simulate_counts,
    simulate_single_counts,
    unitary_at_distance,
    werner_state,
)
from .jones import (
    LABELS,
    PAULI,
    PROJECTORS,
    PSI_MINUS,
    DensityMatrix,
    DomainError,
    PolarizationState,
    fidelity,
    state_fidelity,
)
from .rng import PoissonStream

MU_FLOOR = 1e-12
# pairs (k, k_perp) of LABELS for the H/V, D/A, R/L bases
_BASES = ((0, 1), (2, 3), (4, 5))


class EstimationError(DomainError):
    pass


def _projectors(n_qubits: int):
    single = np.array([PROJECTORS[lab] for lab in LABELS])
    group1 = np.array([0, 0, 1, 1, 2, 2])
    if n_qubits == 1:
        return single, group1
    proj = np.einsum("aij,bkl->abikjl", single, single).reshape(36, 4, 4)
    groups = (group1[:, None] * 3 + group1[None, :]).reshape(36)
    return proj, groups


def _count_array(counts) -> np.ndarray:
    if isinstance(counts, (CountRecord, CoincidenceRecord)):
        return counts.as_array()
    arr = np.asarray(counts, dtype=float)
    if arr.shape not in ((6,), (6, 6)):
        raise EstimationError(f"expected 6 or 6x6 counts, got shape {arr.shape}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise EstimationError("counts must be finite and non-negative")
    return arr


# linear inversion ---------------------------------------------------------

def linear_reconstruct_1q(counts) -> DensityMatrix:
    """Stokes-parameter inversion; the result may have a negative eigenvalue."""
    n = _count_array(counts)
    if n.shape != (6,):
        raise EstimationError("single-qubit reconstruction needs 6 counts")
    s = []
    for a, b in _BASES:
        tot = n[a] + n[b]
        if tot <= 0:
            raise EstimationError(f"no counts in the {LABELS[a]}/{LABELS[b]} basis")
        s.append((n[a] - n[b]) / tot)
    rho = 0.5 * (PAULI[0] + s[0] * PAULI[1] + s[1] * PAULI[2] + s[2] * PAULI[3])
    return DensityMatrix(rho, check=False)


def two_qubit_stokes(counts) -> np.ndarray:
    """4x4 array ``S[i, j]`` of two-qubit Stokes parameters, ``S[0, 0] = 1``."""
    n = _count_array(counts)
    if n.shape != (6, 6):
        raise EstimationError("two-qubit reconstruction needs a complete 6x6 record")
    S = np.zeros((4, 4))
    S[0, 0] = 1.0
    marg_a = np.zeros((3, 2))
    marg_b = np.zeros((3, 2))
    for i, (a1, a2) in enumerate(_BASES):
        for j, (b1, b2) in enumerate(_BASES):
            block = n[np.ix_([a1, a2], [b1, b2])]
            tot = block.sum()
            if tot <= 0:
                raise EstimationError(
                    f"no coincidences for basis pair {LABELS[a1]}{LABELS[a2]}/{LABELS[b1]}{LABELS[b2]}"
                )
            S[i + 1, j + 1] = (block[0, 0] - block[0, 1] - block[1, 0] + block[1, 1]) / tot
            marg_a[i] += (block[0].sum() - block[1].sum(), tot)
            marg_b[j] += (block[:, 0].sum() - block[:, 1].sum(), tot)
    S[1:, 0] = marg_a[:, 0] / marg_a[:, 1]
    S[0, 1:] = marg_b[:, 0] / marg_b[:, 1]
    return S


def linear_reconstruct_2q(counts) -> DensityMatrix:
    """``rho = 1/4 sum_ij S_ij sigma_i (x) sigma_j``; may be non-physical."""
    S = two_qubit_stokes(counts)
    rho = sum(S[i, j] * np.kron(PAULI[i], PAULI[j]) for i in range(4) for j in range(4)) / 4
    return DensityMatrix(rho, check=False)


def linear_reconstruct(counts) -> DensityMatrix:
    n = _count_array(counts)
    return linear_reconstruct_1q(n) if n.shape == (6,) else linear_reconstruct_2q(n)


def nearest_physical(rho) -> DensityMatrix:
    """Clip negative eigenvalues and renormalize."""
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    w = np.clip(w, 0, None)
    w /= w.sum()
    return DensityMatrix((v * w) @ v.conj().T)


# maximum likelihood -------------------------------------------------------

@dataclass
class MleResult:
    rho: DensityMatrix
    log_likelihood: float
    trace: List[float]
    n_iter: int
    grad_norm: float
    converged: bool


class _Likelihood:
    """Poisson log-likelihood with per-basis normalization, over a Cholesky factor."""

    def __init__(self, counts: np.ndarray):
        self.n = counts.ravel()
        nq = 1 if counts.shape == (6,) else 2
        self.proj, groups = _projectors(nq)
        self.d = self.proj.shape[1]
        totals = np.bincount(groups, weights=self.n)
        if np.any(totals <= 0):
            raise EstimationError("every measurement basis needs at least one count")
        self.N = totals[groups]
        self.scale = float(self.n.sum())
        d = self.d
        # parameter layout: real diagonal, then Re/Im of the strictly lower part
        self.diag = [(i, i) for i in range(d)]
        self.lower = [(i, j) for i in range(d) for j in range(i)]
        basis = []
        for i, j in self.diag:
            e = np.zeros((d, d), complex)
            e[i, j] = 1
            basis.append(e)
        for i, j in self.lower:
            e = np.zeros((d, d), complex)
            e[i, j] = 1
            basis.append(e)
        for i, j in self.lower:
            e = np.zeros((d, d), complex)
            e[i, j] = 1j
            basis.append(e)
        self.basis = np.array(basis)

    def to_T(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("p,pij->ij", x, self.basis)

    def from_rho(self, rho: np.ndarray) -> np.ndarray:
        """Lower-triangular T with T^dag T = rho, flattened to parameters."""
        w, v = np.linalg.eigh(rho)
        B = np.sqrt(np.clip(w, 0, None))[:, None] * v.conj().T  # B^dag B = rho
        J = np.eye(self.d)[::-1]
        q, r = np.linalg.qr(J @ B @ J)
        T = J @ r @ J  # lower triangular, T^dag T = rho
        ph = np.diag(T) / np.where(np.abs(np.diag(T)) > 0, np.abs(np.diag(T)), 1)
        ph = np.where(np.abs(np.diag(T)) > 0, ph, 1)
        T = ph.conj()[:, None] * T
        x = [T[i, i].real for i, _ in self.diag]
        x += [T[i, j].real for i, j in self.lower]
        x += [T[i, j].imag for i, j in self.lower]
        return np.array(x)

    def rho(self, x: np.ndarray) -> np.ndarray:
        T = self.to_T(x)
        A = T.conj().T @ T
        return A / np.real(np.trace(A))

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        return np.real(np.einsum("kij,ji->k", self.proj, rho))

    def value(self, rho: np.ndarray) -> float:
        mu = np.maximum(self.N * self.probabilities(rho), MU_FLOOR)
        return float(np.sum(self.n * np.log(mu) - mu))

    def derivatives(self, x: np.ndarray):
        """Gradient and exact Hessian of the log-likelihood in ``x``."""
        T = self.to_T(x)
        A = T.conj().T @ T
        t = float(np.real(np.trace(A)))
        rho = A / t
        p = self.probabilities(rho)
        mu = self.N * p
        live = mu > MU_FLOOR
        ratio = np.where(live, self.n / np.where(live, mu, 1.0), 0.0)
        G = np.einsum("k,kij->ij", np.where(live, ratio - 1.0, 0.0) * self.N, self.proj)
        E = self.basis
        dA = np.einsum("pji,jk->pik", E.conj(), T) + np.einsum("ij,pjk->pik", T.conj().T, E)
        dt = np.real(np.einsum("pii->p", dA))
        drho = (dA - dt[:, None, None] * rho) / t
        # A is quadratic in x, so its second derivatives are constant
        EtE = np.einsum("pji,qjk->pqik", E.conj(), E)
        d2A = EtE + np.swapaxes(EtE, 0, 1)
        d2t = np.real(np.einsum("pqii->pq", d2A))
        d2rho = (d2A - dt[None, :, None, None] * drho[:, None] - dt[:, None, None, None] * drho[None, :]
                 - d2t[:, :, None, None] * rho) / t
        grad = np.real(np.einsum("ij,pji->p", G, drho))
        dp = np.real(np.einsum("kij,pji->pk", self.proj, drho))
        pf = np.maximum(p, MU_FLOOR)
        weight = np.where(live, self.n, 0.0) / pf**2
        hess = np.real(np.einsum("ij,pqji->pq", G, d2rho)) - np.einsum("pk,k,qk->pq", dp, weight, dp)
        return grad, hess


def _ascent_direction(x: np.ndarray, g: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Newton direction with the curvature made positive definite.

    The likelihood is invariant under scaling ``x``, so the curvature is
    restricted to the tangent space of the unit sphere first.
    """
    proj = np.eye(len(x)) - np.outer(x, x)
    w, v = np.linalg.eigh(-proj @ hess @ proj)
    w = np.abs(w)
    w = np.maximum(w, 1e-10 * max(float(w.max()), 1.0))
    return v @ ((v.T @ g) / w)


def mle_refine(counts, initial: Optional[DensityMatrix] = None, max_iter: int = 500,
               grad_tol: float = 1e-8, mixing: float = 1e-6) -> MleResult:
    """Maximum-likelihood density matrix.

    ``rho = T^dag T / Tr(T^dag T)`` with lower-triangular ``T``; the
    log-likelihood ``sum n_k ln mu_k - mu_k`` with ``mu_k = N_k Tr(rho Pi_k)``
    (``N_k`` the total of the basis containing ``k``) is climbed by
    curvature-preconditioned gradient steps with backtracking, so the
    objective never decreases. ``T`` is kept at unit Frobenius norm, and
    convergence is declared when the gradient norm divided by the total
    count falls below ``grad_tol``.

    Parameters
    ----------
    counts : CountRecord, CoincidenceRecord or array
        6 single-qubit or 6x6 two-qubit counts.
    initial : DensityMatrix, optional
        Starting point, by default the linear-inversion estimate projected
        onto the physical set.
    mixing : float
        Weight of ``I/d`` blended into the start so that every direction of
        the factorization can move.
    """
    n = _count_array(counts)
    lik = _Likelihood(n)
    if initial is None:
        initial = nearest_physical(linear_reconstruct(n))
    if initial.dim != lik.d:
        raise EstimationError("initial state dimension does not match the counts")
    rho0 = (1 - mixing) * initial.matrix + mixing * np.eye(lik.d) / lik.d
    x = lik.from_rho(rho0)
    x /= np.linalg.norm(x)
    ll = lik.value(lik.rho(x))
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g, hess = lik.derivatives(x)
        if np.linalg.norm(g) / lik.scale < grad_tol:
            converged = True
            break
        direction = _ascent_direction(x, g, hess)
        step = 1.0
        for _ in range(60):
            xn = x + step * direction
            xn /= np.linalg.norm(xn)
            lln = lik.value(lik.rho(xn))
            if lln >= ll:
                break
            step *= 0.5
        else:
            break
        stalled = lln - ll <= 1e-15 * abs(ll) and np.linalg.norm(xn - x) <= 1e-13
        x, ll = xn, lln
        trace.append(ll)
        if stalled:
            break
    g, _ = lik.derivatives(x)
    gnorm = float(np.linalg.norm(g)) / lik.scale
    return MleResult(DensityMatrix(lik.rho(x)), ll, trace, it, gnorm, converged or gnorm < grad_tol)


def log_likelihood(counts, rho) -> float:
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    return _Likelihood(_count_array(counts)).value(m)


# results ------------------------------------------------------------------

Target = Union[None, str, PolarizationState, np.ndarray, DensityMatrix]


def _target_matrix(target: Target):
    if target is None:
        return None
    if isinstance(target, str):
        if target.lower() in ("psi-", "psi_minus", "psi-minus"):
            return PSI_MINUS
        return PolarizationState.from_label(target).amplitudes
    if isinstance(target, PolarizationState):
        return target.normalized().amplitudes
    if isinstance(target, TwoPhotonState):
        return target.amplitudes
    return target


def score(rho: DensityMatrix, target: Target) -> float:
    """Fidelity of an estimate to a pure vector or a density-matrix target.

    Non-physical (linear-inversion) estimates can only be scored against
    pure targets, as ``<psi|rho|psi>``.
    """
    t = _target_matrix(target)
    if isinstance(t, DensityMatrix):
        return fidelity(t, rho)
    t = np.asarray(t, dtype=complex)
    if t.ndim == 2:
        return fidelity(DensityMatrix(t), rho)
    if t.shape[0] != rho.dim:
        raise DomainError("target dimension does not match the estimate")
    return state_fidelity(t, rho)


def reconstruct(counts, method: str = "mle") -> Tuple[DensityMatrix, Optional[MleResult]]:
    if method == "linear":
        return linear_reconstruct(counts), None
    if method == "mle":
        res = mle_refine(counts)
        return res.rho, res
    raise DomainError(f"unknown method {method!r}")


@dataclass
class MonteCarloErrors:
    fidelity_sigma: float
    rho_real_sigma: np.ndarray
    rho_imag_sigma: np.ndarray
    fidelities: np.ndarray


def montecarlo_errors(counts, n_trials: int = 100, seed: int = 0, target: Target = None,
                      method: str = "mle", fluctuate: bool = True) -> MonteCarloErrors:
    """Parametric bootstrap: resample every cell as Poisson(observed) and redo the estimate.

    With ``fluctuate=False`` the resamples equal the observed counts, giving
    zero spread. Trial ``i`` draws from stream ``i + 1`` of ``seed``, so the
    outcome does not depend on evaluation order.
    """
    if n_trials < 50:
        raise DomainError("use at least 50 Monte-Carlo trials")
    n = _count_array(counts)
    mats, fids = [], []
    for i in range(n_trials):
        sample = PoissonStream(seed, stream=i + 1).poisson_array(n).astype(float) if fluctuate else n
        rho, _ = reconstruct(sample, method)
        mats.append(rho.matrix)
        if target is not None:
            fids.append(score(rho, target))
    mats = np.array(mats)
    fids = np.array(fids)
    return MonteCarloErrors(
        float(_spread(fids)) if len(fids) else float("nan"),
        _spread(mats.real),
        _spread(mats.imag),
        fids,
    )


def _spread(values: np.ndarray) -> np.ndarray:
    """Sample standard deviation over axis 0; exactly 0 where all samples agree."""
    sd = np.std(values, axis=0, ddof=1)
    return np.where(np.ptp(values, axis=0) == 0, 0.0, sd)


@dataclass
class TomographyResult:
    rho: DensityMatrix
    fidelity: Optional[float]
    fidelity_sigma: Optional[float]
    log_likelihood: float
    method: str
    n_montecarlo: int = 0
    converged: bool = True
    physical: bool = True
    label: str = ""

    def to_dict(self) -> dict:
        m = self.rho.matrix
        return {
            "label": self.label,
            "method": self.method,
            "rho_real": m.real.tolist(),
            "rho_imag": m.imag.tolist(),
            "fidelity": self.fidelity,
            "fidelity_sigma": self.fidelity_sigma,
            "log_likelihood": self.log_likelihood,
            "n_montecarlo": self.n_montecarlo,
            "converged": self.converged,
            "physical": self.physical,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def tomography(counts, target: Target = None, method: str = "mle", n_montecarlo: int = 0,
               seed: int = 0, label: str = "") -> TomographyResult:
    """Reconstruct, score against ``target`` and optionally bootstrap the error."""
    n = _count_array(counts)
    rho, res = reconstruct(n, method)
    fid = None
    if target is not None:
        fid = score(rho, target)
    sigma = None
    if n_montecarlo:
        sigma = montecarlo_errors(n, n_montecarlo, seed, target, method).fidelity_sigma
    ll = res.log_likelihood if res is not None else (
        log_likelihood(n, rho) if rho.is_physical else float("nan"))
    return TomographyResult(rho, fid, sigma, ll, method, n_montecarlo,
                            res.converged if res is not None else True, rho.is_physical, label)


def render_bars(rho: DensityMatrix, digits: int = 3) -> str:
    """Text table of real and imaginary parts, one line per matrix element."""
    d = rho.dim
    names = list("HV") if d == 2 else ["HH", "HV", "VH", "VV"]
    lines = [f"{'row':>4} {'col':>4} {'real':>8} {'imag':>8}"]
    for i in range(d):
        for j in range(d):
            z = rho.matrix[i, j]
            re = 0.0 if abs(z.real) < 0.5 * 10**-digits else z.real
            im = 0.0 if abs(z.imag) < 0.5 * 10**-digits else z.imag
            lines.append(f"{names[i]:>4} {names[j]:>4} {re:8.{digits}f} {im:8.{digits}f}")
    return "\n".join(lines)


# full experiment ----------------------------------------------------------

_CONFIG_KEYS = {
    "n_pairs", "seed", "noiseless", "residual_prefix_distance", "single_photon",
    "two_photon", "n_montecarlo", "method", "detector_efficiency", "visibility",
}


@dataclass(frozen=True)
class ExperimentConfig:
    n_pairs: int = 10_000
    seed: int = 0
    noiseless: bool = False
    residual_prefix_distance: float = 0.0
    single_photon: bool = True
    two_photon: bool = True
    n_montecarlo: int = 0
    method: str = "mle"
    detector_efficiency: float = 1.0
    visibility: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.n_pairs, int) and self.n_pairs > 0):
            raise DomainError("n_pairs must be a positive integer")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            raise DomainError("seed must be a non-negative integer")
        if not 0 <= self.residual_prefix_distance <= 2 * math.sqrt(2):
            raise DomainError("residual_prefix_distance must lie in [0, 2 sqrt 2]")
        if self.n_montecarlo and self.n_montecarlo < 50:
            raise DomainError("n_montecarlo must be 0 or >= 50")
        if self.method not in ("mle", "linear"):
            raise DomainError("method must be 'mle' or 'linear'")
        if not 0 < self.detector_efficiency <= 1:
            raise DomainError("detector_efficiency must lie in (0, 1]")
        if not 0 <= self.visibility <= 1:
            raise DomainError("visibility must lie in [0, 1]")
        if not (self.single_photon or self.two_photon):
            raise DomainError("nothing to run")

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        unknown = set(obj) - _CONFIG_KEYS
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    single: List[Tuple[str, str, TomographyResult]] = field(default_factory=list)
    two_photon: Optional[TomographyResult] = None
    sides: Tuple[ChipSide, ChipSide] = (ChipSide(), ChipSide())

    @property
    def mean_single_fidelity(self) -> float:
        return float(np.mean([r.fidelity for _, _, r in self.single]))

    def fidelity_table(self) -> str:
        rows = {lab: {} for lab in LABELS}
        for side, lab, r in self.single:
            rows[lab][side] = r
        out = ["state  fidelity_A          fidelity_B"]
        for lab in LABELS:
            cells = []
            for side in "AB":
                r = rows[lab].get(side)
                if r is None:
                    cells.append(" " * 18)
                elif r.fidelity_sigma is not None:
                    cells.append(f"{r.fidelity:.4f} +- {r.fidelity_sigma:.4f}")
                else:
                    cells.append(f"{r.fidelity:.6f}".ljust(18))
            out.append(f"{lab:>5}  {cells[0]}  {cells[1]}")
        means = []
        for side in "AB":
            f = [r.fidelity for s, _, r in self.single if s == side]
            means.append(f"{np.mean(f):.6f}".ljust(18) if f else " " * 18)
        out.append(f"{'mean':>5}  {means[0]}  {means[1]}")
        return "\n".join(out)

    def to_dict(self) -> dict:
        return {
            "config": self.config.__dict__,
            "single_photon": [{"side": s, "state": lab, **r.to_dict()} for s, lab, r in self.single],
            "two_photon": self.two_photon.to_dict() if self.two_photon else None,
            "mean_single_fidelity": self.mean_single_fidelity if self.single else None,
        }


def chip_sides(seed: int = 0, residual_prefix_distance: float = 0.0) -> Tuple[ChipSide, ChipSide]:
    """Both chip sides, each with its own random residual prefix if requested."""
    sides = []
    for k in range(2):
        side = ChipSide()
        if residual_prefix_distance > 0:
            stream = PoissonStream(seed, stream=10_000 + k)
            side = apply_prefix(side, unitary_at_distance(residual_prefix_distance, stream))
        sides.append(side)
    return sides[0], sides[1]


def run_full_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Single-photon table (6 states x 2 sides) and two-photon singlet tomography."""
    sides = chip_sides(config.seed, config.residual_prefix_distance)
    result = ExperimentResult(config, sides=sides)
    if config.single_photon:
        for k, side_name in enumerate("AB"):
            for j, lab in enumerate(LABELS):
                if config.noiseless:
                    counts = expected_single_counts(lab, sides[k], config.n_pairs,
                                                    config.detector_efficiency)
                else:
                    counts = simulate_single_counts(lab, sides[k], config.n_pairs, config.seed,
                                                    config.detector_efficiency,
                                                    stream=1 + 6 * k + j)
                r = tomography(counts, lab, config.method, config.n_montecarlo,
                               config.seed, f"{side_name}:{lab}")
                result.single.append((side_name, lab, r))
    if config.two_photon:
        state = TwoPhotonState.psi_minus() if config.visibility == 1 else werner_state(config.visibility)
        if config.noiseless:
            counts = expected_coincidences(state, sides, config.n_pairs, config.detector_efficiency)
        else:
            counts = simulate_counts(state, sides, config.n_pairs, config.seed,
                                     config.detector_efficiency)
        result.two_photon = tomography(counts, "psi-", config.method, config.n_montecarlo,
                                       config.seed, "psi-")
    return result
