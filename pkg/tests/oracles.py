"""Independent reference implementations used to check the package.

Nothing here imports from the package under test.
"""

import math

import numpy as np

S2 = math.sqrt(2)

KET = {
    "H": np.array([1, 0], complex),
    "V": np.array([0, 1], complex),
    "D": np.array([1, 1], complex) / S2,
    "A": np.array([1, -1], complex) / S2,
    "R": np.array([1, -1j], complex) / S2,
    "L": np.array([1, 1j], complex) / S2,
}
ORDER = "HVDARL"


def rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def waveplate(theta, delta):
    """Retarder as rotate-to-axis, phase the slow component, rotate back."""
    r = rotation(theta)
    return r @ np.diag([1, np.exp(1j * delta)]) @ r.T


def prob(psi, label):
    psi = np.asarray(psi, complex)
    psi = psi / np.linalg.norm(psi)
    return abs(np.vdot(KET[label], psi)) ** 2


def stokes(psi):
    return (
        prob(psi, "H") - prob(psi, "V"),
        prob(psi, "D") - prob(psi, "A"),
        prob(psi, "R") - prob(psi, "L"),
    )


def phase_distance(a, b):
    """Brute-force min over a fine phase grid, refined by golden section."""
    phis = np.linspace(0, 2 * math.pi, 721)
    vals = [np.linalg.norm(a - np.exp(1j * p) * b) for p in phis]
    k = int(np.argmin(vals))
    step = phis[1] - phis[0]
    lo, hi = phis[k] - step, phis[k] + step
    g = (math.sqrt(5) - 1) / 2
    for _ in range(80):
        m1, m2 = hi - g * (hi - lo), lo + g * (hi - lo)
        if np.linalg.norm(a - np.exp(1j * m1) * b) < np.linalg.norm(a - np.exp(1j * m2) * b):
            hi = m2
        else:
            lo = m1
    return float(np.linalg.norm(a - np.exp(1j * lo) * b))


def singlet_cell(a, b):
    """Probability of outcome pair (a, b) on the ideal chip for the singlet."""
    psi = (np.kron(KET["H"], KET["V"]) - np.kron(KET["V"], KET["H"])) / S2
    return abs(np.vdot(np.kron(KET[a], KET[b]), psi)) ** 2 / 9


def half_wave_pd(theta):
    """p_D for H through a half-wave plate at ``theta``."""
    return (1 + math.sin(4 * theta)) / 2


def counts_from_rho(rho, n_per_basis):
    """Exact single-qubit counts: each basis pair holds ``n_per_basis``."""
    return np.array([n_per_basis * np.real(np.vdot(KET[k], rho @ KET[k])) for k in ORDER])


def counts_from_rho2(rho, n_per_pair):
    out = np.zeros((6, 6))
    for i, a in enumerate(ORDER):
        for j, b in enumerate(ORDER):
            v = np.kron(KET[a], KET[b])
            out[i, j] = n_per_pair * np.real(np.vdot(v, rho @ v))
    return out


def random_rho(rng, dim, rank=None):
    rank = rank or dim
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    m = g @ g.conj().T
    return m / np.trace(m).real
