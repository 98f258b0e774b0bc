import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iwaveplates.device import ChipSide, TwoPhotonState, simulate_counts, simulate_single_counts, werner_state
from iwaveplates.jones import PSI_MINUS, DensityMatrix, DomainError, trace_distance
from iwaveplates.tomography import (
    EstimationError,
    ExperimentConfig,
    linear_reconstruct,
    linear_reconstruct_1q,
    linear_reconstruct_2q,
    log_likelihood,
    mle_refine,
    montecarlo_errors,
    nearest_physical,
    render_bars,
    run_full_experiment,
    score,
    tomography,
    two_qubit_stokes,
)

from oracles import KET, counts_from_rho, counts_from_rho2, random_rho

IDEAL = (ChipSide(), ChipSide())
SINGLET = np.outer(PSI_MINUS, PSI_MINUS.conj())


def proj(label):
    return np.outer(KET[label], KET[label].conj())


def test_linear_1q_examples():
    np.testing.assert_allclose(linear_reconstruct_1q([100, 0, 50, 50, 50, 50]).matrix, proj("H"), atol=1e-15)
    np.testing.assert_allclose(linear_reconstruct_1q([50] * 6).matrix, np.eye(2) / 2, atol=1e-15)
    with pytest.raises(EstimationError):
        linear_reconstruct_1q([0, 0, 5, 5, 5, 5])
    with pytest.raises(DomainError):
        linear_reconstruct_1q([1, 2, 3])


def test_linear_1q_simulated_d():
    rec = simulate_single_counts("D", ChipSide(), 10**6, seed=3)
    rho = linear_reconstruct(rec)
    assert trace_distance(DensityMatrix(rho.matrix, check=False), DensityMatrix(proj("D"))) < 0.005


def test_linear_2q_exact_singlet():
    rho = linear_reconstruct_2q(counts_from_rho2(SINGLET, 1000))
    np.testing.assert_allclose(rho.matrix, SINGLET, atol=1e-12)
    s = two_qubit_stokes(counts_from_rho2(SINGLET, 1000))
    np.testing.assert_allclose(s, np.diag([1, -1, -1, -1]), atol=1e-12)


def test_linear_2q_product():
    hv = np.kron(KET["H"], KET["V"])
    rho = linear_reconstruct_2q(counts_from_rho2(np.outer(hv, hv.conj()), 500))
    np.testing.assert_allclose(rho.matrix, np.outer(hv, hv.conj()), atol=1e-12)
    with pytest.raises(DomainError):
        linear_reconstruct_2q(np.ones((6, 5)))


def test_linear_2q_poisson_median():
    fids = [score(linear_reconstruct_2q(simulate_counts(TwoPhotonState.psi_minus(), IDEAL, 10**5, seed=s)),
                  "psi-") for s in range(100)]
    assert np.median(fids) >= 0.99


def test_nearest_physical():
    raw = DensityMatrix(np.diag([1.01, -0.01]), check=False)
    fixed = nearest_physical(raw)
    assert fixed.is_physical
    np.testing.assert_allclose(fixed.matrix, np.diag([1.0, 0.0]), atol=1e-15)


def test_mle_fixed_point():
    rng = np.random.default_rng(4)
    for dim, maker in ((2, counts_from_rho), (4, counts_from_rho2)):
        truth = random_rho(rng, dim)
        res = mle_refine(maker(truth, 1e5))
        assert res.converged
        assert trace_distance(res.rho, DensityMatrix(truth)) < 1e-6


def test_mle_repairs_negative_eigenvalue():
    # counts whose linear inversion has eigenvalue -0.01
    s2 = np.sqrt(1.02**2 - 1)
    n = [100, 0, 100 * (1 + s2) / 2, 100 * (1 - s2) / 2, 50, 50]
    lin = linear_reconstruct_1q(n)
    assert np.min(np.linalg.eigvalsh(lin.matrix)) == pytest.approx(-0.01, abs=1e-12)
    res = mle_refine(n)
    assert np.min(np.linalg.eigvalsh(res.rho.matrix)) >= 0
    assert res.rho.is_physical


def test_mle_zero_cells():
    n = counts_from_rho2(SINGLET, 1000)
    assert n[0, 0] == 0
    res = mle_refine(n)
    assert np.isfinite(res.log_likelihood)
    assert score(res.rho, "psi-") == pytest.approx(1, abs=1e-9)


def test_mle_trace_monotone_and_physical():
    rec = simulate_counts(werner_state(0.8), IDEAL, 3000, seed=2)
    res = mle_refine(rec)
    assert np.all(np.diff(res.trace) >= 0)
    assert res.trace[-1] == pytest.approx(res.log_likelihood)
    assert res.rho.is_physical
    assert log_likelihood(rec, res.rho) == pytest.approx(res.log_likelihood)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2]))
def test_mle_property(seed, n_qubits):
    rng = np.random.default_rng(seed)
    dim = 2**n_qubits
    truth = random_rho(rng, dim, rank=int(rng.integers(1, dim + 1)))
    maker = counts_from_rho if n_qubits == 1 else counts_from_rho2
    n = rng.poisson(maker(truth, 200)).astype(float)
    res = mle_refine(n)
    m = res.rho.matrix
    assert np.allclose(m, m.conj().T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(m)) >= -1e-9
    assert np.trace(m).real == pytest.approx(1, abs=1e-12)
    assert np.all(np.diff(res.trace) >= 0)


def test_linear_and_mle_agree_at_large_counts():
    rng = np.random.default_rng(12)
    truth = random_rho(rng, 4)
    n = rng.poisson(counts_from_rho2(truth, 10**6)).astype(float)
    lin = linear_reconstruct_2q(n)
    res = mle_refine(n)
    assert trace_distance(DensityMatrix(lin.matrix, check=False), res.rho) < 1e-3


@pytest.mark.parametrize("factor", [2, 7])
def test_noiseless_scaling_invariance(factor):
    truth = random_rho(np.random.default_rng(1), 4)
    n = counts_from_rho2(truth, 300)
    a = tomography(n, target=DensityMatrix(truth), method="linear").fidelity
    b = tomography(n * factor, target=DensityMatrix(truth), method="linear").fidelity
    assert a == b or a == pytest.approx(b, abs=1e-12)


def test_singlet_signature():
    rec = simulate_counts(TwoPhotonState.psi_minus(), IDEAL, 10**6, seed=0)
    m = tomography(rec, target="psi-").rho.matrix
    np.testing.assert_allclose(np.diag(m).real, [0, 0.5, 0.5, 0], atol=0.01)
    assert m[1, 2].real == pytest.approx(-0.5, abs=0.01)
    assert np.max(np.abs(m.imag)) < 0.01


def test_montecarlo_scaling():
    rec = simulate_counts(werner_state(0.96), IDEAL, 10**4, seed=1).as_array()
    small = montecarlo_errors(rec, 100, seed=3, target="psi-").fidelity_sigma
    large = montecarlo_errors(rec * 100, 100, seed=3, target="psi-").fidelity_sigma
    assert small / large == pytest.approx(10, rel=0.25)


def test_montecarlo_zero_variance_mode():
    rec = simulate_counts(werner_state(0.96), IDEAL, 10**4, seed=1)
    err = montecarlo_errors(rec, 50, target="psi-", fluctuate=False)
    assert err.fidelity_sigma == 0
    assert np.all(err.rho_real_sigma == 0) and np.all(err.rho_imag_sigma == 0)
    with pytest.raises(DomainError):
        montecarlo_errors(rec, 10)


def test_montecarlo_sigma_scale():
    rec = simulate_counts(werner_state(0.96), IDEAL, 10**4, seed=1)
    res = tomography(rec, target="psi-", n_montecarlo=100, seed=5)
    assert 0.001 < res.fidelity_sigma < 0.02


def test_montecarlo_is_deterministic():
    rec = simulate_counts(werner_state(0.9), IDEAL, 5000, seed=1)
    a = montecarlo_errors(rec, 50, seed=2, target="psi-")
    b = montecarlo_errors(rec, 50, seed=2, target="psi-")
    assert np.array_equal(a.fidelities, b.fidelities)


def test_result_serialization():
    rec = simulate_counts(TwoPhotonState.psi_minus(), IDEAL, 10**4, seed=0)
    res = tomography(rec, target="psi-", label="pair")
    obj = json.loads(res.to_json())
    assert obj["label"] == "pair" and obj["method"] == "mle"
    assert np.array(obj["rho_real"]).shape == (4, 4)
    assert res.to_json() == tomography(rec, target="psi-", label="pair").to_json()


def test_render_bars():
    text = render_bars(DensityMatrix(SINGLET))
    lines = text.splitlines()
    assert len(lines) == 17
    assert lines[0].split() == ["row", "col", "real", "imag"]
    assert "HV   VH   -0.500    0.000" in text


def test_full_experiment_noiseless():
    out = run_full_experiment(ExperimentConfig(noiseless=True))
    assert len(out.single) == 12
    for _, _, r in out.single:
        assert r.fidelity >= 1 - 1e-9
    assert out.two_photon.fidelity >= 1 - 1e-9
    assert "mean" in out.fidelity_table().lower()


def test_full_experiment_poisson():
    out = run_full_experiment(ExperimentConfig(n_pairs=10**4, seed=1, two_photon=False))
    assert out.mean_single_fidelity >= 0.99


def test_config_validation():
    with pytest.raises(DomainError):
        ExperimentConfig(n_pairs=0)
    with pytest.raises(DomainError):
        ExperimentConfig(method="bayes")
    with pytest.raises(DomainError):
        ExperimentConfig(single_photon=False, two_photon=False)
    with pytest.raises(DomainError):
        ExperimentConfig.from_dict({"n_pairs": 10, "colour": "red"})
    assert ExperimentConfig.from_dict({"n_pairs": 10}).n_pairs == 10
