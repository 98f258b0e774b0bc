import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iwaveplates.algebra import distance_up_to_phase
from iwaveplates.device import (
    NOMINAL_MAP,
    ChipSide,
    CoincidenceRecord,
    CountRecord,
    TwoPhotonState,
    apply_compensation,
    apply_prefix,
    compensate,
    conditional_port_probability,
    expected_coincidences,
    expected_single_counts,
    ideal_projector_map,
    random_unitary,
    simulate_counts,
    simulate_single_counts,
    unitary_at_distance,
    werner_state,
)
from iwaveplates.jones import LABELS, DomainError, PlateOperator, PolarizationState, waveplate_matrix
from iwaveplates.tomography import tomography

from oracles import ORDER, singlet_cell

IDEAL = (ChipSide(), ChipSide())


def test_ideal_projector_map():
    assert ideal_projector_map(ChipSide()) == NOMINAL_MAP
    for (arm, port), lab in NOMINAL_MAP.items():
        assert conditional_port_probability(ChipSide(), lab, arm, port) == pytest.approx(1, abs=1e-12)
    assert conditional_port_probability(ChipSide(), "H", "beta", "T") == pytest.approx(0.5, abs=1e-12)
    assert conditional_port_probability(ChipSide(), "D", "gamma", "R") == pytest.approx(0.5, abs=1e-12)


def test_even_splitter():
    side = ChipSide()
    for lab in LABELS:
        p = side.output_probabilities(lab)
        assert p.sum() == pytest.approx(1, abs=1e-12)
        assert p[LABELS.index(lab)] == pytest.approx(1 / 3, abs=1e-12)


def test_invalid_sides():
    with pytest.raises(DomainError):
        ChipSide(splitter=(0.5, 0.5, 0.5))
    with pytest.raises(DomainError):
        apply_prefix(ChipSide(), PlateOperator(np.diag([1, 0.5])))


def test_two_photon_state():
    np.testing.assert_allclose(TwoPhotonState.psi_minus().amplitudes, [0, 1, -1, 0] / np.sqrt(2), atol=0)
    with pytest.raises(DomainError):
        TwoPhotonState([0, 0, 0, 0])
    with pytest.raises(DomainError):
        werner_state(1.2)


def test_singlet_means():
    mu = expected_coincidences(TwoPhotonState.psi_minus(), IDEAL, 36000)
    for i, a in enumerate(ORDER):
        for j, b in enumerate(ORDER):
            assert mu[LABELS.index(a), LABELS.index(b)] == pytest.approx(
                36000 * singlet_cell(a, b), abs=1e-8)
    for a, b in ("HV", "DA", "RL"):
        assert mu[LABELS.index(a), LABELS.index(a)] == pytest.approx(0, abs=1e-9)
        assert mu[LABELS.index(a), LABELS.index(b)] == pytest.approx(2000, abs=1e-9)


@settings(max_examples=30)
@given(st.sampled_from(LABELS), st.sampled_from(LABELS), st.floats(0.1, 1.0))
def test_probability_conservation(a, b, t):
    state = TwoPhotonState.product(PolarizationState.from_label(a), PolarizationState.from_label(b))
    mu = expected_coincidences(state, IDEAL, 1000, transmittance=t)
    assert mu.sum() == pytest.approx(1000 * t, rel=1e-12)


def test_simulate_counts_record():
    rec = simulate_counts(TwoPhotonState.psi_minus(), IDEAL, 36000, seed=5)
    c = rec.as_array()
    assert c.sum() <= 36000 * 1.05
    for a in range(0, 6, 2):
        assert c[a, a] == 0
    assert np.all(np.abs(c[0, 1] - 2000) < 5 * math.sqrt(2000))
    again = simulate_counts(TwoPhotonState.psi_minus(), IDEAL, 36000, seed=5)
    assert again.to_json() == rec.to_json()
    assert simulate_counts(TwoPhotonState.psi_minus(), IDEAL, 36000, seed=6).to_json() != rec.to_json()
    with pytest.raises(DomainError):
        simulate_counts(TwoPhotonState.psi_minus(), IDEAL, 0, seed=1)


def test_losses_and_accidentals():
    mu = expected_coincidences(TwoPhotonState.psi_minus(), IDEAL, 1000, detector_efficiency=0.5,
                               accidentals=2.0, transmittance=0.8)
    assert mu.sum() == pytest.approx(1000 * 0.8 * 0.25 + 72)


def test_record_json_round_trip():
    rec = simulate_counts(werner_state(0.9), IDEAL, 5000, seed=1)
    back = CoincidenceRecord.from_json(rec.to_json())
    assert back.to_json() == rec.to_json()
    assert back.counts.dtype.kind == "i"
    with pytest.raises(DomainError):
        CoincidenceRecord.from_json('{"counts": [[0]], "total_pairs": 1, "extra": 0}')
    with pytest.raises(DomainError):
        CoincidenceRecord(np.zeros((5, 6)), 1)


def test_count_record_csv_round_trip():
    rec = simulate_single_counts("D", ChipSide(), 3000, seed=2)
    back = CountRecord.from_csv(rec.to_csv())
    assert back.counts == rec.counts
    assert np.array_equal(back.as_array(), rec.as_array())
    with pytest.raises(DomainError):
        CountRecord((1, 2, 3), 6)
    with pytest.raises(DomainError):
        CountRecord.from_csv("name,value\nH,1\n")


def test_single_counts():
    mu = expected_single_counts("R", ChipSide(), 900)
    assert mu[LABELS.index("R")] == pytest.approx(300)
    assert mu[LABELS.index("L")] == pytest.approx(0, abs=1e-9)
    assert mu.sum() == pytest.approx(900)


def test_prefix_identity_and_phase():
    side = apply_prefix(ChipSide(), PlateOperator.identity())
    np.testing.assert_allclose(side.povm(), ChipSide().povm(), atol=1e-15)
    phased = apply_prefix(ChipSide(), waveplate_matrix(0, 0.6))
    for lab in LABELS:
        p0, p1 = ChipSide().output_probabilities(lab), phased.output_probabilities(lab)
        np.testing.assert_allclose(p1[:2], p0[:2], atol=1e-12)
    assert not np.allclose(phased.output_probabilities("D")[2:], ChipSide().output_probabilities("D")[2:])


def test_random_prefix_degrades_contrast():
    side = apply_prefix(ChipSide(), random_unitary(np.random.default_rng(1)))
    assert conditional_port_probability(side, "H", "alpha", "T") < 1 - 1e-3


def test_unitary_at_distance():
    rng = np.random.default_rng(0)
    for d in (0.0, 0.05, 0.5, 2.0):
        u = unitary_at_distance(d, rng)
        assert u.is_unitary(1e-12)
        assert distance_up_to_phase(u, PlateOperator.identity()) == pytest.approx(d, abs=1e-12)
    with pytest.raises(DomainError):
        unitary_at_distance(3.0, rng)


def test_compensate_identity():
    s = compensate(ChipSide())
    assert s.pc_angles == (0.0, 0.0, 0.0) and s.lc_phase == 0.0
    assert s.converged


def test_compensate_known_prefix():
    side = apply_prefix(ChipSide(), waveplate_matrix(math.radians(10), 0.7))
    s = compensate(side)
    assert s.converged and s.alpha_residual < 1e-6 and s.beta_residual < 1e-6
    fixed = apply_compensation(side, s)
    assert distance_up_to_phase(fixed.prefix, PlateOperator.identity()) < 1e-4

    phased = apply_prefix(ChipSide(), PlateOperator(np.exp(0.9j) * waveplate_matrix(math.radians(10), 0.7).matrix))
    s2 = compensate(phased)
    assert s2.pc_angles == pytest.approx(s.pc_angles, abs=1e-9)
    assert s2.lc_phase == pytest.approx(s.lc_phase, abs=1e-9)


def test_compensation_restores_tomography():
    rng = np.random.default_rng(8)
    worst = 1.0
    for k in range(100):
        side = apply_prefix(ChipSide(), random_unitary(rng))
        side = apply_compensation(side, compensate(side))
        rec = simulate_single_counts(LABELS[k % 6], side, 10**6, seed=k)
        res = tomography(rec, target=LABELS[k % 6], n_montecarlo=0)
        worst = min(worst, res.fidelity)
    assert worst >= 0.999
