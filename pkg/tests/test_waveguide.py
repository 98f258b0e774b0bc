import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iwaveplates.jones import DomainError, H, V, apply, projector_probability
from iwaveplates.waveguide import (
    MEAN_BIREFRINGENCE,
    WaveguideDevice,
    WaveguideSegment,
    curves_to_csv,
    device_operator,
    half_wave_length,
    length_for_retardance,
    loss_db,
    retardance,
    segment_operator,
    transfer_curves,
    two_segment_curves,
)

from oracles import half_wave_pd, prob, waveplate

LAM = 800e-9
TILT = math.radians(22.5)


def test_retardance_examples():
    assert retardance(WaveguideSegment(0.020, 2.0e-5), LAM) == pytest.approx(math.pi, rel=1e-14)
    assert retardance(WaveguideSegment(0.0, 2.0e-5), LAM) == 0
    assert half_wave_length(MEAN_BIREFRINGENCE, LAM) == pytest.approx(19.9005e-3, rel=1e-4)
    assert length_for_retardance(math.pi, MEAN_BIREFRINGENCE, LAM) == pytest.approx(
        half_wave_length(MEAN_BIREFRINGENCE, LAM))


def test_retardance_is_unwrapped():
    assert retardance(WaveguideSegment(0.1, 2e-5), LAM) == pytest.approx(5 * math.pi)


def test_invalid_inputs():
    with pytest.raises(DomainError):
        WaveguideSegment(-1e-3, 2e-5)
    with pytest.raises(DomainError):
        WaveguideSegment(1e-3, -2e-5)
    with pytest.raises(DomainError):
        retardance(WaveguideSegment(1e-3, 2e-5), 0)
    with pytest.raises(DomainError):
        WaveguideDevice((), junction_loss_db=-1)


def test_segment_operator_examples():
    hw = half_wave_length(2e-5, LAM)
    np.testing.assert_allclose(segment_operator(WaveguideSegment(hw, 2e-5, 0), LAM).matrix,
                               np.diag([1, -1]), atol=1e-12)
    out = apply(segment_operator(WaveguideSegment(hw, 2e-5, TILT), LAM), H)
    assert projector_probability(out, "D") == pytest.approx(1, abs=1e-12)
    out = apply(segment_operator(WaveguideSegment(hw, 2e-5, math.radians(21.5)), LAM), H)
    assert projector_probability(out, "D") == pytest.approx((1 + math.sin(math.radians(86))) / 2, abs=1e-12)
    assert projector_probability(out, "D") == pytest.approx(0.9988, abs=1e-4)


def test_device_transmittance():
    _, t = device_operator(WaveguideDevice((WaveguideSegment(0.01, 2e-5),), LAM))
    assert t == pytest.approx(10 ** -0.02, rel=1e-12)
    assert t == pytest.approx(0.955, abs=1e-3)
    _, t2 = device_operator(WaveguideDevice(
        (WaveguideSegment(0.005, 2e-5), WaveguideSegment(0.005, 2e-5, TILT)), LAM))
    assert t2 / t == pytest.approx(10 ** -0.03, rel=1e-12)
    op, t0 = device_operator(WaveguideDevice((WaveguideSegment(0.0, 2e-5, 0.3),), LAM))
    np.testing.assert_allclose(op.matrix, np.eye(2), atol=0)
    assert t0 == 1
    assert loss_db(3, 0.05) == pytest.approx(0.6 + 1.0)


def test_empty_device_rejected():
    with pytest.raises(DomainError):
        device_operator(WaveguideDevice(()))


@given(st.lists(st.tuples(st.floats(0, 0.05), st.floats(-3, 3)), min_size=1, max_size=5))
def test_device_operator_unitary(segs):
    dev = WaveguideDevice(tuple(WaveguideSegment(l, 2e-5, t) for l, t in segs), LAM)
    op, trans = device_operator(dev)
    assert op.is_unitary(1e-12)
    assert 0 < trans <= 1


def test_transfer_curve_examples():
    hw = half_wave_length(2e-5, LAM)
    (p,) = transfer_curves(TILT, 2e-5, LAM, [hw])
    assert p.p_H == pytest.approx(0.5, abs=1e-12) and p.p_V == pytest.approx(0.5, abs=1e-12)
    for theta in (0.0, 0.3, -1.1):
        (p,) = transfer_curves(theta, 2e-5, LAM, [0.0])
        assert (p.p_H, p.p_D, p.p_A) == pytest.approx((1, 0.5, 0.5), abs=1e-12)
    (p,) = transfer_curves(math.radians(21.5), 2e-5, LAM, [hw])
    assert p.p_A == pytest.approx(1 - half_wave_pd(math.radians(21.5)), abs=1e-12)
    assert p.p_A == pytest.approx(0.0012, abs=1e-4)


@given(st.floats(-1.5, 1.5), st.floats(1e-5, 1e-4), st.lists(st.floats(0, 0.05), min_size=1, max_size=8))
def test_transfer_curves_match_oracle(theta, b, lengths):
    for pt in transfer_curves(theta, b, LAM, lengths):
        psi = waveplate(theta, 2 * math.pi * b * pt.length / LAM)[:, 0]
        assert pt.p_H + pt.p_V == pytest.approx(1, abs=1e-12)
        assert pt.p_D + pt.p_A == pytest.approx(1, abs=1e-12)
        for k in "HVDA":
            assert getattr(pt, f"p_{k}") == pytest.approx(prob(psi, k), abs=1e-12)


def test_curve_periodicity():
    b = 2.2e-5
    full = LAM / b
    ls = np.linspace(0, full, 7)
    a = transfer_curves(0.4, b, LAM, ls)
    c = transfer_curves(0.4, b, LAM, ls + full)
    for x, y in zip(a, c):
        assert (x.p_H, x.p_D) == pytest.approx((y.p_H, y.p_D), abs=1e-9)


def test_vertical_segment_transparent_to_h_and_v():
    pts = two_segment_curves(TILT, 2e-5, LAM, 0.04, [0.0, 0.01, 0.03], input_state=H)
    assert pts[0].p_H == pytest.approx(1, abs=1e-12)
    pts_v = two_segment_curves(TILT, 2e-5, LAM, 0.04, [0.0], input_state=V)
    assert pts_v[0].p_V == pytest.approx(1, abs=1e-12)
    # the tilted section alone determines the output for H
    ref = transfer_curves(TILT, 2e-5, LAM, [0.01, 0.03])
    for x, y in zip(pts[1:], ref):
        assert (x.p_H, x.p_D) == pytest.approx((y.p_H, y.p_D), abs=1e-12)
    with pytest.raises(DomainError):
        two_segment_curves(TILT, 2e-5, LAM, 0.01, [0.02])


def test_csv_format():
    text = curves_to_csv(transfer_curves(TILT, 2e-5, LAM, [0.0, 0.02]))
    lines = text.splitlines()
    assert lines[0] == "length_mm,p_H,p_V,p_D,p_A"
    assert lines[1] == "0.000000,1.000000,0.000000,0.500000,0.500000"
    assert lines[2].startswith("20.000000,0.500000,0.500000,1.000000,0.000000")
