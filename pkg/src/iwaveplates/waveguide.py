"""Birefringent waveguide segments and multi-segment devices."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .jones import H, DomainError, PlateOperator, apply, projector_probability, waveplate_matrix

# measured losses of the laser-written platform at 800 nm
JUNCTION_LOSS_DB = 0.3
PROPAGATION_LOSS_DB_PER_CM = 0.2
MEAN_BIREFRINGENCE = 2.01e-5
WAVELENGTH = 800e-9


@dataclass(frozen=True)
class WaveguideSegment:
    """A uniform birefringent section.

    Attributes
    ----------
    length : float
        Metres.
    birefringence : float
        Index difference ``b`` of the two eigenmodes.
    axis_tilt : float
        Optical-axis angle, radians.
    """

    length: float
    birefringence: float
    axis_tilt: float = 0.0

    def __post_init__(self):
        if self.length < 0:
            raise DomainError("segment length must be >= 0")
        if self.birefringence < 0:
            raise DomainError("birefringence must be >= 0")


@dataclass(frozen=True)
class WaveguideDevice:
    segments: Tuple[WaveguideSegment, ...]
    wavelength: float = WAVELENGTH
    junction_loss_db: float = JUNCTION_LOSS_DB
    propagation_loss_db_per_cm: float = PROPAGATION_LOSS_DB_PER_CM

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.junction_loss_db < 0 or self.propagation_loss_db_per_cm < 0:
            raise DomainError("loss parameters must be >= 0")
        if self.wavelength <= 0:
            raise DomainError("wavelength must be > 0")

    @property
    def total_length(self) -> float:
        return sum(s.length for s in self.segments)


def retardance(seg: WaveguideSegment, wavelength: float) -> float:
    """Unwrapped phase delay ``2 pi b l / lambda``."""
    if not wavelength > 0:
        raise DomainError("wavelength must be > 0")
    return 2 * math.pi * seg.birefringence * seg.length / wavelength


def half_wave_length(birefringence: float, wavelength: float = WAVELENGTH) -> float:
    if birefringence <= 0:
        raise DomainError("birefringence must be > 0")
    return wavelength / (2 * birefringence)


def length_for_retardance(delta: float, birefringence: float, wavelength: float = WAVELENGTH) -> float:
    if birefringence <= 0:
        raise DomainError("birefringence must be > 0")
    return delta * wavelength / (2 * math.pi * birefringence)


def segment_operator(seg: WaveguideSegment, wavelength: float) -> PlateOperator:
    return waveplate_matrix(seg.axis_tilt, retardance(seg, wavelength))


def loss_db(n_segments: int, total_length: float, junction_loss_db: float = JUNCTION_LOSS_DB,
            propagation_loss_db_per_cm: float = PROPAGATION_LOSS_DB_PER_CM) -> float:
    return junction_loss_db * max(n_segments - 1, 0) + propagation_loss_db_per_cm * total_length * 100


def device_operator(dev: WaveguideDevice) -> Tuple[PlateOperator, float]:
    """Polarization operator and scalar intensity transmittance of a device."""
    if not dev.segments:
        raise DomainError("device needs at least one segment")
    m = np.eye(2, dtype=complex)
    for seg in dev.segments:
        m = segment_operator(seg, dev.wavelength).matrix @ m
    db = loss_db(len(dev.segments), dev.total_length, dev.junction_loss_db,
                 dev.propagation_loss_db_per_cm)
    return PlateOperator(m), 10 ** (-db / 10)


@dataclass(frozen=True)
class CurvePoint:
    length: float
    p_H: float
    p_V: float
    p_D: float
    p_A: float


def transfer_curves(tilt: float, birefringence: float, wavelength: float,
                    lengths: Iterable[float]) -> List[CurvePoint]:
    """Normalized output powers for H input versus the tilted-segment length.

    Every point is obtained by propagating H through the segment operator and
    projecting the output state.
    """
    out = []
    for length in lengths:
        seg = WaveguideSegment(float(length), birefringence, tilt)
        psi = apply(segment_operator(seg, wavelength), H)
        p = {k: projector_probability(psi, k) for k in "HVDA"}
        out.append(CurvePoint(float(length), p["H"], p["V"], p["D"], p["A"]))
    return out


def two_segment_curves(tilt: float, birefringence: float, wavelength: float,
                       total_length: float, tilted_lengths: Sequence[float],
                       input_state=H) -> List[CurvePoint]:
    """Powers for the vertical-axis + tilted-axis device at fixed overall length."""
    out = []
    for lt in tilted_lengths:
        if lt > total_length:
            raise DomainError("tilted section longer than the device")
        dev = WaveguideDevice(
            (WaveguideSegment(total_length - lt, birefringence, 0.0),
             WaveguideSegment(lt, birefringence, tilt)),
            wavelength,
        )
        op, _ = device_operator(dev)
        psi = apply(op, input_state)
        p = {k: projector_probability(psi, k) for k in "HVDA"}
        out.append(CurvePoint(float(lt), p["H"], p["V"], p["D"], p["A"]))
    return out


def curves_to_csv(points: Iterable[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["length_mm", "p_H", "p_V", "p_D", "p_A"])
    for p in points:
        w.writerow([f"{p.length * 1e3:.6f}"] + [f"{v:.6f}" for v in (p.p_H, p.p_V, p.p_D, p.p_A)])
    return buf.getvalue()
