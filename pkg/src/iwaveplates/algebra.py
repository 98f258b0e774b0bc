"""Waveplate equivalences and synthesis from the restricted tilt range.

The operator family ``M(theta, delta)`` has two symmetries,

* ``M(theta, delta) == M(theta + pi, delta)``
* ``M(theta, delta) == exp(i delta) M(theta - pi/2, -delta)``

which fold every plate onto ``theta in [-pi/4, pi/4)``, ``delta in [0, 2 pi)``.
A canonical plate ``M(2t, delta)`` is then produced by the sandwich
``HWP(t) . M(0, delta) . HWP(t)`` whose tilts stay within ``[-pi/8, pi/8)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np

from .jones import DomainError, PlateOperator, waveplate_matrix

TWO_PI = 2 * math.pi
QUARTER_PI = math.pi / 4


@dataclass(frozen=True)
class PlateSpec:
    theta: float
    delta: float

    def matrix(self) -> PlateOperator:
        return waveplate_matrix(self.theta, self.delta)

    @property
    def is_canonical(self) -> bool:
        return -QUARTER_PI <= self.theta < QUARTER_PI and 0 <= self.delta < TWO_PI


class PlateCascade(tuple):
    """Ordered plates, first element is traversed first."""

    def __new__(cls, plates: Iterable[PlateSpec] = ()):
        return super().__new__(cls, tuple(plates))

    def evaluate(self) -> PlateOperator:
        return cascade_evaluate(self)

    def __repr__(self):
        return f"PlateCascade({list(self)!r})"


def equivalent_shift(spec: PlateSpec) -> PlateSpec:
    return PlateSpec(spec.theta + math.pi, spec.delta)


def equivalent_conjugate(spec: PlateSpec) -> Tuple[PlateSpec, float]:
    """Return ``(spec', phase)`` with ``M(spec) = exp(i phase) M(spec')``.

    The axis rotates by -pi/2 and the retardance flips sign; the phase is
    ``+delta`` (the element order of the matrix fixes this sign).
    """
    return PlateSpec(spec.theta - math.pi / 2, -spec.delta), spec.delta


def _wrap_delta(delta: float) -> float:
    d = delta - TWO_PI * math.floor(delta / TWO_PI)
    # floor can land exactly on 2 pi for tiny negative inputs
    return 0.0 if d >= TWO_PI else d


def canonicalize(spec: PlateSpec) -> Tuple[PlateSpec, float]:
    """Fold a plate into the canonical window.

    Returns
    -------
    (PlateSpec, float)
        Canonical plate and the global phase ``phi`` such that
        ``M(spec) = exp(i phi) M(canonical)``.
    """
    if not (math.isfinite(spec.theta) and math.isfinite(spec.delta)):
        raise DomainError("plate parameters must be finite")
    theta, delta, phase = spec.theta, spec.delta, 0.0
    # shift by multiples of pi into [-pi/4, 3pi/4)
    theta -= math.pi * math.floor((theta + QUARTER_PI) / math.pi)
    if theta >= QUARTER_PI:
        (theta, delta), phase = (theta - math.pi / 2, -delta), delta
    if theta < -QUARTER_PI:  # rounding at the lower edge
        theta = -QUARTER_PI
    return PlateSpec(theta, _wrap_delta(delta)), phase


def cascade_evaluate(cascade: Iterable[PlateSpec]) -> PlateOperator:
    """Product of the plate matrices in traversal order; empty gives identity."""
    m = np.eye(2, dtype=complex)
    for plate in cascade:
        m = plate.matrix().matrix @ m
    return PlateOperator(m)


def decompose_sandwich(target: PlateSpec) -> PlateCascade:
    """Half-wave / axis-aligned retarder / half-wave cascade equal to ``target``."""
    if not target.is_canonical:
        raise DomainError(f"{target} is not canonical; call canonicalize() first")
    half = PlateSpec(target.theta / 2, math.pi)
    return PlateCascade([half, PlateSpec(0.0, target.delta), half])


def synthesize(theta: float, delta: float) -> Tuple[PlateCascade, float]:
    """Canonicalize then decompose an arbitrary plate.

    The returned phase ``phi`` satisfies
    ``M(theta, delta) = exp(i phi) cascade_evaluate(cascade)``.
    """
    canon, phase = canonicalize(PlateSpec(theta, delta))
    return decompose_sandwich(canon), phase


def distance_up_to_phase(a: PlateOperator, b: PlateOperator) -> float:
    """``min_phi ||A - exp(i phi) B||_F``.

    Equal to ``sqrt(|A|^2 + |B|^2 - 2 |Tr A^dag B|)``; evaluated at the
    optimal phase instead, which avoids cancellation for nearby operators.
    """
    am = a.matrix if isinstance(a, PlateOperator) else np.asarray(a)
    bm = b.matrix if isinstance(b, PlateOperator) else np.asarray(b)
    overlap = np.trace(bm.conj().T @ am)
    phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    return float(np.linalg.norm(am - phase * bm))


def max_tilt(cascade: Iterable[PlateSpec]) -> float:
    return max((abs(p.theta) for p in cascade), default=0.0)


def as_list(cascade: PlateCascade) -> List[Tuple[float, float]]:
    return [(p.theta, p.delta) for p in cascade]
