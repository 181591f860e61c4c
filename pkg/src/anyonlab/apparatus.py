"""Idealized two-detector Mach-Zehnder interferometer.

The apparatus is fully described by the complex coefficients of its two
lossless beam splitters, a dephasing magnitude ``q`` in [0, 1], and an average
path-phase difference ``theta``.  Phase dispersion across incident particles
is modelled at the probability level: every interference cross term carries a
factor ``q * exp(i * theta)``.

Detector probabilities come in three closed forms, all sharing the same cross
term ``t1 * r2' * conj(r1) * conj(t2) * exp(i theta)``:

* ordinary interference (trivial topological interaction),
* the Aharonov-Bohm form, where a unit phase factor multiplies the cross term,
* the non-abelian form, where the phase factor is replaced by the expectation
  value of the monodromy operator (a point in the closed unit disk).

The non-abelian distribution is affine in that expectation value, so it always
equals the spectral-weight mixture of Aharonov-Bohm distributions taken over
the monodromy eigenvalues.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    ExpectationOutOfDisk,
    InvalidApparatus,
    NotUnitModulus,
)
from .linalg import SpectralDecomposition

#: Tolerance for beam-splitter coefficient relations.
COEFFICIENT_TOL = 1e-10

#: Probabilities may stick out of [0, 1] by at most this before erroring.
PROBABILITY_TOL = 1e-12


@dataclass(frozen=True)
class BeamSplitter:
    """Coefficients of one lossless beam splitter.

    ``t`` and ``r`` are transmission and reflection for beams incident from
    the left; ``t_prime`` and ``r_prime`` for beams incident from below.
    Losslessness forces the scattering matrix to be unitary, which pins the
    primed coefficients: ``r_prime = conj(r)`` and ``t_prime = -conj(t)``,
    with ``|r|^2 + |t|^2 = 1``.
    """

    t: complex
    r: complex
    t_prime: complex
    r_prime: complex

    def __post_init__(self) -> None:
        if abs(abs(self.r) ** 2 + abs(self.t) ** 2 - 1.0) > COEFFICIENT_TOL:
            raise InvalidApparatus(
                f"|r|^2 + |t|^2 = {abs(self.r)**2 + abs(self.t)**2!r} is not 1"
            )
        if abs(self.r_prime - self.r.conjugate()) > COEFFICIENT_TOL:
            raise InvalidApparatus("r_prime must equal conj(r) for a lossless splitter")
        if abs(self.t_prime + self.t.conjugate()) > COEFFICIENT_TOL:
            raise InvalidApparatus("t_prime must equal -conj(t) for a lossless splitter")

    @classmethod
    def from_t_r(cls, t: complex, r: complex) -> "BeamSplitter":
        """Build a splitter from ``t`` and ``r``, deriving the primed pair."""
        return cls(t=complex(t), r=complex(r), t_prime=-complex(t).conjugate(),
                   r_prime=complex(r).conjugate())

    def to_json(self) -> dict:
        return {
            "t": [self.t.real, self.t.imag],
            "r": [self.r.real, self.r.imag],
            "t_prime": [self.t_prime.real, self.t_prime.imag],
            "r_prime": [self.r_prime.real, self.r_prime.imag],
        }

    @classmethod
    def from_json(cls, data: dict) -> "BeamSplitter":
        def c(key):
            re, im = data[key]
            return complex(re, im)

        return cls(t=c("t"), r=c("r"), t_prime=c("t_prime"), r_prime=c("r_prime"))


@dataclass(frozen=True)
class Apparatus:
    """A complete interferometer: two splitters, dephasing ``q``, phase ``theta``."""

    bs1: BeamSplitter
    bs2: BeamSplitter
    q: float
    theta: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.q <= 1.0:
            raise InvalidApparatus(f"dephasing magnitude q = {self.q!r} not in [0, 1]")
        if not math.isfinite(self.theta):
            raise InvalidApparatus("theta must be finite")

    def to_json(self) -> dict:
        return {
            "bs1": self.bs1.to_json(),
            "bs2": self.bs2.to_json(),
            "q": self.q,
            "theta": self.theta,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Apparatus":
        return cls(
            bs1=BeamSplitter.from_json(data["bs1"]),
            bs2=BeamSplitter.from_json(data["bs2"]),
            q=float(data["q"]),
            theta=float(data["theta"]),
        )


@dataclass(frozen=True)
class DetectorDistribution:
    """Probabilities of the two detector outcomes; they sum to one."""

    p_d1: float
    p_d2: float

    def __post_init__(self) -> None:
        for p in (self.p_d1, self.p_d2):
            if not -PROBABILITY_TOL <= p <= 1.0 + PROBABILITY_TOL:
                raise InvalidApparatus(f"probability {p!r} outside [0, 1]")
        if abs(self.p_d1 + self.p_d2 - 1.0) > 1e-12:
            raise InvalidApparatus("detector probabilities do not sum to 1")

    def as_tuple(self) -> tuple[float, float]:
        return (self.p_d1, self.p_d2)

    def probability(self, outcome: int) -> float:
        """Probability of detector ``outcome`` (1 or 2)."""
        return self.p_d1 if outcome == 1 else self.p_d2


def paper_example() -> Apparatus:
    """The worked-example apparatus used by the shipped presets.

    Balanced splitters with real reflection ``1/sqrt(2)`` and imaginary
    transmission ``i/sqrt(2)``, full coherence ``q = 1``, and
    ``theta = arccos(4/5)``, chosen so the ordinary pattern is (9/10, 1/10).
    """
    bs = BeamSplitter.from_t_r(t=1j / math.sqrt(2), r=1.0 / math.sqrt(2))
    return Apparatus(bs1=bs, bs2=bs, q=1.0, theta=math.acos(4.0 / 5.0))


_APPARATUS_PRESETS = {"paper_example": paper_example}


def apparatus_preset(name: str) -> Apparatus:
    """Look up a named apparatus preset."""
    try:
        return _APPARATUS_PRESETS[name]()
    except KeyError:
        raise InvalidApparatus(
            f"unknown apparatus preset {name!r}; available: {sorted(_APPARATUS_PRESETS)}"
        ) from None


def cross_term(app: Apparatus) -> complex:
    """The interference cross term ``t1 r2' conj(r1) conj(t2) e^{i theta}``.

    Common to all detector-probability formulas; the dephasing factor ``q``
    is applied by the callers, not here.
    """
    return (
        app.bs1.t
        * app.bs2.r_prime
        * app.bs1.r.conjugate()
        * app.bs2.t.conjugate()
        * cmath.exp(1j * app.theta)
    )


def _base_probability_d1(app: Apparatus) -> float:
    return abs(app.bs1.t * app.bs2.r_prime) ** 2 + abs(app.bs1.r * app.bs2.t) ** 2


def _distribution(app: Apparatus, factor: complex) -> DetectorDistribution:
    p1 = _base_probability_d1(app) + 2.0 * app.q * (cross_term(app) * factor).real
    if not -PROBABILITY_TOL <= p1 <= 1.0 + PROBABILITY_TOL:
        raise InvalidApparatus(
            f"computed P[D1] = {p1!r} outside [0, 1]; coefficients are inconsistent"
        )
    p1 = min(max(p1, 0.0), 1.0)
    return DetectorDistribution(p_d1=p1, p_d2=1.0 - p1)


def prob_ordinary(app: Apparatus) -> DetectorDistribution:
    """Detector distribution for ordinary interference."""
    return _distribution(app, 1.0)


def prob_ab(app: Apparatus, lambda_phase: complex) -> DetectorDistribution:
    """Aharonov-Bohm distribution for a unit-modulus topological phase factor."""
    lam = complex(lambda_phase)
    if abs(abs(lam) - 1.0) > COEFFICIENT_TOL:
        raise NotUnitModulus(f"|lambda_phase| = {abs(lam)!r} is not 1")
    return _distribution(app, lam)


def prob_na(app: Apparatus, monodromy_expectation: complex) -> DetectorDistribution:
    """Non-abelian distribution for a monodromy expectation value.

    ``monodromy_expectation`` is a convex combination of unit-circle
    eigenvalues, so it must lie in the closed unit disk.  Passing an
    eigenvalue of the many-to-one operator (which also lies in the disk)
    yields that eigenvalue's locked distribution.
    """
    z = complex(monodromy_expectation)
    if abs(z) > 1.0 + COEFFICIENT_TOL:
        raise ExpectationOutOfDisk(f"|expectation| = {abs(z)!r} exceeds 1")
    return _distribution(app, z)


def decompose_na(
    app: Apparatus, spec: SpectralDecomposition, psi: np.ndarray
) -> list[tuple[complex, float, DetectorDistribution]]:
    """Per-eigenvalue weights and Aharonov-Bohm distributions for a state.

    Returns one ``(eigenvalue, weight, distribution)`` triple per cluster of
    ``spec``.  The weights are the spectral weights ``<psi|E|psi>`` and sum to
    one; mixing the distributions with these weights reproduces
    :func:`prob_na` at the state's monodromy expectation value.
    """
    psi = np.asarray(psi, dtype=np.complex128).reshape(-1)
    if psi.shape[0] != spec.source_dim:
        raise DimensionMismatch(
            f"state dimension {psi.shape[0]} != decomposition dimension {spec.source_dim}"
        )
    weights = spec.weights(psi)
    out = []
    for lam, w in zip(spec.eigenvalues, weights):
        out.append((complex(lam), float(w), prob_ab(app, lam)))
    return out
