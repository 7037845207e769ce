"""Polynomials, SISO transfer functions and state-space realizations.

Polynomials store coefficients in ascending powers: ``coeffs[k]`` multiplies
``s**k``.  Transfer functions keep a monic numerator and denominator with the
high-frequency gain carried separately, so ``W(s) = gain * num(s) / den(s)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateInput,
    NotStrictlyProper,
    WrongRelativeDegree,
)

ROOT_TOL = 1e-9
SPR_MARGIN = 1e-9
SPR_GRID_POINTS = 2000


@dataclass(frozen=True)
class Polynomial:
    coeffs: tuple = field(default=(0.0,))

    def __post_init__(self):
        c = [float(v) for v in np.atleast_1d(np.asarray(self.coeffs, dtype=float))]
        while len(c) > 1 and c[-1] == 0.0:
            c.pop()
        if not c:
            c = [0.0]
        object.__setattr__(self, "coeffs", tuple(c))

    @classmethod
    def from_descending(cls, coeffs: Sequence[float]) -> "Polynomial":
        return cls(tuple(reversed([float(v) for v in coeffs])))

    @classmethod
    def from_roots(cls, roots: Sequence[complex]) -> "Polynomial":
        c = np.poly(np.asarray(roots))[::-1]
        return cls(tuple(np.real_if_close(c).real))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_zero(self) -> bool:
        return self.coeffs == (0.0,)

    @property
    def leading(self) -> float:
        return self.coeffs[-1]

    def descending(self) -> np.ndarray:
        return np.array(self.coeffs[::-1])

    def monic(self) -> "Polynomial":
        if self.is_zero:
            raise DegenerateInput("zero polynomial has no monic form")
        return Polynomial(tuple(np.asarray(self.coeffs) / self.leading))

    def roots(self) -> np.ndarray:
        if self.is_zero:
            raise DegenerateInput("zero polynomial has no roots")
        if self.degree == 0:
            return np.array([], dtype=complex)
        return np.linalg.eigvals(companion(self))

    def __call__(self, s):
        return np.polynomial.polynomial.polyval(s, np.asarray(self.coeffs))

    def __add__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(tuple(np.polynomial.polynomial.polyadd(self.coeffs, other.coeffs)))

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(tuple(np.polynomial.polynomial.polysub(self.coeffs, other.coeffs)))

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            return poly_convolve(self, other)
        return Polynomial(tuple(np.asarray(self.coeffs) * float(other)))

    __rmul__ = __mul__

    def __neg__(self) -> "Polynomial":
        return self * -1.0

    def __repr__(self):
        return f"Polynomial({list(self.coeffs)})"


def poly_convolve(a: Polynomial, b: Polynomial) -> Polynomial:
    """Product of two polynomials."""
    return Polynomial(tuple(np.convolve(a.coeffs, b.coeffs)))


def poly_divmod(a: Polynomial, b: Polynomial) -> tuple[Polynomial, Polynomial]:
    q, r = np.polynomial.polynomial.polydiv(a.coeffs, b.coeffs)
    return Polynomial(tuple(q)), Polynomial(tuple(r))


def companion(p: Polynomial) -> np.ndarray:
    """Companion matrix in controllable canonical form (last row = -a_k)."""
    mp = p.monic()
    n = mp.degree
    A = np.zeros((n, n))
    if n > 1:
        A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -np.asarray(mp.coeffs[:-1])
    return A


@dataclass(frozen=True)
class TransferFunction:
    """``gain * num(s) / den(s)`` with monic ``num`` and ``den``."""

    num: Polynomial
    den: Polynomial
    gain: float = 1.0

    def __post_init__(self):
        num = self.num if isinstance(self.num, Polynomial) else Polynomial(self.num)
        den = self.den if isinstance(self.den, Polynomial) else Polynomial(self.den)
        if num.is_zero or den.is_zero:
            raise DegenerateInput("numerator and denominator must be nonzero")
        if self.gain == 0:
            raise DegenerateInput("high-frequency gain must be nonzero")
        if abs(num.leading - 1.0) > 1e-12 or abs(den.leading - 1.0) > 1e-12:
            raise DegenerateInput("num and den must be monic; use from_coeffs")
        if den.degree < num.degree:
            raise DegenerateInput("improper transfer function")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        object.__setattr__(self, "gain", float(self.gain))

    @classmethod
    def from_coeffs(cls, num: Sequence[float], den: Sequence[float]) -> "TransferFunction":
        """Build from descending coefficient lists, e.g. ``[3, 3], [1, 5, 6]``."""
        n = Polynomial.from_descending(num)
        d = Polynomial.from_descending(den)
        if n.is_zero or d.is_zero:
            raise DegenerateInput("numerator and denominator must be nonzero")
        return cls(n.monic(), d.monic(), n.leading / d.leading)

    @property
    def order(self) -> int:
        return self.den.degree

    @property
    def relative_degree(self) -> int:
        return self.den.degree - self.num.degree

    def __call__(self, s):
        return self.gain * self.num(s) / self.den(s)

    def scaled(self, c: float) -> "TransferFunction":
        return TransferFunction(self.num, self.den, self.gain * c)

    def __repr__(self):
        return (f"TransferFunction(gain={self.gain:g}, num={list(self.num.descending())}, "
                f"den={list(self.den.descending())})")


@dataclass(frozen=True)
class StateSpaceModel:
    """``x' = A x + B u``, ``y = gain * C x``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    gain: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(-1, 1)
        C = np.asarray(self.C, dtype=float).reshape(1, -1)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
            from .errors import DimensionMismatch
            raise DimensionMismatch(f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape}")
        for name, val in (("A", A), ("B", B), ("C", C)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def order(self) -> int:
        return self.A.shape[0]


def realize_ccf(tf: TransferFunction) -> StateSpaceModel:
    """Controllable canonical realization of a strictly proper transfer function."""
    if tf.relative_degree < 1:
        raise NotStrictlyProper(f"relative degree {tf.relative_degree} < 1")
    n = tf.order
    A = companion(tf.den)
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    C = np.zeros((1, n))
    C[0, : tf.num.degree + 1] = tf.num.coeffs
    return StateSpaceModel(A, B, C, tf.gain)


def ss_to_tf(ss: StateSpaceModel) -> tuple[Polynomial, Polynomial]:
    """Numerator and denominator of ``gain*C(sI-A)^-1 B`` (denominator monic).

    Uses the SISO identity ``C adj(sI-A) B = det(sI-A+BC) - det(sI-A)``, which
    only needs characteristic polynomials.
    """
    den = Polynomial(tuple(np.poly(ss.A)[::-1]))
    shifted = Polynomial(tuple(np.poly(ss.A - ss.B @ ss.C)[::-1]))
    return (shifted - den) * ss.gain, den


def is_hurwitz(p: Polynomial, tol: float = ROOT_TOL) -> bool:
    """All roots strictly in the open left half plane (real part < -tol)."""
    if p.is_zero:
        raise DegenerateInput("zero polynomial")
    if p.degree < 1:
        raise DegenerateInput("constant polynomial has no roots to test")
    return bool(np.all(p.roots().real < -tol))


def is_spr(tf: TransferFunction, *, margin: float = SPR_MARGIN,
           n_points: int = SPR_GRID_POINTS, w_min: float = 1e-3, w_max: float = 1e6) -> bool:
    """Strict positive realness decided on a logarithmic frequency grid.

    Checks Hurwitz denominator, relative degree 0 or 1 and
    ``Re W(jw) > margin / (1 + w^2)`` on ``n_points`` samples of
    ``[w_min, w_max]``.  Sampling is sufficient for the low-order models used
    here; it is not a proof for arbitrary transfer functions.
    """
    if tf.relative_degree not in (0, 1):
        return False
    if not is_hurwitz(tf.den):
        return False
    w = np.logspace(np.log10(w_min), np.log10(w_max), n_points)
    re = np.real(tf(1j * w))
    return bool(np.all(re > margin / (1.0 + w**2)))


def high_freq_gain(tf: TransferFunction) -> float:
    if tf.relative_degree != 1:
        raise WrongRelativeDegree(f"relative degree {tf.relative_degree}, expected 1")
    return tf.gain
