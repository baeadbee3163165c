"""Physical parameters shared by every module."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational, Real


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the matrix model.

    ``cutoff`` is the largest matrix index, so matrices are
    ``(cutoff + 1) x (cutoff + 1)``.  Passing ``theta`` and ``mu2`` as
    ``Fraction`` or ``int`` keeps the covariance exact.
    """

    theta: Real = Fraction(4)
    mu2: Real = Fraction(0)
    omega: Real = Fraction(1)
    cutoff: int = 3

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.mu2 < 0:
            raise ValueError(f"mu2 must be nonnegative, got {self.mu2}")
        if not 0 < self.omega <= 1:
            raise ValueError(f"omega must lie in (0, 1], got {self.omega}")
        if int(self.cutoff) != self.cutoff or self.cutoff < 1:
            raise ValueError(f"cutoff must be an integer >= 1, got {self.cutoff}")

    @property
    def size(self) -> int:
        return int(self.cutoff) + 1

    @property
    def exact(self) -> bool:
        return isinstance(self.theta, Rational) and isinstance(self.mu2, Rational)

    def with_cutoff(self, cutoff: int) -> "ModelParams":
        return ModelParams(self.theta, self.mu2, self.omega, cutoff)
