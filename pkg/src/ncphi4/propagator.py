"""Kinetic matrix, covariance, multiscale slices and Wick counterterms."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import integrate
from scipy.special import digamma

from .params import ModelParams

EXACT_CUTOFF_LIMIT = 30


def _rate(params: ModelParams, s):
    """mu^2 + (4/theta) s, exact when the parameters are rational."""
    return params.mu2 + Fraction(4) / params.theta * s if params.exact else (
        float(params.mu2) + 4.0 / float(params.theta) * s
    )


def kinetic_matrix(params: ModelParams, exact: bool = False) -> np.ndarray:
    """Delta_{mn,kl} as a (N^2, N^2) array with row (m,n) -> m*N + n.

    Nonzero elements: (mn; nm) on the diagonal of the oscillator part and
    (mn; n+1 m+1), (mn; n-1 m-1) from the (1 - Omega^2) hopping terms.  The
    diagonal carries (1 + Omega^2) so that Omega = 1 gives mu^2 + (4/theta)(m+n+1).
    """
    N = params.size
    if exact:
        if not (params.exact and isinstance(params.omega, (int, Fraction))):
            raise ValueError("exact kinetic matrix needs rational theta, mu2 and omega")
        th, mu2, om = Fraction(params.theta), Fraction(params.mu2), Fraction(params.omega)
        D = np.full((N * N, N * N), Fraction(0), dtype=object)
        sqrt = _exact_sqrt
    else:
        th, mu2, om = float(params.theta), float(params.mu2), float(params.omega)
        D = np.zeros((N * N, N * N))
        sqrt = math.sqrt
    hop = 2 / th * (1 - om * om)
    for m in range(N):
        for n in range(N):
            row = m * N + n
            D[row, n * N + m] = mu2 + 2 / th * (1 + om * om) * (m + n + 1)
            if hop != 0:
                if m + 1 < N and n + 1 < N:
                    D[row, (n + 1) * N + (m + 1)] = -hop * sqrt((m + 1) * (n + 1))
                if m >= 1 and n >= 1:
                    D[row, (n - 1) * N + (m - 1)] = -hop * sqrt(m * n)
    return D


def _exact_sqrt(k: int):
    r = math.isqrt(k)
    if r * r != k:
        raise ValueError("exact kinetic matrix at Omega != 1 needs irrational entries")
    return r


def swap_permutation(N: int) -> np.ndarray:
    """Permutation P with P[(m,n), (n,m)] = 1."""
    P = np.zeros((N * N, N * N), dtype=int)
    for m in range(N):
        for n in range(N):
            P[m * N + n, n * N + m] = 1
    return P


def numeric_covariance(params: ModelParams) -> np.ndarray:
    """C_{mn,kl} for any Omega by inverting Delta.

    The defining relation sum_rs Delta_{mn,rs} C_{sr,kl} = delta_ml delta_nk
    reads Delta P C = P as matrices, so C = P Delta^-1 P.
    """
    P = swap_permutation(params.size).astype(float)
    return P @ np.linalg.inv(kinetic_matrix(params)) @ P


@dataclass(frozen=True)
class Covariance:
    params: ModelParams
    diag: np.ndarray
    slice_base: float = 2.0

    @property
    def size(self) -> int:
        return self.params.size

    def as_float(self) -> np.ndarray:
        return self.diag.astype(float)

    @property
    def sqrt(self) -> np.ndarray:
        return np.sqrt(self.as_float())

    def full(self) -> np.ndarray:
        """The N^2 x N^2 operator C_{mn,kl}, exact if the diagonal is."""
        N = self.size
        out = np.zeros((N * N, N * N), dtype=self.diag.dtype)
        if out.dtype == object:
            out[...] = Fraction(0)
        for m in range(N):
            for n in range(N):
                out[m * N + n, n * N + m] = self.diag[m, n]
        return out

    def lifted_diag(self) -> np.ndarray:
        """C as the diagonal of the operator acting on matrices phi -> (C_mn phi_mn)."""
        return self.as_float().ravel()


def covariance(params: ModelParams, slice_base: float = 2.0) -> Covariance:
    if params.omega != 1:
        raise NotImplementedError(
            "closed-form covariance exists only at omega = 1; use numeric_covariance"
        )
    if slice_base <= 1:
        raise ValueError("slice base M must exceed 1")
    N = params.size
    dtype = object if params.exact else float
    diag = np.empty((N, N), dtype=dtype)
    for m in range(N):
        for n in range(N):
            diag[m, n] = 1 / _rate(params, m + n + 1)
    return Covariance(params, diag, float(slice_base))


# --- multiscale slices -----------------------------------------------------

def _window(cov: Covariance, j: int):
    M = cov.slice_base
    if j < 0:
        raise ValueError("scale index must be nonnegative")
    if j == 0:
        return 1.0, math.inf
    return M ** (-2 * j), M ** (-(2 * j - 2))


def _float_rate(cov: Covariance) -> np.ndarray:
    N = cov.size
    s = np.add.outer(np.arange(N), np.arange(N)) + 1
    return float(cov.params.mu2) + 4.0 / float(cov.params.theta) * s


def sliced_propagator(cov: Covariance, j: int) -> np.ndarray:
    """C^j_mn = int over alpha window of exp(-alpha r_mn), j = 0 is the tail [1, inf)."""
    lo, hi = _window(cov, j)
    r = _float_rate(cov)
    upper = 0.0 if math.isinf(hi) else np.exp(-hi * r)
    return (np.exp(-lo * r) - upper) / r


def sliced_propagator_quadrature(cov: Covariance, j: int, m: int, n: int) -> float:
    lo, hi = _window(cov, j)
    r = _float_rate(cov)[m, n]
    val, _ = integrate.quad(lambda a: math.exp(-a * r), lo, hi, epsabs=0, epsrel=1e-13)
    return val


def slice_bound_constant(M: float) -> float:
    """K with C^j <= K M^{-2j}: the window length M^{-2j}(M^2 - 1)."""
    return M * M - 1


def slice_sum(cov: Covariance, J: int) -> np.ndarray:
    return sum(sliced_propagator(cov, j) for j in range(J + 1))


# --- counterterms ------------------------------------------------------------

@dataclass(frozen=True)
class CountertermTable:
    T: np.ndarray
    T2: object
    T3: object
    cutoff: int
    exact: bool = field(default=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "T_m"])
        for m, t in enumerate(self.T):
            w.writerow([m, repr(float(t))])
        return buf.getvalue()


def tadpoles(cov: Covariance) -> np.ndarray:
    """T_m = sum_q C_mq."""
    return np.sum(cov.diag, axis=1)


def counterterms(cov: Covariance, exact: bool | None = None) -> CountertermTable:
    """T_m, T2 = sum_m T_m^2 and T3 = sum_mnlp C_mp C_np C_lp = sum_p T_p^3."""
    if exact is None:
        exact = cov.params.exact and cov.params.cutoff <= EXACT_CUTOFF_LIMIT
    if exact:
        T = tadpoles(cov)
        return CountertermTable(T, sum(t * t for t in T), sum(t**3 for t in T), cov.params.cutoff, True)
    return counterterm_table(cov.params, exact=False)


def counterterm_table(params: ModelParams, exact: bool | None = None) -> CountertermTable:
    """Counterterms straight from the parameters; avoids the N x N kernel at large cutoff."""
    if exact is None:
        exact = params.exact and params.cutoff <= EXACT_CUTOFF_LIMIT
    if exact:
        return counterterms(covariance(params), exact=True)
    T = tadpoles_float(params)
    return CountertermTable(T, float(np.sum(T**2)), float(np.sum(T**3)), params.cutoff, False)


def tadpoles_float(params: ModelParams) -> np.ndarray:
    """Float T_m for large cutoffs through the digamma closed form.

    sum_{q=0}^{L} 1/(c' (m+q+1+c)) = (theta/4) [psi(m+L+2+c) - psi(m+1+c)],
    c = theta mu^2 / 4.
    """
    th = float(params.theta)
    c = th * float(params.mu2) / 4.0
    m = np.arange(params.size, dtype=float)
    return th / 4.0 * (digamma(m + params.cutoff + 2 + c) - digamma(m + 1 + c))


def triple_sum_T3(cov: Covariance):
    """T3 by the literal four-index sum, an independent route to sum_p T_p^3."""
    C = cov.diag
    N = cov.size
    total = 0
    for m, n, l, p in itertools.product(range(N), repeat=4):
        total += C[m, p] * C[n, p] * C[l, p]
    return total


def asymptotic_constant() -> tuple[float, float]:
    """(2 ln^2 2 + pi^2/6, quadrature of int_0^1 ln^2((1+x)/x) dx)."""
    closed = 2 * math.log(2) ** 2 + math.pi**2 / 6
    quad, _ = integrate.quad(lambda x: math.log((1 + x) / x) ** 2, 0, 1, epsabs=1e-13, epsrel=1e-12, limit=200)
    return closed, quad
