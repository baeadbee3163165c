"""Matrix basis of the Moyal plane.

In the basis f_mn the star product is matrix multiplication of the
coefficient arrays and integration is ``2*pi*theta*trace``.  The module also
carries a position-space quadrature oracle for the star product integral so
that both statements can be checked independently of the basis algebra.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .params import ModelParams

# Largest m+n for which the finite sum is evaluated.  Beyond this the
# alternating sum loses more digits than double precision can spare.
MAX_ORDER = 60

QUAD_NODES = 64


def _check_theta(theta):
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")


def basis_function_eval(m: int, n: int, x, theta) -> np.ndarray:
    """Evaluate f_mn at points ``x`` (shape (..., 2)).

    Uses the finite sum over k of binomials times abar^(m-k) a^(n-k) f0 with
    a = (x1 + i x2)/sqrt(2), computed with log-space factorials.
    """
    _check_theta(theta)
    if m < 0 or n < 0:
        raise ValueError("indices must be nonnegative")
    if m + n > MAX_ORDER:
        raise OverflowError(f"m+n={m + n} exceeds the supported limit {MAX_ORDER}")
    theta = float(theta)
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return _poly_part(m, n, x1, x2, theta) * 2.0 * np.exp(-(x1**2 + x2**2) / theta)


def _poly_part(m, n, x1, x2, theta):
    """f_mn / f0 as a function of the coordinates."""
    a = (x1 + 1j * x2) / np.sqrt(2.0)
    abar = np.conj(a) if np.isrealobj(x1) else (x1 - 1j * x2) / np.sqrt(2.0)
    log_norm = -0.5 * (gammaln(m + 1) + gammaln(n + 1) + (m + n) * np.log(theta))
    total = np.zeros(np.broadcast(x1, x2).shape, dtype=complex)
    for k in range(min(m, n) + 1):
        log_c = (
            gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1)
            + gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
            + gammaln(k + 1)
            + (m + n - 2 * k) * np.log(2.0)
            + k * np.log(theta)
            + log_norm
        )
        total = total + (-1) ** k * np.exp(log_c) * abar ** (m - k) * a ** (n - k)
    return total


@dataclass(frozen=True)
class MatrixFunction:
    coeffs: np.ndarray
    params: ModelParams

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.shape != (self.params.size, self.params.size):
            raise ValueError(
                f"coefficient shape {c.shape} does not match cutoff {self.params.cutoff}"
            )
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def unit(cls, m: int, n: int, params: ModelParams) -> "MatrixFunction":
        c = np.zeros((params.size, params.size), dtype=complex)
        c[m, n] = 1.0
        return cls(c, params)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return bool(np.allclose(self.coeffs, np.conj(self.coeffs.T), atol=tol))


def _check_compatible(a: MatrixFunction, b: MatrixFunction):
    if a.params.cutoff != b.params.cutoff or a.params.theta != b.params.theta:
        raise ValueError("matrix functions have different cutoff or theta")


def star_product(a: MatrixFunction, b: MatrixFunction) -> MatrixFunction:
    _check_compatible(a, b)
    return MatrixFunction(a.coeffs @ b.coeffs, a.params)


def integrate(a: MatrixFunction) -> complex:
    return 2 * np.pi * float(a.params.theta) * complex(np.trace(a.coeffs))


def reconstruct(a: MatrixFunction, x) -> np.ndarray:
    """phi(x) = sum_mn phi_mn f_mn(x), vectorized over leading axes of ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1], dtype=complex)
    for (m, n), c in np.ndenumerate(a.coeffs):
        if c != 0:
            out = out + c * basis_function_eval(m, n, x, a.params.theta)
    return out


# --- quadrature oracle -----------------------------------------------------

# Theta^{12} = +theta.  With this orientation the quadrature reproduces
# f_mn * f_kl = delta_nk f_ml for the a, abar convention above.
def theta_matrix(theta) -> np.ndarray:
    return float(theta) * np.array([[0.0, 1.0], [-1.0, 0.0]])


@lru_cache(maxsize=4)
def _hermite(n: int):
    t, w = np.polynomial.hermite.hermgauss(n)
    return t, w


def _gauss_grid(scale: float, n: int):
    """2D nodes and weights for integrals against exp(-|u|^2 / scale^2)."""
    t, w = _hermite(n)
    t1, t2 = np.meshgrid(t, t, indexing="ij")
    nodes = scale * np.stack([t1.ravel(), t2.ravel()], axis=-1)
    weights = scale**2 * np.outer(w, w).ravel()
    return nodes, weights


def integrate_quadrature(m: int, n: int, theta, nodes: int = QUAD_NODES) -> complex:
    """Integral of f_mn over the plane by Gauss-Hermite quadrature."""
    u, w = _gauss_grid(np.sqrt(float(theta)), nodes)
    return complex(np.sum(w * 2.0 * _poly_part(m, n, u[:, 0], u[:, 1], float(theta))))


def star_product_quadrature(fa, fb_poly, theta, x, nodes: int = QUAD_NODES) -> np.ndarray:
    """Quadrature of the defining integral of the star product.

    Evaluates (f*g)(x) = (2 pi)^-2 int d^2k f(x + Theta k / 2) e^{-i k.x} G(k)
    where G(k) = int d^2u g(u) e^{i k.u}.  ``fa(points)`` evaluates f;
    ``fb_poly(points)`` evaluates g(u) / f0(u).  Returns values at ``x``
    (shape (P, 2)) for every function returned by ``fa`` (leading axis).
    """
    theta = float(theta)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    # G(k) on nodes adapted to exp(-theta |k|^2 / 2)
    k, wk = _gauss_grid(np.sqrt(2.0 / theta), nodes)
    u, wu = _gauss_grid(np.sqrt(theta), nodes)
    g_poly = np.atleast_2d(fb_poly(u))  # (G, U)
    phase = np.exp(1j * (k @ u.T))  # (K, U)
    G = 2.0 * np.einsum("gu,ku,u->gk", g_poly, phase, wu)
    # the k-weight exp(-theta|k|^2/2) is divided out of the integrand
    g_weighted = G * np.exp(theta * np.sum(k**2, axis=1) / 2.0)
    shift = 0.5 * k @ theta_matrix(theta).T  # (K, 2)
    pts = x[:, None, :] + shift[None, :, :]  # (P, K, 2)
    f_vals = np.asarray(fa(pts)).reshape((-1,) + pts.shape[:2])  # (F, P, K)
    osc = np.exp(-1j * (x @ k.T))  # (P, K)
    return np.einsum("fpk,pk,gk,k->fgp", f_vals, osc, g_weighted, wk) / (2 * np.pi) ** 2


def fusion_quadrature(theta, x, max_index: int = 3, nodes: int = QUAD_NODES) -> np.ndarray:
    """Array Q[m, n, k, l, p] = quadrature of (f_mn * f_kl)(x_p)."""
    theta = float(theta)
    idx = [(m, n) for m in range(max_index + 1) for n in range(max_index + 1)]

    def fa(pts):
        return np.stack([basis_function_eval(m, n, pts, theta) for m, n in idx])

    def fb_poly(u):
        return np.stack([_poly_part(m, n, u[:, 0], u[:, 1], theta) for m, n in idx])

    q = star_product_quadrature(fa, fb_poly, theta, x, nodes)
    d = max_index + 1
    return q.reshape(d, d, d, d, -1)
