"""Loop vertex expansion of log Z in the intermediate field sigma.

Conventions.  Matrices act on phi through the row-major vec index
(m, n) -> m*N + n.  The lift of sigma is the superoperator
phi -> sigma phi + phi sigma, i.e. ``kron(sigma, 1) + kron(1, sigma.T)``,
which is Hermitian whenever sigma is.  With g = i sqrt(2 lam) the loop vertex is

    V(sigma) = -1/2 Tr log_2(1 + g C^1/2 sigma_hat C^1/2) + g sum_m T_m sigma_mm + 2 lam T^2

and log Z = sum_n 1/n! sum_T G_T, where each tree edge carries
sum_ab d/dsigma^v_ab d/dsigma^v'_ba and the fields are Gaussian with
<sigma^v_ab sigma^v'_cd> = W_vv' delta_ad delta_bc.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.linalg import lapack

from .propagator import Covariance, sliced_propagator, tadpoles

log = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-10
MAX_TREE_VERTICES = 6
BLOCK = 1024


def coupling(lam) -> complex:
    """g = i sqrt(lam * 2) on the principal branch."""
    return 1j * np.sqrt(complex(lam) * 2)


def in_borel_domain(lam, tol: float = 1e-12) -> bool:
    return abs(np.angle(np.sqrt(complex(lam)))) <= np.pi / 4 + tol


# --- sigma and its lift -------------------------------------------------------

def lift(sigma: np.ndarray) -> np.ndarray:
    """sigma_hat for a single matrix or a stack (..., N, N) -> (..., N^2, N^2)."""
    sigma = np.asarray(sigma)
    N = sigma.shape[-1]
    I = np.eye(N)
    out = np.einsum("...mk,nl->...mnkl", sigma, I) + np.einsum("mk,...ln->...mnkl", I, sigma)
    return out.reshape(sigma.shape[:-2] + (N * N, N * N))


def lift_adjoint(M: np.ndarray) -> np.ndarray:
    """The map adjoint to ``lift`` under the trace: Tr(M lift(Y)) = sum_ab Y_ab out_ab."""
    M = np.asarray(M)
    N = math.isqrt(M.shape[-1])
    M4 = M.reshape(M.shape[:-2] + (N, N, N, N))
    return np.einsum("...bnan->...ab", M4) + np.einsum("...mamb->...ab", M4)


@dataclass(frozen=True)
class SigmaField:
    matrix: np.ndarray
    lifted: np.ndarray


def lift_sigma(sigma: np.ndarray, tol: float = HERMITIAN_TOL) -> SigmaField:
    sigma = np.asarray(sigma, dtype=complex)
    if np.max(np.abs(sigma - sigma.conj().T), initial=0.0) > tol:
        raise ValueError("sigma must be Hermitian")
    return SigmaField(sigma, lift(sigma))


def _as_field(sigma) -> SigmaField:
    return sigma if isinstance(sigma, SigmaField) else lift_sigma(sigma)


# --- resolvent and loop vertex --------------------------------------------------

@dataclass(frozen=True)
class Resolvent:
    matrix: np.ndarray
    lam: complex
    scale: int | None = None
    condition: float = 1.0

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


def _dressed(sigma_hat: np.ndarray, cov: Covariance) -> np.ndarray:
    c = np.sqrt(cov.lifted_diag())
    return c[:, None] * sigma_hat * c[None, :]


def resolvent(sigma, lam, cov: Covariance) -> Resolvent:
    """R = (1 + g C^1/2 sigma_hat C^1/2)^-1."""
    s = _as_field(sigma)
    if not in_borel_domain(lam):
        warnings.warn(f"lambda={lam} lies outside |Arg sqrt(lambda)| <= pi/4", stacklevel=2)
    A = np.eye(s.lifted.shape[0]) + coupling(lam) * _dressed(s.lifted, cov)
    cond = float(np.linalg.cond(A))
    if cond > 1e12:
        warnings.warn(f"resolvent is ill-conditioned (condition number {cond:.3g})", stacklevel=2)
    return Resolvent(np.linalg.inv(A), complex(lam), None, cond)


def _tadpole_float(cov: Covariance) -> np.ndarray:
    return np.asarray(tadpoles(cov), dtype=float)


def loop_vertex(sigma, lam, cov: Covariance) -> complex:
    """V(sigma) through the eigenvalues of the Hermitian C^1/2 sigma_hat C^1/2."""
    s = _as_field(sigma)
    return complex(loop_vertex_batch(s.matrix[None], lam, cov)[0])


def loop_vertex_batch(sigmas: np.ndarray, lam, cov: Covariance, control_variate: bool = False) -> np.ndarray:
    """V for a stack of Hermitian sigmas.

    With ``control_variate`` the terms of V up to second order in sigma are
    replaced by their exact Gaussian mean, leaving -1/2 Tr log_3 + <V_2>.
    The mean over sigma is unchanged.
    """
    g = coupling(lam)
    T = _tadpole_float(cov)
    T2 = float(np.sum(T * T))
    if g == 0:
        return np.zeros(sigmas.shape[0], dtype=complex)
    e = np.linalg.eigvalsh(_dressed(lift(sigmas), cov))
    z = g * e
    if control_variate:
        log3 = np.sum(np.log1p(z) - z + 0.5 * z * z, axis=-1)
        return -0.5 * log3 + quadratic_vertex_mean(lam, cov)
    log2 = np.sum(np.log1p(z) - z, axis=-1)
    linear = g * np.einsum("m,bmm->b", T, sigmas)
    return -0.5 * log2 + linear + 2 * complex(lam) * T2


def quadratic_trace_mean(cov: Covariance) -> float:
    """<Tr (C sigma_hat)^2> = 2 sum_m T_m^2 + 2 sum_m C_mm^2."""
    C = cov.as_float()
    T = C.sum(axis=1)
    return float(2 * np.sum(T * T) + 2 * np.sum(np.diag(C) ** 2))


def quadratic_vertex_mean(lam, cov: Covariance) -> complex:
    """Mean of g^2/4 Tr(C sigma_hat)^2 + g sum T sigma + 2 lam T^2, i.e. lam (T^2 - sum C_mm^2)."""
    g = coupling(lam)
    T2 = float(np.sum(_tadpole_float(cov) ** 2))
    return complex(g * g / 4 * quadratic_trace_mean(cov) + 2 * complex(lam) * T2)


def loop_vertex_general(sigma: np.ndarray, lam, cov: Covariance) -> complex:
    """V for an arbitrary complex matrix sigma (finite-difference oracle)."""
    g = coupling(lam)
    T = _tadpole_float(cov)
    z = g * np.linalg.eigvals(_dressed(lift(sigma), cov))
    return complex(-0.5 * np.sum(np.log1p(z) - z) + g * np.sum(T * np.diag(sigma))
                   + 2 * complex(lam) * np.sum(T * T))


def _full_resolvents(sigmas: np.ndarray, lam, cov: Covariance) -> np.ndarray:
    """C^1/2 R C^1/2 for a stack of sigmas."""
    g = coupling(lam)
    c = np.sqrt(cov.lifted_diag())
    A = g * _dressed(lift(sigmas), cov)
    A[..., np.arange(A.shape[-1]), np.arange(A.shape[-1])] += 1.0
    R = np.linalg.inv(A)
    return c[:, None] * R * c[None, :]


def gradient_batch(sigmas: np.ndarray, lam, cov: Covariance, rfull: np.ndarray | None = None) -> np.ndarray:
    """dV/dsigma_ab = -(g/2) P_ab(C^1/2 (R - 1) C^1/2) + g T_a delta_ab, P = lift_adjoint."""
    g = coupling(lam)
    if rfull is None:
        rfull = _full_resolvents(sigmas, lam, cov)
    leaf = rfull - np.diag(cov.lifted_diag())
    out = -0.5 * g * lift_adjoint(leaf)
    out = out + g * np.diag(_tadpole_float(cov))
    return out


def hessian_action(rfull: np.ndarray, Y: np.ndarray, lam) -> np.ndarray:
    """sum_cd d^2V/dsigma_ab dsigma_cd Y_cd = (g^2/2) P(Rfull lift(Y) Rfull)."""
    g = coupling(lam)
    return 0.5 * g * g * lift_adjoint(rfull @ lift(Y) @ rfull)


def loop_vertex_derivative(sigma, index_pairs: Sequence[tuple[int, int]], lam, cov: Covariance) -> complex:
    """p-th derivative of V in sigma_{a1 b1} ... sigma_{ap bp}, p >= 2.

    Equals -1/2 (-1)^(p-1) g^p sum over the (p-1)! cyclic orderings of
    Tr[Rfull E_1 Rfull E_2 ... Rfull E_p], E_i = d sigma_hat / d sigma_{a_i b_i}.
    """
    p = len(index_pairs)
    if p < 2:
        raise ValueError("use gradient_batch (the leaf formula) for p < 2")
    s = _as_field(sigma)
    g = coupling(lam)
    rfull = _full_resolvents(s.matrix[None], lam, cov)[0]
    N = s.matrix.shape[0]
    E = []
    for a, b in index_pairs:
        unit = np.zeros((N, N))
        unit[a, b] = 1.0
        E.append(lift(unit))
    total = 0j
    for rest in itertools.permutations(range(1, p)):
        order = (0,) + rest
        M = np.eye(N * N, dtype=complex)
        for i in order:
            M = M @ rfull @ E[i]
        total += np.trace(M)
    return complex(-0.5 * (-1) ** (p - 1) * g**p * total)


# --- trees and weakening -------------------------------------------------------------

@dataclass(frozen=True)
class SpanningTree:
    n: int
    edges: tuple[tuple[int, int], ...]
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.edges) != max(self.n - 1, 0):
            raise ValueError("a tree on n vertices has n-1 edges")
        if self.weights and len(self.weights) != len(self.edges):
            raise ValueError("one weight per edge")
        for w in self.weights:
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"weight {w} outside [0, 1]")

    def with_weights(self, weights: Sequence[float]) -> "SpanningTree":
        return SpanningTree(self.n, self.edges, tuple(float(w) for w in weights))

    def adjacency(self) -> dict[int, list[tuple[int, int]]]:
        adj: dict[int, list[tuple[int, int]]] = {v: [] for v in range(self.n)}
        for i, (a, b) in enumerate(self.edges):
            adj[a].append((b, i))
            adj[b].append((a, i))
        return adj

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in self.edges]}


def prufer_decode(seq: Sequence[int], n: int) -> tuple[tuple[int, int], ...]:
    degree = [1] * n
    for v in seq:
        degree[v] += 1
    edges = []
    for v in seq:
        leaf = min(u for u in range(n) if degree[u] == 1)
        edges.append(tuple(sorted((leaf, v))))
        degree[leaf] -= 1
        degree[v] -= 1
    u, w = [x for x in range(n) if degree[x] == 1]
    edges.append((u, w))
    return tuple(sorted(edges))


def spanning_trees(n: int) -> list[SpanningTree]:
    """All labeled trees on n vertices from their Pruefer sequences."""
    if n < 1 or n > MAX_TREE_VERTICES:
        raise ValueError(f"n must lie in 1..{MAX_TREE_VERTICES}")
    if n == 1:
        return [SpanningTree(1, ())]
    return [SpanningTree(n, prufer_decode(seq, n)) for seq in itertools.product(range(n), repeat=n - 2)]


@dataclass(frozen=True)
class WeakeningMatrix:
    W: np.ndarray

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.W).min())


def weakening_matrix(tree: SpanningTree, check: bool = True) -> WeakeningMatrix:
    """W_vv = 1, W_vv' = min of the weights on the tree path from v to v'."""
    if len(tree.weights) != len(tree.edges):
        raise ValueError("tree has no weights")
    adj = tree.adjacency()
    W = np.eye(tree.n)
    for root in range(tree.n):
        stack = [(root, math.inf)]
        seen = {root}
        while stack:
            v, m = stack.pop()
            if v != root:
                W[root, v] = m
            for u, e in adj[v]:
                if u not in seen:
                    seen.add(u)
                    stack.append((u, min(m, tree.weights[e])))
    wm = WeakeningMatrix(W)
    if check and wm.min_eigenvalue < -1e-12:
        raise AssertionError(f"weakening matrix not PSD (min eigenvalue {wm.min_eigenvalue})")
    return wm


def tree_paths(tree: SpanningTree) -> dict[tuple[int, int], list[int]]:
    """Edge indices on the path between every ordered pair of vertices."""
    adj = tree.adjacency()
    paths = {}
    for root in range(tree.n):
        stack = [(root, [])]
        seen = {root}
        while stack:
            v, path = stack.pop()
            paths[(root, v)] = path
            for u, e in adj[v]:
                if u not in seen:
                    seen.add(u)
                    stack.append((u, path + [e]))
    return paths


def weakening_batch(tree: SpanningTree, w: np.ndarray) -> np.ndarray:
    """Weakening matrices for a batch of weight vectors w (B, n-1) -> (B, n, n)."""
    B = w.shape[0]
    W = np.ones((B, tree.n, tree.n))
    for (v, u), path in tree_paths(tree).items():
        if path:
            W[:, v, u] = w[:, path].min(axis=1)
    return W


def psd_factor(W: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """S with S S^T = W: Cholesky, falling back to pivoted Cholesky for singular W."""
    try:
        return np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        pass
    L, piv, rank, info = lapack.dpstrf(np.array(W, dtype=float, order="F"), lower=1, tol=tol)
    if info < 0:
        raise np.linalg.LinAlgError(f"pivoted Cholesky failed (info={info})")
    L = np.tril(L)
    L[:, rank:] = 0.0
    S = np.zeros_like(L)
    S[piv - 1, :] = L
    return S


def gaussian_hermitian(rng: np.random.Generator, shape: tuple, N: int) -> np.ndarray:
    """Hermitian matrices with <s_ab s_cd> = delta_ad delta_bc."""
    X = rng.standard_normal(shape + (N, N))
    Y = rng.standard_normal(shape + (N, N))
    G = (X + 1j * Y) / np.sqrt(2.0)
    upper = np.triu(G, 1)
    d = np.arange(N)
    out = upper + np.conj(np.swapaxes(upper, -1, -2))
    out[..., d, d] = X[..., d, d]
    return out


def sample_sigma_ensemble(W, N: int, seed=None, size: int | None = None,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Correlated draws: array (n, N, N), or (size, n, N, N) if ``size`` is given."""
    W = W.W if isinstance(W, WeakeningMatrix) else np.asarray(W, dtype=float)
    rng = rng or np.random.default_rng(seed)
    S = psd_factor(W)
    n = W.shape[0]
    shape = (1 if size is None else size, n)
    G = gaussian_hermitian(rng, shape, N)
    out = np.einsum("vu,suab->svab", S, G)
    return out[0] if size is None else out


# --- tree amplitudes -----------------------------------------------------------------

@dataclass
class AmplitudeReport:
    tree: SpanningTree
    n_samples: int
    mean: complex
    stderr: float

    def to_dict(self) -> dict:
        return {"tree": self.tree.to_dict(), "n_samples": self.n_samples,
                "mean_re": self.mean.real, "mean_im": self.mean.imag, "stderr": self.stderr}


def _integrand(tree: SpanningTree, sig: np.ndarray, lam, cov: Covariance,
               control_variate: bool = False) -> np.ndarray:
    """Edge-differentiated product of loop vertices for a batch (B, n, N, N)."""
    n = tree.n
    if n == 1:
        return loop_vertex_batch(sig[:, 0], lam, cov, control_variate)
    if n == 2:
        d0 = gradient_batch(sig[:, 0], lam, cov)
        d1 = gradient_batch(sig[:, 1], lam, cov)
        return np.einsum("bxy,byx->b", d0, d1)
    if n == 3:
        deg = [sum(v in e for e in tree.edges) for v in range(3)]
        c = deg.index(2)
        u, v = [x for x in range(3) if x != c]
        du = gradient_batch(sig[:, u], lam, cov)
        dv = gradient_batch(sig[:, v], lam, cov)
        rc = _full_resolvents(sig[:, c], lam, cov)
        hc = hessian_action(rc, np.swapaxes(dv, -1, -2), lam)
        return np.einsum("bxy,byx->b", du, hc)
    raise ValueError("tree amplitudes are implemented for n <= 3")


def _block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream, block))
    return np.random.Generator(np.random.Philox(ss))


def _block_values(tree, lam, cov, n_samples, seed, stream, b, antithetic, control_variate):
    start = b * BLOCK
    size = min(BLOCK, n_samples - start)
    rng = _block_rng(seed, stream, b)
    m = len(tree.edges)
    # first weight stratified over the global sample index, the rest uniform
    w = rng.random((size, m))
    if m:
        w[:, 0] = (start + np.arange(size) + w[:, 0]) / n_samples
    sig = gaussian_hermitian(rng, (size, tree.n), cov.size)
    if m:
        Wb = weakening_batch(tree, w)
        try:
            S = np.linalg.cholesky(Wb)
        except np.linalg.LinAlgError:
            S = np.stack([psd_factor(W) for W in Wb])
        sig = np.einsum("svu,suab->svab", S, sig)
    vals = _integrand(tree, sig, lam, cov, control_variate)
    if antithetic:
        vals = 0.5 * (vals + _integrand(tree, -sig, lam, cov, control_variate))
    return vals


def tree_amplitude(tree: SpanningTree, lam, cov: Covariance, n_samples: int, seed: int,
                   workers: int = 1, stream: int = 0, antithetic: bool = True,
                   control_variate: bool = True) -> AmplitudeReport:
    """Monte Carlo estimate of G_T = int dw E_W[edge derivatives of prod V].

    Samples come in fixed blocks whose generators depend only on
    (seed, stream, block index), so the result does not depend on ``workers``.
    With ``antithetic`` each draw is paired with its negative; with
    ``control_variate`` the single-vertex tree uses the exact mean of the
    quadratic part of V (see ``loop_vertex_batch``).
    """
    if tree.n > 3:
        raise ValueError("tree amplitudes are implemented for n <= 3")
    if not in_borel_domain(lam):
        warnings.warn(f"lambda={lam} lies outside the Borel domain", stacklevel=2)
    if complex(lam) == 0:
        return AmplitudeReport(tree, n_samples, 0j, 0.0)
    n_blocks = -(-n_samples // BLOCK)
    args = [(tree, lam, cov, n_samples, seed, stream, b, antithetic, control_variate)
            for b in range(n_blocks)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _block_values(*a), args))
    else:
        parts = [_block_values(*a) for a in args]
    vals = np.concatenate(parts)
    mean = complex(np.sum(vals) / len(vals))
    stderr = float(np.sqrt((np.var(vals.real, ddof=1) + np.var(vals.imag, ddof=1)) / len(vals)))
    return AmplitudeReport(tree, n_samples, mean, stderr)


@dataclass
class LVEResult:
    value: complex
    stderr: float
    per_order: dict            # n -> (sum over trees / n!, stderr)
    trees: list                # AmplitudeReport per tree
    fitted_K: float | None = None
    meta: dict = field(default_factory=dict)


def logz_lve(lam, n_max: int, cov: Covariance, samples: int, seed: int, workers: int = 1,
             antithetic: bool = True, control_variate: bool = True) -> LVEResult:
    """Partial sum of log Z over trees with at most ``n_max`` loop vertices."""
    if not 1 <= n_max <= 3:
        raise ValueError("n_max must lie in 1..3")
    per_order, reports = {}, []
    total, var = 0j, 0.0
    stream = 0
    for n in range(1, n_max + 1):
        s, v = 0j, 0.0
        for tree in spanning_trees(n):
            rep = tree_amplitude(tree, lam, cov, samples, seed, workers, stream, antithetic, control_variate)
            stream += 1
            reports.append(rep)
            s += rep.mean
            v += rep.stderr**2
        f = math.factorial(n)
        per_order[n] = (s / f, math.sqrt(v) / f)
        total += s / f
        var += v / f**2
    return LVEResult(total, math.sqrt(var), per_order, reports, _fit_K(per_order, lam, cov), {
        "lambda": str(lam), "n_max": n_max, "samples": samples, "seed": seed, "antithetic": antithetic,
        "control_variate": control_variate})


def _fit_K(per_order, lam, cov) -> float | None:
    """Largest K with n! |sum_T G_T| / n^(n-2) = (K lam ln Lambda)^n over the computed orders."""
    L = cov.params.cutoff
    if complex(lam) == 0 or L < 2:
        return None
    Ks = []
    for n, (s, _) in per_order.items():
        mag = abs(s) * math.factorial(n) / n ** max(n - 2, 0)
        if mag > 0:
            Ks.append(mag ** (1.0 / n) / (abs(complex(lam)) * math.log(L)))
    return max(Ks) if Ks else None


# --- multiscale identities -------------------------------------------------------

def sliced_resolvent(sigma, lam, cov: Covariance, j: int) -> np.ndarray:
    """R^j = (1 + sum_{k<=j} sigma_hat D^k)^-1 with D^k = g C^k; R^-1 = 1."""
    s = _as_field(sigma)
    n = s.lifted.shape[0]
    if j < 0:
        return np.eye(n, dtype=complex)
    g = coupling(lam)
    D = sum(sliced_propagator(cov, k).ravel() for k in range(j + 1)) * g
    return np.linalg.inv(np.eye(n) + s.lifted * D[None, :])


def resolvent_induction_check(sigma, lam, j: int, cov: Covariance) -> tuple[float, float]:
    """Operator-norm residual of R^j - [R^{j-1} - R^{j-1} sigma_hat D^j R^j] and the norm scale."""
    s = _as_field(sigma)
    g = coupling(lam)
    Rj = sliced_resolvent(s, lam, cov, j)
    Rp = sliced_resolvent(s, lam, cov, j - 1)
    Dj = g * sliced_propagator(cov, j).ravel()
    rhs = Rp - Rp @ (s.lifted * Dj[None, :]) @ Rj
    scale = max(1.0, np.linalg.norm(Rj, 2), np.linalg.norm(Rp, 2) ** 2 * np.linalg.norm(s.lifted, 2) * np.abs(Dj).max())
    return float(np.linalg.norm(Rj - rhs, 2)), float(scale)


def sigma_second_moment(a: int, b: int, c: int, d: int) -> int:
    """<sigma_ab sigma_cd> = delta_ad delta_bc."""
    return int(a == d and b == c)


def inner_tadpole_cancellation(lam, cov: Covariance, j: int | None = None):
    """(T_tadpole, T_c) for a tadpole on the left border of one ring propagator.

    T_tadpole = g^2 sum_mn C_mn sum_p C_pn <sigma_mp sigma_pm>
    T_c       = sum_mn C_mn <(-g sigma_mm) (g sum_q T_q sigma_qq)>
    with g^2 = -2 lam.  For a scale ``j`` the kernel is the slice C^j, taken
    as exact binary rationals, with T^j_m = sum_q C^j_mq.
    """
    lam = Fraction(lam)
    g2 = -2 * lam
    if j is None:
        C = cov.diag
        if C.dtype != object:
            C = np.vectorize(Fraction, otypes=[object])(C)
    else:
        C = np.vectorize(Fraction, otypes=[object])(sliced_propagator(cov, j))
    N = C.shape[0]
    T = [sum(C[m, q] for q in range(N)) for m in range(N)]
    tad = 0
    for m in range(N):
        for n in range(N):
            inner = 0
            for p in range(N):
                inner += C[p, n] * sigma_second_moment(m, p, p, m)
            tad += C[m, n] * inner
    ct = 0
    for m in range(N):
        for n in range(N):
            inner = 0
            for q in range(N):
                inner += T[q] * sigma_second_moment(m, m, q, q)
            ct += C[m, n] * inner
    return g2 * tad, -g2 * ct


@dataclass
class BudgetReport:
    j_max: int
    lam: float
    a: float
    convergent: float
    combinatorial: float
    nelson: float
    threshold: int | None
    violation: bool

    @property
    def log_factor(self) -> float:
        return self.convergent + self.combinatorial + self.nelson

    @property
    def factor(self) -> float:
        lf = self.log_factor
        return math.inf if lf > 700 else math.exp(lf)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(log_factor=self.log_factor, factor=self.factor)
        return d


def budget_exponent(j: float, lam: float, a: float) -> float:
    jl = 2 * j * j * math.log(j) if j > 0 else 0.0
    return -a * j**3 + jl + lam * j**3


def budget_threshold(lam: float, a: float, j_cap: int = 10**7) -> int | None:
    """Smallest j* >= 1 with a negative exponent for every j >= j*, or None if a <= lam."""
    if a <= lam:
        return None
    b = a - lam
    # (a - lam) j > 2 ln j; the left side wins for all j beyond its last crossing
    j = max(2, math.ceil(2 / b))
    while b * j <= 2 * math.log(j):
        j += 1
        if j > j_cap:
            return None
    while j > 1 and b * (j - 1) > 2 * math.log(j - 1):
        j -= 1
    return j


def stopping_budget(j_max: int, lam: float, a: float) -> BudgetReport:
    """exp(-a j^3 + 2 j^2 ln j + lam j^3) at j = j_max, with the threshold beyond which it is < 1."""
    j = j_max
    return BudgetReport(
        j_max=j, lam=lam, a=a,
        convergent=-a * j**3,
        combinatorial=2 * j * j * math.log(j) if j > 0 else 0.0,
        nelson=lam * j**3,
        threshold=budget_threshold(lam, a),
        violation=a <= lam,
    )


def integration_by_parts_check(cov: Covariance, lam, a: int, b: int, n_samples: int, seed: int):
    """E[sigma_ab V(sigma)] against E[dV/dsigma_ba]; returns both means and stderrs."""
    rng = np.random.default_rng(seed)
    out_l, out_r = [], []
    for start in range(0, n_samples, BLOCK):
        size = min(BLOCK, n_samples - start)
        sig = gaussian_hermitian(rng, (size,), cov.size)
        out_l.append(sig[:, a, b] * loop_vertex_batch(sig, lam, cov))
        out_r.append(gradient_batch(sig, lam, cov)[:, b, a])
    lhs, rhs = np.concatenate(out_l), np.concatenate(out_r)

    def est(x):
        return complex(x.mean()), float(np.sqrt((x.real.var() + x.imag.var()) / len(x)))

    return est(lhs), est(rhs)


def crossing_gain(cov: Covariance, j: int) -> float:
    """Largest C^j_mn / T^j_n: the cost of a crossing relative to a free face sum at scale j."""
    Cj = sliced_propagator(cov, j)
    Tj = Cj.sum(axis=0)
    return float(np.max(Cj / Tj[None, :]))
