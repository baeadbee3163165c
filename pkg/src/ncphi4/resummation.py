"""Borel-Pade resummation, remainder-growth fits and Nelson-factor bookkeeping."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import integrate
from scipy.interpolate import pade as scipy_pade

from .lve import BudgetReport, stopping_budget
from .oracle import PowerSeries, logz_monte_carlo, logz_series
from .params import ModelParams
from .propagator import counterterm_table

LAPLACE_RTOL = 1e-9
TAIL_CUTOFF = 1e-14


@dataclass
class BorelSeries:
    coeffs: list
    radius: float | None = None

    def to_series(self) -> PowerSeries:
        """Inverse transform: a_k = k! b_k."""
        return PowerSeries([math.factorial(k) * b for k, b in enumerate(self.coeffs)])


def _radius(b: list) -> float | None:
    """Ratio estimate |b_{k-1} / b_k| from the last two nonzero coefficients."""
    nz = [(k, float(abs(x))) for k, x in enumerate(b) if x != 0]
    if len(nz) < 2:
        return None
    (k1, x1), (k2, x2) = nz[-2], nz[-1]
    return (x1 / x2) ** (1.0 / (k2 - k1))


def borel_transform(s: PowerSeries) -> BorelSeries:
    b = [Fraction(a) / math.factorial(k) if isinstance(a, (int, Fraction)) else a / math.factorial(k)
         for k, a in enumerate(s.coeffs)]
    return BorelSeries(b, _radius(b))


@dataclass
class RationalFunction:
    """t^shift P(t) / Q(t) with ascending coefficient arrays, Q(0) = 1."""
    num: np.ndarray
    den: np.ndarray
    p: int
    q: int
    shift: int = 0
    reduced_from: tuple | None = None

    def __call__(self, t):
        t = np.asarray(t, dtype=complex if np.iscomplexobj(t) else float)
        pp = np.polynomial.polynomial
        return t**self.shift * pp.polyval(t, self.num) / pp.polyval(t, self.den)

    def poles(self) -> np.ndarray:
        den = np.trim_zeros(np.asarray(self.den, dtype=float), "b")
        if len(den) <= 1:
            return np.array([])
        return np.polynomial.polynomial.polyroots(den)


def pade_approximant(b: BorelSeries, p: int, q: int) -> RationalFunction:
    """[p/q] approximant of the Borel transform.

    Leading zero coefficients are factored out as t^shift, so the [p/q] fit
    uses b_shift..b_(shift+p+q).  A singular system is retried as [p+1/q-1]
    and the original degrees are kept in ``reduced_from``.
    """
    c = [float(x) for x in b.coeffs]
    shift = next((k for k, x in enumerate(c) if x != 0), len(c))
    c = c[shift:]
    if p < 0 or q < 0:
        raise ValueError("Pade degrees must be nonnegative")
    if p + q + 1 > len(c):
        raise ValueError(f"[{p}/{q}] needs {p + q + 1} coefficients after {shift} leading zeros, "
                         f"have {len(c)}")
    pp, qq = p, q
    while True:
        reduced = None if (pp, qq) == (p, q) else (p, q)
        if qq == 0:
            return RationalFunction(np.array(c[: pp + 1]), np.array([1.0]), pp, 0, shift, reduced)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                P, Q = scipy_pade(c[: pp + qq + 1], qq, pp)
            num, den = P.coeffs[::-1], Q.coeffs[::-1]
            if not (np.all(np.isfinite(num)) and np.all(np.isfinite(den))) or den[0] == 0:
                raise np.linalg.LinAlgError("degenerate Pade denominator")
            return RationalFunction(num / den[0], den / den[0], pp, qq, shift, reduced)
        except (np.linalg.LinAlgError, ValueError, RuntimeWarning, ZeroDivisionError):
            pp, qq = pp + 1, qq - 1


def _tail_point(f, lam) -> float:
    t = 40.0
    while t < 1e6 and math.exp(-t) * abs(f(lam * t)) >= TAIL_CUTOFF:
        t *= 1.5
    return t


def borel_sum(s: PowerSeries, lam: float, pade: tuple[int, int]) -> float:
    """Laplace integral int_0^inf exp(-t) B(lam t) dt of the Pade-continued Borel transform."""
    if lam < 0:
        raise ValueError("borel_sum integrates along the positive real axis (lam >= 0)")
    B = pade_approximant(borel_transform(s), *pade)
    for z in B.poles():
        if abs(z.imag) < 1e-12 and z.real >= 0:
            raise ValueError(f"Pade pole at t={z.real:.6g} lies on the integration ray")
    if lam == 0:
        return float(B(0.0))
    f = B.__call__
    t_max = _tail_point(f, lam)
    val, err = integrate.quad(lambda t: math.exp(-t) * float(np.real(f(lam * t))), 0, t_max,
                              epsabs=0, epsrel=LAPLACE_RTOL, limit=500)
    return val


@dataclass
class GrowthFit:
    K: float | None
    factorial_order: float | None
    verdict: str
    n_points: int


def remainder_growth(s: PowerSeries) -> GrowthFit:
    """Fit |a_k| ~ c K^k k! over the nonzero coefficients with k >= 1."""
    pts = [(k, abs(float(a))) for k, a in enumerate(s.coeffs) if k >= 1 and a != 0]
    if len(pts) < 2:
        return GrowthFit(None, None, "too few coefficients", len(pts))
    k = np.array([p[0] for p in pts], dtype=float)
    y = np.array([math.log(p[1]) - math.lgamma(p[0] + 1) for p in pts])
    slope, _ = np.polyfit(k, y, 1)
    K = math.exp(slope)
    if len(pts) == 2:
        return GrowthFit(K, None, "diagnostic only (two coefficients)", 2)
    # free power of k!: log|a_k| = c + k log K + r log k!
    A = np.stack([np.ones_like(k), k, [math.lgamma(x + 1) for x in k]], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.array([math.log(p[1]) for p in pts]), rcond=None)
    r = float(coef[2]) if len(pts) > 3 else None
    verdict = "consistent with k! growth" if r is None or abs(r - 1) < 0.5 else f"growth order {r:.2f}"
    return GrowthFit(K, r, verdict, len(pts))


# --- Nelson factor -------------------------------------------------------------------

def restricted_exponent(cutoff: int) -> float:
    """sum_{m=1}^{floor(ln Lambda)} ln^2(Lambda / m)."""
    L = float(cutoff)
    return float(sum(math.log(L / m) ** 2 for m in range(1, int(math.log(L)) + 1)))


def scale_of_cutoff(cutoff: int, M: float = 2.0) -> int:
    """j_max with M^(2 j_max) ~ Lambda."""
    return max(1, int(math.floor(math.log(cutoff) / (2 * math.log(M)))))


@dataclass
class NelsonReport:
    cutoff: int
    lam: float
    a: float
    M: float
    T2: float
    naive_exponent: float
    improved_exponent: float
    log_cubed: float
    bound: float
    j_max: int
    budget: BudgetReport
    extra: dict = field(default_factory=dict)

    @property
    def restricted_ok(self) -> bool:
        return self.improved_exponent <= self.log_cubed

    @property
    def budget_ok(self) -> bool:
        return self.budget.log_factor < 0

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k not in ("budget", "extra")}
        d["budget"] = self.budget.to_dict()
        d["restricted_ok"] = self.restricted_ok
        d["budget_ok"] = self.budget_ok
        d.update(self.extra)
        return d


def nelson_report(cutoff: int, lam: float, a: float | None = None, M: float = 2.0,
                  theta=4, mu2=0) -> NelsonReport:
    """Naive and restricted Nelson exponents with the stopping budget at j_max(Lambda).

    ``a=None`` selects a = 1.4 lam.
    """
    if cutoff < 3:
        raise ValueError("cutoff must be at least 3")
    a = 1.4 * lam if a is None else a
    ct = counterterm_table(ModelParams(theta=theta, mu2=mu2, cutoff=cutoff), exact=False)
    T2 = float(ct.T2)
    lnL = math.log(cutoff)
    j_max = scale_of_cutoff(cutoff, M)
    return NelsonReport(
        cutoff=cutoff, lam=lam, a=a, M=M, T2=T2,
        naive_exponent=lam * T2,
        improved_exponent=restricted_exponent(cutoff),
        log_cubed=lnL**3,
        bound=2 * lam * lnL**3,
        j_max=j_max,
        budget=stopping_budget(j_max, lam, a),
    )


# --- tables and oracle comparisons ------------------------------------------------------

def euler_series(order: int) -> PowerSeries:
    """a_k = (-1)^k k!, Borel transform 1/(1+t)."""
    return PowerSeries([(-1) ** k * math.factorial(k) for k in range(order + 1)], name="euler")


def euler_integral(lam: float) -> float:
    """int_0^inf exp(-t) / (1 + lam t) dt by direct quadrature."""
    val, _ = integrate.quad(lambda t: math.exp(-t) / (1 + lam * t), 0, math.inf, epsabs=0, epsrel=1e-13)
    return val


RESUMMATION_COLUMNS = ["lambda", "partial_sum", "borel_sum", "oracle", "partial_error", "borel_error"]


def resummation_table(s: PowerSeries, lams, pade: tuple[int, int], oracle=None) -> list[dict]:
    """Rows of partial sum and Borel sum per lambda; ``oracle`` is a callable or None."""
    rows = []
    for lam in lams:
        part = float(s(lam))
        bs = borel_sum(s, lam, pade)
        ref = float(oracle(lam)) if oracle is not None else math.nan
        rows.append({"lambda": lam, "partial_sum": part, "borel_sum": bs, "oracle": ref,
                     "partial_error": abs(part - ref), "borel_error": abs(bs - ref)})
    return rows


def table_to_csv(rows: list[dict], columns=RESUMMATION_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(float(r[k])) for k in columns})
    return buf.getvalue()


@dataclass
class BorelComparison:
    lam: float
    cutoff: int
    partial_sum: float
    borel_sum: float
    mc_value: float
    mc_stderr: float
    budget: float

    @property
    def deviation(self) -> float:
        return abs(self.borel_sum - self.mc_value)

    @property
    def agrees(self) -> bool:
        return self.deviation <= self.budget

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(deviation=self.deviation, agrees=self.agrees)
        return d


def compare_with_monte_carlo(cutoff: int, lam: float, n_samples: int, seed: int,
                             pade: tuple[int, int] = (0, 1), order: int = 2) -> BorelComparison:
    """Borel sum of the exact series against a direct Monte Carlo of log Z.

    The error budget is 3 MC standard errors plus |borel_sum - partial_sum|, the
    latter standing in for the unknown truncation error of a two-term series.
    """
    params = ModelParams(cutoff=cutoff)
    s = logz_series(order, params)
    bs = borel_sum(s, lam, pade)
    part = float(s(lam))
    mc = logz_monte_carlo(params, lam, n_samples, seed)
    return BorelComparison(lam, cutoff, part, bs, mc.value, float(mc.stderr),
                           3 * float(mc.stderr) + abs(bs - part))
