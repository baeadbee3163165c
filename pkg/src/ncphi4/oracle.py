"""Exact perturbation theory by brute-force Wick contraction.

Two independent languages are supported:

* the matrix field phi with <phi_ab phi_cd> = C_ab delta_ad delta_bc, used to
  expand log Z and the two-point function of the Wick-ordered action
  ``S = lam [Tr phi^4 - 4 sum_m T_m (phi^2)_mm + 2 T^2]``;
* the intermediate field sigma with <sigma_ab sigma_cd> = delta_ad delta_bc,
  used to expand the loop-vertex representation ring by ring.

Both reduce a contraction to a product of C and T factors over free index
classes, which is summed exactly with einsum on Fraction arrays.
"""

from __future__ import annotations

import itertools
import json
import math
import string
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .params import ModelParams
from .propagator import Covariance, covariance, tadpoles, triple_sum_T3
from .ribbon import perfect_matchings

EXACT_LIMIT = 10


# --- symbolic monomials -------------------------------------------------------

@dataclass(frozen=True)
class Monomial:
    """coeff * sum over symbols of prod(factors) * prod(fields).

    fields: (kind, a, b) with kind 'phi' or 'sigma'.
    factors: ('C', a, b), ('T', a), ('eq', a, b) or ('fix', a, value).
    """

    coeff: Fraction
    fields: tuple = ()
    factors: tuple = ()
    tag: str = ""

    def renamed(self, prefix: str) -> "Monomial":
        def r(s):
            return f"{prefix}{s}"

        fields = tuple((k, r(a), r(b)) for k, a, b in self.fields)
        factors = []
        for f in self.factors:
            if f[0] in ("C", "eq"):
                factors.append((f[0], r(f[1]), r(f[2])))
            elif f[0] == "T":
                factors.append(("T", r(f[1])))
            else:
                factors.append(("fix", r(f[1]), f[2]))
        return Monomial(self.coeff, fields, tuple(factors), self.tag)


def product(monos: Sequence[Monomial]) -> tuple[Monomial, list[int]]:
    """Product of monomials with disjoint symbols, plus the owner of each field."""
    coeff = Fraction(1)
    fields, factors, owner = [], [], []
    for i, m in enumerate(monos):
        r = m.renamed(f"{i}.")
        coeff *= r.coeff
        fields += r.fields
        factors += r.factors
        owner += [i] * len(r.fields)
    return Monomial(coeff, tuple(fields), tuple(factors)), owner


class _UnionFind:
    def __init__(self):
        self.parent: dict[str, str] = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        self.parent[self.find(a)] = self.find(b)


@dataclass(frozen=True)
class Structure:
    """Contracted product: coeff * sum over classes of prod(factors).

    factors use class ids 0..n_classes-1: ('C', i, j), ('T', i), ('fix', i, v).
    """

    coeff: Fraction
    n_classes: int
    factors: tuple

    def normalized(self) -> tuple["Structure", int]:
        """Sum out classes that sit in a single C factor and nowhere else (-> T)."""
        factors = list(self.factors)
        n = self.n_classes
        # classes that appear in no factor are free sums giving a factor N each
        free = n - len({c for f in factors for c in (f[1:3] if f[0] == "C" else f[1:2])})
        changed = True
        while changed:
            changed = False
            uses = defaultdict(list)
            for idx, f in enumerate(factors):
                for c in f[1:3] if f[0] == "C" else f[1:2]:
                    uses[c].append(idx)
            for c in range(n):
                if len(uses[c]) == 1:
                    f = factors[uses[c][0]]
                    if f[0] == "C" and f[1] != f[2]:
                        other = f[2] if f[1] == c else f[1]
                        factors[uses[c][0]] = ("T", other)
                        changed = True
                        break
        used = sorted({c for f in factors for c in (f[1:3] if f[0] == "C" else f[1:2])})
        remap = {c: i for i, c in enumerate(used)}
        new = []
        for f in factors:
            if f[0] == "C":
                new.append(("C",) + tuple(sorted((remap[f[1]], remap[f[2]]))))
            elif f[0] == "T":
                new.append(("T", remap[f[1]]))
            else:
                new.append(("fix", remap[f[1]], f[2]))
        return Structure(self.coeff, len(used), tuple(sorted(new))), free

    def canonical_key(self) -> tuple:
        s, free = self.normalized()
        best = None
        for perm in itertools.permutations(range(s.n_classes)):
            key = []
            for f in s.factors:
                if f[0] == "C":
                    key.append(("C",) + tuple(sorted((perm[f[1]], perm[f[2]]))))
                elif f[0] == "T":
                    key.append(("T", perm[f[1]]))
                else:
                    key.append(("fix", perm[f[1]], f[2]))
            key = tuple(sorted(key))
            if best is None or key < best:
                best = key
        return (free, best)

    def has_tadpole(self) -> bool:
        s, _ = self.normalized()
        return any(f[0] == "T" for f in s.factors)


def contract(mono: Monomial, pairing: Iterable[tuple[int, int]]) -> Structure | None:
    uf = _UnionFind()
    syms = set()
    for k, a, b in mono.fields:
        syms.update((a, b))
    for f in mono.factors:
        syms.update(f[1:3] if f[0] in ("C", "eq") else f[1:2])
    for s in syms:
        uf.find(s)
    extra = []
    for i, j in pairing:
        ki, a, b = mono.fields[i]
        kj, c, d = mono.fields[j]
        if ki != kj:
            return None
        uf.union(a, d)
        uf.union(b, c)
        if ki == "phi":
            extra.append(("C", a, b))
    for f in mono.factors:
        if f[0] == "eq":
            uf.union(f[1], f[2])
    roots = sorted({uf.find(s) for s in syms})
    cid = {r: i for i, r in enumerate(roots)}
    factors = []
    fixed: dict[int, int] = {}
    for f in list(mono.factors) + extra:
        if f[0] == "C":
            factors.append(("C", cid[uf.find(f[1])], cid[uf.find(f[2])]))
        elif f[0] == "T":
            factors.append(("T", cid[uf.find(f[1])]))
        elif f[0] == "fix":
            c = cid[uf.find(f[1])]
            if fixed.setdefault(c, f[2]) != f[2]:
                return None
    for c, v in fixed.items():
        factors.append(("fix", c, v))
    return Structure(mono.coeff, len(roots), tuple(factors))


def evaluate(s: Structure, C: np.ndarray, T: np.ndarray | None = None):
    """Exact (or float) value of a contracted structure."""
    if T is None:
        T = np.sum(C, axis=1)
    N = C.shape[0]
    if s.n_classes > len(string.ascii_letters):
        raise ValueError("too many index classes")
    letters = string.ascii_letters
    operands, subs = [], []
    used = set()
    for f in s.factors:
        if f[0] == "C":
            operands.append(C)
            subs.append(letters[f[1]] + letters[f[2]])
            used.update(f[1:3])
        elif f[0] == "T":
            operands.append(T)
            subs.append(letters[f[1]])
            used.add(f[1])
        else:
            onehot = np.zeros(N, dtype=C.dtype)
            if onehot.dtype == object:
                onehot[...] = 0
            if f[2] >= N:
                return 0
            onehot[f[2]] = 1
            operands.append(onehot)
            subs.append(letters[f[1]])
            used.add(f[1])
    free = s.n_classes - len(used)
    if not operands:
        return s.coeff * N**free
    val = np.einsum(",".join(subs) + "->", *operands, optimize="greedy")
    return s.coeff * val * N**free


def expectation(monos: Sequence[Monomial], C: np.ndarray, T=None, connected: bool = False):
    """<prod monos> under the Gaussian measures, optionally connected pairings only."""
    mono, owner = product(monos)
    n = len(mono.fields)
    if n % 2:
        return 0
    total = 0
    for pairing in perfect_matchings(range(n)):
        if connected and not _is_connected(pairing, owner, len(monos)):
            continue
        s = contract(mono, pairing)
        if s is not None:
            total += evaluate(s, C, T)
    return total


def _is_connected(pairing, owner, n_pieces) -> bool:
    if n_pieces == 1:
        return True
    present = set(owner)
    if len(present) < n_pieces:
        return False
    parent = list(range(n_pieces))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for i, j in pairing:
        parent[find(owner[i])] = find(owner[j])
    return len({find(p) for p in range(n_pieces)}) == 1


# --- the phi^4 action ---------------------------------------------------------

def trace_phi4() -> Monomial:
    return Monomial(Fraction(1), (("phi", "a", "b"), ("phi", "b", "c"), ("phi", "c", "d"), ("phi", "d", "a")), tag="phi4")


def tadpole_insertion(coeff) -> Monomial:
    """coeff * sum_m T_m (phi^2)_mm."""
    return Monomial(Fraction(coeff), (("phi", "m", "n"), ("phi", "n", "m")), (("T", "m"),), tag="ct2")


def vacuum_constant(coeff) -> Monomial:
    """coeff * T^2 = coeff * sum_m T_m T_m."""
    return Monomial(Fraction(coeff), (), (("T", "m"), ("T", "m")), tag="ct0")


# Wick subtraction coefficients of the quartic vertex.  Only the planar
# tadpoles carry T_m; these coefficients make the log Z series finite.
TADPOLE_COEFF = 4
VACUUM_COEFF = 2


def interaction(tadpole_coeff=TADPOLE_COEFF, vacuum_coeff=VACUUM_COEFF) -> list[Monomial]:
    """S / lam as a list of monomials."""
    return [trace_phi4(), tadpole_insertion(-tadpole_coeff), vacuum_constant(vacuum_coeff)]


def _exact_cov(params: ModelParams) -> Covariance:
    if params.cutoff > EXACT_LIMIT and params.exact:
        raise ValueError(f"exact expansion is limited to cutoff <= {EXACT_LIMIT}")
    return covariance(params)


def moments(order: int, params: ModelParams, action=None) -> list:
    """m_k = <(S/lam)^k> for k = 0..order."""
    if order > 2:
        raise ValueError("moments are enumerated up to order 2 (8 fields)")
    cov = _exact_cov(params)
    C = cov.diag
    T = tadpoles(cov)
    action = action or interaction()
    out = [Fraction(1)]
    for k in range(1, order + 1):
        total = 0
        for combo in itertools.product(action, repeat=k):
            total += expectation(combo, C, T)
        out.append(total)
    return out


def series_log(z: Sequence) -> list:
    """Coefficients of log(Z) for Z = 1 + z_1 x + z_2 x^2 + ..."""
    if z[0] != 1:
        raise ValueError("series must start with 1")
    l = [0] * len(z)
    for k in range(1, len(z)):
        acc = z[k]
        for j in range(1, k):
            acc -= Fraction(j, k) * l[j] * z[k - j]
        l[k] = acc
    return l


@dataclass
class PowerSeries:
    coeffs: list
    name: str = ""

    def __post_init__(self):
        self.coeffs = list(self.coeffs)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, x):
        return sum(c * x**k for k, c in enumerate(self.coeffs))

    def partial_sums(self, x) -> list:
        out, acc = [], 0
        for k, c in enumerate(self.coeffs):
            acc += c * x**k
            out.append(acc)
        return out

    def to_records(self) -> list[dict]:
        return [_record(k, f"a{k}", c, 1) for k, c in enumerate(self.coeffs)]


def _record(order, name, value, multiplicity):
    v = Fraction(value) if not isinstance(value, float) else value
    if isinstance(v, Fraction):
        return {"order": order, "name": name, "numerator": v.numerator, "denominator": v.denominator,
                "multiplicity": multiplicity}
    return {"order": order, "name": name, "numerator": v, "denominator": 1, "multiplicity": multiplicity}


def logz_series(order: int, params: ModelParams, action=None) -> PowerSeries:
    """log Z coefficients a_0..a_order from the moment series (cumulants)."""
    m = moments(order, params, action)
    z = [(-1) ** k * m[k] / math.factorial(k) for k in range(order + 1)]
    return PowerSeries(series_log(z), name="logZ")


def vacuum_coefficient(order: int, params: ModelParams, action=None):
    if order == 0:
        return Fraction(0)
    return logz_series(order, params, action).coeffs[order]


def connected_coefficient(order: int, params: ModelParams, action=None):
    """a_k from connected pairings only: (-1)^k / k! sum over connected contractions."""
    if order == 0:
        return Fraction(0)
    cov = _exact_cov(params)
    C, T = cov.diag, tadpoles(cov)
    action = action or interaction()
    total = 0
    for combo in itertools.product(action, repeat=order):
        total += expectation(combo, C, T, connected=True)
    return Fraction((-1) ** order, math.factorial(order)) * total


def two_point_coefficient(order: int, m: int, n: int, params: ModelParams, action=None):
    """Coefficient of lam^k in <phi_mn phi_nm>, k <= 1."""
    if order > 1:
        raise ValueError("two-point coefficients are implemented for k <= 1")
    if not (0 <= m <= params.cutoff and 0 <= n <= params.cutoff):
        raise IndexError("external indices outside 0..cutoff")
    cov = _exact_cov(params)
    C, T = cov.diag, tadpoles(cov)
    ext = Monomial(Fraction(1), (("phi", "x", "y"), ("phi", "y", "x")), (("fix", "x", m), ("fix", "y", n)))
    if order == 0:
        return expectation([ext], C, T)
    total = 0
    for piece in action or interaction():
        total += expectation([ext, piece], C, T, connected=True)
    return -total


# --- intermediate-field (loop vertex) language ----------------------------------

def ring(sides: Sequence[str], coeff) -> Monomial:
    """coeff * Tr[(C sigma_hat)^k] restricted to the given left/right sides.

    sigma_hat = sigma (x) 1 + 1 (x) sigma^T acts on phi as sigma phi + phi sigma.
    Link i connects state (m_i, n_i) to (m_{i+1}, n_{i+1}).
    """
    k = len(sides)
    fields, factors = [], []
    for i in range(k):
        j = (i + 1) % k
        factors.append(("C", f"m{i}", f"n{i}"))
        if sides[i] == "L":
            fields.append(("sigma", f"m{i}", f"m{j}"))
            factors.append(("eq", f"n{i}", f"n{j}"))
        else:
            fields.append(("sigma", f"n{j}", f"n{i}"))
            factors.append(("eq", f"m{i}", f"m{j}"))
    return Monomial(Fraction(coeff), tuple(fields), tuple(factors), tag="ring" + "".join(sides))


def linear_counterterm() -> Monomial:
    """sum_m T_m sigma_mm (times g in the loop-vertex action)."""
    return Monomial(Fraction(1), (("sigma", "q", "q"),), (("T", "q"),), tag="ct1")


def ring_coefficient(k: int) -> Fraction:
    """Coefficient of g^k Tr[(C sigma_hat)^k] in -1/2 Tr log_2(1 + g C^1/2 sigma_hat C^1/2)."""
    return Fraction(-1, 2) * Fraction((-1) ** (k + 1), k)


@dataclass(frozen=True)
class SigmaConfig:
    family: str
    weight: Fraction  # in units of lam^order, includes the 1/multiplicity! factors
    structure: Structure | None
    pieces: tuple
    ordered_count: int = 1


# g^2 = -2 lam, so g^(2k) = (-2)^k lam^k
def _g_power(k2: int) -> Fraction:
    return Fraction(-2) ** (k2 // 2)


def sigma_configurations(order: int) -> list[SigmaConfig]:
    """Connected loop-vertex configurations contributing to lam^order in log Z."""
    if order not in (1, 2):
        raise ValueError("sigma-language enumeration is implemented for orders 1 and 2")
    g = _g_power(2 * order)
    out: list[SigmaConfig] = []
    if order == 1:
        families = {"A": ([2], 0), "B": ([], 2)}
        const = Fraction(-1)  # 2 lam T^2 = -g^2 T^2
        out.append(SigmaConfig("C", const * g, Structure(Fraction(1), 1, (("T", 0), ("T", 0))), ("const",)))
    else:
        families = {"A": ([4], 0), "B": ([3], 1), "C": ([2], 2), "D": ([2, 2], 0)}
    for fam, (rings, n_ct) in families.items():
        out += _family_configs(fam, rings, n_ct, g)
    return out


def _family_configs(fam, rings, n_ct, g):
    configs = []
    mult = Fraction(1, math.factorial(n_ct))
    for r, cnt in _counts(rings).items():
        mult /= math.factorial(cnt)
    for side_choice in itertools.product(*[list(itertools.product("LR", repeat=k)) for k in rings]):
        pieces = [ring(s, ring_coefficient(len(s))) for s in side_choice] + [linear_counterterm()] * n_ct
        mono, owner = product(pieces)
        for pairing in perfect_matchings(range(len(mono.fields))):
            if not _is_connected(pairing, owner, len(pieces)):
                continue
            s = contract(mono, pairing)
            if s is None:
                continue
            configs.append(SigmaConfig(fam, mono.coeff * mult * g, Structure(Fraction(1), s.n_classes, s.factors),
                                       tuple(p.tag for p in pieces)))
    return configs


def _counts(xs):
    d = defaultdict(int)
    for x in xs:
        d[x] += 1
    return d


def sigma_coefficient(order: int, params: ModelParams):
    """a_order of log Z summed over loop-vertex configurations."""
    cov = _exact_cov(params)
    C, T = cov.diag, tadpoles(cov)
    return sum(c.weight * evaluate(c.structure, C, T) for c in sigma_configurations(order))


# --- grouped amplitudes ------------------------------------------------------------

@dataclass
class GroupedAmplitudes:
    order: int
    convention: str
    values: dict            # name -> value (units of lam^order)
    multiplicities: dict = field(default_factory=dict)
    divergent: dict = field(default_factory=dict)   # name -> divergent part
    finite_total: object = 0

    @property
    def total(self):
        return sum(self.values.values())

    @property
    def divergent_total(self):
        return sum(self.divergent.values()) if self.divergent else self.total

    def to_records(self) -> list[dict]:
        return [_record(self.order, k, v, self.multiplicities.get(k, 1)) for k, v in self.values.items()]

    def to_json(self) -> str:
        return json.dumps(self.to_records())


# Counting factors quoted with the order-2 bookkeeping formulas.
BOOKKEEPING_ORDER2_FACTORS = {"A": 8, "B": 9, "C": 4}


def grouped_order1(params: ModelParams, convention: str = "bookkeeping") -> GroupedAmplitudes:
    """Order-1 amplitudes, in units of lam.

    'bookkeeping': the three bookkeeping terms -3/2 T^2, -T^2 and the constant 5/2 T^2,
    each obtained by index summation with <sigma_np sigma_pn> = 1.
    'exact': the loop-vertex configurations of the finite model, grouped into
    the ring (A), counterterm pair (B) and constant (C) families.
    """
    cov = _exact_cov_any(params)
    C, T = cov.diag, tadpoles(cov)
    N = cov.size
    g2 = Fraction(-2)
    if convention == "bookkeeping":
        ring_sum = sum(C[m, n] * C[m, p] for m in range(N) for n in range(N) for p in range(N))
        ct_sum = sum(T[m] * T[m] for m in range(N))
        T2 = sum(t * t for t in T)
        vals = {
            "A": Fraction(-1, 2) * (Fraction(-1, 2) * g2) * ring_sum * 3,
            "B": Fraction(1, 2) * g2 * ct_sum,
            "C": Fraction(5, 2) * T2,
        }
        return GroupedAmplitudes(1, "bookkeeping", vals, {"A": 3, "B": 1, "C": 1})
    return _grouped_exact(1, C, T)


def grouped_order2(params: ModelParams, convention: str = "bookkeeping", factors: dict | None = None) -> GroupedAmplitudes:
    """Order-2 amplitudes of the tadpole-dressed structures, in units of lam^2.

    'bookkeeping' evaluates the three bookkeeping terms with counting factors
    ``factors`` (default 8, 9, 4) and T3 from the literal four-index sum.
    'exact' sums every connected loop-vertex configuration.
    """
    cov = _exact_cov_any(params)
    C, T = cov.diag, tadpoles(cov)
    if convention == "bookkeeping":
        D = dict(BOOKKEEPING_ORDER2_FACTORS if factors is None else factors)
        T3 = triple_sum_T3(cov)
        g = {2: Fraction(-2), 4: Fraction(4)}  # g^2, g^4 in units of lam
        vals = {
            "A": Fraction(-1, 2) * (-g[4] / 4) * T3 * D["A"],
            "B": Fraction(1, 2) * 2 * (Fraction(-1, 2) * g[4] / 3) * T3 * D["B"],
            "C": Fraction(1, 6) * 3 * (Fraction(-1, 2) * (-g[2] / 2) * g[2]) * T3 * D["C"],
        }
        return GroupedAmplitudes(2, "bookkeeping", vals, D)
    return _grouped_exact(2, C, T)


def _exact_cov_any(params: ModelParams) -> Covariance:
    if params.exact and params.cutoff > 30:
        raise ValueError("grouped amplitudes are exact up to cutoff 30")
    return covariance(params)


def _grouped_exact(order, C, T) -> GroupedAmplitudes:
    values, divergent, mult = defaultdict(int), defaultdict(int), defaultdict(int)
    finite = 0
    for c in sigma_configurations(order):
        v = c.weight * evaluate(c.structure, C, T)
        values[c.family] += v
        mult[c.family] += 1
        if c.structure.has_tadpole():
            divergent[c.family] += v
        else:
            finite += v
    return GroupedAmplitudes(order, "exact", dict(values), dict(mult), dict(divergent), finite)


@dataclass
class StructureClass:
    key: tuple
    tadpole: bool
    counts: dict            # family -> number of configurations
    weight: dict            # family -> summed weight
    example: Structure

    @property
    def total_weight(self):
        return sum(self.weight.values())


def classify(order: int) -> list[StructureClass]:
    """Group loop-vertex configurations by their index structure."""
    classes: dict[tuple, StructureClass] = {}
    for c in sigma_configurations(order):
        key = c.structure.canonical_key()
        cl = classes.get(key)
        if cl is None:
            cl = classes[key] = StructureClass(key, c.structure.has_tadpole(), defaultdict(int), defaultdict(int), c.structure)
        cl.counts[c.family] += 1
        cl.weight[c.family] += c.weight
    return list(classes.values())


def counterterm_class_factors(order: int = 2) -> dict:
    """Counting factors of the structures that also arise with counterterm leaves.

    Returns configuration counts per family over the classes that contain a
    configuration with two counterterm leaves (family C), with the C count
    taken modulo exchange of the identical leaves.
    """
    classes = [c for c in classify(order) if c.counts.get("C", 0) > 0]
    out = defaultdict(int)
    for cl in classes:
        for fam, n in cl.counts.items():
            out[fam] += n
    out["C"] //= 2
    return dict(out), sum(cl.total_weight for cl in classes)


# --- direct Monte Carlo of the interacting integral -------------------------------------

def sample_phi(C: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Hermitian draws with <phi_mn phi_nm> = C_mn."""
    N = C.shape[0]
    X = rng.standard_normal((size, N, N))
    Y = rng.standard_normal((size, N, N))
    iu = np.triu_indices(N, 1)
    phi = np.zeros((size, N, N), dtype=complex)
    s = np.sqrt(C / 2.0)
    up = (X + 1j * Y)[:, iu[0], iu[1]] * s[iu]
    phi[:, iu[0], iu[1]] = up
    phi[:, iu[1], iu[0]] = np.conj(up)
    d = np.arange(N)
    phi[:, d, d] = X[:, d, d] * np.sqrt(np.diag(C))
    return phi


def action_values(phi: np.ndarray, T: np.ndarray, lam: float) -> np.ndarray:
    p2 = phi @ phi
    tr4 = np.einsum("sab,sba->s", p2, p2).real
    ct = np.einsum("m,smm->s", T, p2).real
    return lam * (tr4 - TADPOLE_COEFF * ct + VACUUM_COEFF * np.sum(T * T))


@dataclass
class MonteCarloEstimate:
    value: float
    stderr: float
    n_samples: int
    plain_value: float = math.nan
    plain_stderr: float = math.nan


def logz_monte_carlo(params: ModelParams, lam: float, n_samples: int, seed: int,
                     block: int = 50_000) -> MonteCarloEstimate:
    """log E[exp(-S)] under the free measure, with S itself as control variate.

    The control variate mean <S> = lam sum_a C_aa^2 is the closed-form value of
    the one-contraction integral; it only reduces variance.
    """
    C = covariance(params).as_float()
    T = C.sum(axis=1)
    mean_S = lam * float(np.sum(np.diag(C) ** 2))
    ys, ss = [], []
    for b in range(0, n_samples, block):
        rng = np.random.Generator(np.random.Philox(key=seed, counter=b // block))
        phi = sample_phi(C, min(block, n_samples - b), rng)
        S = action_values(phi, T, lam)
        ys.append(np.exp(-S))
        ss.append(S)
    y = np.concatenate(ys)
    s = np.concatenate(ss)
    n = len(y)
    cov = np.cov(y, s)
    beta = cov[0, 1] / cov[1, 1] if cov[1, 1] > 0 else 0.0
    z = y - beta * (s - mean_S)
    zm, zse = z.mean(), z.std(ddof=1) / math.sqrt(n)
    ym, yse = y.mean(), y.std(ddof=1) / math.sqrt(n)
    return MonteCarloEstimate(math.log(zm), zse / zm, n, math.log(ym), yse / ym)
