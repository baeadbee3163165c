"""Ribbon graphs of the quartic matrix model as combinatorial maps.

Half-edges ("darts") are numbered 0..4V-1, with vertex v owning darts
4v..4v+3 in cyclic order.  A graph is the pair (sigma, alpha): sigma is the
cyclic successor at each vertex and alpha the edge pairing, with external
legs as fixed points of alpha.  Faces are the cycles of sigma o alpha.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

MAX_ORDER = 4


@dataclass(frozen=True)
class RibbonGraph:
    n_vertices: int
    pairing: tuple[tuple[int, int], ...]
    external: tuple[int, ...] = ()

    def __post_init__(self):
        n = 4 * self.n_vertices
        seen = list(self.external)
        for a, b in self.pairing:
            if a == b:
                raise ValueError(f"edge ({a},{b}) pairs a half-edge with itself")
            seen += [a, b]
        if sorted(seen) != list(range(n)):
            raise ValueError("pairing and externals must partition the half-edges exactly once")
        object.__setattr__(self, "pairing", tuple(tuple(sorted(p)) for p in self.pairing))
        object.__setattr__(self, "external", tuple(sorted(self.external)))

    @property
    def n_darts(self) -> int:
        return 4 * self.n_vertices

    @property
    def n_edges(self) -> int:
        return len(self.pairing)

    def sigma(self, d: int) -> int:
        return 4 * (d // 4) + (d % 4 + 1) % 4

    def alpha_map(self) -> list[int]:
        alpha = list(range(self.n_darts))
        for a, b in self.pairing:
            alpha[a], alpha[b] = b, a
        return alpha

    def cyclic_orders(self) -> list[list[int]]:
        return [[4 * v + i for i in range(4)] for v in range(self.n_vertices)]

    def components(self) -> list[list[int]]:
        parent = list(range(self.n_vertices))

        def find(v):
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        for a, b in self.pairing:
            parent[find(a // 4)] = find(b // 4)
        groups: dict[int, list[int]] = {}
        for v in range(self.n_vertices):
            groups.setdefault(find(v), []).append(v)
        return sorted(groups.values())

    def is_connected(self) -> bool:
        return len(self.components()) == 1

    def to_dict(self) -> dict:
        return {
            "vertices": self.n_vertices,
            "cyclic_orders": self.cyclic_orders(),
            "pairing": [list(p) for p in self.pairing],
            "externals": list(self.external),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RibbonGraph":
        return cls(d["vertices"], tuple(tuple(p) for p in d["pairing"]), tuple(d["externals"]))


def from_wick_pairing(n_vertices: int, pairing: Sequence[Sequence[int]],
                      external: Sequence[int] = ()) -> RibbonGraph:
    return RibbonGraph(n_vertices, tuple(tuple(p) for p in pairing), tuple(external))


@dataclass(frozen=True)
class FaceData:
    faces: list[list[int]]
    F: int
    broken: int
    genus: int | None
    connected: bool = True
    component_genera: list[int] = field(default_factory=list)


def face_cycles(g: RibbonGraph) -> list[list[int]]:
    alpha = g.alpha_map()
    seen = [False] * g.n_darts
    faces = []
    for start in range(g.n_darts):
        if seen[start]:
            continue
        walk, d = [], start
        while not seen[d]:
            seen[d] = True
            walk.append(d)
            d = g.sigma(alpha[d])
        faces.append(walk)
    return faces


def faces(g: RibbonGraph) -> FaceData:
    """Faces, broken-face count and genus.

    Genus follows from V - E + F = 2 - 2g per component.  For a disconnected
    graph the total genus is the sum over components and ``connected`` is False.
    """
    walks = face_cycles(g)
    ext = set(g.external)
    broken = sum(1 for w in walks if ext.intersection(w))
    comps = g.components()
    vertex_comp = {v: i for i, c in enumerate(comps) for v in c}
    genera = []
    for i, comp in enumerate(comps):
        V = len(comp)
        E = sum(1 for a, b in g.pairing if vertex_comp[a // 4] == i)
        F = sum(1 for w in walks if vertex_comp[w[0] // 4] == i)
        chi = V - E + F
        if chi % 2 or chi > 2:
            raise AssertionError(f"impossible Euler characteristic {chi}")
        genera.append((2 - chi) // 2)
    return FaceData(walks, len(walks), broken, sum(genera), len(comps) == 1, genera)


def divergence_degree(g: RibbonGraph, data: FaceData | None = None) -> int:
    """Power of the cutoff, 4 - 2V - 4g - 2B."""
    data = data or faces(g)
    return 4 - 2 * g.n_vertices - 4 * data.genus - 2 * data.broken


# --- enumeration -----------------------------------------------------------------

def perfect_matchings(items: Sequence[int]) -> Iterator[list[tuple[int, int]]]:
    items = list(items)
    if not items:
        yield []
        return
    first = items[0]
    for i in range(1, len(items)):
        rest = items[1:i] + items[i + 1:]
        for m in perfect_matchings(rest):
            yield [(first, items[i])] + m


def double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def _rooted_code(g: RibbonGraph, alpha: list[int], root: int, darts: list[int]):
    label = {root: 0}
    order = [root]
    i = 0
    while i < len(order):
        d = order[i]
        for nxt in (g.sigma(d), alpha[d]):
            if nxt not in label:
                label[nxt] = len(order)
                order.append(nxt)
        i += 1
    return tuple((label[g.sigma(d)], -1 if alpha[d] == d else label[alpha[d]]) for d in order)


def canonical_form(g: RibbonGraph) -> tuple:
    """Isomorphism invariant: minimal rooted traversal code per component.

    Rooting at a dart and labeling darts in breadth-first order along sigma
    and alpha determines the map up to relabeling of vertices and rotation of
    their cyclic orders, so the minimum over roots is a complete invariant.
    """
    alpha = g.alpha_map()
    codes = []
    for comp in g.components():
        darts = [4 * v + i for v in comp for i in range(4)]
        codes.append(min(_rooted_code(g, alpha, r, darts) for r in darts))
    return tuple(sorted(codes))


@dataclass
class GraphClass:
    representative: RibbonGraph
    multiplicity: int
    face_weight: int  # sum over members of the face count
    data: FaceData

    @property
    def planar(self) -> bool:
        return self.data.genus == 0

    def to_dict(self) -> dict:
        return {
            "graph": self.representative.to_dict(),
            "multiplicity": self.multiplicity,
            "faces": self.data.F,
            "genus": self.data.genus,
            "broken_faces": self.data.broken,
            "connected": self.data.connected,
            "face_weight": self.face_weight,
            "divergence_degree": divergence_degree(self.representative, self.data),
        }


def enumerate_graphs(order: int, n_external: int = 0, connected_only: bool = False) -> list[GraphClass]:
    """All Wick pairings of ``order`` labeled quartic vertices, grouped by isomorphism.

    External legs are placed on every choice of ``n_external`` half-edges.
    The multiplicity of a class counts labeled pairings; the face weight
    sums F over its members, which counts the ways to pick a distinguished
    face (the outer face when drawing a planar graph).
    """
    if order < 1 or order > MAX_ORDER:
        raise ValueError(f"order must lie in 1..{MAX_ORDER} (got {order})")
    n = 4 * order
    if (n - n_external) % 2:
        raise ValueError("an even number of half-edges must remain for pairing")
    from itertools import combinations

    classes: dict[tuple, GraphClass] = {}
    for ext in combinations(range(n), n_external):
        rest = [d for d in range(n) if d not in ext]
        for m in perfect_matchings(rest):
            g = RibbonGraph(order, tuple(m), ext)
            if connected_only and not g.is_connected():
                continue
            key = canonical_form(g)
            data = faces(g)
            if key in classes:
                classes[key].multiplicity += 1
                classes[key].face_weight += data.F
            else:
                classes[key] = GraphClass(g, 1, data.F, data)
    return sorted(classes.values(), key=lambda c: (-c.multiplicity, canonical_form(c.representative)))


def enumerate_vacuum_graphs(order: int, connected_only: bool = False) -> list[GraphClass]:
    return enumerate_graphs(order, 0, connected_only)


def pairing_count(order: int, n_external: int = 0) -> int:
    from math import comb

    n = 4 * order
    return comb(n, n_external) * double_factorial(n - n_external - 1)
