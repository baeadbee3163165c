import itertools
import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ncphi4.oracle import expectation, trace_phi4
from ncphi4.params import ModelParams
from ncphi4.propagator import counterterm_table
from ncphi4.ribbon import (
    RibbonGraph,
    canonical_form,
    divergence_degree,
    double_factorial,
    enumerate_graphs,
    enumerate_vacuum_graphs,
    face_cycles,
    faces,
    from_wick_pairing,
    pairing_count,
    perfect_matchings,
)


def test_planar_single_vertex():
    g = from_wick_pairing(1, [(0, 1), (2, 3)])
    d = faces(g)
    assert (d.F, d.genus, d.broken) == (3, 0, 0)


def test_crossing_single_vertex():
    d = faces(from_wick_pairing(1, [(0, 2), (1, 3)]))
    assert (d.F, d.genus) == (1, 1)


def test_two_point_tadpole_broken_faces():
    # legs on adjacent half-edges share a face; legs split by the loop do not
    same = faces(from_wick_pairing(1, [(2, 3)], external=[0, 1]))
    split = faces(from_wick_pairing(1, [(1, 2)], external=[0, 3]))
    opposite = faces(from_wick_pairing(1, [(1, 3)], external=[0, 2]))
    assert same.broken == 1 and same.genus == 0
    assert split.broken == 1
    assert opposite.broken == 2 and opposite.genus == 0


def test_order_two_all_across():
    g = from_wick_pairing(2, [(0, 7), (1, 6), (2, 5), (3, 4)])
    d = faces(g)
    assert g.is_connected() and d.genus == 0 and d.F == 4


def test_divergence_degrees():
    tad = from_wick_pairing(1, [(2, 3)], external=[0, 1])
    assert divergence_degree(tad) == 0
    g = from_wick_pairing(2, [(0, 7), (1, 6), (2, 5)], external=[3, 4])
    d = faces(g)
    assert (d.genus, d.broken) == (0, 1)
    assert divergence_degree(g) == -2


def test_invalid_pairings_rejected():
    with pytest.raises(ValueError):
        from_wick_pairing(1, [(0, 1), (1, 2)])
    with pytest.raises(ValueError):
        from_wick_pairing(1, [(0, 0), (2, 3)])
    with pytest.raises(ValueError):
        from_wick_pairing(1, [(0, 1)])
    with pytest.raises(ValueError):
        enumerate_vacuum_graphs(5)


def test_order_one_classes():
    classes = enumerate_vacuum_graphs(1)
    assert sum(c.multiplicity for c in classes) == 3
    summary = sorted((c.multiplicity, c.face_weight, c.data.genus) for c in classes)
    assert summary == [(1, 1, 1), (2, 6, 0)]


def test_order_one_two_point_classes():
    classes = enumerate_graphs(1, 2)
    assert sum(c.multiplicity for c in classes) == pairing_count(1, 2) == 6
    planar_b1 = [c for c in classes if c.planar and c.data.broken == 1]
    assert len(planar_b1) == 1
    assert (planar_b1[0].multiplicity, planar_b1[0].face_weight) == (4, 8)


def test_pairing_counts():
    assert double_factorial(7) == 105
    assert sum(1 for _ in perfect_matchings(range(8))) == 105
    assert sum(c.multiplicity for c in enumerate_vacuum_graphs(2)) == 105
    assert sum(c.multiplicity for c in enumerate_graphs(2, 2)) == pairing_count(2, 2) == 420


def test_order_two_class_count():
    assert len(enumerate_vacuum_graphs(2)) == 10


@pytest.mark.slow
def test_order_three_counts():
    classes = enumerate_vacuum_graphs(3)
    assert sum(c.multiplicity for c in classes) == 10395
    assert len(classes) == 54


def _brute_key(g: RibbonGraph):
    """Minimum relabeled (pairing, externals) over vertex permutations and rotations."""
    V = g.n_vertices
    best = None
    for perm in itertools.permutations(range(V)):
        for rot in itertools.product(range(4), repeat=V):
            def f(d):
                return 4 * perm[d // 4] + (d % 4 + rot[d // 4]) % 4
            key = (tuple(sorted(tuple(sorted((f(a), f(b)))) for a, b in g.pairing)),
                   tuple(sorted(f(e) for e in g.external)))
            best = key if best is None or key < best else best
    return best


@pytest.mark.parametrize("order,ext", [(1, 0), (1, 2), (2, 0), (2, 2)])
def test_canonical_form_matches_brute_force_relabeling(order, ext):
    n = 4 * order
    by_brute, by_canon = Counter(), Counter()
    pairs = {}
    for legs in itertools.combinations(range(n), ext):
        rest = [d for d in range(n) if d not in legs]
        for m in perfect_matchings(rest):
            g = RibbonGraph(order, tuple(m), legs)
            kb, kc = _brute_key(g), canonical_form(g)
            pairs.setdefault(kb, set()).add(kc)
            by_brute[kb] += 1
            by_canon[kc] += 1
    # the two invariants induce the same partition
    assert all(len(v) == 1 for v in pairs.values())
    assert sorted(by_brute.values()) == sorted(by_canon.values())


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_face_polynomial_matches_wick_trace(N):
    # with <phi_ab phi_cd> = delta_ad delta_bc each pairing contributes N^F
    C = np.ones((N, N), dtype=object)
    vac1 = sum(c.multiplicity * N**c.data.F for c in enumerate_vacuum_graphs(1))
    assert vac1 == expectation([trace_phi4()], C) == 2 * N**3 + N
    vac2 = sum(c.multiplicity * N**c.data.F for c in enumerate_vacuum_graphs(2, connected_only=True))
    assert vac2 == expectation([trace_phi4(), trace_phi4()], C, connected=True) == 36 * N**4 + 60 * N**2


def test_json_round_trip():
    g = from_wick_pairing(2, [(0, 5), (1, 4)], external=[2, 3, 6, 7])
    d = json.loads(g.to_json())
    assert set(d) == {"vertices", "cyclic_orders", "pairing", "externals"}
    assert RibbonGraph.from_dict(d) == g


def test_disconnected_graph_flagged():
    g = from_wick_pairing(2, [(0, 1), (2, 3), (4, 6), (5, 7)])
    d = faces(g)
    assert not d.connected
    assert sorted(d.component_genera) == [0, 1]


def test_tadpole_grows_like_log_cutoff():
    Ls = np.array([10**3, 10**4, 10**5])
    T0 = [counterterm_table(ModelParams(cutoff=int(L))).T[0] for L in Ls]
    slope = np.polyfit(np.log(Ls), T0, 1)[0]
    assert abs(slope - 1) < 0.05
    T2 = [counterterm_table(ModelParams(cutoff=int(L))).T2 for L in Ls]
    slope2 = np.polyfit(np.log(Ls), np.log(T2), 1)[0]
    assert abs(slope2 - 1) < 0.05


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.data())
def test_euler_identity_and_face_partition(V, data):
    n = 4 * V
    k = data.draw(st.sampled_from([e for e in range(0, n + 1, 2) if e <= 4]))
    darts = data.draw(st.permutations(range(n)))
    legs, rest = darts[:k], darts[k:]
    g = RibbonGraph(V, tuple(zip(rest[::2], rest[1::2])), tuple(legs))
    d = faces(g)
    walks = face_cycles(g)
    assert sorted(x for w in walks for x in w) == list(range(n))
    assert d.genus >= 0 and d.broken <= d.F
    if d.connected:
        assert V - g.n_edges + d.F == 2 - 2 * d.genus
        if d.genus >= 1:
            assert divergence_degree(g, d) <= 4 - 2 * V - 4 - 2 * d.broken
