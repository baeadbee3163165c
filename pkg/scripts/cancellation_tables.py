"""Exact grouped amplitudes at orders 1 and 2, per cutoff.

Shows both conventions and what happens when the middle order-2 counting
factor is moved by one.
"""
import argparse

from ncphi4.oracle import BOOKKEEPING_ORDER2_FACTORS, counterterm_class_factors, grouped_order1, grouped_order2
from ncphi4.params import ModelParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-cutoff", type=int, default=6)
    args = ap.parse_args()

    print("order,cutoff,convention,A,B,C,total")
    for L in range(1, args.max_cutoff + 1):
        p = ModelParams(cutoff=L)
        for conv in ("bookkeeping", "exact"):
            for g in (grouped_order1(p, conv), grouped_order2(p, conv)):
                v = g.values if conv == "bookkeeping" else g.divergent
                total = g.total if conv == "bookkeeping" else g.divergent_total
                print(g.order, L, conv, *(v.get(k) for k in "ABC"), total, sep=",")

    derived, weight = counterterm_class_factors(2)
    print(f"\n# enumerated order-2 counting factors {derived}, bookkeeping {BOOKKEEPING_ORDER2_FACTORS}")
    print(f"# enumerated weighted sum {weight}")
    for b in (8, 10, 12):
        f = dict(BOOKKEEPING_ORDER2_FACTORS, B=b)
        res = [grouped_order2(ModelParams(cutoff=L), factors=f).total for L in range(1, 4)]
        print(f"# B={b}: residuals at cutoffs 1..3 {[str(r) for r in res]}")


if __name__ == "__main__":
    main()
