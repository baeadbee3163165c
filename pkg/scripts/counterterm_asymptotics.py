"""Growth of the quadratic tadpole sum T2 with the cutoff.

Prints cutoff, T2/cutoff and the relative gap to the limiting constant.
"""
import argparse

from ncphi4.params import ModelParams
from ncphi4.propagator import asymptotic_constant, counterterm_table


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-exp", type=int, default=6, help="largest cutoff is 10^max_exp")
    args = ap.parse_args()
    closed, quad = asymptotic_constant()
    print(f"# limit {closed:.12f} (quadrature {quad:.12f})")
    print("cutoff,T2_over_cutoff,relative_gap")
    for e in range(1, args.max_exp + 1):
        for L in (10**e, 3 * 10**e):
            if L > 10**args.max_exp:
                break
            r = float(counterterm_table(ModelParams(cutoff=L)).T2) / L
            print(f"{L},{r:.9f},{(r - closed) / closed:.3e}")


if __name__ == "__main__":
    main()
