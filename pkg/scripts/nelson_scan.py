"""Exponent accounting against the cutoff: naive, sliced and restricted sums,
and the stopping budget at the largest slice."""
import argparse
from ncphi4.resummation import nelson_report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lambda", dest="lam", type=float, default=0.1)
    args = ap.parse_args()
    print("cutoff,naive,restricted,log_cubed,bound,j_max,budget_log_factor")
    for e in range(1, 7):
        L = 10**e
        r = nelson_report(L, args.lam)
        print(L, f"{r.naive_exponent:.4g}", f"{r.improved_exponent:.4g}",
              f"{r.log_cubed:.4g}", f"{r.bound:.4g}", r.j_max, f"{r.budget.log_factor:.2f}", sep=",")


if __name__ == "__main__":
    main()
