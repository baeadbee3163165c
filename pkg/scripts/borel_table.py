"""Partial sums against Borel-Pade sums, for the Euler series and the model series."""
import argparse

from ncphi4.resummation import (
    compare_with_monte_carlo,
    euler_integral,
    euler_series,
    resummation_table,
    table_to_csv,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--order", type=int, default=10)
    ap.add_argument("--mc-samples", type=int, default=400_000)
    ap.add_argument("--seed", type=int, default=2)
    args = ap.parse_args()

    lams = [0.02, 0.05, 0.1, 0.2, 0.3]
    pq = (args.order // 2, args.order // 2)
    print(f"# Euler series to order {args.order}, Pade {pq}")
    print(table_to_csv(resummation_table(euler_series(args.order), lams, pq, euler_integral)), end="")

    print("\n# order-2 model series, Pade (0,1), against Monte Carlo")
    print("cutoff,lambda,partial,borel,mc,mc_stderr,budget,agrees")
    for L in (1, 2, 3):
        for lam in (0.005, 0.01, 0.02):
            c = compare_with_monte_carlo(L, lam, args.mc_samples, seed=args.seed)
            print(L, lam, f"{c.partial_sum:.7f}", f"{c.borel_sum:.7f}", f"{c.mc_value:.7f}",
                  f"{c.mc_stderr:.1e}", f"{c.budget:.1e}", c.agrees, sep=",")


if __name__ == "__main__":
    main()
