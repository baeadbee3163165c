"""Loop vertex partial sums against the exact order-2 series over a coupling scan.

The gap divided by lambda^2 and lambda^3 shows which power of the coupling
the truncated tree sum is missing.
"""
import argparse
from fractions import Fraction

from ncphi4.lve import logz_lve
from ncphi4.oracle import logz_series
from ncphi4.params import ModelParams
from ncphi4.propagator import covariance


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cutoff", type=int, default=3)
    ap.add_argument("--samples", type=int, default=50_000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--nmax", type=int, nargs="+", default=[2, 3])
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    p = ModelParams(cutoff=args.cutoff)
    cov = covariance(p)
    s = logz_series(2, p)
    print("nmax,lambda,lve,stderr,oracle,gap,gap_over_lam2,gap_over_lam3")
    for n in args.nmax:
        for lam in (0.0025, 0.005, 0.01, 0.02, 0.04):
            r = logz_lve(lam, n, cov, args.samples, seed=args.seed, workers=args.workers)
            o = float(s(Fraction(lam)))
            gap = r.value.real - o
            print(f"{n},{lam},{r.value.real:.8f},{r.stderr:.2e},{o:.8f},{gap:.3e},"
                  f"{gap / lam**2:.4f},{gap / lam**3:.3f}")


if __name__ == "__main__":
    main()
