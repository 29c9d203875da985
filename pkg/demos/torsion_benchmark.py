"""Operator on the torsion profile (1 - x^2)_+^(alpha/2) in one dimension.

For G = identity and the default normalization the operator value is the
constant 2^alpha Gamma(1 + alpha/2) Gamma((1 + alpha)/2) / Gamma(1/2)
inside (-1, 1).  The script prints the
computed field's mean and relative spread for a few grid sizes.

    python3 demos/torsion_benchmark.py --alpha 1.0
"""
import argparse
import math

from nonlocal_mp import (Ball, Domain, KernelParams, QuadratureConfig, eval_operator_field,
                         identity)
from nonlocal_mp.grid import sample, torsion


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--sizes", type=int, nargs="+", default=[129, 513, 2049])
    args = ap.parse_args()
    a = args.alpha
    exact = 2**a * math.gamma(1 + a / 2) * math.gamma((1 + a) / 2) / math.gamma(0.5)
    print(f"alpha={a}: exact value {exact:.10f}")
    for N in args.sizes:
        d = Domain.cube(1, -1.0, 1.0, N, Ball(1.0))
        u = sample(d, torsion(a / 2))
        F = eval_operator_field(u, identity(), KernelParams(1, a),
                                QuadratureConfig(edge_exponent=a / 2), mask=d.region_mask())
        v = F.values[d.region_mask()]
        print(f"N={N:5d}  mean={v.mean():.10f}  rel. error={abs(v.mean() / exact - 1):.2e}  "
              f"spread={(v.max() - v.min()) / v.mean():.2e}")


if __name__ == "__main__":
    main()
