"""Approach of F_alpha(u)(x) to a(-Laplace u)(x) + b|grad u(x)|^2 as alpha -> 2.

Uses the bump 0.3 (1 - x^2)_+^4 and G(t) = t + t^2 in one dimension.

    python3 demos/alpha_limit.py
"""
from nonlocal_mp import Domain, KernelParams, alpha_limit_check, limit_coefficients, quadratic
from nonlocal_mp.grid import bump, sample


def main():
    d = Domain.cube(1, -2.0, 2.0, 161)
    u = sample(d, lambda x: 0.3 * bump(4.0)(x))
    G = quadratic(1.0)
    k = KernelParams(1, 1.5)
    a, b = limit_coefficients(G, k)
    print(f"a = {a:.6f}, b = {b:.6f}")
    for x in (0.0, 0.3, -0.5):
        rows = alpha_limit_check(u, d.node_index((x,)), G, k, alphas=(1.5, 1.9, 1.99, 1.999))
        print(f"x = {x:+.2f}: limit {rows[0].limit:.6f}")
        for r in rows:
            print(f"    alpha={r.alpha:<6g} F={r.value:.6f}  error={r.error:.2e}")


if __name__ == "__main__":
    main()
