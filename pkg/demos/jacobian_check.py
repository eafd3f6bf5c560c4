"""Finite-difference linearization of the surface operator against the closed form.

Perturbs the flat surface by eps cos(kx), solves the nutrient obstacle and
pressure problems, and compares the mode-k response with lambda_k.
"""
import argparse
import time

from necrostrip.evolution import jacobian_spectrum
from necrostrip.model import flat_stationary, validate_params
from necrostrip.spectral import lambda_k


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nx", type=int, default=64)
    ap.add_argument("--ny", type=int, default=128)
    ap.add_argument("--eps", type=float, default=1e-4)
    ap.add_argument("--kmax", type=int, default=8)
    ap.add_argument("--nu", type=float, default=1.0)
    ap.add_argument("--gamma", type=float, default=1.0)
    args = ap.parse_args()

    p = validate_params(1.0, 2.0, 6.0, 1.0, args.nu, args.gamma)
    fs = flat_stationary(p)
    t0 = time.perf_counter()
    res = jacobian_spectrum(range(args.kmax + 1), args.eps, p, fs, p.gamma, (args.nx, args.ny))
    print(f"grid {args.nx}x{args.ny}, eps={args.eps:g}, {time.perf_counter() - t0:.1f} s")
    print("  k     lambda_hat       lambda_k    rel_err   leakage")
    for k, pr in res.items():
        lam = lambda_k(p, fs, k, p.gamma)
        err = abs(pr.lambda_hat - lam) / max(1.0, abs(lam))
        print(f"{k:3d} {pr.lambda_hat:14.8f} {lam:14.8f} {err:10.2e} {pr.leakage:9.1e}")


if __name__ == "__main__":
    main()
