"""Decay above gamma_star, growth below it.

Seeds the most unstable mode, integrates at gamma = factor * gamma_star for
each factor, and compares the fitted exponential rate with -lambda_k.
"""
import argparse
import time

import numpy as np

from necrostrip.evolution import simulate
from necrostrip.model import flat_stationary, validate_params
from necrostrip.spectral import gamma_star, lambda_k


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nx", type=int, default=64)
    ap.add_argument("--ny", type=int, default=128)
    ap.add_argument("--factors", type=float, nargs="+", default=[2.0, 0.5])
    ap.add_argument("--T", type=float, default=4.0)
    ap.add_argument("--amp", type=float, default=1e-3)
    args = ap.parse_args()

    p = validate_params(1.0, 2.0, 6.0, 1.0, 1.0, 1.0)
    fs = flat_stationary(p)
    gs, arg, _ = gamma_star(p, fs)
    k = arg[0]
    x = 2 * np.pi * np.arange(args.nx) / args.nx
    print(f"gamma_star = {gs:.8f}, seeded mode k = {k}")
    for f in args.factors:
        g = f * gs
        t0 = time.perf_counter()
        tr = simulate(args.amp * np.cos(k * x), p, fs, g, args.T, 0.01, (args.nx, args.ny),
                      dt_max=0.01, fit_modes=[k])
        fit = tr.fitted_rates[k]
        lam = lambda_k(p, fs, k, g)
        rate = fit[0] if fit else float("nan")
        print(f"gamma = {f:g} gamma_star: {tr.status} at t={tr.times[-1]:.2f}, "
              f"fitted rate {rate:+.4f} vs {-lam:+.4f} "
              f"(rel {abs(rate + lam) / abs(lam):.1%}), {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
