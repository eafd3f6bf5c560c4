"""Closed-form linear spectrum around the flat state.

Lists lambda_k, gamma_k and the curvature weight, the critical adhesiveness
gamma_star, and how slowly k^3 tanh(k rho_s) gamma_k reaches its limit.
"""
import argparse

from necrostrip.model import flat_stationary, validate_params
from necrostrip.spectral import (bvp_oracle_lambda, classify_stability, curvature_weight,
                                 gamma_k, gamma_star, gamma_star_sensitivity, lambda_k)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gamma", type=float, default=1.0)
    ap.add_argument("--nu", type=float, default=1.0)
    ap.add_argument("--kmax", type=int, default=12)
    args = ap.parse_args()

    p = validate_params(1.0, 2.0, 6.0, 1.0, args.nu, args.gamma)
    fs = flat_stationary(p)
    print("  k        lambda_k         gamma_k    bvp(n=2048)")
    for k in range(args.kmax + 1):
        gk = gamma_k(p, fs, k) if k else float("nan")
        print(f"{k:3d} {lambda_k(p, fs, k, p.gamma):15.8f} {gk:15.8f} "
              f"{bvp_oracle_lambda(p, fs, k, p.gamma, 2048):14.8f}")

    gs, arg, ok = gamma_star(p, fs)
    rep = classify_stability(p, fs, p.gamma)
    print(f"\ngamma_star = {gs:.12g} at k = {arg}, tail certified: {ok}")
    print(f"gamma = {p.gamma}: {rep.classification}, unstable modes {rep.unstable_modes}")

    lim = p.mu * (p.sigma_bar - p.sigma_tilde)
    print(f"\ntail: k^3 tanh(k rho_s) gamma_k -> {lim}")
    for k in (8, 16, 32, 64, 74, 128, 512):
        w = curvature_weight(k, fs) * gamma_k(p, fs, k)
        print(f"  k={k:4d}  {w:.6f}  rel gap {(lim - w) / lim:.3%}")

    print("\ngamma_star vs nu")
    for nu, g in gamma_star_sensitivity(p, fs, [0.25, 0.5, 1.0, 2.0, 4.0]):
        print(f"  nu={nu:5.2f}  {g:.8f}")


if __name__ == "__main__":
    main()
