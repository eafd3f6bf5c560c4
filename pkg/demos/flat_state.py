"""Flat stationary state and the existence threshold.

Prints eta_s, rho_s, p0 for a parameter set, checks the closed-form residual,
and walks sigma_bar across sigma_star to show where flat states appear.
"""
import argparse

import numpy as np

from necrostrip.errors import NoFlatStationary
from necrostrip.model import (eval_p_s, eval_sigma_s, existence_threshold, flat_stationary,
                              validate_params, verify_stationary_residual)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigma-hat", type=float, default=1.0)
    ap.add_argument("--sigma-tilde", type=float, default=2.0)
    ap.add_argument("--sigma-bar", type=float, default=6.0)
    ap.add_argument("--mu", type=float, default=1.0)
    ap.add_argument("--nu", type=float, default=1.0)
    args = ap.parse_args()

    p = validate_params(args.sigma_hat, args.sigma_tilde, args.sigma_bar, args.mu, args.nu, 1.0)
    s = existence_threshold(p.sigma_hat, p.sigma_tilde)
    print(f"sigma_star = {s:.15g}")
    fs = flat_stationary(p)
    rep = verify_stationary_residual(fs, p)
    print(f"eta_s = {fs.eta_s:.15g}  rho_s = {fs.rho_s:.15g}  p0 = {fs.p0:.15g}")
    print(f"residual max_abs = {rep.max_abs:.2e}")

    y = np.linspace(0.0, fs.rho_s, 9)
    print("\n       y     sigma_s         p_s")
    for yy, sg, pp in zip(y, eval_sigma_s(fs, p, y), eval_p_s(fs, p, y)):
        print(f"{yy:8.4f} {sg:11.6f} {pp:11.6f}")

    print("\nsigma_bar / sigma_star   eta_s")
    for f in (0.9, 0.999, 1.001, 1.1, 2.0):
        try:
            eta = flat_stationary(validate_params(p.sigma_hat, p.sigma_tilde, f * s,
                                                  p.mu, p.nu, 1.0)).eta_s
            print(f"{f:10.3f}        {eta:.6g}")
        except NoFlatStationary:
            print(f"{f:10.3f}        none")


if __name__ == "__main__":
    main()
