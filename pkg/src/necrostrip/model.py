"""Model constants and the flat (x-independent) stationary state.

The flat state consists of a necrotic layer ``0 < y < eta_s`` in which the
nutrient sits at the necrosis level, capped by a proliferating layer
``eta_s < y < rho_s``.  Everything here is closed form; the only iterative
piece is the root solve for the existence threshold of the supply level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (NoConvergence, NoFlatStationary, NonPositiveRate,
                     OrderingViolation, OutOfDomain)

__all__ = [
    "TumorParams", "FlatStationary", "StationaryResidualReport",
    "validate_params", "existence_threshold", "threshold_function",
    "flat_stationary", "eval_sigma_s", "eval_p_s", "eval_dsigma_s",
    "verify_stationary_residual",
]


@dataclass(frozen=True)
class TumorParams:
    """The six positive model constants.

    ``sigma_hat < sigma_tilde < sigma_bar`` are the necrosis level, the
    apoptosis/mitosis balance level and the external supply; ``mu`` and
    ``nu`` the proliferation and necrotic dissolution rates; ``gamma`` the
    cell-to-cell adhesiveness.
    """

    sigma_hat: float
    sigma_tilde: float
    sigma_bar: float
    mu: float
    nu: float
    gamma: float

    @property
    def root_term(self) -> float:
        """sqrt(sigma_bar**2 - sigma_hat**2), the top nutrient flux of the flat state."""
        return math.sqrt(self.sigma_bar ** 2 - self.sigma_hat ** 2)

    def as_dict(self) -> dict:
        return {"sigma_hat": self.sigma_hat, "sigma_tilde": self.sigma_tilde,
                "sigma_bar": self.sigma_bar, "mu": self.mu, "nu": self.nu,
                "gamma": self.gamma}


@dataclass(frozen=True)
class FlatStationary:
    eta_s: float
    rho_s: float
    p0: float

    @property
    def gap(self) -> float:
        return self.rho_s - self.eta_s

    def as_dict(self) -> dict:
        return {"eta_s": self.eta_s, "rho_s": self.rho_s, "p0": self.p0}


@dataclass
class StationaryResidualReport:
    ode_residual_sigma: float
    ode_residual_p: float
    interface_jump_residuals: list = field(default_factory=list)
    max_abs: float = 0.0


def validate_params(sigma_hat, sigma_tilde, sigma_bar, mu, nu, gamma) -> TumorParams:
    vals = [float(v) for v in (sigma_hat, sigma_tilde, sigma_bar, mu, nu, gamma)]
    if not all(math.isfinite(v) for v in vals):
        raise OrderingViolation("model constants must be finite")
    sh, st, sb, mu, nu, gamma = vals
    for name, v in (("mu", mu), ("nu", nu), ("gamma", gamma)):
        if v <= 0.0:
            raise NonPositiveRate(f"{name} must be positive, got {v!r}")
    if not 0.0 < sh:
        raise OrderingViolation(f"sigma_hat must be positive, got {sh!r}")
    if not sh < st:
        raise OrderingViolation(f"need sigma_hat < sigma_tilde, got {sh!r} >= {st!r}")
    if not st < sb:
        raise OrderingViolation(f"need sigma_tilde < sigma_bar, got {st!r} >= {sb!r}")
    return TumorParams(sh, st, sb, mu, nu, gamma)


def threshold_function(a: float, r: float) -> float:
    """f(a, r) = sqrt(r^2 - 1) - a log(r + sqrt(r^2 - 1)), defined for r > 1."""
    w = math.sqrt(r * r - 1.0)
    return w - a * math.log(r + w)


def existence_threshold(sigma_hat: float, sigma_tilde: float, *, rtol: float = 1e-12,
                        max_iter: int = 400) -> float:
    """Smallest supply level above which a flat stationary state exists.

    Returns ``sigma_hat * r`` where ``r > sigma_tilde / sigma_hat`` is the
    unique root of :func:`threshold_function`.  Bracketing bisection followed
    by three Newton polish steps.
    """
    if not 0.0 < sigma_hat < sigma_tilde:
        raise OrderingViolation("need 0 < sigma_hat < sigma_tilde")
    a = sigma_tilde / sigma_hat
    lo = a
    hi = a * math.exp(a)
    n = 0
    while threshold_function(a, hi) <= 0.0:
        lo, hi = hi, 2.0 * hi
        n += 1
        if n > 200:
            raise NoConvergence("could not bracket the threshold root")

    for _ in range(max_iter):
        if hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        if threshold_function(a, mid) < 0.0:
            lo = mid
        else:
            hi = mid
    else:
        raise NoConvergence("bisection budget exhausted for the threshold root")

    r = 0.5 * (lo + hi)
    for _ in range(3):
        slope = (r - a) / math.sqrt(r * r - 1.0)
        r_new = r - threshold_function(a, r) / slope
        if not lo <= r_new <= hi:
            break
        r = r_new
    return sigma_hat * r


def flat_stationary(params: TumorParams) -> FlatStationary:
    sh, st, sb = params.sigma_hat, params.sigma_tilde, params.sigma_bar
    mu, nu = params.mu, params.nu
    sigma_star = existence_threshold(sh, st)
    if sb <= sigma_star:
        raise NoFlatStationary(
            f"no flat stationary state: sigma_bar={sb!r} <= sigma_star={sigma_star!r}",
            sigma_star=sigma_star)
    s = params.root_term
    log_gap = math.log(sb + s) - math.log(sh)
    eta = mu / nu * (s - st * log_gap)
    if eta <= 0.0:
        # only reachable through rounding right at the threshold
        raise NoFlatStationary(f"eta_s={eta!r} is not positive", sigma_star=sigma_star)
    rho = eta + log_gap
    p0 = (0.5 * mu * st * (eta ** 2 - rho ** 2) + (nu - mu * st) * (eta - rho) * eta
          + mu * (sb - sh))
    return FlatStationary(eta, rho, p0)


def _check_domain(fs, y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0.0) or np.any(y > fs.rho_s) or np.any(~np.isfinite(y)):
        raise OutOfDomain(f"y must lie in [0, {fs.rho_s!r}]")
    return y


def _sigma_upper(fs, params, y):
    return ((params.sigma_bar * np.sinh(y - fs.eta_s)
             + params.sigma_hat * np.sinh(fs.rho_s - y)) / np.sinh(fs.gap))


def _p_upper(fs, params, y):
    mu, st = params.mu, params.sigma_tilde
    return (0.5 * mu * st * (y ** 2 - fs.rho_s ** 2)
            + (params.nu - mu * st) * (y - fs.rho_s) * fs.eta_s
            + mu * (params.sigma_bar - _sigma_upper(fs, params, y)))


def _p_lower(fs, params, y):
    return 0.5 * params.nu * (y ** 2 - fs.eta_s ** 2) + fs.p0


def eval_sigma_s(fs: FlatStationary, params: TumorParams, y):
    y = _check_domain(fs, y)
    out = np.where(y >= fs.eta_s, _sigma_upper(fs, params, y), params.sigma_hat)
    return out[()] if out.ndim == 0 else out


def eval_dsigma_s(fs: FlatStationary, params: TumorParams, y):
    """Derivative of the flat nutrient profile (zero in the necrotic layer)."""
    y = _check_domain(fs, y)
    up = ((params.sigma_bar * np.cosh(y - fs.eta_s)
           - params.sigma_hat * np.cosh(fs.rho_s - y)) / np.sinh(fs.gap))
    out = np.where(y >= fs.eta_s, up, 0.0)
    return out[()] if out.ndim == 0 else out


def eval_p_s(fs: FlatStationary, params: TumorParams, y):
    y = _check_domain(fs, y)
    out = np.where(y >= fs.eta_s, _p_upper(fs, params, y), _p_lower(fs, params, y))
    return out[()] if out.ndim == 0 else out


_D2_CENTRAL = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_D1_FORWARD = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0


def _d2(f, y, h):
    pts = y[:, None] + h * np.arange(-2, 3)[None, :]
    return f(pts) @ _D2_CENTRAL / h ** 2


def _d1(f, y0, h, direction):
    pts = y0 + direction * h * np.arange(5)
    return direction * float(f(pts) @ _D1_FORWARD) / h


def verify_stationary_residual(fs: FlatStationary, params: TumorParams,
                               n_samples: int = 64) -> StationaryResidualReport:
    """Residuals of the flat ODE system evaluated on the closed forms.

    ODE residuals use 5-point central second differences at ``n_samples``
    points per layer; first-derivative side conditions use one-sided
    5-point formulas from inside the relevant layer.
    """
    mu, nu, st = params.mu, params.nu, params.sigma_tilde
    h = 1e-3 * fs.gap
    eta, rho = fs.eta_s, fs.rho_s
    sig_u = lambda y: _sigma_upper(fs, params, y)
    p_u = lambda y: _p_upper(fs, params, y)
    p_l = lambda y: _p_lower(fs, params, y)
    sig_l = lambda y: np.full_like(np.asarray(y, dtype=float), params.sigma_hat)

    yu = np.linspace(eta + 2 * h, rho - 2 * h, n_samples)
    yl = np.linspace(2 * h, eta - 2 * h, n_samples)
    res_sigma = max(np.max(np.abs(_d2(sig_u, yu, h) - sig_u(yu))),
                    np.max(np.abs(_d2(sig_l, yl, h))))
    res_p = max(np.max(np.abs(_d2(p_u, yu, h) + mu * (sig_u(yu) - st))),
                np.max(np.abs(_d2(p_l, yl, h) - nu)))

    side = [
        ("sigma(rho_s) - sigma_bar", float(sig_u(rho)) - params.sigma_bar),
        ("p(rho_s)", float(p_u(rho))),
        ("sigma(eta_s) - sigma_hat", float(sig_u(eta)) - params.sigma_hat),
        ("sigma'(eta_s+)", _d1(sig_u, eta, h, +1)),
        ("p(eta_s+) - p(eta_s-)", float(p_u(eta)) - float(p_l(eta))),
        ("p'(eta_s+) - p'(eta_s-)", _d1(p_u, eta, h, +1) - _d1(p_l, eta, h, -1)),
        ("sigma'(0)", _d1(sig_l, 0.0, h, +1)),
        ("p'(0)", _d1(p_l, 0.0, h, +1)),
        ("p'(rho_s)", _d1(p_u, rho, h, -1)),
    ]
    max_abs = max([res_sigma, res_p] + [abs(v) for _, v in side])
    return StationaryResidualReport(float(res_sigma), float(res_p), side, float(max_abs))
