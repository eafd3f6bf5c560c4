"""Closed-form spectrum of the linearized boundary evolution about the flat state.

A perturbation ``rho = eps * cos(k x)`` of the upper surface relaxes (or grows)
at rate ``lambda_k(gamma)``; ``gamma_k`` is the adhesiveness at which mode ``k``
is neutral and ``gamma_star`` the largest of them.  :func:`bvp_oracle_lambda`
rebuilds ``lambda_k`` from the two-point boundary value problems by finite
differences, without touching the closed forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularSystem, TailNotCertified
from .model import FlatStationary, TumorParams, flat_stationary

__all__ = [
    "ModeProfile", "SpectrumReport", "lambda_k", "lambda_k_direct", "gamma_k", "gamma_star",
    "classify_stability", "mode_profiles", "bvp_oracle_lambda",
    "gamma_star_sensitivity", "curvature_weight", "stiff_symbol",
]

STABLE, UNSTABLE, MARGINAL = "Stable", "Unstable", "Marginal"


@dataclass
class ModeProfile:
    k: int
    y_a: np.ndarray  # samples on [eta_s, rho_s]
    a_k: np.ndarray
    y_b: np.ndarray  # samples on [0, rho_s]
    b_k: np.ndarray
    d_k: float
    e_k: float


@dataclass
class SpectrumReport:
    gamma: float
    lam: dict
    gamma_crit: dict
    gamma_star: float
    argmax_k: tuple
    classification: str
    unstable_modes: tuple
    tail_bound_ok: bool
    varpi: float = float("nan")
    extra: dict = field(default_factory=dict)


# -- guarded hyperbolic helpers ---------------------------------------------

def _coth(x):
    if x > 20.0:
        return 1.0 + 2.0 * math.exp(-2.0 * x)
    return 1.0 + 2.0 / math.expm1(2.0 * x)


def _log_sinh(x):
    return x + math.log1p(-math.exp(-2.0 * x)) - math.log(2.0)


def _sinh_ratio(a, b):
    """sinh(a) / sinh(b) for 0 <= a <= b, b > 0 (a may be an array)."""
    a = np.asarray(a, dtype=float)
    return np.exp(a - b) * (-np.expm1(-2.0 * a)) / (-math.expm1(-2.0 * b))


def _cosh_ratio(a, b):
    """cosh(a) / cosh(b) for a, b >= 0."""
    a = np.asarray(a, dtype=float)
    return np.exp(a - b) * (1.0 + np.exp(-2.0 * a)) / (1.0 + math.exp(-2.0 * b))


def _interface_factor(k, fs, params):
    """q S / (sigma_hat sinh(k g) sinh(q g) [coth(k g) + tanh(k eta_s)]), k > 0."""
    g, eta = fs.gap, fs.eta_s
    q = math.sqrt(k * k + 1.0)
    e = math.exp(-2.0 * k * g)
    log_d = k * g + math.log(0.5 * (1.0 + e) + 0.5 * math.tanh(k * eta) * (1.0 - e))
    return q * params.root_term / params.sigma_hat * math.exp(-log_d - _log_sinh(q * g))


def curvature_weight(k, fs) -> float:
    """|k|^3 tanh(|k| rho_s): slope of lambda_k in gamma."""
    k = abs(k)
    return k ** 3 * math.tanh(k * fs.rho_s)


def stiff_symbol(k, fs, gamma):
    """gamma |k|^3 tanh(|k| rho_s), accepting integer arrays."""
    k = np.abs(np.asarray(k, dtype=float))
    return gamma * k ** 3 * np.tanh(k * fs.rho_s)


def _coupling_part(params, fs, k):
    """lambda_k(gamma) - gamma k^3 tanh(k rho_s) for k > 0."""
    mu, s = params.mu, params.root_term
    q = math.sqrt(k * k + 1.0)
    t = math.tanh(k * fs.rho_s)
    return (mu * s * (q * _coth(q * fs.gap) - k * t)
            + (params.nu - mu * params.sigma_tilde) * _interface_factor(k, fs, params)
            - mu * (params.sigma_bar - params.sigma_tilde))


def lambda_k(params: TumorParams, fs: FlatStationary, k: int, gamma: float) -> float:
    """Growth-rate eigenvalue of mode k (decay when positive); even in k."""
    k = abs(int(k))
    if k == 0:
        return params.nu
    return gamma * curvature_weight(k, fs) + _coupling_part(params, fs, k)


def lambda_k_direct(params, fs, k, gamma):
    """Literal transcription of the closed form for signed, moderate k != 0."""
    mu, nu, st, sb, sh = params.mu, params.nu, params.sigma_tilde, params.sigma_bar, params.sigma_hat
    s = math.sqrt(sb ** 2 - sh ** 2)
    rho, eta, g = fs.rho_s, fs.eta_s, fs.gap
    q = math.sqrt(k * k + 1.0)
    t = math.tanh(k * rho)
    third = ((-mu * st + nu) * q * s
             / (sh * math.sinh(k * g) * math.sinh(q * g)
                * (1.0 / math.tanh(k * g) + math.tanh(k * eta))))
    return (gamma * k ** 3 * t + mu * s * (q / math.tanh(q * g) - k * t) + third
            - mu * (sb - st))


def gamma_k(params: TumorParams, fs: FlatStationary, k: int) -> float:
    k = abs(int(k))
    if k == 0:
        raise ValueError("gamma_k is defined for k != 0")
    return -_coupling_part(params, fs, k) / curvature_weight(k, fs)


def _tail_bound(params, fs, k_max):
    return 2.0 * params.mu * (params.sigma_bar - params.sigma_tilde) / curvature_weight(k_max, fs)


def gamma_star(params: TumorParams, fs: FlatStationary, k_max: int = 64, *,
               raise_on_uncertified: bool = True):
    """Return ``(gamma_star, argmax_k, tail_bound_ok)`` over 1 <= k <= k_max.

    The tail certificate uses the large-k asymptotics of ``k^3 tanh(k rho_s)
    gamma_k`` with a safety factor of two.
    """
    if k_max < 8:
        raise ValueError("k_max must be at least 8")
    ks = np.arange(1, k_max + 1)
    g = np.array([gamma_k(params, fs, k) for k in ks])
    gmax = float(g.max())
    argmax = tuple(int(k) for k in ks[g >= gmax - 1e-12 * abs(gmax)])
    ok = bool(_tail_bound(params, fs, k_max) < gmax)
    if not ok and raise_on_uncertified:
        suggested = k_max
        while _tail_bound(params, fs, suggested) >= gmax and suggested < 2 ** 20:
            suggested *= 2
        raise TailNotCertified(
            f"gamma_k tail beyond k_max={k_max} is not certified; try k_max={suggested}",
            suggested_k_max=suggested)
    return gmax, argmax, ok


def classify_stability(params: TumorParams, fs: FlatStationary, gamma: float,
                       k_max: int = 64) -> SpectrumReport:
    gs, argmax, ok = gamma_star(params, fs, k_max)
    lam = {k: lambda_k(params, fs, k, gamma) for k in range(0, k_max + 1)}
    crit = {k: gamma_k(params, fs, k) for k in range(1, k_max + 1)}
    unstable = tuple(k for k in range(1, k_max + 1) if lam[k] < 0.0)
    if abs(gamma - gs) <= 1e-12 * gs:
        cls = MARGINAL
    elif gamma > gs:
        cls = STABLE
    else:
        cls = UNSTABLE
    varpi = min(params.nu, math.tanh(fs.rho_s) * (gamma - gs)) if cls == STABLE else float("nan")
    return SpectrumReport(gamma, lam, crit, gs, argmax, cls, unstable, ok, varpi)


def mode_profiles(params: TumorParams, fs: FlatStationary, k: int, gamma: float,
                  n_samples: int = 257) -> ModeProfile:
    """Nutrient/pressure perturbation profiles for unit surface amplitude.

    The interior pressure branch is normalized by cosh(k eta_s), which is
    what continuity at the necrotic interface requires.
    """
    k = abs(int(k))
    mu, nu, st = params.mu, params.nu, params.sigma_tilde
    s = params.root_term
    eta, rho, g = fs.eta_s, fs.rho_s, fs.gap
    q = math.sqrt(k * k + 1.0)
    y_a = np.linspace(eta, rho, n_samples)
    a = -_sinh_ratio(q * (y_a - eta), q * g) * s
    d = q * s / (params.sigma_hat * math.exp(_log_sinh(q * g)))

    y_b = np.linspace(0.0, rho, 2 * n_samples - 1)
    up = y_b >= eta
    b = np.empty_like(y_b)
    if k == 0:
        e = (mu * st - nu) * d * g
        yu = y_b[up]
        b[up] = mu * s * (_sinh_ratio(yu - eta, g) - 1.0) + (mu * st - nu) * (rho - yu)
        b[~up] = -mu * s + (mu * st - nu) * g
    else:
        e = (mu * st - nu) * d / (k * (_coth(k * g) + math.tanh(k * eta)))
        yu, yl = y_b[up], y_b[~up]
        amp = gamma * k * k - mu * s
        a_u = -_sinh_ratio(q * (yu - eta), q * g) * s
        b[up] = (-mu * a_u + amp * _cosh_ratio(k * yu, k * rho)
                 + e * _sinh_ratio(k * (rho - yu), k * g))
        b[~up] = amp * _cosh_ratio(k * yl, k * rho) + e * _cosh_ratio(k * yl, k * eta)
    return ModeProfile(k, y_a, a, y_b, b, float(d), float(e))


def _solve(mat, rhs):
    try:
        lu = spla.splu(sp.csc_matrix(mat))
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    out = lu.solve(rhs)
    if not np.all(np.isfinite(out)):
        raise SingularSystem("non-finite solution of the mode boundary value problem")
    return out


def bvp_oracle_lambda(params: TumorParams, fs: FlatStationary, k: int, gamma: float,
                      n_grid: int = 2048) -> float:
    """Finite-difference reconstruction of lambda_k.

    Solves the nutrient mode problem on the proliferating layer, reads off the
    interface displacement from its one-sided slope, then solves the coupled
    two-layer pressure mode problem and returns its top slope minus
    mu (sigma_bar - sigma_tilde).  Second order in the grid spacing.
    """
    k = abs(int(k))
    mu, s = params.mu, params.root_term
    eta, rho = fs.eta_s, fs.rho_s
    n = m = n_grid - 1
    hu, hl = fs.gap / n, eta / m
    kk = float(k * k)

    # nutrient layer: a'' - (k^2 + 1) a = 0, a(eta) = 0, a(rho) = -S
    main = np.full(n - 1, -2.0 / hu ** 2 - (kk + 1.0))
    off = np.full(n - 2, 1.0 / hu ** 2)
    rhs = np.zeros(n - 1)
    rhs[-1] = s / hu ** 2
    a_in = _solve(sp.diags([off, main, off], [-1, 0, 1]), rhs)
    a = np.concatenate([[0.0], a_in, [-s]])
    d = -((-3.0 * a[0] + 4.0 * a[1] - a[2]) / (2.0 * hu)) / params.sigma_hat

    # pressure: lower nodes 0..m (m is the interface), upper nodes 1..n
    jump = mu * (params.sigma_hat - params.sigma_tilde) + params.nu
    size = m + 1 + n
    up = lambda i: m + i  # upper node i (i = 0 is the interface)
    rows, cols, vals = [], [], []
    rhs = np.zeros(size)

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    put(0, 0, -2.0 / hl ** 2 - kk)
    put(0, 1, 2.0 / hl ** 2)
    for j in range(1, m):
        put(j, j - 1, 1.0 / hl ** 2)
        put(j, j, -2.0 / hl ** 2 - kk)
        put(j, j + 1, 1.0 / hl ** 2)
    # slope jump across the interface
    for c, v in ((up(0), -3.0), (up(1), 4.0), (up(2), -1.0)):
        put(m, c, v / (2.0 * hu))
    for c, v in ((m, -3.0), (m - 1, 4.0), (m - 2, -1.0)):
        put(m, c, v / (2.0 * hl))
    rhs[m] = jump * d
    for i in range(1, n):
        put(up(i), up(i - 1), 1.0 / hu ** 2)
        put(up(i), up(i), -2.0 / hu ** 2 - kk)
        put(up(i), up(i + 1), 1.0 / hu ** 2)
        rhs[up(i)] = -mu * a[i]
    put(up(n), up(n), 1.0)
    rhs[up(n)] = gamma * kk
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(size, size))
    b = _solve(mat, rhs)
    top = (3.0 * b[up(n)] - 4.0 * b[up(n - 1)] + b[up(n - 2)]) / (2.0 * hu)
    return float(top - mu * (params.sigma_bar - params.sigma_tilde))


def gamma_star_sensitivity(params: TumorParams, fs, nu_grid, k_max: int = 64):
    """``[(nu, gamma_star)]`` with the flat state recomputed for every nu.

    ``fs`` (the flat state at ``params.nu``, may be None) is not reused: eta_s
    and rho_s both move with nu.
    """
    out = []
    for nu in nu_grid:
        p = TumorParams(params.sigma_hat, params.sigma_tilde, params.sigma_bar,
                        params.mu, float(nu), params.gamma)
        fs = flat_stationary(p)
        out.append((float(nu), gamma_star(p, fs, k_max)[0]))
    return out
