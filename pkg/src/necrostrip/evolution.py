"""Reduced surface evolution ``d rho/dt + Psi(rho) = 0``.

``Psi`` is obtained by solving the nutrient obstacle problem and then the
pressure problem on the current strip, and reading off the normal pressure
flux on the top.  Time stepping is IMEX: the curvature symbol
``gamma |k|^3 tanh(|k| rho_s)`` is implicit per Fourier mode, everything else
is explicit.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .elliptic import (NutrientObstacleSolver, build_grid, fourier_cos_coefficient,
                       solve_pressure)
from .errors import (GeometryViolation, InsufficientData, MinStepReached,
                     NecrostripError, NonPositiveAmplitude, OutOfDomain, StepRejected)
from .model import FlatStationary, TumorParams

log = logging.getLogger(__name__)

__all__ = [
    "GridConfig", "Trajectory", "ModeProbe", "PsiEvaluator", "evaluate_psi",
    "numerical_jacobian_mode", "jacobian_spectrum", "step", "simulate",
    "decay_rate_fit", "mode_amplitudes", "implicit_symbol", "AMPLITUDE_FLOOR",
]

AMPLITUDE_FLOOR = 1e-14


@dataclass(frozen=True)
class GridConfig:
    nx: int = 128
    ny: int = 256

    @classmethod
    def coerce(cls, value) -> "GridConfig":
        if isinstance(value, GridConfig):
            return value
        if isinstance(value, dict):
            return cls(int(value["nx"]), int(value["ny"]))
        nx, ny = value
        return cls(int(nx), int(ny))


class ModeProbe(NamedTuple):
    lambda_hat: float
    leakage: float


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    rho_snapshots: list = field(default_factory=list)
    mode_amplitudes: list = field(default_factory=list)
    fitted_rates: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)
    status: str = "running"

    def amplitudes(self) -> np.ndarray:
        return np.asarray(self.mode_amplitudes)

    def max_abs(self) -> np.ndarray:
        return np.array([np.max(np.abs(r)) for r in self.rho_snapshots])


def mode_amplitudes(rho) -> np.ndarray:
    """Amplitude of cos/sin content for k = 0..nx/2 (mean and Nyquist unscaled)."""
    rho = np.asarray(rho, dtype=float)
    c = np.abs(np.fft.rfft(rho)) / rho.size
    c[1:] *= 2.0
    if rho.size % 2 == 0:
        c[-1] *= 0.5
    return c


def implicit_symbol(nx, fs: FlatStationary, gamma: float) -> np.ndarray:
    k = np.arange(nx // 2 + 1, dtype=float)
    return gamma * k ** 3 * np.tanh(k * fs.rho_s)


class PsiEvaluator:
    """Evaluates Psi on a fixed grid size, warm-starting each solve from the last one."""

    def __init__(self, params: TumorParams, fs: FlatStationary, gamma: float, grid_config,
                 *, warm_start=True):
        self.params = params
        self.fs = fs
        self.gamma = float(gamma)
        self.grid_config = GridConfig.coerce(grid_config)
        self.warm_start = warm_start
        self._obstacle = NutrientObstacleSolver(params, fs)
        self._p0 = None
        self.last = None

    def __call__(self, rho_samples) -> np.ndarray:
        gc = self.grid_config
        grid = build_grid(gc.nx, gc.ny, self.fs, rho_samples)
        if not self.warm_start:
            self._obstacle = NutrientObstacleSolver(self.params, self.fs)
            self._p0 = None
        ob = self._obstacle.solve(grid)
        pr = solve_pressure(grid, self.params, self.fs, ob, self.gamma, x0=self._p0)
        if self.warm_start:
            self._p0 = pr.p_field
        self.last = {
            "psi_norm": float(np.max(np.abs(pr.top_flux))),
            "eta_min": float(np.min(ob.eta)),
            "eta_max": float(np.max(ob.eta)),
            "obstacle_iterations": int(ob.iterations),
            "pressure_iterations": int(pr.iterations),
            "obstacle_method": ob.method,
        }
        return pr.top_flux


def evaluate_psi(rho_samples, params: TumorParams, fs: FlatStationary, gamma: float,
                 grid_config) -> np.ndarray:
    return PsiEvaluator(params, fs, gamma, grid_config, warm_start=False)(rho_samples)


def _probe(psi_eps, psi_zero, k, epsilon):
    d = (psi_eps - psi_zero) / epsilon
    lam = fourier_cos_coefficient(d, k)
    c = np.abs(np.fft.rfft(d))
    ck = c[k]
    c[k] = 0.0
    leak = float(np.sqrt(np.sum(c ** 2)) / ck) if ck > 0.0 else math.inf
    return ModeProbe(lam, leak)


def _check_epsilon(epsilon):
    if not 1e-6 <= epsilon <= 1e-3:
        raise OutOfDomain(f"epsilon must lie in [1e-6, 1e-3], got {epsilon!r}")


def numerical_jacobian_mode(k, epsilon, params: TumorParams, fs: FlatStationary, gamma: float,
                            grid_config, psi_zero=None) -> ModeProbe:
    """Finite-difference probe of DPsi(0) along cos(kx).

    ``leakage`` is the l2 norm of the response in all other modes relative
    to the response in mode k.
    """
    _check_epsilon(epsilon)
    gc = GridConfig.coerce(grid_config)
    if not 0 <= k <= gc.nx // 2:
        raise OutOfDomain(f"k must lie in [0, {gc.nx // 2}]")
    if psi_zero is None:
        psi_zero = evaluate_psi(np.zeros(gc.nx), params, fs, gamma, gc)
    x = 2.0 * np.pi * np.arange(gc.nx) / gc.nx
    psi = evaluate_psi(epsilon * np.cos(k * x), params, fs, gamma, gc)
    return _probe(psi, psi_zero, k, epsilon)


def jacobian_spectrum(ks, epsilon, params, fs, gamma, grid_config) -> dict:
    """Probe several modes with one shared evaluation of Psi(0)."""
    gc = GridConfig.coerce(grid_config)
    psi_zero = evaluate_psi(np.zeros(gc.nx), params, fs, gamma, gc)
    return {int(k): numerical_jacobian_mode(int(k), epsilon, params, fs, gamma, gc, psi_zero)
            for k in ks}


def step(rho, dt, params: TumorParams, fs: FlatStationary, gamma: float, scheme="imex",
         grid_config=None, psi=None) -> np.ndarray:
    """One step of size dt.  ``psi`` may be a PsiEvaluator to reuse warm starts."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    rho = np.asarray(rho, dtype=float)
    if psi is None:
        gc = GridConfig(rho.size, 256) if grid_config is None else GridConfig.coerce(grid_config)
        psi = PsiEvaluator(params, fs, gamma, gc, warm_start=False)
    try:
        f = psi(rho)
    except NecrostripError as exc:
        raise StepRejected(f"Psi evaluation failed: {exc}") from exc
    if scheme == "explicit":
        out = rho - dt * f
    elif scheme == "imex":
        # (I + dt M)^{-1} (rho - dt (Psi - M rho)) = rho - dt (I + dt M)^{-1} Psi
        m = implicit_symbol(rho.size, fs, gamma)
        out = rho - dt * np.fft.irfft(np.fft.rfft(f) / (1.0 + dt * m), n=rho.size)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not np.all(np.isfinite(out)) or np.max(np.abs(out)) > 0.25 * fs.gap:
        raise StepRejected("step leaves the admissible geometry")
    return out


def simulate(rho0, params: TumorParams, fs: FlatStationary, gamma: float, T: float, dt0: float,
             grid_config, *, dt_max=None, max_rel_change=0.1, scheme="imex",
             fit_modes=range(0, 9), window_fraction=0.5, growth_factor=10.0,
             rel_floor=None, callback=None) -> Trajectory:
    """Adaptive-dt integration to time T.

    Stops early when max|rho| exceeds ``growth_factor`` times its initial
    value (status "blowup") or drops below 1e-12 of it ("converged").
    """
    gc = GridConfig.coerce(grid_config)
    rho = np.array(rho0, dtype=float)
    if rho.shape != (gc.nx,):
        raise OutOfDomain(f"rho0 must have length {gc.nx}")
    amp0 = float(np.max(np.abs(rho)))
    if amp0 > fs.gap / 8.0:
        raise OutOfDomain(f"max|rho0| = {amp0:.6g} exceeds (rho_s - eta_s)/8 = {fs.gap / 8:.6g}")
    if not (T > 0.0 and dt0 > 0.0):
        raise ValueError("T and dt0 must be positive")
    dt_max = math.inf if dt_max is None else float(dt_max)
    rel_floor = 1e-6 * fs.gap if rel_floor is None else rel_floor
    dt_min = dt0 * 1e-6

    psi = PsiEvaluator(params, fs, gamma, gc)
    traj = Trajectory()
    t, dt = 0.0, min(dt0, dt_max)

    def record(diag):
        traj.times.append(t)
        traj.rho_snapshots.append(rho.copy())
        traj.mode_amplitudes.append(mode_amplitudes(rho))
        traj.diagnostics.append(diag)

    record({"dt": 0.0, "rejections": 0})
    rejections = 0
    while t < T * (1.0 - 1e-12):
        h = min(dt, T - t)
        try:
            trial = step(rho, h, params, fs, gamma, scheme, psi=psi)
            change = np.max(np.abs(trial - rho)) / max(np.max(np.abs(rho)), rel_floor)
            if change > max_rel_change:
                raise StepRejected(f"relative change {change:.3g} above {max_rel_change}")
        except (StepRejected, GeometryViolation) as exc:
            rejections += 1
            dt = 0.5 * h
            log.debug("t=%.6g: rejected step %.3g (%s)", t, h, exc)
            if dt < dt_min:
                traj.status = "min_step"
                err = MinStepReached(f"dt fell below {dt_min:.3g} at t={t:.6g}")
                err.trajectory = traj
                raise err from exc
            continue
        diag = dict(psi.last, dt=h, rejections=rejections)
        rho, t = trial, t + h
        rejections = 0
        dt = min(1.2 * h, dt_max) if h >= dt else dt
        record(diag)
        if callback is not None:
            callback(t, rho)
        amp = float(np.max(np.abs(rho)))
        if amp0 > 0.0 and amp > growth_factor * amp0:
            traj.status = "blowup"
            break
        if amp0 > 0.0 and amp < 1e-12 * amp0:
            traj.status = "converged"
            break
    else:
        traj.status = "completed"

    for k in fit_modes:
        if k > gc.nx // 2:
            continue
        try:
            traj.fitted_rates[int(k)] = decay_rate_fit(traj, int(k), window_fraction)
        except (InsufficientData, NonPositiveAmplitude):
            traj.fitted_rates[int(k)] = None
    return traj


def decay_rate_fit(trajectory, k: int, window_fraction: float = 0.5,
                   floor: float = AMPLITUDE_FLOOR):
    """Least-squares slope of log A_k(t) over the final ``window_fraction`` of samples.

    ``trajectory`` is a Trajectory or a ``(times, amplitudes)`` pair where the
    amplitudes are already those of mode k.
    """
    if isinstance(trajectory, Trajectory):
        t = np.asarray(trajectory.times, dtype=float)
        a = trajectory.amplitudes()[:, k] if len(t) else np.empty(0)
    else:
        t, a = (np.asarray(v, dtype=float) for v in trajectory)
    if not 0.0 < window_fraction <= 1.0:
        raise ValueError("window_fraction must lie in (0, 1]")
    n = len(t)
    start = int(math.floor(n * (1.0 - window_fraction)))
    t, a = t[start:], a[start:]
    if t.size < 10:
        raise InsufficientData(f"need at least 10 samples in the fit window, have {t.size}")
    if np.any(a < 0.0) or np.all(a <= floor):
        raise NonPositiveAmplitude(f"mode {k} amplitude is not above the floor in the window")
    y = np.log(np.maximum(a, floor))
    A = np.vstack([t, np.ones_like(t)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(np.sum((y - A @ np.array([slope, icpt])) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return float(slope), float(r2)
