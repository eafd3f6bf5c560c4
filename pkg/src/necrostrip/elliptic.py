"""Nutrient obstacle and pressure solves on the mapped periodic strip.

The physical domain ``{0 < y < rho_s + rho(x)}`` is mapped onto the unit
reference rectangle by ``y = s * H(x)`` with ``H = rho_s + rho``.  In x the
fields are Fourier-collocated; in s we use second-order centred differences
on a uniform grid, with a reflection ghost node for the no-flux bottom.

Both solves share one matrix-free operator.  Linear systems are solved by
restarted GMRES, right-preconditioned with the x-invariant (flat, averaged
metric) operator, which FFT diagonalizes into one tridiagonal system per
Fourier mode.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (DegenerateActiveSet, GeometryViolation, NoConvergence,
                     NonMonotoneColumn, SingularSystem)
from .model import FlatStationary, TumorParams

log = logging.getLogger(__name__)

__all__ = [
    "StripGrid", "ObstacleSolution", "PressureSolution", "build_grid",
    "curvature", "curvature_pointwise", "spectral_dx", "spectral_dxx",
    "MappedOperator", "NutrientObstacleSolver", "solve_nutrient_obstacle",
    "extract_free_boundary", "solve_pressure", "fourier_cos_coefficient",
]


# -- Fourier collocation in x ------------------------------------------------

def _wavenumbers(nx):
    return np.arange(nx // 2 + 1, dtype=float)


def spectral_dx(f, axis=0):
    f = np.asarray(f, dtype=float)
    nx = f.shape[axis]
    k = _wavenumbers(nx)
    k[-1] = 0.0  # odd derivative: drop the Nyquist mode
    shape = [1] * f.ndim
    shape[axis] = -1
    return np.fft.irfft(1j * k.reshape(shape) * np.fft.rfft(f, axis=axis), n=nx, axis=axis)


def spectral_dxx(f, axis=0):
    f = np.asarray(f, dtype=float)
    nx = f.shape[axis]
    k = _wavenumbers(nx)
    shape = [1] * f.ndim
    shape[axis] = -1
    return np.fft.irfft(-(k ** 2).reshape(shape) * np.fft.rfft(f, axis=axis), n=nx, axis=axis)


def fourier_cos_coefficient(f, k):
    """Coefficient of cos(k x) in the periodic samples ``f`` (mean for k = 0)."""
    f = np.asarray(f, dtype=float)
    c = np.fft.rfft(f)[k] / f.size
    if k == 0 or 2 * k == f.size:
        return float(c.real)
    return float(2.0 * c.real)


def curvature_pointwise(rho_x, rho_xx):
    return -rho_xx / (1.0 + rho_x ** 2) ** 1.5


def curvature(rho_samples):
    """Curvature of the periodic graph ``y = rho(x)`` (positive for a cap)."""
    rho = np.asarray(rho_samples, dtype=float)
    return curvature_pointwise(spectral_dx(rho), spectral_dxx(rho))


# -- grid -----------------------------------------------------------------

@dataclass
class StripGrid:
    nx: int
    ny: int
    x_nodes: np.ndarray
    y_map: np.ndarray  # reference coordinate s in [0, 1]
    rho: np.ndarray
    rho_s: float
    height: np.ndarray = field(init=False)
    height_x: np.ndarray = field(init=False)
    height_xx: np.ndarray = field(init=False)

    def __post_init__(self):
        self.height = self.rho_s + self.rho
        self.height_x = spectral_dx(self.rho)
        self.height_xx = spectral_dxx(self.rho)

    @property
    def hs(self) -> float:
        return 1.0 / (self.ny - 1)

    @property
    def hx(self) -> float:
        return 2.0 * np.pi / self.nx

    def physical_y(self) -> np.ndarray:
        return self.height[:, None] * self.y_map[None, :]


def build_grid(nx: int, ny: int, fs: FlatStationary, rho_samples=None) -> StripGrid:
    if nx < 16 or nx & (nx - 1):
        raise ValueError("nx must be a power of two, at least 16")
    if ny < 32:
        raise ValueError("ny must be at least 32")
    rho = np.zeros(nx) if rho_samples is None else np.array(rho_samples, dtype=float)
    if rho.shape != (nx,):
        raise ValueError(f"rho_samples must have length {nx}")
    if not np.all(np.isfinite(rho)):
        raise GeometryViolation("non-finite boundary samples")
    margin = 0.25 * fs.gap
    if np.max(np.abs(rho)) > margin:
        raise GeometryViolation(
            f"max|rho| = {np.max(np.abs(rho)):.6g} exceeds the margin (rho_s - eta_s)/4 = {margin:.6g}")
    x = 2.0 * np.pi * np.arange(nx) / nx
    s = np.linspace(0.0, 1.0, ny)
    return StripGrid(nx, ny, x, s, rho, fs.rho_s)


# -- batched tridiagonal solve --------------------------------------------

class _ModeTridiag:
    """Thomas factorization of one tridiagonal system per Fourier mode."""

    def __init__(self, lower, diag, upper):
        n = diag.shape[1]
        self.lower = lower
        cp = np.zeros_like(diag)
        den = np.zeros_like(diag)
        den[:, 0] = diag[:, 0]
        cp[:, 0] = upper[:, 0] / den[:, 0]
        for j in range(1, n):
            den[:, j] = diag[:, j] - lower[:, j] * cp[:, j - 1]
            cp[:, j] = upper[:, j] / den[:, j]
        if np.any(den == 0.0):
            raise SingularSystem("singular preconditioner block")
        self.cp, self.den = cp, den

    def solve(self, rhs):
        n = rhs.shape[1]
        out = np.empty_like(rhs)
        out[:, 0] = rhs[:, 0] / self.den[:, 0]
        for j in range(1, n):
            out[:, j] = (rhs[:, j] - self.lower[:, j] * out[:, j - 1]) / self.den[:, j]
        for j in range(n - 2, -1, -1):
            out[:, j] -= self.cp[:, j] * out[:, j + 1]
        return out


# -- the mapped Laplacian ---------------------------------------------------

class MappedOperator:
    """Discrete Laplacian of the graph-mapped strip.

    With ``s = y / H(x)`` the chain rule gives

        Lap u = U_xx + 2 s_x U_xs + (s_x^2 + 1/H^2) U_ss + s_xx U_s,

    ``s_x = -s H'/H``, ``s_xx = s (2 H'^2/H^2 - H''/H)``.
    """

    def __init__(self, grid: StripGrid):
        self.grid = grid
        s = grid.y_map[None, :]
        H = grid.height[:, None]
        Hx = grid.height_x[:, None]
        Hxx = grid.height_xx[:, None]
        sx = -s * Hx / H
        self.c_xs = 2.0 * sx
        self.c_ss = sx ** 2 + 1.0 / H ** 2 + 0.0 * s
        self.c_s = s * (2.0 * Hx ** 2 / H ** 2 - Hxx / H)
        self.hs = grid.hs
        self.shape = (grid.nx, grid.ny)

    def column_stencil(self):
        """(lower, diag, upper) s-coefficients of the interior three-point stencil."""
        h2 = self.hs ** 2
        return self.c_ss / h2, -2.0 * self.c_ss / h2, self.c_ss / h2

    def d_s(self, U):
        Us = np.zeros_like(U)
        Us[:, 1:-1] = (U[:, 2:] - U[:, :-2]) / (2.0 * self.hs)
        Us[:, -1] = (3.0 * U[:, -1] - 4.0 * U[:, -2] + U[:, -3]) / (2.0 * self.hs)
        return Us

    def d_ss(self, U):
        Uss = np.zeros_like(U)
        h2 = self.hs ** 2
        Uss[:, 1:-1] = (U[:, 2:] - 2.0 * U[:, 1:-1] + U[:, :-2]) / h2
        Uss[:, 0] = 2.0 * (U[:, 1] - U[:, 0]) / h2
        return Uss

    def laplacian(self, U):
        """Discrete Laplacian at every node below the top row (top row is 0)."""
        Us = self.d_s(U)
        Us[:, -1] = 0.0
        lap = (spectral_dxx(U) + self.c_xs * spectral_dx(Us) + self.c_ss * self.d_ss(U)
               + self.c_s * Us)
        lap[:, -1] = 0.0
        return lap

    def system(self, fixed, helmholtz):
        """Return ``U -> where(fixed, U, -Lap U + helmholtz U)``."""
        def apply(U):
            return np.where(fixed, U, -self.laplacian(U) + helmholtz * U)
        return apply

    def preconditioner(self, fixed, helmholtz):
        """Inverse of the x-averaged operator with a level-wise fixed mask."""
        nx, ny = self.shape
        level_fixed = fixed.mean(axis=0) >= 0.5
        level_fixed[-1] = True
        c = float(np.mean(1.0 / self.grid.height ** 2))
        h2 = self.hs ** 2
        k2 = _wavenumbers(nx)[:, None] ** 2
        nk = k2.shape[0]
        lower = np.zeros((nk, ny))
        upper = np.zeros((nk, ny))
        diag = np.broadcast_to(2.0 * c / h2 + k2 + helmholtz, (nk, ny)).copy()
        lower[:, 1:] = -c / h2
        upper[:, :-1] = -c / h2
        upper[:, 0] = -2.0 * c / h2
        lower[:, level_fixed] = 0.0
        upper[:, level_fixed] = 0.0
        diag[:, level_fixed] = 1.0
        tri = _ModeTridiag(lower, diag, upper)

        def apply(R):
            Rh = np.fft.rfft(R, axis=0)
            return np.fft.irfft(tri.solve(Rh), n=nx, axis=0)
        return apply

    def assemble(self, fixed, helmholtz):
        """Sparse matrix of :meth:`system` (dense in x); for small grids and fallbacks."""
        nx, ny = self.shape
        eye_x = np.eye(nx)
        dx = spectral_dx(eye_x)
        dxx = spectral_dxx(eye_x)
        h = self.hs
        ds = sp.lil_matrix((ny, ny))
        dss = sp.lil_matrix((ny, ny))
        for j in range(1, ny - 1):
            ds[j, j - 1], ds[j, j + 1] = -0.5 / h, 0.5 / h
            dss[j, j - 1], dss[j, j], dss[j, j + 1] = 1 / h ** 2, -2 / h ** 2, 1 / h ** 2
        dss[0, 0], dss[0, 1] = -2 / h ** 2, 2 / h ** 2
        ds, dss = ds.tocsr(), dss.tocsr()
        i_s = sp.identity(ny, format="csr")
        i_x = sp.identity(nx, format="csr")
        diag = lambda a: sp.diags(a.ravel())
        lap = (sp.kron(sp.csr_matrix(dxx), i_s) + diag(self.c_xs) @ sp.kron(sp.csr_matrix(dx), ds)
               + diag(self.c_ss) @ sp.kron(i_x, dss) + diag(self.c_s) @ sp.kron(i_x, ds))
        op = -lap + helmholtz * sp.identity(nx * ny)
        keep = sp.diags((~fixed).ravel().astype(float))
        return (keep @ op + sp.diags(fixed.ravel().astype(float))).tocsr()

    def solve(self, fixed, helmholtz, rhs, x0=None, rtol=1e-11, maxiter=20):
        """Solve ``system(fixed, helmholtz) U = rhs``; rows in ``fixed`` are identity."""
        A = self.system(fixed, helmholtz)
        P = self.preconditioner(fixed, helmholtz)
        n = rhs.size
        shape = self.shape
        U = np.zeros(shape) if x0 is None else np.array(x0, dtype=float)
        U = np.where(fixed, rhs, U)
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0.0:
            return np.zeros(shape), 0
        op = spla.LinearOperator((n, n), matvec=lambda v: A(P(v.reshape(shape))).ravel(),
                                 dtype=float)
        iters = 0
        rnorm_prev = np.inf
        for _ in range(maxiter):
            r = rhs - A(U)
            rnorm = np.linalg.norm(r)
            if rnorm <= rtol * bnorm:
                return U, iters
            if rnorm > 0.5 * rnorm_prev:
                # stagnation at the rounding floor of the discrete operator
                if rnorm <= 1e3 * rtol * bnorm:
                    return U, iters
                break
            rnorm_prev = rnorm
            count = [0]

            def cb(_):
                count[0] += 1
            y, info = spla.gmres(op, r.ravel(), rtol=0.1 * rtol * bnorm / rnorm,
                                 atol=0.0, restart=60, maxiter=4, callback=cb,
                                 callback_type="pr_norm")
            iters += count[0]
            if not np.all(np.isfinite(y)):
                raise SingularSystem("GMRES produced a non-finite iterate")
            U = U + P(y.reshape(shape))
        r = rhs - A(U)
        if np.linalg.norm(r) <= rtol * bnorm:
            return U, iters
        raise NoConvergence(
            f"GMRES stalled: residual {np.linalg.norm(r) / bnorm:.3e} > {rtol:.1e}")


# -- obstacle problem ------------------------------------------------------

@dataclass
class ObstacleSolution:
    sigma_field: np.ndarray
    active_mask: np.ndarray  # True where the nutrient is strictly above the necrosis level
    eta: np.ndarray
    complementarity_residual: float
    iterations: int = 0
    method: str = "pdas"
    coincidence: np.ndarray = None  # nodes pinned to the necrosis level by the solver


def _pgs(indptr, indices, data, b, fixed, lower_bound, x, tol, max_sweeps):
    n = b.size
    for sweep in range(max_sweeps):
        delta = 0.0
        for i in range(n):
            if fixed[i]:
                continue
            acc = b[i]
            diag = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j == i:
                    diag = data[p]
                else:
                    acc -= data[p] * x[j]
            new = acc / diag
            if new < lower_bound:
                new = lower_bound
            d = abs(new - x[i])
            if d > delta:
                delta = d
            x[i] = new
        if delta <= tol:
            return sweep + 1
    return -1


_pgs_jit = None


def _projected_gauss_seidel(mat, b, fixed, lower_bound, x0, tol, max_sweeps):
    global _pgs_jit
    if _pgs_jit is None:
        try:
            import numba
            _pgs_jit = numba.njit(cache=False)(_pgs)
        except ImportError:  # pragma: no cover
            _pgs_jit = _pgs
    x = np.array(x0, dtype=float).ravel()
    sweeps = _pgs_jit(mat.indptr, mat.indices, mat.data, b.ravel(), fixed.ravel(),
                      float(lower_bound), x, float(tol), int(max_sweeps))
    return x, sweeps


class NutrientObstacleSolver:
    """Primal-dual active set solve of the nutrient obstacle problem.

    Falls back to projected Gauss-Seidel on the assembled operator when the
    active-set iteration revisits a partition.  Instances keep the last
    coincidence set as a warm start and are not shareable mid-solve.
    """

    def __init__(self, params: TumorParams, fs: FlatStationary, *, max_pdas=50,
                 max_pgs_sweeps=100_000, rtol=1e-11):
        self.params = params
        self.fs = fs
        self.max_pdas = max_pdas
        self.max_pgs_sweeps = max_pgs_sweeps
        self.rtol = rtol
        sb = params.sigma_bar
        self.tol_act = 1e-9 * sb
        self.tol_pde = 1e-8 * sb
        self.tol_comp = 1e-8 * sb
        self.warm_mask = None
        self.warm_field = None

    def _initial_mask(self, grid):
        if self.warm_mask is not None and self.warm_mask.shape == (grid.nx, grid.ny):
            return self.warm_mask.copy()
        mask = grid.physical_y() < self.fs.eta_s
        mask[:, -1] = False
        return mask

    def solve(self, grid: StripGrid, method="pdas") -> ObstacleSolution:
        p = self.params
        sh, sb = p.sigma_hat, p.sigma_bar
        op = MappedOperator(grid)
        top = np.zeros((grid.nx, grid.ny), dtype=bool)
        top[:, -1] = True
        x0 = self.warm_field if (self.warm_field is not None
                                 and self.warm_field.shape == top.shape) else None

        used = method
        its = 0
        C = self._initial_mask(grid)
        if method == "pdas":
            seen = set()
            for its in range(1, self.max_pdas + 1):
                fixed = C | top
                rhs = np.where(top, sb, np.where(C, sh, 0.0))
                sigma, _ = op.solve(fixed, 1.0, rhs, x0=x0, rtol=self.rtol)
                x0 = sigma
                r = -op.laplacian(sigma) + sigma
                new_C = (C & (r >= -self.tol_pde)) | (~C & (sigma < sh - self.tol_act))
                new_C &= ~top
                if np.array_equal(new_C, C):
                    break
                seen.add(C.tobytes())
                if new_C.tobytes() in seen:
                    log.info("active set cycled after %d iterations; switching to PGS", its)
                    used = "pgs"
                    break
                C = new_C
            else:
                raise NoConvergence(f"active set iteration did not settle in {self.max_pdas} steps")
        if used == "pgs":
            mat = op.assemble(top, 1.0)
            rhs = np.where(top, sb, 0.0)
            start = np.maximum(x0 if x0 is not None else np.full(top.shape, sh), sh)
            start[:, -1] = sb
            flat, sweeps = _projected_gauss_seidel(mat, rhs, top, sh, start,
                                                   1e-14 * sb, self.max_pgs_sweeps)
            if sweeps < 0:
                raise NoConvergence(f"projected Gauss-Seidel hit {self.max_pgs_sweeps} sweeps")
            its = sweeps
            sigma = flat.reshape(top.shape)
            C = (sigma <= sh) & ~top

        r = -op.laplacian(sigma) + sigma
        comp = np.minimum(sigma - sh, r)[:, :-1]
        comp_res = float(np.max(np.abs(comp)))
        if comp_res > self.tol_comp:
            raise NoConvergence(f"complementarity residual {comp_res:.3e} above tolerance")
        if np.min(sigma) < sh - 1e-12 or np.max(sigma) > sb * (1.0 + 1e-12):
            raise NoConvergence("discrete maximum principle violated")
        active = sigma > sh + self.tol_act
        if np.any(active[:, 0]):
            raise DegenerateActiveSet("necrotic layer vanished in some column")
        if np.any(active[:, :-1].sum(axis=1) < 3):
            raise DegenerateActiveSet("necrotic layer fills the column up to the surface")

        sol = ObstacleSolution(sigma, active, None, comp_res, its, used, C)
        sol.eta = extract_free_boundary(sol, grid)
        self.warm_mask = C.copy()
        self.warm_field = sigma
        return sol


def solve_nutrient_obstacle(grid: StripGrid, params: TumorParams, fs: FlatStationary,
                            method="pdas") -> ObstacleSolution:
    return NutrientObstacleSolver(params, fs).solve(grid, method=method)


def extract_free_boundary(obstacle: ObstacleSolution, grid: StripGrid) -> np.ndarray:
    """Height of the necrotic interface in every column.

    The nutrient detaches from the necrosis level tangentially, so in each
    column the quadratic through the first three nodes above the last pinned
    node has its vertex at the interface.
    """
    active = obstacle.active_mask
    sigma = obstacle.sigma_field
    y = grid.physical_y()
    eta = np.empty(grid.nx)
    for i in range(grid.nx):
        col = active[i, :-1]
        inactive = np.flatnonzero(~col)
        if inactive.size == 0:
            raise DegenerateActiveSet(f"column {i} has no necrotic node")
        j0 = inactive[-1]
        if j0 + 1 != inactive.size:
            raise NonMonotoneColumn(f"column {i} has several necrotic/proliferating transitions")
        if j0 + 3 >= grid.ny:
            raise DegenerateActiveSet(f"column {i}: too few proliferating nodes")
        yy = y[i, j0 + 1:j0 + 4]
        a2, a1, _ = np.polyfit(yy - yy[0], sigma[i, j0 + 1:j0 + 4], 2)
        eta[i] = yy[0] - a1 / (2.0 * a2) if a2 > 0.0 else y[i, j0]
    return eta


# -- pressure --------------------------------------------------------------

@dataclass
class PressureSolution:
    p_field: np.ndarray
    top_flux: np.ndarray
    transmission_residual: float
    iterations: int = 0


def _transmission_jumps(p_field, eta, grid):
    """Mismatch of quadratic extrapolations of p and p_y onto the interface."""
    y = grid.physical_y()
    worst = 0.0
    for i in range(grid.nx):
        col = y[i]
        j = int(np.searchsorted(col, eta[i]))
        if j < 3 or j + 3 > grid.ny:
            continue
        below = np.polyfit(col[j - 3:j], p_field[i, j - 3:j], 2)
        above = np.polyfit(col[j:j + 3], p_field[i, j:j + 3], 2)
        jump_p = np.polyval(above, eta[i]) - np.polyval(below, eta[i])
        jump_dp = np.polyval(np.polyder(above), eta[i]) - np.polyval(np.polyder(below), eta[i])
        worst = max(worst, abs(jump_p), abs(jump_dp))
    return worst


def pressure_source(obstacle: ObstacleSolution, params: TumorParams, grid: StripGrid = None):
    """Right-hand side of Lap p: -mu (sigma - sigma_tilde) where proliferating, nu elsewhere.

    With a grid, the node whose cell is cut by the interface eta(x) gets the
    length-weighted mix of both sources, so the source follows sub-cell
    motion of the interface instead of jumping when a node changes side.
    """
    prolif = -params.mu * (obstacle.sigma_field - params.sigma_tilde)
    if grid is None:
        return np.where(obstacle.active_mask, prolif, params.nu)
    y = grid.physical_y()
    h = (grid.height * grid.hs)[:, None]
    theta = np.clip((obstacle.eta[:, None] - (y - 0.5 * h)) / h, 0.0, 1.0)
    return theta * params.nu + (1.0 - theta) * prolif


def solve_pressure(grid: StripGrid, params: TumorParams, fs: FlatStationary,
                   obstacle: ObstacleSolution, gamma: float, x0=None,
                   rtol=1e-11) -> PressureSolution:
    op = MappedOperator(grid)
    top = np.zeros((grid.nx, grid.ny), dtype=bool)
    top[:, -1] = True
    f = pressure_source(obstacle, params, grid)
    rhs = np.where(top, gamma * curvature(grid.rho)[:, None], -f)
    P, its = op.solve(top, 0.0, rhs, x0=x0, rtol=rtol)
    ps_top = (3.0 * P[:, -1] - 4.0 * P[:, -2] + P[:, -3]) / (2.0 * grid.hs)
    rx = grid.height_x
    flux = -rx * spectral_dx(P[:, -1]) + (1.0 + rx ** 2) * ps_top / grid.height
    resid = _transmission_jumps(P, obstacle.eta, grid)
    return PressureSolution(P, flux, resid, its)
