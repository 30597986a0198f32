"""Stratified Lamé solver: Fourier in the horizontal, block-tridiagonal in y3.

The vertical discretisation is a compact staggered (cell-midpoint) weak
form.  On each vertical cell the gradient of a nodal field is

    ∂_1, ∂_2 : spectral derivative of the two-node average,
    ∂_3      : (w[k+1] − w[k]) / h,

and stresses live on cells.  The discrete divergence is the negative
adjoint of this gradient under the lumped nodal (trapezoid) inner product,
so the interface traction balance ⟦σ e3⟧ = G appears as a flux difference
at the shared interface node, and summation by parts holds exactly.  For a
piecewise-constant coefficient problem each horizontal mode decouples into
a Hermitian block-tridiagonal system (3x3 blocks) over the interior nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grid as sg
from . import kinematics as km
from . import nonlinear as nl
from .errors import ConfigurationError, IllPosedError

SOLVER_RTOL = 1e-10


class StaggeredOperator:
    """Cell gradient, weak divergence and quadrature on the global vertical grid."""

    def __init__(self, grid: sg.SlabGrid):
        self.grid = grid
        self.h = grid.cell_widths
        self.cell_side = np.r_[np.zeros(grid.n3m, int), np.ones(grid.n3p, int)]
        self.node_weights = grid.node_weights
        self.sym1 = grid.derivative_symbols(1, 0)
        self.sym2 = grid.derivative_symbols(0, 1)
        self.n_modes = self.sym1.size

    # -- physical-space operators -------------------------------------------
    def _hderiv(self, a: np.ndarray, sym: np.ndarray) -> np.ndarray:
        g = self.grid
        return np.fft.irfftn(np.fft.rfftn(a, axes=(-2, -1)) * sym, s=(g.n2, g.n1), axes=(-2, -1))

    def cell_gradient(self, w: np.ndarray) -> np.ndarray:
        """(3, nz, n2, n1) nodal vector -> (3, 3, ncell, n2, n1) with [i, l] = ∂_l w_i."""
        avg = 0.5 * (w[:, 1:] + w[:, :-1])
        if self.grid.dim_mode == "2D":
            d2 = np.zeros_like(avg)
        else:
            d2 = self._hderiv(avg, self.sym2)
        d1 = self._hderiv(avg, self.sym1)
        d3 = (w[:, 1:] - w[:, :-1]) / self.h[:, None, None]
        return np.stack([d1, d2, d3], axis=1)

    def weighted_divergence(self, T: np.ndarray) -> np.ndarray:
        """−Gᵀ W T: nodal (3, nz, n2, n1), not yet divided by the node weights.

        Dirichlet rows (first and last node) are zeroed.
        """
        h = self.h[:, None, None]
        horiz = self._hderiv(T[:, 0], self.sym1)
        if self.grid.dim_mode != "2D":
            horiz = horiz + self._hderiv(T[:, 1], self.sym2)
        horiz = horiz * h
        flux = T[:, 2]
        out = np.zeros(T.shape[:1] + (T.shape[2] + 1,) + T.shape[3:])
        out[:, :-1] += 0.5 * horiz + flux
        out[:, 1:] += 0.5 * horiz - flux
        out[:, 0] = 0.0
        out[:, -1] = 0.0
        return out

    def weak_divergence(self, T: np.ndarray) -> np.ndarray:
        return self.weighted_divergence(T) / self.node_weights[:, None, None]

    def cell_integral(self, q: np.ndarray) -> float:
        return float(np.einsum("k...,k->...", q, self.h).sum()) * self.grid.cell_area

    def node_integral(self, q: np.ndarray, weights=None) -> float:
        w = self.node_weights if weights is None else weights
        return float(np.einsum("k...,k->...", q, w).sum()) * self.grid.cell_area

    def cell_values(self, per_side) -> np.ndarray:
        return np.asarray(per_side, dtype=float)[self.cell_side]

    def lumped(self, per_side_cell) -> np.ndarray:
        """Nodal weights Σ_cells h c / 2 for a cellwise coefficient c."""
        c = self.cell_values(per_side_cell) * self.h
        w = np.zeros(self.grid.nz)
        w[:-1] += 0.5 * c
        w[1:] += 0.5 * c
        return w

    # -- spectral transforms ---------------------------------------------------
    def to_modes(self, b: np.ndarray) -> np.ndarray:
        """Interior nodal (3, nz, n2, n1) -> (n_modes, nint, 3) complex."""
        bh = np.fft.rfftn(b[:, 1:-1], axes=(-2, -1))
        return bh.reshape(3, bh.shape[1], -1).transpose(2, 1, 0)

    def from_modes(self, x: np.ndarray) -> np.ndarray:
        g = self.grid
        nint = x.shape[1]
        xh = x.transpose(2, 1, 0).reshape(3, nint, g.n2, -1)
        out = np.zeros((3, g.nz, g.n2, g.n1))
        out[:, 1:-1] = np.fft.irfftn(xh, s=(g.n2, g.n1), axes=(-2, -1))
        return out

    def wavevectors(self) -> np.ndarray:
        g = self.grid
        k1, k2 = np.meshgrid(g.xi1, g.xi2)
        return np.stack([k1.ravel(), k2.ravel()], axis=1)

    # -- per-mode matrices -------------------------------------------------------
    def mode_blocks(self, a_sym, a_div, a_grad, mass):
        """Block-tridiagonal symbol of  mass·w − div σ(w)  (weak form, Dirichlet ends).

        ``a_sym``, ``a_div``, ``a_grad`` are per-cell coefficients of
        σ = a_sym 𝔻w + a_div div w I + a_grad ∇w; ``mass`` is per node.
        Returns (lower, diag, upper) with shapes (n_modes, nint-1|nint, 3, 3).
        """
        nz, ncell = self.grid.nz, self.h.size
        s1 = self.sym1.ravel()
        s2 = self.sym2.ravel() if self.grid.dim_mode != "2D" else np.zeros_like(s1)
        nm = s1.size
        # g[node-in-cell, mode, cell, l]
        g = np.zeros((2, nm, ncell, 3), complex)
        for t, sign in ((0, -1.0), (1, 1.0)):
            g[t, :, :, 0] = 0.5 * s1[:, None]
            g[t, :, :, 1] = 0.5 * s2[:, None]
            g[t, :, :, 2] = sign / self.h[None, :]
        a_sym = np.broadcast_to(a_sym, (ncell,))
        a_div = np.broadcast_to(a_div, (ncell,))
        a_grad = np.broadcast_to(a_grad, (ncell,))
        I3 = np.eye(3)
        # element matrices E[m, n]: (mode, cell, k, i)
        E = {}
        for m in (0, 1):
            gm = np.conj(g[m])
            for n in (0, 1):
                gn = g[n]
                dot = np.einsum("pcj,pcj->pc", gm, gn)
                E[m, n] = self.h[None, :, None, None] * (
                    (a_sym + a_grad)[None, :, None, None] * dot[..., None, None] * I3
                    + a_sym[None, :, None, None] * np.einsum("pci,pck->pcki", gm, gn)
                    + a_div[None, :, None, None] * np.einsum("pck,pci->pcki", gm, gn))
        diag = np.zeros((nm, nz, 3, 3), complex)
        upper = np.zeros((nm, nz - 1, 3, 3), complex)
        lower = np.zeros((nm, nz - 1, 3, 3), complex)
        diag[:, :-1] += E[0, 0]
        diag[:, 1:] += E[1, 1]
        upper += E[0, 1]  # row node c, column node c+1
        lower += E[1, 0]  # row node c+1, column node c
        diag += np.asarray(mass)[None, :, None, None] * I3
        return lower[:, 1:-1], diag[:, 1:-1], upper[:, 1:-1]


class BlockTridiagonal:
    """Batched block LU (block Thomas) for Hermitian block-tridiagonal systems."""

    def __init__(self, lower, diag, upper, wavevectors=None):
        self.lower, self.diag, self.upper = lower, diag, upper
        self.wavevectors = wavevectors
        self._factor()

    def _factor(self):
        nm, n = self.diag.shape[:2]
        self.inv = np.empty_like(self.diag)
        self.L = np.empty_like(self.lower)
        D = self.diag[:, 0]
        for k in range(n):
            if k > 0:
                self.L[:, k - 1] = self.lower[:, k - 1] @ self.inv[:, k - 1]
                D = self.diag[:, k] - self.L[:, k - 1] @ self.upper[:, k - 1]
            self._check_pivot(D, k)
            self.inv[:, k] = np.linalg.inv(D)

    def _check_pivot(self, D, k):
        scale = np.abs(D).max(axis=(1, 2))
        det = np.abs(np.linalg.det(D))
        bad = ~np.isfinite(det) | (det <= 1e-13 * np.maximum(scale, 1e-300) ** 3)
        if np.any(bad):
            m = int(np.flatnonzero(bad)[0])
            wv = self.wavevectors[m] if self.wavevectors is not None else (np.nan, np.nan)
            raise IllPosedError(wv, f"(pivot block {k})")

    def solve(self, b: np.ndarray) -> np.ndarray:
        nm, n = b.shape[:2]
        y = np.empty_like(b)
        y[:, 0] = b[:, 0]
        for k in range(1, n):
            y[:, k] = b[:, k] - np.einsum("pij,pj->pi", self.L[:, k - 1], y[:, k - 1])
        x = np.empty_like(b)
        x[:, -1] = np.einsum("pij,pj->pi", self.inv[:, -1], y[:, -1])
        for k in range(n - 2, -1, -1):
            r = y[:, k] - np.einsum("pij,pj->pi", self.upper[:, k], x[:, k + 1])
            x[:, k] = np.einsum("pij,pj->pi", self.inv[:, k], r)
        return x

    def matvec(self, x: np.ndarray) -> np.ndarray:
        out = np.einsum("pkij,pkj->pki", self.diag, x)
        out[:, 1:] += np.einsum("pkij,pkj->pki", self.lower, x[:, :-1])
        out[:, :-1] += np.einsum("pkij,pkj->pki", self.upper, x[:, 1:])
        return out

    def residuals(self, x, b) -> np.ndarray:
        """Relative residual per mode (absolute where the right side vanishes)."""
        r = np.linalg.norm((self.matvec(x) - b).reshape(b.shape[0], -1), axis=1)
        nb = np.linalg.norm(b.reshape(b.shape[0], -1), axis=1)
        return np.where(nb > 0, r / np.where(nb > 0, nb, 1.0), r)

    def dense(self, mode: int) -> np.ndarray:
        n = self.diag.shape[1]
        M = np.zeros((3 * n, 3 * n), complex)
        for k in range(n):
            M[3 * k:3 * k + 3, 3 * k:3 * k + 3] = self.diag[mode, k]
            if k + 1 < n:
                M[3 * k:3 * k + 3, 3 * k + 3:3 * k + 6] = self.upper[mode, k]
                M[3 * k + 3:3 * k + 6, 3 * k:3 * k + 3] = self.lower[mode, k]
        return M


@dataclass(frozen=True)
class ModeSystem:
    wavevector: tuple
    matrix: np.ndarray
    rhs: np.ndarray


# ---------------------------------------------------------------------------
# The stratified Lamé problem


@dataclass
class LameProblem:
    """div σ(w) − c0 w = F in Ω±,  ⟦w⟧ = 0,  ⟦σ(w) e3⟧ = G on Σ,  w = 0 on Σ±.

    σ(w) = μ𝔻w + (λ + extra_grad_div) div w I + extra_laplacian ∇w, with
    every coefficient given as a (lower, upper) pair.
    """

    grid: sg.SlabGrid
    mu: tuple
    lam: tuple
    F: sg.Field | None = None
    G: np.ndarray | None = None
    extra_zero_order: tuple = (0.0, 0.0)
    extra_grad_div: tuple = (0.0, 0.0)
    extra_laplacian: tuple = (0.0, 0.0)

    def __post_init__(self):
        for m, l, gd, lap, c0 in zip(self.mu, self.lam, self.extra_grad_div,
                                     self.extra_laplacian, self.extra_zero_order):
            if m <= 0 or m + l <= 0:
                raise ConfigurationError(f"ill-posed Lamé coefficients mu={m}, lambda={l}")
            if gd < 0 or lap < 0 or c0 < 0:
                raise ConfigurationError("extra Lamé coefficients must be non-negative")

    @classmethod
    def for_fluids(cls, grid, params: km.MaterialParams, **kw) -> "LameProblem":
        return cls(grid, (params.lower.mu, params.upper.mu), (params.lower.lam, params.upper.lam), **kw)


def lumped_load(F: sg.Field, op: StaggeredOperator) -> np.ndarray:
    """Nodal H·F using one-sided traces at the interface (global layout)."""
    g = op.grid
    k = g.interface_index
    out = np.zeros(F.rank_shape + (g.nz, g.n2, g.n1))
    out[..., :k, :, :] = F.minus[..., :-1, :, :]
    out[..., k + 1:, :, :] = F.plus[..., 1:, :, :]
    w = op.node_weights[:, None, None]
    out = out * w
    out[..., k, :, :] = 0.5 * (g.dz_minus * F.trace_minus() + g.dz_plus * F.trace_plus())
    return out


class LameSolver:
    """Factorised per-mode systems for one coefficient set; reusable across right sides."""

    def __init__(self, problem: LameProblem):
        self.problem = problem
        self.op = op = StaggeredOperator(problem.grid)
        p = problem
        mu = op.cell_values(p.mu)
        lam = op.cell_values(p.lam) + op.cell_values(p.extra_grad_div)
        lap = op.cell_values(p.extra_laplacian)
        mass = op.lumped(p.extra_zero_order)
        self.system = BlockTridiagonal(*op.mode_blocks(mu, lam, lap, mass), wavevectors=op.wavevectors())

    def rhs(self, F: sg.Field | None, G: np.ndarray | None) -> np.ndarray:
        g = self.problem.grid
        b = np.zeros((3, g.nz, g.n2, g.n1))
        if F is not None:
            b -= lumped_load(F, self.op)
        if G is not None:
            b[:, g.interface_index] -= G
        return b

    def solve(self, F=None, G=None, return_residuals=False):
        b = self.op.to_modes(self.rhs(F, G))
        x = self.system.solve(b)
        w = sg.Field.from_global(self.problem.grid, self.op.from_modes(x), continuous=True, dirichlet=True)
        if return_residuals:
            return w, self.system.residuals(x, b)
        return w

    def solve_weighted(self, b: np.ndarray) -> np.ndarray:
        """Solve K w = b for a nodal right side already in weighted (weak) form."""
        return self.op.from_modes(self.system.solve(self.op.to_modes(b)))

    def mode_system(self, mode: int, F=None, G=None) -> ModeSystem:
        b = self.op.to_modes(self.rhs(F, G))
        wv = tuple(self.op.wavevectors()[mode])
        return ModeSystem(wv, self.system.dense(mode), b[mode].ravel())


def solve(problem: LameProblem, return_residuals: bool = False):
    return LameSolver(problem).solve(problem.F, problem.G, return_residuals)


def initial_correction(eta0: sg.Field, u0: sg.Field, params: km.MaterialParams,
                       return_residuals: bool = False):
    """u^r solving the homogeneous Lamé problem with jump −⟦N^P − N^μ − N^λ⟧ e3 at t = 0."""
    state = km.deformation(eta0)
    stress = nl.assemble_stress(state, u0, params)
    G = -nl.interface_rhs(stress)
    problem = LameProblem.for_fluids(eta0.grid, params, G=G)
    return solve(problem, return_residuals)


def traction_jump(w: sg.Field, problem: LameProblem) -> np.ndarray:
    """Discrete ⟦σ(w) e3⟧ read off the interface row of the weak form.

    Equals flux₊ − flux₋ plus the half-cell volume terms, i.e. the quantity
    the interface row constrains to G.
    """
    op = StaggeredOperator(problem.grid)
    g = problem.grid
    wg = w.to_global()
    Gc = op.cell_gradient(wg)
    mu = op.cell_values(problem.mu)[None, None, :, None, None]
    lam = (op.cell_values(problem.lam) + op.cell_values(problem.extra_grad_div))[None, None, :, None, None]
    lap = op.cell_values(problem.extra_laplacian)[None, None, :, None, None]
    I = km.eye_like(Gc)
    sigma = mu * (Gc + km.transpose(Gc)) + lam * km.trace(Gc)[None, None] * I + lap * Gc
    k = g.interface_index
    div_w = op.weighted_divergence(sigma)[:, k]
    mass = op.lumped(problem.extra_zero_order)[k]
    load = lumped_load(problem.F, op)[:, k] if problem.F is not None else 0.0
    # interface row: div_w − mass·w = load + G
    return div_w - mass * wg[:, k] - load


def compatibility_defect(u_r: sg.Field, G: np.ndarray, params: km.MaterialParams) -> float:
    """max |⟦σ(u^r) e3⟧ − G| on Σ using the discrete interface row."""
    problem = LameProblem.for_fluids(u_r.grid, params, G=G)
    return float(np.max(np.abs(traction_jump(u_r, problem) - G)))


def traction_mismatch(eta: sg.Field, u: sg.Field, params: km.MaterialParams) -> np.ndarray:
    """⟦T e3⟧ on Σ for the full stress T = linear stress + κ∇η + N^μ + N^λ − N^P (nodal stencils)."""
    state = km.deformation(eta)
    grad_u = sg.gradient(u)
    sides = {}
    for side in ("minus", "plus"):
        Ge, Gu = getattr(state.grad_eta, side), getattr(grad_u, side)
        fluid = params.fluid(side)
        kin = tuple(getattr(f, side) for f in (state.J, state.Jinv, state.A, state.B,
                                                 state.Btilde_L, state.Btilde_N))
        T = nl.linear_stress(Ge, Gu, fluid, params.kappa) + nl.stress_terms(Ge, Gu, fluid, kin=kin).forcing
        sides[side] = T
    return sg.interface_jump(sg.Field(eta.grid, sides["minus"], sides["plus"]))[:, 2]


def project_compatible(eta0: sg.Field, u0: sg.Field, params: km.MaterialParams,
                       tol: float = 1e-12, max_iter: int = 8):
    """Add a homogeneous Lamé correction to u0 so that ⟦T(η⁰, u⁰) e3⟧ = 0.

    The correction enters T linearly through μ𝔻u + λ div u I, so one solve
    suffices when η⁰ = 0; otherwise a short fixed-point loop is used.
    Returns (u, max mismatch after projection).
    """
    solver = LameSolver(LameProblem.for_fluids(eta0.grid, params))
    u = u0
    jump = traction_mismatch(eta0, u, params)
    for _ in range(max_iter):
        if np.max(np.abs(jump)) <= tol:
            break
        u = u + solver.solve(G=-jump)
        jump = traction_mismatch(eta0, u, params)
    return u, float(np.max(np.abs(jump)))
