"""Nonlinear stress corrections of the inhomogeneous Lagrangian system.

The kernels take raw nodewise tensors (leading 3x3 axes) for one fluid, so
they serve the nodal diagnostics, the affine oracle tests and the cell-based
time stepper alike.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid as sg
from . import kinematics as km


def sym_grad(Gu: np.ndarray) -> np.ndarray:
    """𝔻u = ∇u + ∇u^T."""
    return Gu + km.transpose(Gu)


def tilde_terms(Gu: np.ndarray, Btilde: np.ndarray, Jinv: np.ndarray):
    """Ñ¹ (tensor) and Ñ² (scalar) with 𝔻_A u = 𝔻u + Ñ¹ and div_A u = div u + Ñ²."""
    GB = km.matmul(Gu, km.transpose(Btilde))  # [i, j] = B̃_jl ∂_l u_i
    N1 = Jinv * (GB + km.transpose(GB)) + (Jinv - 1.0) * sym_grad(Gu)
    N2 = Jinv * np.einsum("ij...,ij...->...", Btilde, Gu) + (Jinv - 1.0) * km.trace(Gu)
    return N1, N2


def deformed_gradients(Geta: np.ndarray, Gu: np.ndarray):
    """Direct 𝔻_A u and div_A u with A = (I + ∇η)^{-T}; used as an oracle."""
    F = km.eye_like(Geta) + Geta
    A = km.cofactor(F) / km.det3(F)
    GA = km.matmul(Gu, km.transpose(A))  # (∇_A u)[i, k] = A_kj ∂_j u_i
    return GA + km.transpose(GA), km.trace(GA)


@dataclass(frozen=True)
class NonlinearStress:
    N_mu: object
    N_lambda: object
    N_P: object
    tildeN1: object
    tildeN2: object
    tildeN3: object

    @property
    def forcing(self):
        """N^μ + N^λ − N^P, the stress whose divergence drives the momentum equation."""
        return self.N_mu + self.N_lambda - self.N_P


def stress_terms(Geta: np.ndarray, Gu: np.ndarray, fluid: km.Fluid, method: str = "auto",
                 kin=None) -> NonlinearStress:
    """Nodewise N^μ, N^λ, N^P, Ñ¹, Ñ², Ñ³ for one fluid."""
    if kin is None:
        kin = km.kinematics_from_gradient(Geta)
    J, Jinv, A, B, BL, BN = kin
    Bt = BL + BN
    N1, N2 = tilde_terms(Gu, Bt, Jinv)
    div_eta = km.trace(Geta)
    _, N3, _ = km.pressure_split(Jinv, div_eta, fluid, method)
    Du = sym_grad(Gu)
    div_u = km.trace(Gu)
    N_P = N3 * B - fluid.stiffness * div_eta * Bt
    N_mu = fluid.mu * (km.matmul(Du, Bt) + km.matmul(N1, B))
    N_lam = fluid.lam * (div_u * Bt + N2 * B)
    return NonlinearStress(N_mu, N_lam, N_P, N1, N2, N3)


def linear_stress(Geta: np.ndarray, Gu: np.ndarray, fluid: km.Fluid, kappa: float = 0.0) -> np.ndarray:
    """P'(ρ̄)ρ̄ div η I + μ𝔻u + λ div u I + κ∇η."""
    I = km.eye_like(Geta)
    return ((fluid.stiffness * km.trace(Geta) + fluid.lam * km.trace(Gu)) * I
            + fluid.mu * sym_grad(Gu) + kappa * Geta)


def reconstructed_piola(Geta, Gu, fluid, method="auto"):
    """P(ρ̄)B − (P'ρ̄ div η I + μ𝔻u + λ div u I) + N^P − N^μ − N^λ."""
    kin = km.kinematics_from_gradient(Geta)
    nl = stress_terms(Geta, Gu, fluid, method, kin=kin)
    B = kin[3]
    return fluid.p_bar * B - linear_stress(Geta, Gu, fluid) + nl.N_P - nl.N_mu - nl.N_lambda


def direct_piola(Geta, Gu, fluid):
    """(P(ρ̄/J) I − μ𝔻_A u − λ div_A u I) J A evaluated without any splitting."""
    F = km.eye_like(Geta) + Geta
    J = km.det3(F)
    B = km.cofactor(F)
    DA, divA = deformed_gradients(Geta, Gu)
    S = (fluid.law.P(fluid.rho_bar / J) - fluid.lam * divA) * km.eye_like(Geta) - fluid.mu * DA
    return km.matmul(S, B)


def nonlinear_flux(Geta, Gu, fluid, method="auto", kin=None):
    """Stress added to the linear flux in the discrete momentum balance.

    N^μ + N^λ − N^P − P(ρ̄) B̃.  The last term has zero divergence and zero
    interface jump in the continuum; keeping it makes the discrete momentum
    balance consistent with the mechanical energy without relying on a
    discrete Piola identity.
    """
    if kin is None:
        kin = km.kinematics_from_gradient(Geta)
    nl = stress_terms(Geta, Gu, fluid, method, kin=kin)
    Bt = kin[4] + kin[5]
    return nl.forcing - fluid.p_bar * Bt


def dissipation_density(Geta, Gu, fluid, kin=None):
    """J (μ/2 |𝔻_A u|^2 + λ (div_A u)^2)."""
    if kin is None:
        kin = km.kinematics_from_gradient(Geta)
    J, Jinv, A, B = kin[:4]
    GA = km.matmul(Gu, km.transpose(A))
    DA = GA + km.transpose(GA)
    divA = km.trace(GA)
    return J * (0.5 * fluid.mu * np.einsum("ij...,ij...->...", DA, DA) + fluid.lam * divA**2)


# ---------------------------------------------------------------------------
# Grid-level assembly


def _per_side(state: km.KinematicState, grad_u: sg.Field, params: km.MaterialParams, method):
    out = {}
    for side in ("minus", "plus"):
        Geta = getattr(state.grad_eta, side)
        kin = tuple(getattr(f, side) for f in (state.J, state.Jinv, state.A, state.B,
                                                 state.Btilde_L, state.Btilde_N))
        out[side] = stress_terms(Geta, getattr(grad_u, side), params.fluid(side), method, kin=kin)
    return out


def assemble_stress(state: km.KinematicState, u: sg.Field, params: km.MaterialParams,
                    method: str = "auto") -> NonlinearStress:
    g = state.grid
    parts = _per_side(state, sg.gradient(u), params, method)
    fields = {}
    for name in ("N_mu", "N_lambda", "N_P", "tildeN1", "tildeN2", "tildeN3"):
        fields[name] = sg.Field(g, getattr(parts["minus"], name), getattr(parts["plus"], name))
    return NonlinearStress(**fields)


def grid_tilde_terms(grad_u: sg.Field, state: km.KinematicState):
    g = state.grid
    res = {}
    for side in ("minus", "plus"):
        Bt = getattr(state.Btilde_L, side) + getattr(state.Btilde_N, side)
        res[side] = tilde_terms(getattr(grad_u, side), Bt, getattr(state.Jinv, side))
    return (sg.Field(g, res["minus"][0], res["plus"][0]),
            sg.Field(g, res["minus"][1], res["plus"][1]))


def volume_rhs(nl: NonlinearStress) -> sg.Field:
    """Row-wise divergence of N^μ + N^λ − N^P with the nodal stencils."""
    return sg.divergence(nl.forcing)


def interface_rhs(nl: NonlinearStress) -> np.ndarray:
    """⟦N^P − N^μ − N^λ⟧ e3 on Σ, shape (3, n2, n1)."""
    T = nl.N_P - nl.N_mu - nl.N_lambda
    return sg.interface_jump(T)[:, 2]
