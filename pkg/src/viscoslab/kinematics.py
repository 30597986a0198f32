"""Deformation-gradient algebra for the Lagrangian formulation.

Tensors are arrays whose two leading axes are the matrix indices, with any
trailing node shape.  The displacement gradient follows
``G[i, l] = ∂_l η_i`` and the deformation gradient is ``F = I + G``.
Everything here is nodewise; the grid-aware entry points at the bottom wrap
the same kernels.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec

from . import grid as sg
from .errors import (ConfigurationError, DegeneracyError, DensityRangeError,
                     DensityRangeWarning, JacobianBandWarning)

log = logging.getLogger(__name__)

J_FLOOR = 1e-6
J_BAND = (0.5, 1.5)


def eye_like(G: np.ndarray) -> np.ndarray:
    I = np.zeros_like(G)
    for i in range(3):
        I[i, i] = 1.0
    return I


def matmul(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.einsum("ik...,kj...->ij...", X, Y)


def transpose(X: np.ndarray) -> np.ndarray:
    return np.swapaxes(X, 0, 1)


def trace(X: np.ndarray) -> np.ndarray:
    return X[0, 0] + X[1, 1] + X[2, 2]


def det3(F: np.ndarray) -> np.ndarray:
    return (F[0, 0] * (F[1, 1] * F[2, 2] - F[1, 2] * F[2, 1])
            - F[0, 1] * (F[1, 0] * F[2, 2] - F[1, 2] * F[2, 0])
            + F[0, 2] * (F[1, 0] * F[2, 1] - F[1, 1] * F[2, 0]))


def cofactor(F: np.ndarray) -> np.ndarray:
    """Cofactor matrix adj(F)^T = det(F) F^{-T}; columns are ∂_2ζ×∂_3ζ, ∂_3ζ×∂_1ζ, ∂_1ζ×∂_2ζ."""
    c0, c1, c2 = F[:, 0], F[:, 1], F[:, 2]
    cols = [np.cross(c1, c2, axis=0), np.cross(c2, c0, axis=0), np.cross(c0, c1, axis=0)]
    return np.stack(cols, axis=1)


def cofactor_split(G: np.ndarray):
    """Linear and quadratic parts of cof(I + G) − I, entry by entry."""
    d = lambda a, b: G[b - 1, a - 1]  # ∂_a η_b
    d11, d12, d13 = d(1, 1), d(1, 2), d(1, 3)
    d21, d22, d23 = d(2, 1), d(2, 2), d(2, 3)
    d31, d32, d33 = d(3, 1), d(3, 2), d(3, 3)
    BL = np.array([
        [d22 + d33, -d12, -d13],
        [-d21, d11 + d33, -d23],
        [-d31, -d32, d11 + d22],
    ])
    BN = np.array([
        [d22 * d33 - d23 * d32, d13 * d32 - d12 * d33, d12 * d23 - d13 * d22],
        [d23 * d31 - d21 * d33, d11 * d33 - d13 * d31, d13 * d21 - d11 * d23],
        [d21 * d32 - d22 * d31, d12 * d31 - d11 * d32, d11 * d22 - d12 * d21],
    ])
    return BL, BN


def determinant_expansion(G: np.ndarray):
    """det(I + G) = 1 + div η + r2 + r3 with r2 quadratic and r3 cubic in G."""
    d = lambda a, b: G[b - 1, a - 1]
    d11, d12, d13 = d(1, 1), d(1, 2), d(1, 3)
    d21, d22, d23 = d(2, 1), d(2, 2), d(2, 3)
    d31, d32, d33 = d(3, 1), d(3, 2), d(3, 3)
    div = d11 + d22 + d33
    r2 = d11 * d22 + d11 * d33 + d22 * d33 - d21 * d12 - d23 * d32 - d31 * d13
    r3 = (d11 * (d22 * d33 - d23 * d32)
          + d21 * (d13 * d32 - d12 * d33)
          + d31 * (d12 * d23 - d13 * d22))
    return div, r2, r3


# ---------------------------------------------------------------------------
# Material description


@dataclass(frozen=True)
class PressureLaw:
    """P(ρ) = a ρ^γ."""

    a: float = 1.0
    gamma: float = 2.0
    kind: str = "power-law"

    def __post_init__(self):
        if self.a <= 0 or self.gamma < 1:
            raise ConfigurationError(f"power law needs a > 0 and gamma >= 1, got {self}")

    def P(self, rho):
        return self.a * rho ** self.gamma

    def dP(self, rho):
        return self.a * self.gamma * rho ** (self.gamma - 1)

    def d2P(self, rho):
        g = self.gamma
        return self.a * g * (g - 1) * rho ** (g - 2)

    def potential(self, lo, hi):
        """∫_lo^hi P(z)/z^2 dz in closed form."""
        g = self.gamma
        if g == 1:
            return self.a * np.log(hi / lo)
        return self.a * (hi ** (g - 1) - lo ** (g - 1)) / (g - 1)


@dataclass(frozen=True)
class Fluid:
    rho_bar: float
    mu: float
    sigma: float = 0.0
    law: PressureLaw = field(default_factory=PressureLaw)

    def __post_init__(self):
        if self.rho_bar <= 0:
            raise ConfigurationError("rho_bar must be positive")
        if self.mu <= 0:
            raise ConfigurationError("shear viscosity mu must be positive")
        if self.sigma < 0:
            raise ConfigurationError("bulk viscosity must be non-negative")

    @property
    def lam(self) -> float:
        return self.sigma - 2.0 * self.mu / 3.0

    @property
    def p_bar(self) -> float:
        return self.law.P(self.rho_bar)

    @property
    def stiffness(self) -> float:
        """P'(ρ̄) ρ̄, the linearised pressure modulus."""
        return self.law.dP(self.rho_bar) * self.rho_bar


@dataclass(frozen=True)
class MaterialParams:
    lower: Fluid
    upper: Fluid
    kappa: float

    def __post_init__(self):
        if self.kappa < 0:
            raise ConfigurationError("kappa must be non-negative")
        p_lo, p_up = self.lower.p_bar, self.upper.p_bar
        if abs(p_up - p_lo) > 1e-12 * max(1.0, abs(p_lo)):
            raise ConfigurationError(
                f"rest state violates the pressure jump condition: P+(rho+)={p_up!r}, P-(rho-)={p_lo!r}")

    def fluid(self, side: str) -> Fluid:
        return self.lower if side == "minus" else self.upper

    def with_kappa(self, kappa: float) -> "MaterialParams":
        return MaterialParams(self.lower, self.upper, float(kappa))

    @classmethod
    def default(cls, kappa: float = 100.0) -> "MaterialParams":
        # a+ rho+^2 = a- rho-^2 = 4
        lower = Fluid(rho_bar=2.0, mu=1.0, sigma=0.5, law=PressureLaw(1.0, 2.0))
        upper = Fluid(rho_bar=1.0, mu=0.5, sigma=0.25, law=PressureLaw(4.0, 2.0))
        return cls(lower, upper, kappa)


# ---------------------------------------------------------------------------
# Pressure Taylor splitting


def check_density(rho, rho_bar, where=""):
    r = np.asarray(rho) / rho_bar
    if r.size == 0:
        return
    lo, hi = float(np.min(r)), float(np.max(r))
    if lo <= 1 / 8 or hi >= 8:
        raise DensityRangeError(f"density ratio range [{lo:.3g}, {hi:.3g}] outside (1/8, 8){where}")
    if lo <= 1 / 4 or hi >= 4:
        warnings.warn(f"density ratio range [{lo:.3g}, {hi:.3g}] outside (1/4, 4){where}",
                      DensityRangeWarning, stacklevel=3)


def taylor_remainder(s, fluid: Fluid, method: str = "auto"):
    """∫_0^s (s − z) P''(ρ̄ + z) dz, evaluated elementwise for the array ``s``."""
    s = np.asarray(s, dtype=float)
    law = fluid.law
    if method == "auto" and law.gamma in (1, 2):
        method = "closed"
    if method == "closed":
        if law.gamma == 1:
            return np.zeros_like(s)
        if law.gamma == 2:
            return law.a * s * s
        raise ValueError("closed form only available for gamma in {1, 2}")
    flat = s.ravel()
    # substitute z = s t so the domain is fixed: s^2 ∫_0^1 (1 − t) P''(ρ̄ + s t) dt
    val, _ = quad_vec(lambda t: (1 - t) * law.d2P(fluid.rho_bar + flat * t), 0.0, 1.0,
                      epsabs=1e-15, epsrel=1e-13)
    return (flat * flat * val).reshape(s.shape)


def pressure_split(Jinv, div_eta, fluid: Fluid, method: str = "auto"):
    """Return (lin, N3, R) with lin + N3 = P(ρ̄ J^{-1})."""
    Jinv = np.asarray(Jinv, dtype=float)
    check_density(fluid.rho_bar * Jinv, fluid.rho_bar)
    rb = fluid.rho_bar
    lin = fluid.p_bar - fluid.stiffness * div_eta
    R = taylor_remainder(rb * (Jinv - 1.0), fluid, method)
    N3 = fluid.stiffness * (Jinv - 1.0 + div_eta) + R
    return lin, N3, R


# ---------------------------------------------------------------------------
# Grid-level kinematic state


@dataclass(frozen=True)
class KinematicState:
    eta: sg.Field
    grad_eta: sg.Field
    J: sg.Field
    Jinv: sg.Field
    A: sg.Field
    B: sg.Field
    Btilde_L: sg.Field
    Btilde_N: sg.Field

    @property
    def grid(self):
        return self.J.grid


def kinematics_from_gradient(G: np.ndarray, j_floor: float = J_FLOOR, label=""):
    """Nodewise (J, Jinv, A, B, BL, BN) from a raw displacement gradient."""
    F = eye_like(G) + G
    J = det3(F)
    if J.size and np.min(J) <= j_floor:
        loc = np.unravel_index(np.argmin(J), J.shape)
        raise DegeneracyError(J[loc], loc)
    B = cofactor(F)
    Jinv = 1.0 / J
    A = B * Jinv
    BL, BN = cofactor_split(G)
    return J, Jinv, A, B, BL, BN


def _monitor_band(J, band, where):
    lo, hi = float(np.min(J)), float(np.max(J))
    if lo < band[0] or hi > band[1]:
        warnings.warn(f"J range [{lo:.4g}, {hi:.4g}] left the band {band}{where}",
                      JacobianBandWarning, stacklevel=3)


def deformation(eta: sg.Field, j_floor: float = J_FLOOR, band=J_BAND) -> KinematicState:
    G = sg.gradient(eta)
    parts = {}
    for side, arr in G.sides():
        try:
            parts[side] = kinematics_from_gradient(arr, j_floor)
        except DegeneracyError as exc:
            raise DegeneracyError(exc.value, (0 if side == "minus" else 1,) + exc.location) from None
        _monitor_band(parts[side][0], band, f" ({side})")
    g = eta.grid
    fields = [sg.Field(g, parts["minus"][k], parts["plus"][k]) for k in range(6)]
    J, Jinv, A, B, BL, BN = fields
    return KinematicState(eta, G, J, Jinv, A, B, BL, BN)


def inverse_defect(G: np.ndarray, A: np.ndarray) -> np.ndarray:
    """max_ij |(A^T (I+G)) − I| nodewise, i.e. the failure of A_ik ∂_k ζ_j = δ_ij."""
    F = eye_like(G) + G
    return np.max(np.abs(matmul(transpose(A), F) - eye_like(G)), axis=(0, 1))


def piola_residual(state: KinematicState) -> float:
    """max |∂_l B_kl| over components and nodes."""
    return sg.divergence(state.B).max_abs()


def normal_cofactor_jump(eta: sg.Field) -> np.ndarray:
    """⟦B e3⟧ on Σ with B e3 = ∂_1ζ × ∂_2ζ built from horizontal derivatives only."""
    d1 = sg.apply_derivative(eta, (1, 0), 0)
    d2 = sg.apply_derivative(eta, (0, 1), 0)
    traces = []
    for pick in (sg.Field.trace_minus, sg.Field.trace_plus):
        t1 = pick(d1).copy()
        t2 = pick(d2).copy()
        t1[0] += 1.0
        t2[1] += 1.0
        traces.append(np.cross(t1, t2, axis=0))
    return traces[1] - traces[0]


def reconstruct(state: KinematicState, params: MaterialParams):
    """Density ϱ = ρ̄/J, deformation tensor U = ∇η + I and interface height d = η3|_Σ."""
    g = state.grid
    varrho = sg.Field(g, params.lower.rho_bar * state.Jinv.minus, params.upper.rho_bar * state.Jinv.plus)
    U = state.grad_eta.map(lambda G: G + eye_like(G))
    return varrho, U, interface_height(state.eta)


def interface_height(eta: sg.Field) -> np.ndarray:
    return 0.5 * (eta.trace_minus()[2] + eta.trace_plus()[2])


def kappa_jump_term(eta: sg.Field, kappa_minus: float, kappa_plus: float) -> np.ndarray:
    """⟦κ((∇η + I) e3 − J A e3)⟧ on Σ; reduces to κ⟦∂_3 η⟧ when κ₊ = κ₋.

    Diagnostic only: the evolution assumes a uniform elasticity coefficient.
    """
    G = sg.gradient(eta)
    out = []
    for side, kap in (("minus", kappa_minus), ("plus", kappa_plus)):
        Gs = G.trace_minus() if side == "minus" else G.trace_plus()
        F = eye_like(Gs) + Gs
        out.append(kap * (F[:, 2] - cofactor(F)[:, 2]))
    return out[1] - out[0]
