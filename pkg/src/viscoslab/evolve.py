"""θ-scheme time integration of the two-fluid Lagrangian system.

Spatial discretisation: the staggered weak form of :mod:`viscoslab.lame`.
Displacement and velocity live on nodes; deformation gradients, stresses
and all energy densities live on vertical cells.  Because the discrete
divergence is the exact negative adjoint of the cell gradient, the
semi-discrete system satisfies

    d/dt (kinetic + potential + elastic) = −dissipation

with no spatial defect, and the linear part of the scheme (Crank-Nicolson by
default) reproduces it exactly.  Nonlinear stresses are lagged explicitly.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np

from . import grid as sg
from . import kinematics as km
from . import lame
from . import nonlinear as nl
from .errors import ConfigurationError, DegeneracyError, DivergenceError, JacobianBandWarning

DIAGNOSTIC_COLUMNS = ("t", "E", "D", "kinetic", "potential", "elastic", "dissipation",
                      "residual", "minJ", "max_interface_jump")


def default_dt(kappa: float) -> float:
    return min(0.1, 0.5 / math.sqrt(kappa)) if kappa > 0 else 0.1


@dataclass(frozen=True)
class SchemeConfig:
    dt: float
    theta: float = 0.5
    T_end: float = 1.0
    nonlinear_mode: str = "full"
    lag: str = "ab2"
    j_floor: float = km.J_FLOOR
    norm_ceiling: float = 1e6
    quadrature: str = "auto"

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not 0.5 <= self.theta <= 1.0:
            raise ConfigurationError("theta must lie in [1/2, 1]")
        if self.nonlinear_mode not in ("full", "linearized"):
            raise ConfigurationError(f"unknown nonlinear_mode {self.nonlinear_mode!r}")
        if self.lag not in ("ab2", "explicit"):
            raise ConfigurationError(f"unknown lag {self.lag!r}")
        if self.T_end < 0:
            raise ConfigurationError("T_end must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(round(self.T_end / self.dt))

    @property
    def blowup_thresholds(self):
        return self.j_floor, self.norm_ceiling

    def linearized(self) -> "SchemeConfig":
        return replace(self, nonlinear_mode="linearized")


# ---------------------------------------------------------------------------
# Cellwise physics


class CellModel:
    """Per-cell coefficients and stress/energy kernels for one grid and material set."""

    def __init__(self, grid: sg.SlabGrid, params: km.MaterialParams):
        self.grid, self.params = grid, params
        self.op = lame.StaggeredOperator(grid)
        fl = (params.lower, params.upper)
        self.slices = (slice(0, grid.n3m), slice(grid.n3m, grid.n3m + grid.n3p))
        cell = lambda vals: self.op.cell_values(vals)[None, None, :, None, None]  # noqa: E731
        self.mu = cell([f.mu for f in fl])
        self.lam = cell([f.lam for f in fl])
        self.stiff = cell([f.stiffness for f in fl])
        self.mass = self.op.lumped([f.rho_bar for f in fl])

    def gradients(self, eta: np.ndarray, u: np.ndarray):
        return self.op.cell_gradient(eta), self.op.cell_gradient(u)

    def linear_stress(self, Ge: np.ndarray, Gu: np.ndarray) -> np.ndarray:
        I = km.eye_like(Ge)
        return ((self.stiff * km.trace(Ge)[None, None] + self.lam * km.trace(Gu)[None, None]) * I
                + self.mu * (Gu + km.transpose(Gu)) + self.params.kappa * Ge)

    def cell_kinematics(self, Ge: np.ndarray, j_floor: float = km.J_FLOOR):
        out = []
        for s, sl in enumerate(self.slices):
            try:
                out.append(km.kinematics_from_gradient(Ge[:, :, sl], j_floor))
            except DegeneracyError as exc:
                loc = (s, exc.location[0] + sl.start) + exc.location[1:]
                raise DegeneracyError(exc.value, loc) from None
        return out

    def nonlinear_flux(self, Ge, Gu, kin, method="auto") -> np.ndarray:
        out = np.empty_like(Ge)
        for s, sl in enumerate(self.slices):
            fluid = self.params.fluid(("minus", "plus")[s])
            out[:, :, sl] = nl.nonlinear_flux(Ge[:, :, sl], Gu[:, :, sl], fluid, method, kin=kin[s])
        return out

    # -- energies (each already multiplied by the cell area) ---------------
    def kinetic(self, u: np.ndarray) -> float:
        return 0.5 * self.op.node_integral(np.sum(u * u, axis=0), self.mass)

    def elastic(self, Ge: np.ndarray) -> float:
        return 0.5 * self.params.kappa * self.op.cell_integral(np.sum(Ge * Ge, axis=(0, 1)))

    def potential(self, Ge: np.ndarray, linear: bool = False) -> float:
        """Pressure potential in excess of the rest state.

        Uses ρ̄∫_{ρ̄}^{ρ̄/J} P(z)/z² dz + P(ρ̄) div η, whose cell sum equals the
        plain excess because the discrete ∫ div η vanishes identically.
        """
        div, r2, r3 = km.determinant_expansion(Ge)
        dens = np.empty_like(div)
        for s, sl in enumerate(self.slices):
            fluid = self.params.fluid(("minus", "plus")[s])
            if linear:
                dens[sl] = 0.5 * fluid.stiffness * div[sl] ** 2
            else:
                jm1 = div[sl] + r2[sl] + r3[sl]
                dens[sl] = potential_excess(jm1, fluid) - fluid.p_bar * (r2[sl] + r3[sl])
        return self.op.cell_integral(dens)

    def dissipation(self, Ge: np.ndarray, Gu: np.ndarray, linear: bool = False, kin=None) -> float:
        if linear:
            Du = Gu + km.transpose(Gu)
            dens = 0.5 * self.mu[0, 0] * np.sum(Du * Du, axis=(0, 1)) + self.lam[0, 0] * km.trace(Gu) ** 2
            return self.op.cell_integral(dens)
        if kin is None:
            kin = self.cell_kinematics(Ge)
        dens = np.empty(Ge.shape[2:])
        for s, sl in enumerate(self.slices):
            fluid = self.params.fluid(("minus", "plus")[s])
            dens[sl] = nl.dissipation_density(Ge[:, :, sl], Gu[:, :, sl], fluid, kin=kin[s])
        return self.op.cell_integral(dens)

    def rest_potential(self) -> float:
        """ρ̄∫∫_{ρ̄/4}^{ρ̄} P(z)/z² dz dy: the rest-state offset of the mechanical energy."""
        g = self.grid
        vols = (-g.h_minus * g.L1 * g.L2, g.h_plus * g.L1 * g.L2)
        return sum(f.rho_bar * f.law.potential(f.rho_bar / 4, f.rho_bar) * v
                   for f, v in zip((self.params.lower, self.params.upper), vols))


_SERIES_CUT = 1e-2


def _expm1_minus_id(y):
    """exp(y) − 1 − y without cancellation (series for small |y|)."""
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < _SERIES_CUT
    term, acc = y * y / 2, np.zeros_like(y)
    for k in range(3, 13):
        acc = acc + term
        term = term * y / k
    return np.where(small, acc, np.expm1(y) - y)


def _id_minus_log1p(s):
    """s − log(1 + s) without cancellation (series for small |s|)."""
    s = np.asarray(s, dtype=float)
    small = np.abs(s) < _SERIES_CUT
    acc, power = np.zeros_like(s), s * s
    for k in range(2, 14):
        acc = acc + (power / k if k % 2 == 0 else -power / k)
        power = power * s
    return np.where(small, acc, s - np.log1p(s))


def potential_excess(jm1, fluid: km.Fluid):
    """ρ̄∫_{ρ̄}^{ρ̄/J} P(z)/z² dz + P(ρ̄)(J − 1) as a sum of two non-negative terms."""
    g = fluid.law.gamma
    x = np.log1p(jm1)
    base = _id_minus_log1p(jm1)
    if g == 1:
        return fluid.p_bar * base
    return fluid.p_bar * (_expm1_minus_id((1 - g) * x) / (g - 1) + base)


@lru_cache(maxsize=16)
def _model(grid: sg.SlabGrid, params: km.MaterialParams) -> CellModel:
    return CellModel(grid, params)


@lru_cache(maxsize=16)
def _implicit_solver(grid: sg.SlabGrid, params: km.MaterialParams, dt: float, theta: float):
    """Factorised (M/(θΔt) − div[μ𝔻 + (λ + θΔt P'ρ̄) div + θΔt κ ∇]) per mode."""
    fl = (params.lower, params.upper)
    problem = lame.LameProblem(
        grid, tuple(f.mu for f in fl), tuple(f.lam for f in fl),
        extra_zero_order=tuple(f.rho_bar / (theta * dt) for f in fl),
        extra_grad_div=tuple(theta * dt * f.stiffness for f in fl),
        extra_laplacian=(theta * dt * params.kappa,) * 2)
    return lame.LameSolver(problem)


# ---------------------------------------------------------------------------
# State


@dataclass(frozen=True)
class SimState:
    """Nodal displacement and velocity (global vertical layout) at time t.

    ``flux`` is the lagged nonlinear stress at this state and ``flux_prev`` the
    one from the previous step (None at start); both are cellwise.
    """

    grid: sg.SlabGrid
    t: float
    eta_g: np.ndarray
    u_g: np.ndarray
    min_J: float = 1.0
    flux: np.ndarray | None = None
    flux_prev: np.ndarray | None = None
    u_t: sg.Field | None = None
    step_index: int = 0

    @property
    def eta(self) -> sg.Field:
        return sg.Field.from_global(self.grid, self.eta_g, continuous=True, dirichlet=True)

    @property
    def u(self) -> sg.Field:
        return sg.Field.from_global(self.grid, self.u_g, continuous=True, dirichlet=True)

    @cached_property
    def kinematics(self) -> km.KinematicState:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", JacobianBandWarning)
            return km.deformation(self.eta)

    def max_interface_jump(self) -> float:
        return max(float(np.max(np.abs(sg.interface_jump(f)))) for f in (self.eta, self.u))


def _validate_boundary(arr: np.ndarray, name: str):
    if np.any(arr[:, 0] != 0) or np.any(arr[:, -1] != 0):
        raise ConfigurationError(f"{name} must vanish on the walls")


def initial_state(eta: sg.Field, u: sg.Field, params: km.MaterialParams,
                  scheme: SchemeConfig | None = None) -> SimState:
    """Validate tags, build cached kinematics and the lagged flux at t = 0."""
    g = eta.grid
    for f, name in ((eta, "eta"), (u, "u")):
        if f.rank_shape != (3,):
            raise ConfigurationError(f"{name} must be a vector field")
    eg, ug = eta.to_global(), u.to_global()
    for f, arr, name in ((eta, eg, "eta"), (u, ug, "u")):
        if np.max(np.abs(sg.interface_jump(f))) > 1e-10:
            raise ConfigurationError(f"{name} is discontinuous across the interface")
        _validate_boundary(arr, name)
    scheme = scheme or SchemeConfig(dt=default_dt(params.kappa))
    return _make_state(g, 0.0, eg, ug, params, scheme, None, 0)


def _make_state(g, t, eg, ug, params, scheme, flux_prev, step_index) -> SimState:
    model = _model(g, params)
    Ge, Gu = model.gradients(eg, ug)
    kin = model.cell_kinematics(Ge, scheme.j_floor)
    minJ = min(float(np.min(k[0])) for k in kin)
    if scheme.nonlinear_mode == "full":
        flux = model.nonlinear_flux(Ge, Gu, kin, scheme.quadrature)
    else:
        flux = np.zeros_like(Ge)
    return SimState(g, t, eg, ug, minJ, flux, flux_prev, None, step_index)


def zero_state(grid: sg.SlabGrid, params: km.MaterialParams, scheme=None) -> SimState:
    z = sg.Field.zeros(grid, (3,), continuous=True, dirichlet=True)
    return initial_state(z, z, params, scheme)


# ---------------------------------------------------------------------------
# Stepping


def _advance(state: SimState, params, scheme, lagged_flux: np.ndarray):
    g, dt, th = state.grid, scheme.dt, scheme.theta
    model = _model(g, params)
    solver = _implicit_solver(g, params, dt, th)
    eta, u = state.eta_g, state.u_g
    Ge = model.op.cell_gradient(eta + th * (1 - th) * dt * u)
    Gu = model.op.cell_gradient(u)
    I = km.eye_like(Ge)
    T = (model.stiff * km.trace(Ge)[None, None] * I + params.kappa * Ge
         + (1 - th) * (model.mu * (Gu + km.transpose(Gu)) + model.lam * km.trace(Gu)[None, None] * I))
    T = T + lagged_flux
    b = model.mass[None, :, None, None] * u / dt + model.op.weighted_divergence(T)
    u_new = solver.solve_weighted(b / th)
    eta_new = eta + dt * (th * u_new + (1 - th) * u)
    return eta_new, u_new


def _check_ceiling(eta, u, scheme, t):
    size = math.sqrt(float(np.sum(eta * eta) + np.sum(u * u)))
    if not math.isfinite(size) or size > scheme.norm_ceiling:
        raise DivergenceError(size, scheme.norm_ceiling, t)


def step(state: SimState, params: km.MaterialParams, scheme: SchemeConfig) -> SimState:
    """One θ-step; nonlinear stress lagged (AB2 with a predictor-corrector start)."""
    th = scheme.theta
    t_new = state.t + scheme.dt
    try:
        if scheme.lag == "explicit":
            lagged = state.flux
        elif state.flux_prev is not None:
            lagged = (1 + th) * state.flux - th * state.flux_prev
        elif scheme.nonlinear_mode == "full":
            eta_p, u_p = _advance(state, params, scheme, state.flux)
            pred = _make_state(state.grid, t_new, eta_p, u_p, params, scheme, None, 0)
            lagged = th * pred.flux + (1 - th) * state.flux
        else:
            lagged = state.flux
        eta_new, u_new = _advance(state, params, scheme, lagged)
        _check_ceiling(eta_new, u_new, scheme, t_new)
        return _make_state(state.grid, t_new, eta_new, u_new, params, scheme, state.flux,
                           state.step_index + 1)
    except DegeneracyError as exc:
        raise DegeneracyError(exc.value, exc.location, t_new) from None


def step_linear(state: SimState, params: km.MaterialParams, scheme: SchemeConfig) -> SimState:
    return step(state, params, scheme.linearized())


def compute_ut(state: SimState, params: km.MaterialParams, linear: bool = False) -> sg.Field:
    """u_t from the momentum balance: M⁻¹ × weak divergence of the full stress."""
    model = _model(state.grid, params)
    Ge, Gu = model.gradients(state.eta_g, state.u_g)
    T = model.linear_stress(Ge, Gu)
    if not linear:
        kin = model.cell_kinematics(Ge)
        T = T + model.nonlinear_flux(Ge, Gu, kin)
    ut = model.op.weighted_divergence(T) / model.mass[None, :, None, None]
    return sg.Field.from_global(state.grid, ut, continuous=True, dirichlet=True)


# ---------------------------------------------------------------------------
# Energy


@dataclass
class EnergyParts:
    kinetic: float
    potential: float
    elastic: float
    dissipation: float

    @property
    def total(self) -> float:
        return self.kinetic + self.potential + self.elastic


def energy_parts(eta_g, u_g, grid, params, linear=False) -> EnergyParts:
    """Kinetic, excess potential, elastic and dissipation of a nodal (η, u) pair."""
    model = _model(grid, params)
    Ge, Gu = model.gradients(eta_g, u_g)
    return EnergyParts(model.kinetic(u_g), model.potential(Ge, linear), model.elastic(Ge),
                       model.dissipation(Ge, Gu, linear))


def mechanical_energy(state: SimState, params: km.MaterialParams) -> float:
    """½‖√ρ̄ u‖² + ρ̄∫∫_{ρ̄/4}^{ρ̄/J} P(z)/z² dz dy + κ/2 ‖∇η‖², rest offset included."""
    parts = energy_parts(state.eta_g, state.u_g, state.grid, params)
    return parts.total + _model(state.grid, params).rest_potential()


def grad_eta_sq(state: SimState, params: km.MaterialParams) -> float:
    """‖∇η‖₀² with the cellwise gradient of the scheme."""
    model = _model(state.grid, params)
    Ge = model.op.cell_gradient(state.eta_g)
    return model.op.cell_integral(np.sum(Ge * Ge, axis=(0, 1)))


@dataclass
class EnergyLedger:
    """Per-step energy bookkeeping; residual_k = |ΔE/Δt + D(midpoint)| for step k → k+1."""

    t: list = field(default_factory=list)
    kinetic: list = field(default_factory=list)
    potential: list = field(default_factory=list)
    elastic: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)
    residual: list = field(default_factory=list)

    @property
    def total(self) -> np.ndarray:
        return np.asarray(self.kinetic) + np.asarray(self.potential) + np.asarray(self.elastic)

    def append(self, t, parts: EnergyParts, residual: float):
        self.t.append(t)
        self.kinetic.append(parts.kinetic)
        self.potential.append(parts.potential)
        self.elastic.append(parts.elastic)
        self.dissipation.append(parts.dissipation)
        self.residual.append(residual)

    def max_residual(self) -> float:
        r = np.asarray(self.residual[1:])
        return float(r.max()) if r.size else 0.0

    def is_monotone(self, rtol: float = 0.0) -> bool:
        E = self.total
        return bool(np.all(np.diff(E) <= rtol * np.abs(E[:-1])))


def midpoint_residual(prev: SimState, new: SimState, params, dt, linear, e_prev: EnergyParts,
                      e_new: EnergyParts) -> float:
    mid_eta = 0.5 * (prev.eta_g + new.eta_g)
    mid_u = 0.5 * (prev.u_g + new.u_g)
    model = _model(new.grid, params)
    Ge, Gu = model.gradients(mid_eta, mid_u)
    D = model.dissipation(Ge, Gu, linear)
    return abs((e_new.total - e_prev.total) / dt + D)


# ---------------------------------------------------------------------------
# Driver


@dataclass
class TerminalEvent:
    kind: str
    t: float
    message: str
    value: float | None = None
    location: tuple | None = None


@dataclass
class RunResult:
    final: SimState
    ledger: EnergyLedger
    records: list
    samples: list
    event: TerminalEvent | None
    I0: float
    grad_bound_ok: bool
    out_dir: Path | None = None

    @property
    def completed(self) -> bool:
        return self.event is None


def run(initial: SimState, params: km.MaterialParams, scheme: SchemeConfig,
        sample_every: int = 1, snapshot_every: int = 0, out_dir=None,
        diagnostics: bool = True, keep_samples: bool = False, manifest_extra: dict | None = None,
        bound_tol: float = 1e-6) -> RunResult:
    """Step to T_end or a terminal event, recording energies, diagnostics and snapshots.

    Degeneracy and divergence end the run and are recorded, not raised.
    """
    from .experiments import diagnostics_row  # local: experiments builds on this module

    linear = scheme.nonlinear_mode == "linearized"
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ledger = EnergyLedger()
    records, samples = [], []
    state = initial
    parts = energy_parts(state.eta_g, state.u_g, state.grid, params, linear)
    I0 = mechanical_energy(state, params) if not linear else parts.total
    bound = 2 * I0 / params.kappa if params.kappa > 0 else math.inf
    grad_ok = True
    ledger.append(state.t, parts, 0.0)

    def sample(st, residual):
        nonlocal grad_ok
        if params.kappa > 0 and grad_eta_sq(st, params) > bound * (1 + bound_tol):
            grad_ok = False
        if diagnostics:
            records.append(diagnostics_row(st, params, ledger, residual, linear))
        if keep_samples:
            samples.append(st)

    def snapshot(st):
        if out is None:
            return
        snap = out / "snapshots"
        snap.mkdir(exist_ok=True)
        sg.export_snapshot_csv(st.eta, snap / f"eta_{st.step_index:06d}.csv", "eta", st.t)
        sg.export_snapshot_csv(st.u, snap / f"u_{st.step_index:06d}.csv", "u", st.t)

    sample(state, 0.0)
    if snapshot_every:
        snapshot(state)
    event = None
    for n in range(scheme.n_steps):
        try:
            new = step(state, params, scheme)
            new_parts = energy_parts(new.eta_g, new.u_g, new.grid, params, linear)
        except DegeneracyError as exc:
            event = TerminalEvent("degeneracy", exc.t if exc.t is not None else state.t, str(exc),
                                  exc.value, exc.location)
            break
        except DivergenceError as exc:
            event = TerminalEvent("divergence", exc.t, str(exc), exc.value)
            break
        res = midpoint_residual(state, new, params, scheme.dt, linear, parts, new_parts)
        if not math.isfinite(new_parts.total):
            event = TerminalEvent("divergence", new.t, "non-finite energy")
            break
        ledger.append(new.t, new_parts, res)
        state, parts = new, new_parts
        if sample_every and (n + 1) % sample_every == 0:
            sample(state, res)
        if snapshot_every and (n + 1) % snapshot_every == 0:
            snapshot(state)
    result = RunResult(state, ledger, records, samples, event, I0, grad_ok, out)
    if out is not None:
        write_diagnostics_csv(records, out / "diagnostics.csv")
        write_manifest(out / "manifest.json", state.grid, params, scheme, result, manifest_extra)
    return result


def write_diagnostics_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DIAGNOSTIC_COLUMNS)
        for r in records:
            w.writerow([repr(float(getattr(r, c))) for c in DIAGNOSTIC_COLUMNS])


def params_dict(params: km.MaterialParams) -> dict:
    return asdict(params)


def write_manifest(path, grid, params, scheme, result: RunResult | None, extra=None):
    doc = {
        "grid": grid.describe(),
        "material": params_dict(params),
        "scheme": asdict(scheme),
        "terminal_event": asdict(result.event) if result is not None and result.event else None,
    }
    if result is not None:
        doc.update({
            "steps_taken": result.final.step_index,
            "t_final": result.final.t,
            "initial_mechanical_energy": result.I0,
            "grad_eta_bound_holds": result.grad_bound_ok,
            "energy_monotone": result.ledger.is_monotone(),
            "max_energy_residual": result.ledger.max_residual(),
        })
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))
