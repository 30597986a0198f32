"""Energy/dissipation functionals, decay fits, κ-sweeps and verification studies."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import evolve as ev
from . import grid as sg
from . import kinematics as km
from . import lame
from . import nonlinear as nl
from .config import InitialData, Mode, RunConfig
from .errors import FitDomainError

N = sg.NormSpec

# (name, field key, norm, weight as a function of κ)
E_TERMS = (
    ("u_1_2", "u", N(1, 2, True), lambda k: k ** -2),
    ("ut_1_0", "u_t", N(1, 0, True), lambda k: k ** -2),
    ("eta_1_3", "eta", N(1, 3, True), lambda k: 1 / k),
    ("u_1_1", "u", N(1, 1, True), lambda k: 1 / k),
    ("eta_1_2", "eta", N(1, 2, True), lambda k: 1.0),
    ("diveta_u_3_0", "diveta_u", N(3, 0, True), lambda k: 1.0),
    ("eta_3_1", "eta", N(3, 1, True), lambda k: 1 + k),
)
D_TERMS = (
    ("u_1_3", "u", N(1, 3, True), lambda k: k ** -2),
    ("ut_1_1", "u_t", N(1, 1, True), lambda k: k ** -2),
    ("u_1_2", "u", N(1, 2, True), lambda k: 1 / k),
    ("eta_1_3", "eta", N(1, 3, True), lambda k: 1.0),
    ("eta_1_2", "eta", N(1, 2, True), lambda k: math.sqrt(k)),
    ("u_3_1", "u", N(3, 1, True), lambda k: 1.0),
    ("eta_3_1", "eta", N(3, 1, True), lambda k: k),
)


@dataclass
class DiagnosticsRecord:
    t: float
    E: float = 0.0
    D: float = 0.0
    E_terms: dict = field(default_factory=dict)
    D_terms: dict = field(default_factory=dict)
    kinetic: float = 0.0
    potential: float = 0.0
    elastic: float = 0.0
    dissipation: float = 0.0
    residual: float = 0.0
    minJ: float = 1.0
    max_interface_jump: float = 0.0


def _fields(state: ev.SimState, params, u_t=None, linear=False) -> dict:
    eta, u = state.eta, state.u
    if u_t is None:
        u_t = state.u_t if state.u_t is not None else ev.compute_ut(state, params, linear)
    return {"eta": eta, "u": u, "u_t": u_t, "diveta_u": div_pair(eta, u)}


def div_pair(eta: sg.Field, u: sg.Field) -> sg.Field:
    """The 4-component field (div η, u)."""
    div = sg.divergence(eta)
    return sg.Field(eta.grid, np.concatenate([div.minus[None], u.minus]),
                    np.concatenate([div.plus[None], u.plus]))


def _weighted(terms, fields, kappa, caches=None) -> tuple[float, dict]:
    caches = {} if caches is None else caches
    parts = {}
    for name, key, spec, weight in terms:
        w = weight(kappa) if kappa > 0 else (1.0 if weight(1.0) == 1.0 else math.inf)
        cache = caches.setdefault(key, sg.DerivativeCache(fields[key]))
        parts[name] = w * sg.norm_sq(fields[key], spec, cache)
    return float(sum(parts.values())), parts


def eval_E(state: ev.SimState, params: km.MaterialParams, u_t=None, linear=False) -> DiagnosticsRecord:
    E, parts = _weighted(E_TERMS, _fields(state, params, u_t, linear), params.kappa)
    return DiagnosticsRecord(state.t, E=E, E_terms=parts)


def eval_D(state: ev.SimState, params: km.MaterialParams, u_t=None, linear=False) -> DiagnosticsRecord:
    D, parts = _weighted(D_TERMS, _fields(state, params, u_t, linear), params.kappa)
    return DiagnosticsRecord(state.t, D=D, D_terms=parts)


def evaluate(state, params, linear=False) -> DiagnosticsRecord:
    f = _fields(state, params, None, linear)
    caches = {}
    E, ep = _weighted(E_TERMS, f, params.kappa, caches)
    D, dp = _weighted(D_TERMS, f, params.kappa, caches)
    return DiagnosticsRecord(state.t, E, D, ep, dp)


def diagnostics_row(state, params, ledger: ev.EnergyLedger, residual, linear=False) -> DiagnosticsRecord:
    rec = evaluate(state, params, linear)
    rec.kinetic = ledger.kinetic[-1]
    rec.potential = ledger.potential[-1]
    rec.elastic = ledger.elastic[-1]
    rec.dissipation = ledger.dissipation[-1]
    rec.residual = residual
    rec.minJ = state.min_J
    rec.max_interface_jump = state.max_interface_jump()
    return rec


# ---------------------------------------------------------------------------
# Decay


def decay_fit(t, E, window=None) -> tuple[float, float]:
    """Least-squares slope of log E against t; returns (rate, r²) with rate = −slope."""
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    if window is not None:
        lo, hi = window
        sel = (t >= lo) & (t <= hi)
        t, E = t[sel], E[sel]
    if t.size < 10:
        raise FitDomainError(f"decay fit needs at least 10 samples, got {t.size}")
    if np.any(~(E > 0)):
        raise FitDomainError("decay fit needs strictly positive E in the window")
    y = np.log(E)
    if np.ptp(y) == 0:
        return 0.0, 1.0
    fit = stats.linregress(t, y)
    return float(-fit.slope), float(fit.rvalue ** 2)


def decay_constant(t, E, rate) -> float:
    """Smallest C with E(t) ≤ C e^{−rate t} E(0) on the samples."""
    t, E = np.asarray(t), np.asarray(E)
    return float(np.max(E * np.exp(rate * t) / E[0]))


# ---------------------------------------------------------------------------
# Scenario helpers


def prepare(cfg: RunConfig):
    g = cfg.build_grid()
    params = cfg.params()
    scheme = cfg.scheme_config()
    eta0, u0 = cfg.initial.fields(g, params)
    return g, params, scheme, eta0, u0


def run_config(cfg: RunConfig, out_dir=None, linear=False, **kw) -> ev.RunResult:
    g, params, scheme, eta0, u0 = prepare(cfg)
    if linear:
        scheme = scheme.linearized()
    init = ev.initial_state(eta0, u0, params, scheme)
    kw.setdefault("sample_every", cfg.sample_every)
    kw.setdefault("snapshot_every", cfg.snapshot_every)
    extra = {"config": cfg.to_dict(), "admissibility": admissibility(eta0, u0, params)}
    return ev.run(init, params, scheme, out_dir=out_dir, manifest_extra=extra, **kw)


def admissibility(eta0, u0, params, c1=1.0, c2=1.0) -> dict:
    """Reported large-κ indicator: c1 κ^{1/14} ≥ c2 (1 + E⁰ + ‖u⁰‖²)^8 style check (not a gate)."""
    E0 = sg.norm_sq(eta0, N(3, 1, True)) + sg.norm_sq(u0, N(1, 2, True))
    lhs = c1 * params.kappa ** (1 / 14) if params.kappa > 0 else 0.0
    rhs = c2 * (1 + E0) ** 8
    return {"kappa_side": lhs, "data_side": rhs, "satisfied": bool(lhs >= rhs), "c1": c1, "c2": c2}


# ---------------------------------------------------------------------------
# κ-sweep

SWEEP_COLUMNS = ("kappa", "err_diveta_u_3_0", "err_eta_3_1_weighted", "err_eta_1_2", "status")


@dataclass
class SweepRow:
    kappa: float
    err_diveta_u_3_0: float
    err_eta_3_1_weighted: float
    err_eta_1_2: float
    status: str

    def errors(self) -> tuple:
        return self.err_diveta_u_3_0, self.err_eta_3_1_weighted, self.err_eta_1_2


@dataclass
class SweepResult:
    rows: list
    slopes: dict

    def successful(self):
        return [r for r in self.rows if r.status == "ok"]

    def strictly_decreasing(self) -> dict:
        ok = self.successful()
        out = {}
        for j, name in enumerate(SWEEP_COLUMNS[1:4]):
            vals = [r.errors()[j] for r in ok]
            out[name] = bool(all(b < a for a, b in zip(vals, vals[1:])))
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([repr(float(r.kappa)), repr(float(r.err_diveta_u_3_0)),
                            repr(float(r.err_eta_3_1_weighted)), repr(float(r.err_eta_1_2)), r.status])


def loglog_slope(x, y) -> float:
    return float(stats.linregress(np.log(x), np.log(y)).slope)


def difference_errors(a: ev.SimState, b: ev.SimState, kappa: float) -> tuple:
    """‖(div η^d, u^d)‖²_{3,0}, (1+κ)‖η^d‖²_{3,1}, ‖η^d‖²_{1,2} with η^d = η − η^l, u^d = u − u^l."""
    eta_d = a.eta - b.eta
    u_d = a.u - b.u
    f = div_pair(eta_d, u_d)
    return (sg.norm_sq(f, N(3, 0, True)),
            (1 + kappa) * sg.norm_sq(eta_d, N(3, 1, True)),
            sg.norm_sq(eta_d, N(1, 2, True)))


def kappa_sweep(base: RunConfig, kappas, dt=None, T_end=None) -> SweepResult:
    """Nonlinear run from (η⁰, u⁰) against the linear run from (η⁰, u⁰ + u^r), per κ.

    The time step is shared across κ unless ``dt`` is None, in which case
    the finest default (largest κ) is used so every row sees the same Δt.
    """
    kappas = sorted(float(k) for k in kappas)
    if len(kappas) < 3:
        raise FitDomainError("a sweep needs at least three kappa values")
    if dt is None:
        dt = base.scheme.get("dt", ev.default_dt(kappas[-1]))
    rows = []
    for kappa in kappas:
        cfg = base.with_overrides(kappa=kappa, dt=dt, T=T_end)
        g, params, scheme, eta0, u0 = prepare(cfg)
        status = "ok"
        try:
            u_r = lame.initial_correction(eta0, u0, params)
            nl_run = ev.run(ev.initial_state(eta0, u0, params, scheme), params, scheme,
                            sample_every=0, diagnostics=False)
            lin_scheme = scheme.linearized()
            lin_run = ev.run(ev.initial_state(eta0, u0 + u_r, params, lin_scheme), params, lin_scheme,
                             sample_every=0, diagnostics=False)
            for r in (nl_run, lin_run):
                if r.event is not None:
                    status = r.event.kind
            errs = difference_errors(nl_run.final, lin_run.final, kappa)
        except Exception as exc:  # recorded per row, the sweep continues
            status = f"error: {exc}"
            errs = (math.nan,) * 3
        rows.append(SweepRow(kappa, *errs, status))
    ok = [r for r in rows if r.status == "ok"]
    slopes = {}
    if len(ok) >= 3:
        ks = [r.kappa for r in ok]
        for j, name in enumerate(SWEEP_COLUMNS[1:4]):
            vals = [r.errors()[j] for r in ok]
            slopes[name] = loglog_slope(ks, vals) if all(v > 0 for v in vals) else math.nan
        totals = [sum(r.errors()) for r in ok]
        slopes["total"] = loglog_slope(ks, totals) if all(v > 0 for v in totals) else math.nan
    return SweepResult(rows, slopes)


# ---------------------------------------------------------------------------
# Convergence helpers


def fitted_order(h, err) -> float:
    """Least-squares slope of log err against log h."""
    return float(stats.linregress(np.log(h), np.log(err)).slope)


def piola_study(resolutions=(8, 16, 32), amplitude=0.1):
    """Max nodal |∂_l B_kl| for a smooth 3D η on refined grids; returns (h, residual, order)."""
    hs, res = [], []
    for n in resolutions:
        g = sg.build_grid(-1.0, 1.0, 2 * np.pi, 2 * np.pi, 16, 16, n, n)

        def fn(y1, y2, y3, side):
            w = np.sin(np.pi * (y3 + 1) / 2)
            return amplitude * np.stack([np.sin(y1) * np.cos(y2) * w,
                                         np.cos(y1 + y2) * w ** 2,
                                         np.sin(y2) * np.cos(y1) * np.sin(np.pi * (y3 + 1))])

        eta = sg.Field.from_function(g, fn, continuous=True, dirichlet=True)
        res.append(km.piola_residual(km.deformation(eta)))
        hs.append(g.dz_plus)
    return np.array(hs), np.array(res), fitted_order(hs, res)


def ur_scaling(eps_list=(1e-2, 5e-3, 2.5e-3), grid=None, params=None):
    """‖u^r‖ for η⁰ = ε · (single mode), u⁰ = 0; returns (eps, norms, exponent)."""
    g = grid or sg.build_grid(-1.0, 1.0, 2 * np.pi, 2 * np.pi, 16, 1, 16, 16, "2D")
    params = params or km.MaterialParams.default()
    mode = Mode((1, 0), (1.0, 0.0, 1.0), 1, 0.0)
    norms = []
    zero = sg.Field.zeros(g, (3,), continuous=True, dirichlet=True)
    from .config import modes_field

    for eps in eps_list:
        eta0 = modes_field(g, (mode,), eps)
        u_r = lame.initial_correction(eta0, zero, params)
        norms.append(sg.norm(u_r, N(0, 0)))
    return np.array(eps_list), np.array(norms), fitted_order(eps_list, norms)


def energy_audit(cfg: RunConfig, dts=None, T_end=None):
    """Max per-step identity residual for Δt, Δt/2, Δt/4; returns (dts, residuals, order)."""
    scheme = cfg.scheme_config()
    dt0 = scheme.dt
    dts = list(dts) if dts is not None else [dt0, dt0 / 2, dt0 / 4]
    T = T_end if T_end is not None else scheme.T_end
    res = []
    for dt in dts:
        c = cfg.with_overrides(dt=dt, T=T)
        r = run_config(c, sample_every=0, diagnostics=False)
        if r.event is not None:
            raise FitDomainError(f"energy audit run ended early: {r.event.message}")
        res.append(r.ledger.max_residual())
    return np.array(dts), np.array(res), fitted_order(dts, res)


# ---------------------------------------------------------------------------
# Manufactured Lamé solutions


def lame_manufactured(n3: int, mu=(1.0, 0.5), lam=(0.5, 0.25), n1=16, n2=1, dim_mode="2D",
                      return_problem=False):
    """Piecewise manufactured solution with unequal coefficients.

    w = φ±(y3) (sin y1, sin y1 cos y2 / 2, cos y1) with φ± continuous but kinked
    at y3 = 0; forcing and traction jump come from symbolic derivatives.
    Returns (Δ3, max error, worst per-mode residual).
    """
    import sympy as sp

    y1, y2, y3 = sp.symbols("y1 y2 y3", real=True)
    h_minus, h_plus = -1.0, 1.0
    # continuous profile, non-smooth at y3 = 0 (slopes chosen arbitrary)
    phis = {
        "minus": sp.sin(sp.pi * (y3 + 1) / 2) * (1 + y3 / 2),
        "plus": sp.sin(sp.pi * (y3 + 1) / 2) * (1 - y3 / 3),
    }
    grid = sg.build_grid(h_minus, h_plus, 2 * np.pi, 2 * np.pi, n1, n2, n3, n3, dim_mode)
    horiz = [sp.sin(y1), sp.sin(y1) * sp.cos(y2) / 2 if dim_mode == "3D" else sp.Integer(0), sp.cos(y1)]
    X = [y1, y2, y3]
    funcs, forcing, stress = {}, {}, {}
    for s, (m, l) in zip(("minus", "plus"), zip(mu, lam)):
        w = [h * phis[s] for h in horiz]
        grad = [[sp.diff(w[i], X[j]) for j in range(3)] for i in range(3)]
        div = sum(grad[i][i] for i in range(3))
        sig = [[m * (grad[i][j] + grad[j][i]) + (l * div if i == j else 0) for j in range(3)] for i in range(3)]
        F = [sp.simplify(sum(sp.diff(sig[i][j], X[j]) for j in range(3))) for i in range(3)]
        funcs[s] = sp.lambdify(X, w, "numpy")
        forcing[s] = sp.lambdify(X, F, "numpy")
        stress[s] = sp.lambdify(X, [sig[i][2] for i in range(3)], "numpy")

    def ev_(table):
        def fn(a, b, c, side):
            vals = table[side](a, b, c)
            return np.stack([np.broadcast_to(v, a.shape).astype(float) for v in vals])
        return fn

    F = sg.Field.from_function(grid, ev_(forcing))
    exact = sg.Field.from_function(grid, ev_(funcs), continuous=True, dirichlet=True)
    Y1, Y2 = np.meshgrid(grid.y1, grid.y2)
    zero = np.zeros_like(Y1)
    G = (np.stack([np.broadcast_to(v, Y1.shape) for v in stress["plus"](Y1, Y2, zero)])
         - np.stack([np.broadcast_to(v, Y1.shape) for v in stress["minus"](Y1, Y2, zero)]))
    problem = lame.LameProblem(grid, tuple(mu), tuple(lam), F=F, G=G)
    if return_problem:
        return problem, exact
    w, res = lame.solve(problem, return_residuals=True)
    return grid.dz_plus, (w - exact).max_abs(), float(res.max())


def lame_check(resolutions=(8, 16, 32, 64), **kw):
    """Rows (n3, error, observed order vs previous row) and worst per-mode residual."""
    rows, prev = [], None
    worst = 0.0
    for n in resolutions:
        h, err, res = lame_manufactured(n, **kw)
        order = math.log(prev[1] / err) / math.log(prev[0] / h) if prev else math.nan
        rows.append((n, err, order))
        worst = max(worst, res)
        prev = (h, err)
    return rows, worst


def lame_linearity(grid=None, seed=0):
    """max |solve(aF1+bF2, aG1+bG2) − a solve(F1,G1) − b solve(F2,G2)| relative to the solution size."""
    rng = np.random.default_rng(seed)
    g = grid or sg.build_grid(-1.0, 0.8, 2 * np.pi, 2 * np.pi, 16, 1, 12, 10, "2D")
    params = km.MaterialParams.default()
    solver = lame.LameSolver(lame.LameProblem.for_fluids(g, params))

    def rand_F():
        return sg.Field(g, rng.standard_normal((3, g.n3m + 1, g.n2, g.n1)),
                        rng.standard_normal((3, g.n3p + 1, g.n2, g.n1)))

    F1, F2 = rand_F(), rand_F()
    G1, G2 = rng.standard_normal((2, 3, g.n2, g.n1))
    a, b = rng.standard_normal(2)
    lhs = solver.solve(F1 * a + F2 * b, a * G1 + b * G2)
    rhs = solver.solve(F1, G1) * a + solver.solve(F2, G2) * b
    scale = max(lhs.max_abs(), 1e-300)
    return (lhs - rhs).max_abs() / scale


# ---------------------------------------------------------------------------
# Affine identity harness


@dataclass
class IdentityReport:
    """``error`` must stay at or below ``tol``; with ``at_least`` the value must reach it."""

    name: str
    error: float
    tol: float
    at_least: bool = False

    @property
    def passed(self) -> bool:
        return bool(self.error >= self.tol) if self.at_least else bool(self.error <= self.tol)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        if self.at_least:
            return f"{tag} {self.name}: {self.error:.4f} (need >= {self.tol:g})"
        return f"{tag} {self.name}: max error {self.error:.3e} (tol {self.tol:.0e})"


def random_gradients(n: int, seed: int = 0, scale: float = 0.2) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return scale * rng.uniform(-1, 1, size=(3, 3, n))


def identity_suite(n: int = 100_000, seed: int = 0) -> list:
    """Nodewise algebraic identities on n random affine deformations (∇η constant per sample)."""
    G = random_gradients(n, seed)
    Gu = random_gradients(n, seed + 1, scale=1.0)
    F = km.eye_like(G) + G
    J = km.det3(F)
    B = km.cofactor(F)
    BL, BN = km.cofactor_split(G)
    div, r2, r3 = km.determinant_expansion(G)
    A = B / J
    reports = [
        IdentityReport("cofactor split B - I = BL + BN", float(np.max(np.abs(B - km.eye_like(G) - BL - BN))), 1e-12),
        IdentityReport("determinant expansion 1 + div + r2 + r3 = J", float(np.max(np.abs(1 + div + r2 + r3 - J))), 1e-12),
        IdentityReport("inverse consistency A^T (I + grad eta) = I", float(np.max(km.inverse_defect(G, A))), 1e-12),
    ]
    for label, fluid, tol in (("closed form", km.MaterialParams.default().lower, 1e-12),
                              ("quadrature", km.Fluid(1.0, 0.7, 0.3, km.PressureLaw(1.5, 1.7)), 1e-8)):
        method = "closed" if label == "closed form" else "quad"
        a = nl.reconstructed_piola(G, Gu, fluid, method)
        b = nl.direct_piola(G, Gu, fluid)
        reports.append(IdentityReport(f"stress reconstruction ({label})", float(np.max(np.abs(a - b))), tol))
    DA, divA = nl.deformed_gradients(G, Gu)
    N1, N2 = nl.tilde_terms(Gu, BL + BN, 1 / J)
    Du = Gu + km.transpose(Gu)
    reports.append(IdentityReport("deformed symmetric gradient D_A u = Du + N1",
                                  float(np.max(np.abs(DA - Du - N1))), 1e-12))
    reports.append(IdentityReport("deformed divergence div_A u = div u + N2",
                                  float(np.max(np.abs(divA - km.trace(Gu) - N2))), 1e-12))
    return reports
