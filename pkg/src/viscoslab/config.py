"""JSON run configuration and Fourier-mode initial data."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import grid as sg
from . import kinematics as km
from .errors import ConfigurationError


@dataclass(frozen=True)
class Mode:
    """a_c · cos(k1 y1 + k2 y2 + phase) · sin(profile · π (y3 − h₋)/(h₊ − h₋)) for component c.

    ``k`` holds integer wavenumbers (multiples of 2π/L); the vertical profile
    vanishes on both walls and is smooth across the interface.
    """

    k: tuple = (1, 0)
    amplitude: tuple = (0.0, 0.0, 0.0)
    profile: int = 1
    phase: float = 0.0

    def __post_init__(self):
        if len(self.k) != 2 or len(self.amplitude) != 3:
            raise ConfigurationError("mode needs k=[k1,k2] and amplitude=[a1,a2,a3]")
        if int(self.profile) < 1:
            raise ConfigurationError("vertical profile index must be >= 1")

    def evaluate(self, grid: sg.SlabGrid, y1, y2, y3) -> np.ndarray:
        arg = 2 * np.pi * (self.k[0] * y1 / grid.L1 + self.k[1] * y2 / grid.L2) + self.phase
        vert = np.sin(self.profile * np.pi * (y3 - grid.h_minus) / (grid.h_plus - grid.h_minus))
        shape = np.cos(arg) * vert
        return np.stack([a * shape for a in self.amplitude])


def modes_field(grid: sg.SlabGrid, modes, scale: float = 1.0) -> sg.Field:
    def fn(y1, y2, y3, side):
        out = np.zeros((3,) + y1.shape)
        for m in modes:
            out = out + m.evaluate(grid, y1, y2, y3)
        if grid.dim_mode == "2D":
            out[1] = 0.0
        return scale * out

    f = sg.Field.from_function(grid, fn, continuous=True, dirichlet=True)
    # walls exactly zero
    f.minus[:, 0] = 0.0
    f.plus[:, -1] = 0.0
    return f


def default_u_modes(amplitude: float = 0.05):
    return (Mode((1, 0), (amplitude, 0.0, 0.0), 1, 0.0),
            Mode((2, 0), (0.0, 0.0, amplitude), 2, np.pi / 2))


@dataclass(frozen=True)
class InitialData:
    eta: tuple = ()
    u: tuple = field(default_factory=default_u_modes)
    scale: float = 1.0
    compatible: bool = True

    def fields(self, grid: sg.SlabGrid, params: km.MaterialParams | None = None):
        """(η⁰, u⁰); with ``compatible`` and params, u⁰ is projected onto ⟦T e3⟧ = 0."""
        eta, u = modes_field(grid, self.eta, self.scale), modes_field(grid, self.u, self.scale)
        if self.compatible and params is not None:
            from .lame import project_compatible

            u, _ = project_compatible(eta, u, params)
        return eta, u


@dataclass(frozen=True)
class RunConfig:
    grid: dict = field(default_factory=lambda: dict(
        h_minus=-1.0, h_plus=1.0, L1=2 * np.pi, L2=2 * np.pi, n1=32, n2=1, n3m=16, n3p=16, dim_mode="2D"))
    material: dict = field(default_factory=lambda: fluids_dict(km.MaterialParams.default()))
    kappa: float = 100.0
    scheme: dict = field(default_factory=dict)
    initial: InitialData = field(default_factory=InitialData)
    sample_every: int = 1
    snapshot_every: int = 0

    def build_grid(self) -> sg.SlabGrid:
        return sg.build_grid(**self.grid)

    def params(self) -> km.MaterialParams:
        fl = []
        for side in ("lower", "upper"):
            d = dict(self.material[side])
            law = km.PressureLaw(**d.pop("law", {}))
            fl.append(km.Fluid(law=law, **d))
        return km.MaterialParams(fl[0], fl[1], float(self.kappa))

    def scheme_config(self):
        from .evolve import SchemeConfig, default_dt

        d = dict(self.scheme)
        d.setdefault("dt", default_dt(self.kappa))
        return SchemeConfig(**d)

    def with_overrides(self, dim=None, resolution=None, dt=None, T=None, kappa=None) -> "RunConfig":
        g, s, cfg = dict(self.grid), dict(self.scheme), self
        if dim is not None:
            g["dim_mode"] = f"{int(dim)}D"
            if int(dim) == 2:
                g["n2"] = 1
        if resolution is not None:
            n1, n2, n3m, n3p = resolution
            g.update(n1=n1, n2=n2, n3m=n3m, n3p=n3p)
        if dt is not None:
            s["dt"] = dt
        if T is not None:
            s["T_end"] = T
        if kappa is not None:
            cfg = replace(cfg, kappa=float(kappa))
        return replace(cfg, grid=g, scheme=s)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["initial"] = {
            "scale": self.initial.scale,
            "compatible": self.initial.compatible,
            "eta": [asdict(m) for m in self.initial.eta],
            "u": [asdict(m) for m in self.initial.u],
        }
        return d


def fluids_dict(params: km.MaterialParams) -> dict:
    d = asdict(params)
    d.pop("kappa")
    return d


def _modes(items) -> tuple:
    try:
        return tuple(Mode(tuple(m.get("k", (1, 0))), tuple(m["amplitude"]), int(m.get("profile", 1)),
                          float(m.get("phase", 0.0))) for m in items)
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigurationError(f"bad mode specification: {exc}") from None


def from_dict(doc: dict) -> RunConfig:
    base = RunConfig()
    known = {"grid", "material", "kappa", "scheme", "initial", "sample_every", "snapshot_every"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    g = dict(base.grid)
    g.update(doc.get("grid", {}))
    material = doc.get("material", base.material)
    init = doc.get("initial")
    if init is None:
        initial = base.initial
    else:
        initial = InitialData(_modes(init.get("eta", [])), _modes(init.get("u", [])),
                              float(init.get("scale", 1.0)), bool(init.get("compatible", True)))
    cfg = RunConfig(g, material, float(doc.get("kappa", base.kappa)), dict(doc.get("scheme", {})),
                    initial, int(doc.get("sample_every", 1)), int(doc.get("snapshot_every", 0)))
    cfg.build_grid()
    cfg.params()
    cfg.scheme_config()
    return cfg


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError("config root must be a JSON object")
    try:
        return from_dict(doc)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
