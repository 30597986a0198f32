"""Periodic two-layer slab grid, derivative stencils, quadrature and norms.

Array layout
------------
Every field array has shape ``(*rank_shape, nz, n2, n1)``: component axes
first, then the vertical node axis, then the two horizontal axes with y1
varying fastest in C order.  A field keeps one array per subdomain; the
interface plane y3 = 0 is the last vertical node of ``minus`` and the first
vertical node of ``plus``.

A *global* array stacks both subdomains with the interface node shared
once: vertical index ``0 .. n3m + n3p`` where ``n3m`` is the interface.
"""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .errors import CapabilityError, ConfigurationError, ResolutionError

MAX_VERTICAL_ORDER = 3


@dataclass(frozen=True)
class SlabGrid:
    h_minus: float
    h_plus: float
    L1: float
    L2: float
    n1: int
    n2: int
    n3m: int
    n3p: int
    dim_mode: str = "3D"

    def __post_init__(self):
        if not self.h_minus < 0 < self.h_plus:
            raise ConfigurationError(
                f"need h_minus < 0 < h_plus, got ({self.h_minus}, {self.h_plus})"
            )
        if self.L1 <= 0 or self.L2 <= 0:
            raise ConfigurationError("horizontal periods must be positive")
        if self.dim_mode not in ("2D", "3D"):
            raise ConfigurationError(f"dim_mode must be '2D' or '3D', got {self.dim_mode!r}")
        if self.dim_mode == "2D" and self.n2 != 1:
            raise ConfigurationError("2D mode requires n2 == 1")
        active = [self.n1, self.n3m, self.n3p] + ([self.n2] if self.dim_mode == "3D" else [])
        if min(active) < 4:
            raise ResolutionError(f"node/cell counts must be >= 4, got {active}")

    # -- geometry -----------------------------------------------------------
    @property
    def dz_minus(self) -> float:
        return -self.h_minus / self.n3m

    @property
    def dz_plus(self) -> float:
        return self.h_plus / self.n3p

    @property
    def z_minus(self) -> np.ndarray:
        return np.linspace(self.h_minus, 0.0, self.n3m + 1)

    @property
    def z_plus(self) -> np.ndarray:
        return np.linspace(0.0, self.h_plus, self.n3p + 1)

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.z_minus, self.z_plus[1:]])

    @property
    def nz(self) -> int:
        """Number of global vertical nodes."""
        return self.n3m + self.n3p + 1

    @property
    def interface_index(self) -> int:
        return self.n3m

    @property
    def y1(self) -> np.ndarray:
        return np.arange(self.n1) * (self.L1 / self.n1)

    @property
    def y2(self) -> np.ndarray:
        return np.arange(self.n2) * (self.L2 / self.n2)

    @property
    def cell_area(self) -> float:
        return (self.L1 / self.n1) * (self.L2 / self.n2)

    @property
    def volume(self) -> float:
        return self.L1 * self.L2 * (self.h_plus - self.h_minus)

    def mesh(self, side: str | None = None):
        """Broadcastable (y1, y2, y3) coordinate arrays of shape (nz, n2, n1)."""
        z = {"minus": self.z_minus, "plus": self.z_plus, None: self.z}[side]
        y3, y2, y1 = np.meshgrid(z, self.y2, self.y1, indexing="ij")
        return y1, y2, y3

    @property
    def cell_widths(self) -> np.ndarray:
        """Widths of the global vertical cells (lower cells first)."""
        return np.concatenate([np.full(self.n3m, self.dz_minus), np.full(self.n3p, self.dz_plus)])

    @property
    def node_weights(self) -> np.ndarray:
        """Trapezoid weights on the global vertical nodes (interface node gets both halves)."""
        h = self.cell_widths
        w = np.zeros(self.nz)
        w[:-1] += 0.5 * h
        w[1:] += 0.5 * h
        return w

    # -- horizontal spectral machinery ---------------------------------------
    @property
    def xi1(self) -> np.ndarray:
        return 2 * np.pi * np.fft.rfftfreq(self.n1, d=self.L1 / self.n1)

    @property
    def xi2(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n2, d=self.L2 / self.n2)

    def derivative_symbols(self, order1: int, order2: int) -> np.ndarray:
        """Fourier multiplier (i xi1)^a (i xi2)^b of shape (n2, n1//2+1).

        Odd-order factors drop the Nyquist bin so real fields stay real.
        """
        m1 = (1j * self.xi1) ** order1
        m2 = (1j * self.xi2) ** order2
        if order1 % 2 and self.n1 % 2 == 0:
            m1[-1] = 0.0
        if order2 % 2 and self.n2 % 2 == 0:
            m2[self.n2 // 2] = 0.0
        return m2[:, None] * m1[None, :]

    def describe(self) -> dict:
        return {
            "h_minus": self.h_minus, "h_plus": self.h_plus, "L1": self.L1, "L2": self.L2,
            "n1": self.n1, "n2": self.n2, "n3m": self.n3m, "n3p": self.n3p,
            "dim_mode": self.dim_mode,
        }


def build_grid(h_minus, h_plus, L1, L2, n1, n2, n3m, n3p, dim_mode="3D") -> SlabGrid:
    if dim_mode in (2, "2", "2d"):
        dim_mode = "2D"
    if dim_mode in (3, "3", "3d"):
        dim_mode = "3D"
    if dim_mode == "2D":
        n2 = 1
    return SlabGrid(float(h_minus), float(h_plus), float(L1), float(L2),
                    int(n1), int(n2), int(n3m), int(n3p), dim_mode)


# ---------------------------------------------------------------------------
# Fields


@dataclass(frozen=True)
class Field:
    grid: SlabGrid
    minus: np.ndarray
    plus: np.ndarray
    continuous: bool = False
    dirichlet: bool = False

    @property
    def rank_shape(self) -> tuple:
        return self.minus.shape[:-3]

    @classmethod
    def from_global(cls, grid: SlabGrid, values, continuous=True, dirichlet=False) -> "Field":
        values = np.asarray(values, dtype=float)
        k = grid.interface_index
        return cls(grid, values[..., : k + 1, :, :].copy(), values[..., k:, :, :].copy(),
                   continuous, dirichlet)

    @classmethod
    def from_function(cls, grid: SlabGrid, func, **tags) -> "Field":
        """Sample ``func(y1, y2, y3, side)`` on both subdomains."""
        out = []
        for side in ("minus", "plus"):
            y1, y2, y3 = grid.mesh(side)
            val = np.asarray(func(y1, y2, y3, side), dtype=float)
            out.append(np.broadcast_to(val, val.shape[:-3] + y1.shape).copy())
        return cls(grid, out[0], out[1], **tags)

    @classmethod
    def zeros(cls, grid: SlabGrid, rank_shape=(), **tags) -> "Field":
        return cls(grid,
                   np.zeros(tuple(rank_shape) + (grid.n3m + 1, grid.n2, grid.n1)),
                   np.zeros(tuple(rank_shape) + (grid.n3p + 1, grid.n2, grid.n1)), **tags)

    def to_global(self) -> np.ndarray:
        """Stack both subdomains; the interface node is the mean of the two traces."""
        iface = 0.5 * (self.minus[..., -1:, :, :] + self.plus[..., :1, :, :])
        return np.concatenate([self.minus[..., :-1, :, :], iface, self.plus[..., 1:, :, :]], axis=-3)

    def map(self, fn) -> "Field":
        return replace(self, minus=fn(self.minus), plus=fn(self.plus))

    def __getitem__(self, idx) -> "Field":
        return replace(self, minus=self.minus[idx], plus=self.plus[idx])

    def sides(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "minus", self.minus
        yield "plus", self.plus

    def trace_minus(self) -> np.ndarray:
        return self.minus[..., -1, :, :]

    def trace_plus(self) -> np.ndarray:
        return self.plus[..., 0, :, :]

    def max_abs(self) -> float:
        return float(max(np.abs(self.minus).max(initial=0.0), np.abs(self.plus).max(initial=0.0)))

    def __add__(self, other):
        return replace(self, minus=self.minus + other.minus, plus=self.plus + other.plus)

    def __sub__(self, other):
        return replace(self, minus=self.minus - other.minus, plus=self.plus - other.plus)

    def __mul__(self, c):
        return replace(self, minus=self.minus * c, plus=self.plus * c)

    __rmul__ = __mul__


def stack_fields(fields: Sequence[Field], **tags) -> Field:
    """Stack equally-shaped fields along a new leading component axis."""
    g = fields[0].grid
    return Field(g, np.stack([f.minus for f in fields]), np.stack([f.plus for f in fields]), **tags)


# ---------------------------------------------------------------------------
# Derivatives


def _d1(a: np.ndarray, h: float) -> np.ndarray:
    """Second-order first derivative along axis -3, one-sided at both ends."""
    out = np.empty_like(a)
    out[..., 1:-1, :, :] = (a[..., 2:, :, :] - a[..., :-2, :, :]) / (2 * h)
    out[..., 0, :, :] = (-3 * a[..., 0, :, :] + 4 * a[..., 1, :, :] - a[..., 2, :, :]) / (2 * h)
    out[..., -1, :, :] = (3 * a[..., -1, :, :] - 4 * a[..., -2, :, :] + a[..., -3, :, :]) / (2 * h)
    return out


def _d2(a: np.ndarray, h: float) -> np.ndarray:
    """Second-order second derivative along axis -3, four-point one-sided at the ends."""
    out = np.empty_like(a)
    out[..., 1:-1, :, :] = (a[..., 2:, :, :] - 2 * a[..., 1:-1, :, :] + a[..., :-2, :, :]) / h**2
    out[..., 0, :, :] = (2 * a[..., 0, :, :] - 5 * a[..., 1, :, :]
                         + 4 * a[..., 2, :, :] - a[..., 3, :, :]) / h**2
    out[..., -1, :, :] = (2 * a[..., -1, :, :] - 5 * a[..., -2, :, :]
                          + 4 * a[..., -3, :, :] - a[..., -4, :, :]) / h**2
    return out


def vertical_derivative(a: np.ndarray, h: float, k3: int) -> np.ndarray:
    if k3 == 0:
        return a
    if k3 == 1:
        return _d1(a, h)
    if k3 == 2:
        return _d2(a, h)
    if k3 == 3:
        return _d1(_d2(a, h), h)
    raise CapabilityError(f"vertical derivative order {k3} > {MAX_VERTICAL_ORDER}")


def horizontal_derivative(a: np.ndarray, grid: SlabGrid, alpha_h) -> np.ndarray:
    a1, a2 = (int(x) for x in alpha_h)
    if a1 == 0 and a2 == 0:
        return a
    if a1 < 0 or a2 < 0:
        raise CapabilityError(f"negative derivative order {alpha_h}")
    spec = np.fft.rfftn(a, axes=(-2, -1))
    spec *= grid.derivative_symbols(a1, a2)
    return np.fft.irfftn(spec, s=(grid.n2, grid.n1), axes=(-2, -1))


def apply_derivative(f: Field, alpha_h=(0, 0), k3: int = 0) -> Field:
    """∂_1^a ∂_2^b ∂_3^k3 of ``f`` on each subdomain separately."""
    if k3 < 0 or k3 > MAX_VERTICAL_ORDER:
        raise CapabilityError(f"vertical derivative order {k3} not supported")
    g = f.grid
    out = []
    for arr, h in ((f.minus, g.dz_minus), (f.plus, g.dz_plus)):
        out.append(vertical_derivative(horizontal_derivative(arr, g, alpha_h), h, k3))
    return Field(g, out[0], out[1])


def gradient(f: Field) -> Field:
    """Nodal gradient; appends a trailing derivative index: (∇f)[..., l] = ∂_l f.

    The derivative axis is placed right after the component axes, i.e. a
    vector field of shape (3, nz, n2, n1) yields (3, 3, nz, n2, n1) with
    entry [i, l] = ∂_l f_i.
    """
    parts = [apply_derivative(f, (1, 0), 0), apply_derivative(f, (0, 1), 0), apply_derivative(f, (0, 0), 1)]
    r = len(f.rank_shape)
    return Field(f.grid, np.stack([p.minus for p in parts], axis=r),
                 np.stack([p.plus for p in parts], axis=r))


def divergence(f: Field) -> Field:
    """Row-wise divergence: vector -> scalar (∂_l f_l), tensor -> vector (∂_l f_il)."""
    acc = None
    for l, (alpha, k3) in enumerate((((1, 0), 0), ((0, 1), 0), ((0, 0), 1))):
        term = apply_derivative(_component(f, l), alpha, k3)
        acc = term if acc is None else acc + term
    return acc


def _component(f: Field, l: int) -> Field:
    # last component axis selects the derivative direction
    r = len(f.rank_shape)
    idx = (slice(None),) * (r - 1) + (l,)
    return f[idx]


# ---------------------------------------------------------------------------
# Quadrature and norms


def _trapezoid_weights(n_cells: int, h: float) -> np.ndarray:
    w = np.full(n_cells + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def integrate(f: Field) -> np.ndarray:
    """∫_Ω f dy per component (trapezoid in y3, exact mean horizontally)."""
    g = f.grid
    total = 0.0
    for arr, h, n in ((f.minus, g.dz_minus, g.n3m), (f.plus, g.dz_plus, g.n3p)):
        w = _trapezoid_weights(n, h)
        total = total + np.einsum("...kji,k->...", arr, w)
    return total * g.cell_area


def integrate_interface(plane: np.ndarray, grid: SlabGrid) -> np.ndarray:
    return plane.sum(axis=(-2, -1)) * grid.cell_area


@dataclass(frozen=True)
class NormSpec:
    """‖·‖_{i,j}: horizontal order i, full Sobolev order j; underline sums k <= i."""

    i: int
    j: int
    underline: bool = False

    def __post_init__(self):
        if not (0 <= self.i <= 3 and 0 <= self.j <= 3):
            raise ConfigurationError(f"norm orders must lie in [0, 3], got ({self.i}, {self.j})")


def _horizontal_indices(order: int, grid: SlabGrid):
    for a1 in range(order, -1, -1):
        a2 = order - a1
        if grid.dim_mode == "2D" and a2 > 0:
            continue
        yield (a1, a2)


def _full_indices(order_max: int, grid: SlabGrid):
    for b1, b2, b3 in itertools.product(range(order_max + 1), repeat=3):
        if b1 + b2 + b3 > order_max:
            continue
        if grid.dim_mode == "2D" and b2 > 0:
            continue
        yield b1, b2, b3


def _sq_sum(f: Field) -> float:
    return float(np.sum(integrate(f.map(np.square))))


class DerivativeCache:
    """Memoised ∫|∂^α f|² for one field; shares FFTs across norm terms."""

    def __init__(self, f: Field):
        self.f = f
        self._spec = {}
        self._horiz = {}
        self._sq = {}

    def _horizontal(self, side: str, a1: int, a2: int) -> np.ndarray:
        key = (side, a1, a2)
        if key not in self._horiz:
            arr = getattr(self.f, side)
            if a1 == 0 and a2 == 0:
                out = arr
            else:
                if side not in self._spec:
                    self._spec[side] = np.fft.rfftn(arr, axes=(-2, -1))
                g = self.f.grid
                out = np.fft.irfftn(self._spec[side] * g.derivative_symbols(a1, a2),
                                    s=(g.n2, g.n1), axes=(-2, -1))
            self._horiz[key] = out
        return self._horiz[key]

    def sq(self, a1: int, a2: int, k3: int) -> float:
        key = (a1, a2, k3)
        if key not in self._sq:
            if k3 > MAX_VERTICAL_ORDER:
                raise CapabilityError(f"vertical derivative order {k3} not supported")
            g = self.f.grid
            parts = [vertical_derivative(self._horizontal(side, a1, a2), h, k3)
                     for side, h in (("minus", g.dz_minus), ("plus", g.dz_plus))]
            self._sq[key] = _sq_sum(Field(g, parts[0], parts[1]))
        return self._sq[key]


def norm_sq_component(f: Field, i: int, j: int, cache: DerivativeCache | None = None) -> float:
    """‖f‖_{i,j}^2 = Σ_{|α|=i} ‖∂_h^α f‖_j^2 (fixed horizontal order)."""
    g = f.grid
    cache = cache or DerivativeCache(f)
    total = 0.0
    for a1, a2 in _horizontal_indices(i, g):
        for b1, b2, b3 in _full_indices(j, g):
            total += cache.sq(a1 + b1, a2 + b2, b3)
    return total


def norm_sq(f: Field, spec: NormSpec, cache: DerivativeCache | None = None) -> float:
    cache = cache or DerivativeCache(f)
    if spec.underline:
        return float(sum(norm_sq_component(f, k, spec.j, cache) for k in range(spec.i + 1)))
    return norm_sq_component(f, spec.i, spec.j, cache)


def norm(f: Field, spec: NormSpec) -> float:
    return float(np.sqrt(norm_sq(f, spec)))


def interface_jump(f: Field) -> np.ndarray:
    """⟦f⟧ = f₊ − f₋ on the plane y3 = 0."""
    return f.trace_plus() - f.trace_minus()


# ---------------------------------------------------------------------------
# Snapshot export


def export_snapshot_csv(f: Field, path, name: str = "field", t: float | None = None) -> None:
    """Write ``f`` as CSV.

    Header lines start with ``#``: a JSON grid descriptor, then the rank
    shape, field name and time.  Rows follow in node order
    (subdomain, i3, i2, i1) with i1 fastest; columns are
    ``subdomain,i3,i2,i1,y1,y2,y3,c0,c1,...`` where the components are the
    flattened rank axes in C order.
    """
    g = f.grid
    ncomp = int(np.prod(f.rank_shape)) if f.rank_shape else 1
    with open(path, "w", newline="") as fh:
        fh.write("# grid " + json.dumps(g.describe()) + "\n")
        fh.write("# rank " + json.dumps(list(f.rank_shape)) + "\n")
        fh.write("# name " + name + "\n")
        fh.write("# t " + ("nan" if t is None else repr(float(t))) + "\n")
        w = csv.writer(fh)
        w.writerow(["subdomain", "i3", "i2", "i1", "y1", "y2", "y3"] + [f"c{k}" for k in range(ncomp)])
        for side, arr in f.sides():
            flat = arr.reshape((ncomp,) + arr.shape[-3:])
            y1, y2, y3 = g.mesh(side)
            for i3, i2, i1 in np.ndindex(*arr.shape[-3:]):
                w.writerow([side, i3, i2, i1, repr(y1[i3, i2, i1]), repr(y2[i3, i2, i1]),
                            repr(y3[i3, i2, i1])] + [repr(float(v)) for v in flat[:, i3, i2, i1]])


def read_snapshot_csv(path) -> tuple[Field, dict]:
    meta = {}
    with open(path) as fh:
        lines = fh.readlines()
    body = []
    for line in lines:
        if line.startswith("# "):
            key, _, val = line[2:].rstrip("\n").partition(" ")
            meta[key] = val
        else:
            body.append(line)
    g = build_grid(**json.loads(meta["grid"]))
    rank = tuple(json.loads(meta["rank"]))
    ncomp = int(np.prod(rank)) if rank else 1
    reader = csv.reader(body)
    next(reader)
    arrs = {"minus": np.zeros((ncomp, g.n3m + 1, g.n2, g.n1)),
            "plus": np.zeros((ncomp, g.n3p + 1, g.n2, g.n1))}
    for row in reader:
        side, i3, i2, i1 = row[0], int(row[1]), int(row[2]), int(row[3])
        arrs[side][:, i3, i2, i1] = [float(v) for v in row[7:]]
    out = Field(g, arrs["minus"].reshape(rank + arrs["minus"].shape[1:]),
                arrs["plus"].reshape(rank + arrs["plus"].shape[1:]))
    return out, {"name": meta.get("name"), "t": float(meta.get("t", "nan"))}
