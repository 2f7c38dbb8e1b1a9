"""Dirichlet finite-difference grids with exact discrete duality.

Scalar state lives on interior nodes; fluxes live on faces between nodes
(staggered, one normal component per face, boundary faces included).  The
gradient is a forward difference with ghost zeros outside the boundary and
the divergence is defined as its negative adjoint under the h-weighted inner
products, so summation by parts holds to machine precision and div(grad(u))
is the classical 3-point / 5-point Dirichlet Laplacian.

All array operations accept trailing batch axes after the grid axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DirichletGrid",
    "GridField",
    "FluxField",
    "SpectralBounds",
    "spectral_bounds",
    "gradient",
    "divergence",
    "laplacian",
    "grad_arrays",
    "div_arrays",
    "lap_arrays",
    "dot_h",
    "norm_h",
    "flux_dot_h",
    "flux_norm_h",
    "sine_eigenvalue",
    "sine_mode",
    "sine_eigenpairs",
    "lambda_max",
    "power_iteration_lambda_max",
    "cg_solve",
    "laplacian_resolvent",
    "dual_norm_v0",
    "node_coordinates",
    "field_from_function",
    "write_field",
    "read_field",
]

CG_RTOL = 1e-12


@dataclass(frozen=True)
class DirichletGrid:
    """Uniform interior grid on a 1-d interval or 2-d rectangle, u = 0 on the boundary."""

    extents: tuple
    nodes: tuple

    def __post_init__(self):
        extents = tuple(float(e) for e in self.extents)
        nodes = tuple(int(n) for n in self.nodes)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "nodes", nodes)
        if len(extents) != len(nodes) or len(extents) not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        if any(e <= 0 for e in extents):
            raise ValueError("extents must be positive")
        if any(n < 3 for n in nodes):
            raise ValueError("need at least 3 interior nodes per axis")

    @property
    def dim(self):
        return len(self.nodes)

    @property
    def spacing(self):
        return tuple(e / (n + 1) for e, n in zip(self.extents, self.nodes))

    @property
    def node_volume(self):
        return math.prod(self.spacing)

    @property
    def shape(self):
        return self.nodes

    def face_shapes(self):
        return tuple(
            tuple(n + 1 if a == ax else n for a, n in enumerate(self.nodes))
            for ax in range(self.dim)
        )


@dataclass(frozen=True)
class GridField:
    """Scalar values on the interior nodes of a grid."""

    grid: DirichletGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[: self.grid.dim] != self.grid.shape or v.ndim != self.grid.dim:
            raise ValueError(f"value shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite field values")
        object.__setattr__(self, "values", v)

    def norm(self):
        return norm_h(self.grid, self.values)


@dataclass(frozen=True)
class FluxField:
    """One normal component per face, per axis (staggered layout)."""

    grid: DirichletGrid
    components: tuple

    def __post_init__(self):
        comps = tuple(np.asarray(c, dtype=float) for c in self.components)
        expected = self.grid.face_shapes()
        if len(comps) != self.grid.dim or any(
            c.shape != s for c, s in zip(comps, expected)
        ):
            raise ValueError("flux component shapes do not match the grid face layout")
        if any(not np.all(np.isfinite(c)) for c in comps):
            raise ValueError("non-finite flux values")
        object.__setattr__(self, "components", comps)


# ---------------------------------------------------------------------------
# raw array operators (grid axes first, arbitrary trailing batch axes)
# ---------------------------------------------------------------------------

def _pad_axis(u, axis):
    pad = [(0, 0)] * u.ndim
    pad[axis] = (1, 1)
    return np.pad(u, pad)


def grad_arrays(grid, u):
    """Forward differences onto faces; returns one array per axis."""
    out = []
    for ax, h in enumerate(grid.spacing):
        p = _pad_axis(u, ax)
        out.append(np.diff(p, axis=ax) / h)
    return out


def div_arrays(grid, comps):
    """Negative adjoint of ``grad_arrays`` (backward difference of face values)."""
    acc = None
    for ax, (c, h) in enumerate(zip(comps, grid.spacing)):
        d = np.diff(c, axis=ax) / h
        acc = d if acc is None else acc + d
    return acc


def lap_arrays(grid, u):
    return div_arrays(grid, grad_arrays(grid, u))


def gradient(grid, field: GridField) -> FluxField:
    if field.grid != grid:
        raise ValueError("field does not live on this grid")
    return FluxField(grid, tuple(grad_arrays(grid, field.values)))


def divergence(grid, flux: FluxField) -> GridField:
    if flux.grid != grid:
        raise ValueError("flux does not live on this grid")
    return GridField(grid, div_arrays(grid, flux.components))


def laplacian(grid, field: GridField) -> GridField:
    return GridField(grid, lap_arrays(grid, field.values))


def _grid_sum(grid, a):
    return np.sum(a, axis=tuple(range(grid.dim)))


def dot_h(grid, a, b):
    """h-weighted inner product of node arrays (batch axes preserved)."""
    return grid.node_volume * _grid_sum(grid, a * b)


def norm_h(grid, a):
    return np.sqrt(dot_h(grid, a, a))


def flux_dot_h(grid, f, g):
    comps_f = f.components if isinstance(f, FluxField) else f
    comps_g = g.components if isinstance(g, FluxField) else g
    return grid.node_volume * sum(
        _grid_sum(grid, cf * cg) for cf, cg in zip(comps_f, comps_g)
    )


def flux_norm_h(grid, f):
    return np.sqrt(flux_dot_h(grid, f, f))


# ---------------------------------------------------------------------------
# sine eigenpairs of the discrete Dirichlet Laplacian
# ---------------------------------------------------------------------------

def _axis_eigenvalue(h, n, k):
    return (4.0 / h**2) * math.sin(k * math.pi / (2 * (n + 1))) ** 2


def _axis_mode(extent, n, k):
    i = np.arange(1, n + 1)
    vec = np.sin(k * math.pi * i / (n + 1))
    return math.sqrt(2.0 / extent) * vec


def sine_eigenvalue(grid, k):
    """Eigenvalue of ``-lap`` for mode index k (int in 1d, pair in 2d, 1-based)."""
    ks = (k,) if np.isscalar(k) else tuple(k)
    if len(ks) != grid.dim:
        raise ValueError("mode index arity does not match grid dimension")
    for kk, n in zip(ks, grid.nodes):
        if not 1 <= kk <= n:
            raise ValueError(f"mode index {kk} out of range 1..{n}")
    return sum(
        _axis_eigenvalue(h, n, kk) for h, n, kk in zip(grid.spacing, grid.nodes, ks)
    )


def sine_mode(grid, k):
    """h-orthonormal sine eigenvector for mode index k."""
    ks = (k,) if np.isscalar(k) else tuple(k)
    axes = [
        _axis_mode(e, n, kk) for e, n, kk in zip(grid.extents, grid.nodes, ks)
    ]
    if grid.dim == 1:
        return axes[0]
    return np.multiply.outer(axes[0], axes[1])


_EIG_CACHE: dict = {}


def sine_eigenpairs(grid, K):
    """First K eigenpairs sorted by eigenvalue: ``(alphas (K,), modes (K, *nodes))``."""
    key = (grid, int(K))
    hit = _EIG_CACHE.get(key)
    if hit is not None:
        return hit
    if grid.dim == 1:
        indices = [(k,) for k in range(1, grid.nodes[0] + 1)]
    else:
        indices = [
            (k, l)
            for k in range(1, grid.nodes[0] + 1)
            for l in range(1, grid.nodes[1] + 1)
        ]
    if K > len(indices):
        raise ValueError(f"requested {K} modes but the grid supports only {len(indices)}")
    indices.sort(key=lambda ks: (sine_eigenvalue(grid, ks), ks))
    chosen = indices[:K]
    alphas = np.array([sine_eigenvalue(grid, ks) for ks in chosen])
    modes = np.stack([sine_mode(grid, ks if grid.dim > 1 else ks[0]) for ks in chosen])
    _EIG_CACHE[key] = (alphas, modes)
    return alphas, modes


def lambda_max(grid):
    """Largest eigenvalue of ``-lap``: the top sine mode on every axis."""
    return sum(
        _axis_eigenvalue(h, n, n) for h, n in zip(grid.spacing, grid.nodes)
    )


def power_iteration_lambda_max(grid, iters=2000, seed=7):
    """Direct power-iteration estimate of the top eigenvalue of ``-lap``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(grid.shape)
    v /= norm_h(grid, v)
    lam = 0.0
    for _ in range(iters):
        w = -lap_arrays(grid, v)
        lam = dot_h(grid, v, w)
        v = w / norm_h(grid, w)
    return float(lam)


@dataclass(frozen=True)
class SpectralBounds:
    """Operator-norm metadata: top eigenvalue plus leading eigenpairs."""

    lambda_max: float
    alphas: np.ndarray
    modes: np.ndarray


def spectral_bounds(grid, K=None):
    K = K if K is not None else min(16, math.prod(grid.nodes))
    alphas, modes = sine_eigenpairs(grid, K)
    return SpectralBounds(lambda_max(grid), alphas, modes)


# ---------------------------------------------------------------------------
# SPD solves
# ---------------------------------------------------------------------------

def _bexpand(grid, v):
    """Expand a batch-shaped scalar so it broadcasts against node arrays."""
    return np.asarray(v)[(None,) * grid.dim + (...,)]


def cg_solve(grid, apply_op, b, diag, rtol=CG_RTOL, max_iter=None):
    """Matrix-free conjugate gradients with Jacobi (diagonal) scaling.

    ``apply_op`` maps node arrays to node arrays and must be SPD in the
    h-weighted inner product; ``diag`` is its (constant) diagonal.  Batched
    right-hand sides converge when every column passes the relative test.
    """
    b = np.asarray(b, dtype=float)
    if max_iter is None:
        max_iter = 20 * math.prod(grid.nodes)
    bnorm = np.sqrt(_grid_sum(grid, b * b))
    if np.all(bnorm == 0.0):
        return np.zeros_like(b)
    x = b / diag
    r = b - apply_op(x)
    z = r / diag
    p = z.copy()
    rz = _grid_sum(grid, r * z)
    for _ in range(max_iter):
        rn = np.sqrt(_grid_sum(grid, r * r))
        if np.all(rn <= rtol * bnorm):
            return x
        ap = apply_op(p)
        pap = _grid_sum(grid, p * ap)
        if np.any(pap <= 0.0):
            raise RuntimeError("CG breakdown: operator is not positive definite")
        alpha = np.where(pap > 0.0, rz / pap, 0.0)
        x = x + _bexpand(grid, alpha) * p
        r = r - _bexpand(grid, alpha) * ap
        z = r / diag
        rz_new = _grid_sum(grid, r * z)
        beta = np.where(rz > 0.0, rz_new / rz, 0.0)
        p = z + _bexpand(grid, beta) * p
        rz = rz_new
    raise RuntimeError(f"CG did not converge in {max_iter} iterations")


def resolvent_arrays(grid, delta, m, u):
    """Apply ``(I - delta*lap)**(-m)`` to a node array (batch axes allowed)."""
    if delta < 0.0:
        raise ValueError("delta must be >= 0")
    if int(m) != m or m < 1:
        raise ValueError("m must be an integer >= 1")
    u = np.asarray(u, dtype=float)
    if delta == 0.0:
        return u.copy()

    def op(v):
        return v - delta * lap_arrays(grid, v)

    diag = 1.0 + delta * sum(2.0 / h**2 for h in grid.spacing)
    out = u
    for _ in range(int(m)):
        out = cg_solve(grid, op, out, diag)
    return out


def laplacian_resolvent(grid, delta, m, field: GridField) -> GridField:
    """Elliptic smoothing ``(I - delta*lap)**(-m)``; nonexpansive for delta >= 0."""
    return GridField(grid, resolvent_arrays(grid, delta, m, field.values))


def dual_norm_v0(grid, f, m=2):
    """Norm of ``(I - lap)**(-m) f``: a discrete proxy for the negative-order dual norm.

    Vanishes iff ``f = 0``; used to compare drift functionals across runs.
    """
    vals = f.values if isinstance(f, GridField) else np.asarray(f, dtype=float)
    return norm_h(grid, resolvent_arrays(grid, 1.0, m, vals))


# ---------------------------------------------------------------------------
# coordinates and serialization
# ---------------------------------------------------------------------------

def node_coordinates(grid):
    """Coordinate arrays of the interior nodes (meshgrid 'ij' layout in 2d)."""
    axes = [
        h * np.arange(1, n + 1) for h, n in zip(grid.spacing, grid.nodes)
    ]
    if grid.dim == 1:
        return (axes[0],)
    return tuple(np.meshgrid(*axes, indexing="ij"))


def field_from_function(grid, fn) -> GridField:
    coords = node_coordinates(grid)
    return GridField(grid, np.asarray(fn(*coords), dtype=float))


def write_field(field: GridField, path):
    """Flat text, one value per line, row-major, after a single header line."""
    g = field.grid
    header = " ".join(
        [str(g.dim)] + [f"{e!r}" for e in g.extents] + [str(n) for n in g.nodes]
    )
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for v in field.values.ravel(order="C"):
            fh.write(f"{v:.17g}\n")


def read_field(path, grid=None) -> GridField:
    with open(path) as fh:
        header = fh.readline().split()
        body = [float(line) for line in fh if line.strip()]
    d = int(header[0])
    extents = tuple(float(t) for t in header[1 : 1 + d])
    nodes = tuple(int(t) for t in header[1 + d : 1 + 2 * d])
    file_grid = DirichletGrid(extents, nodes)
    if grid is not None and grid != file_grid:
        raise ValueError(f"{path}: grid in file {file_grid} does not match {grid}")
    values = np.array(body).reshape(nodes)
    return GridField(file_grid, values)
