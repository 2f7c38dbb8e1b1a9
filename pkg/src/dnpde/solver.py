"""Implicit variational time stepping for the regularized evolution equation.

Each step of the implicit scheme minimizes

    F(v) = ||v - forcing||^2 / (2 dt) + (lam_visc/2) ||grad v||^2
           + sum_faces vol * k_lam(grad v) + sum_nodes vol * j_lam(v),

whose optimality condition is the backward Euler step of ``du - lam_visc *
lap(u) dt - div gamma_lam(grad u) dt + beta_lam(u) dt = 0`` applied to the
noise-augmented forcing (explicit Euler-Maruyama treatment of the noise).
``k_lam`` and ``j_lam`` are Moreau envelopes, so the objective is smooth and
strongly convex and is solved by accelerated gradient descent with the
certified step 1/L.

On staggered grids every face carries one gradient component, and the flux
graph is applied facewise through its scalar profile; in 1d this is exactly
the (possibly multivalued) graph of the problem.

A cheaper semi-implicit variant treats the monotone terms explicitly under a
stability restriction and shares the same limit as dt and the regularization
vanish.  The batched entry points integrate many independent noise paths at
once (fixed chunk size, so results never depend on worker count).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from dnpde import convex
from dnpde import grid as gridmod
from dnpde import noise as noisemod
from dnpde.grid import DirichletGrid, GridField

__all__ = [
    "SolverConfig",
    "StateRecord",
    "Trajectory",
    "SolverError",
    "StabilityError",
    "InnerSolveError",
    "implicit_step",
    "semi_implicit_step",
    "integrate",
    "integrate_batch",
    "run_ensemble",
    "energy_residual",
    "initial_datum",
    "write_trajectory_csv",
    "LEDGER_COLUMNS",
]

ENSEMBLE_CHUNK = 64   # fixed path-chunk size: results independent of worker count

LEDGER_COLUMNS = (
    "norm_u_sq",
    "pairing_eta_gradu",
    "pairing_xi_u",
    "hs_sq",
    "stoch_pairing",
)


class SolverError(RuntimeError):
    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class StabilityError(SolverError):
    """Semi-implicit stability bound violated; the run is refused."""


class InnerSolveError(SolverError):
    """Inner optimizer failed (max iterations or non-finite iterate)."""


@dataclass
class SolverConfig:
    grid: DirichletGrid
    gamma: convex.Potential | None
    beta: convex.Potential | None
    noise: noisemod.NoiseModel | None
    lambda_yosida: float
    dt: float
    horizon: float
    lambda_visc: float | None = None   # None ties it to lambda_yosida
    scheme: str = "implicit_opt"
    eps_inner: float = 1e-10
    max_inner: int = 200_000

    def __post_init__(self):
        if not self.lambda_yosida > 0:
            raise ValueError("lambda_yosida must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon < self.dt:
            raise ValueError("horizon must be at least dt")
        if self.scheme not in ("implicit_opt", "semi_implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        for pot in (self.gamma, self.beta):
            if pot is not None and pot.is_vector:
                raise ValueError("solver potentials are scalar profiles applied facewise")
        n = round(self.horizon / self.dt)
        if n < 1 or abs(n * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ValueError("horizon must be an integer multiple of dt")

    @property
    def visc(self):
        return self.lambda_yosida if self.lambda_visc is None else self.lambda_visc

    @property
    def n_steps(self):
        return round(self.horizon / self.dt)

    def stability_bound(self):
        """Semi-implicit restriction: dt*(lambda_max/lam + 1/lam) <= 1."""
        lmax = gridmod.lambda_max(self.grid)
        return self.dt * (lmax / self.lambda_yosida + 1.0 / self.lambda_yosida)


def _yosida_fn(pot, lam):
    if pot is None:
        return None
    if pot.closed_resolvent_available:
        def f(a):
            return (a - pot.closed_resolvent(lam, a)) / lam
    else:
        def f(a):
            return (a - convex._bisect_scalar_graph(pot, lam, a)) / lam
    return f


@dataclass
class _Problem:
    """Precomputed per-config stepping data."""

    cfg: SolverConfig
    gamma_yos: object
    beta_yos: object
    lip: float          # gradient Lipschitz bound L of the step objective
    momentum: float
    visc_diag: float    # diagonal of I - dt*visc*lap

    @classmethod
    def build(cls, cfg):
        lmax = gridmod.lambda_max(cfg.grid)
        lam = cfg.lambda_yosida
        lip = 1.0 / cfg.dt + (cfg.visc + 1.0 / lam) * lmax + 1.0 / lam
        mu = 1.0 / cfg.dt
        rl, rm = math.sqrt(lip), math.sqrt(mu)
        momentum = (rl - rm) / (rl + rm)
        visc_diag = 1.0 + cfg.dt * cfg.visc * sum(
            2.0 / h**2 for h in cfg.grid.spacing
        )
        return cls(
            cfg,
            _yosida_fn(cfg.gamma, lam),
            _yosida_fn(cfg.beta, lam),
            lip,
            momentum,
            visc_diag,
        )


def _grad_objective(pb, v, forcing):
    """h-weighted gradient of the implicit-step objective at v."""
    cfg = pb.cfg
    g = gridmod.grad_arrays(cfg.grid, v)
    flux = []
    for ga in g:
        fa = cfg.visc * ga
        if pb.gamma_yos is not None:
            fa = fa + pb.gamma_yos(ga)
        flux.append(fa)
    out = (v - forcing) / cfg.dt - gridmod.div_arrays(cfg.grid, flux)
    if pb.beta_yos is not None:
        out = out + pb.beta_yos(v)
    return out


def _implicit_step_arrays(pb, u, forcing):
    """Accelerated gradient descent to the certified gradient-norm tolerance."""
    cfg = pb.cfg
    x = u
    y = u
    for _ in range(cfg.max_inner):
        g = _grad_objective(pb, y, forcing)
        gn = gridmod.norm_h(cfg.grid, g)
        if not np.all(np.isfinite(gn)):
            raise InnerSolveError("non-finite iterate in the inner optimizer")
        if np.max(gn) <= cfg.eps_inner:
            return y
        x_new = y - g / pb.lip
        y = x_new + pb.momentum * (x_new - x)
        x = x_new
    raise InnerSolveError(
        f"inner optimizer exceeded {cfg.max_inner} iterations "
        f"(gradient norm {float(np.max(gn)):.3e} > {cfg.eps_inner:.1e})"
    )


def _semi_implicit_step_arrays(pb, u, forcing):
    cfg = pb.cfg
    bound = cfg.stability_bound()
    if bound > 1.0:
        raise StabilityError(
            "semi-implicit stability violated: "
            f"dt*(lambda_max + 1)/lambda_yosida = {bound:.6g} > 1"
        )
    rhs = forcing
    if pb.gamma_yos is not None:
        g = gridmod.grad_arrays(cfg.grid, u)
        eta = [pb.gamma_yos(ga) for ga in g]
        rhs = rhs + cfg.dt * gridmod.div_arrays(cfg.grid, eta)
    if pb.beta_yos is not None:
        rhs = rhs - cfg.dt * pb.beta_yos(u)
    if cfg.visc == 0.0:
        return rhs

    def op(v):
        return v - cfg.dt * cfg.visc * gridmod.lap_arrays(cfg.grid, v)

    return gridmod.cg_solve(cfg.grid, op, rhs, pb.visc_diag)


def implicit_step(cfg, u_n: GridField, forcing: GridField) -> GridField:
    """One implicit variational step from precomputed forcing."""
    pb = _Problem.build(cfg)
    return GridField(cfg.grid, _implicit_step_arrays(pb, u_n.values, forcing.values))


def semi_implicit_step(cfg, u_n: GridField, forcing: GridField) -> GridField:
    """One semi-implicit step: monotone terms explicit, viscosity implicit."""
    pb = _Problem.build(cfg)
    return GridField(cfg.grid, _semi_implicit_step_arrays(pb, u_n.values, forcing.values))


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass
class StateRecord:
    index: int
    t: float
    u: np.ndarray
    eta: tuple          # face arrays, gamma_lam(grad u)
    xi: np.ndarray | None
    norm_u_sq: float
    pairing_eta_gradu: float
    pairing_xi_u: float
    hs_sq: float
    stoch_pairing: float

    def ledger(self):
        return tuple(getattr(self, c) for c in LEDGER_COLUMNS)


@dataclass
class Trajectory:
    config: SolverConfig
    seed: noisemod.PathSeed | None
    records: list
    energy_residual: float = 0.0
    max_graph_residual: float | None = None

    @property
    def grid(self):
        return self.config.grid

    def times(self):
        return np.array([r.t for r in self.records])

    def states(self):
        return np.stack([r.u for r in self.records])

    def ledger_column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def terminal(self) -> GridField:
        return GridField(self.grid, self.records[-1].u)


def _make_record(cfg, pb, n, u, noise_field, hs2):
    g = cfg.grid
    faces = gridmod.grad_arrays(g, u)
    if pb.gamma_yos is not None:
        eta = tuple(pb.gamma_yos(ga) for ga in faces)
        pair_eta = float(gridmod.flux_dot_h(g, eta, faces))
    else:
        eta = tuple(np.zeros_like(ga) for ga in faces)
        pair_eta = 0.0
    if pb.beta_yos is not None:
        xi = pb.beta_yos(u)
        pair_xi = float(gridmod.dot_h(g, xi, u))
    else:
        xi = None
        pair_xi = 0.0
    stoch = float(gridmod.dot_h(g, u, noise_field)) if noise_field is not None else 0.0
    return StateRecord(
        index=n,
        t=n * cfg.dt,
        u=u,
        eta=eta,
        xi=xi,
        norm_u_sq=float(gridmod.dot_h(g, u, u)),
        pairing_eta_gradu=pair_eta,
        pairing_xi_u=pair_xi,
        hs_sq=hs2,
        stoch_pairing=stoch,
    )


def _graph_residual(cfg, records):
    """Max Fenchel residual of (resolvent point, Yosida value) over the run."""
    worst = 0.0
    lam = cfg.lambda_yosida
    for pot, pick in ((cfg.gamma, "eta"), (cfg.beta, "xi")):
        if pot is None or not pot.closed_conjugate_available:
            continue
        for rec in records:
            if pick == "eta":
                xs = np.concatenate([c.ravel() for c in gridmod.grad_arrays(cfg.grid, rec.u)])
                ys = np.concatenate([c.ravel() for c in rec.eta])
            else:
                xs = rec.u.ravel()
                ys = rec.xi.ravel()
            j = convex.resolvent(pot, lam, xs)
            res = convex.fenchel_residual(pot, j, ys)
            worst = max(worst, float(np.max(np.abs(res))) if res.size else 0.0)
    return worst


def integrate(cfg, u0: GridField, seed=None, increments=None) -> Trajectory:
    """Integrate one path, recording the triplet (u, eta, xi) and the ledger.

    Deterministic given (cfg, u0, seed); the noise increment table can also
    be passed explicitly for coupled-path studies.
    """
    if u0.grid != cfg.grid:
        raise ValueError("initial datum does not live on the solver grid")
    pb = _Problem.build(cfg)
    n_steps = cfg.n_steps
    model = cfg.noise
    if model is not None and increments is None:
        if seed is None:
            raise ValueError("a PathSeed is required when the config carries noise")
        increments = noisemod.sample_increments(seed, n_steps, cfg.dt, model.mode_count)
    if increments is not None and len(increments) != n_steps:
        raise ValueError("increment table does not cover the whole horizon")

    step_fn = (
        _implicit_step_arrays if cfg.scheme == "implicit_opt" else _semi_implicit_step_arrays
    )
    if cfg.scheme == "semi_implicit":
        bound = cfg.stability_bound()
        if bound > 1.0:
            raise StabilityError(
                "semi-implicit stability violated before step 1: "
                f"dt*(lambda_max + 1)/lambda_yosida = {bound:.6g} > 1"
            )

    u = np.array(u0.values, dtype=float)
    records = []
    for n in range(n_steps):
        if model is not None:
            dw = increments[n]
            noise_field = noisemod.apply_b(model, cfg.grid, u, dw)
            hs2 = float(noisemod.hs_norm(model, cfg.grid, u) ** 2)
        else:
            noise_field, hs2 = None, 0.0
        records.append(_make_record(cfg, pb, n, u, noise_field, hs2))
        forcing = u + noise_field if noise_field is not None else u
        try:
            u = step_fn(pb, u, forcing)
        except SolverError as err:
            err.step_index = n + 1
            raise
    hs2 = float(noisemod.hs_norm(model, cfg.grid, u) ** 2) if model is not None else 0.0
    records.append(_make_record(cfg, pb, n_steps, u, None, hs2))

    traj = Trajectory(cfg, seed, records)
    traj.energy_residual = energy_residual(traj)
    traj.max_graph_residual = _graph_residual(cfg, records)
    return traj


def energy_residual(traj: Trajectory) -> float:
    """Discrete energy-ledger residual of the squared-norm identity.

    Dissipation pairings enter at the implicit endpoints, the quadratic
    variation and the stochastic pairing at the explicit ones.  For a single
    path this is noise of order sqrt(dt); averaged over paths it is O(dt).
    """
    r = traj.records
    if not r:
        raise ValueError("incomplete ledger")
    dt = traj.config.dt
    half_tail = 0.5 * r[-1].norm_u_sq - 0.5 * r[0].norm_u_sq
    diss = dt * sum(rec.pairing_eta_gradu + rec.pairing_xi_u for rec in r[1:])
    quad = 0.5 * dt * sum(rec.hs_sq for rec in r[:-1])
    mart = sum(rec.stoch_pairing for rec in r[:-1])
    return half_tail + diss - quad - mart


# ---------------------------------------------------------------------------
# batched Monte Carlo integration
# ---------------------------------------------------------------------------

@dataclass
class BatchResult:
    """Per-path ledgers (rows = record index, columns = path) and end state."""

    config: SolverConfig
    ledgers: dict
    terminal: np.ndarray              # (*nodes, n_paths)
    states: np.ndarray | None = None  # (n_records, *nodes, n_paths) if kept

    @property
    def n_paths(self):
        return self.terminal.shape[-1]

    def energy_residuals(self):
        dt = self.config.dt
        led = self.ledgers
        half = 0.5 * (led["norm_u_sq"][-1] - led["norm_u_sq"][0])
        diss = dt * (led["pairing_eta_gradu"][1:] + led["pairing_xi_u"][1:]).sum(axis=0)
        quad = 0.5 * dt * led["hs_sq"][:-1].sum(axis=0)
        mart = led["stoch_pairing"][:-1].sum(axis=0)
        return half + diss - quad - mart


def _batch_ledger_row(cfg, pb, u, noise_field, model):
    g = cfg.grid
    faces = gridmod.grad_arrays(g, u)
    if pb.gamma_yos is not None:
        eta = [pb.gamma_yos(ga) for ga in faces]
        pair_eta = gridmod.flux_dot_h(g, eta, faces)
    else:
        pair_eta = np.zeros(u.shape[g.dim:])
    if pb.beta_yos is not None:
        pair_xi = gridmod.dot_h(g, pb.beta_yos(u), u)
    else:
        pair_xi = np.zeros(u.shape[g.dim:])
    if model is not None:
        hs2 = noisemod.hs_norm(model, g, u) ** 2
    else:
        hs2 = np.zeros(u.shape[g.dim:])
    if noise_field is not None:
        stoch = gridmod.dot_h(g, u, noise_field)
    else:
        stoch = np.zeros(u.shape[g.dim:])
    return {
        "norm_u_sq": gridmod.dot_h(g, u, u),
        "pairing_eta_gradu": pair_eta,
        "pairing_xi_u": pair_xi,
        "hs_sq": hs2,
        "stoch_pairing": stoch,
    }


def integrate_batch(cfg, u0, increments, keep_states=False) -> BatchResult:
    """Integrate many paths at once.

    ``u0`` has shape (*nodes,) or (*nodes, P); ``increments`` has shape
    (n_steps, K, P) (or None for deterministic runs, in which case P comes
    from u0).  Paths evolve independently; the inner optimizer stops when
    every path satisfies the gradient tolerance, so each path's step is
    certified individually.
    """
    pb = _Problem.build(cfg)
    g = cfg.grid
    model = cfg.noise
    n_steps = cfg.n_steps
    u0 = np.asarray(u0, dtype=float)
    if increments is not None:
        n_paths = increments.shape[-1]
        if increments.shape[0] != n_steps or increments.shape[1] != model.mode_count:
            raise ValueError("increment table shape mismatch")
    else:
        n_paths = u0.shape[-1] if u0.ndim > g.dim else 1
    if u0.ndim == g.dim:
        u = np.repeat(u0[..., None], n_paths, axis=-1)
    else:
        u = u0.copy()

    step_fn = (
        _implicit_step_arrays if cfg.scheme == "implicit_opt" else _semi_implicit_step_arrays
    )
    rows = []
    states = [u.copy()] if keep_states else None
    for n in range(n_steps):
        if model is not None and increments is not None:
            noise_field = noisemod.apply_b(model, g, u, increments[n])
        else:
            noise_field = None
        rows.append(_batch_ledger_row(cfg, pb, u, noise_field, model))
        forcing = u + noise_field if noise_field is not None else u
        try:
            u = step_fn(pb, u, forcing)
        except SolverError as err:
            err.step_index = n + 1
            raise
        if keep_states:
            states.append(u.copy())
    rows.append(_batch_ledger_row(cfg, pb, u, None, model))

    ledgers = {
        name: np.stack([np.atleast_1d(row[name]) for row in rows]) for name in LEDGER_COLUMNS
    }
    return BatchResult(
        cfg,
        ledgers,
        u if u.ndim > g.dim else u[..., None],
        np.stack(states) if keep_states else None,
    )


def run_ensemble(cfg, u0, master_seed, n_paths, jobs=1, keep_states=False, fine_dt=None):
    """Monte Carlo ensemble with per-path counter-based seeds.

    Paths are processed in fixed-size chunks and reassembled in chunk order,
    so the result is bitwise independent of ``jobs``.  When ``fine_dt`` is
    given, increments are drawn at that resolution and aggregated to the
    configured dt, coupling ensembles across a dt-refinement ladder to the
    same Brownian paths.
    """
    if cfg.noise is None:
        raise ValueError("ensemble runs need a noise model")
    K = cfg.noise.mode_count
    n_steps = cfg.n_steps
    factor = 1
    if fine_dt is not None:
        factor = round(cfg.dt / fine_dt)
        if factor < 1 or abs(factor * fine_dt - cfg.dt) > 1e-9 * cfg.dt:
            raise ValueError("fine_dt must divide dt")
    chunks = [
        range(lo, min(lo + ENSEMBLE_CHUNK, n_paths))
        for lo in range(0, n_paths, ENSEMBLE_CHUNK)
    ]

    def path_table(i):
        if factor == 1:
            return noisemod.sample_increments(
                noisemod.PathSeed(master_seed, i), n_steps, cfg.dt, K
            )
        fine = noisemod.sample_increments(
            noisemod.PathSeed(master_seed, i), n_steps * factor, fine_dt, K
        )
        return noisemod.aggregate_increments(fine, factor)

    def run_chunk(idx_range):
        inc = np.stack([path_table(i) for i in idx_range], axis=-1)
        return integrate_batch(cfg, u0, inc, keep_states=keep_states)

    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_chunk, chunks))
    else:
        results = [run_chunk(c) for c in chunks]

    ledgers = {
        name: np.concatenate([r.ledgers[name] for r in results], axis=-1)
        for name in LEDGER_COLUMNS
    }
    terminal = np.concatenate([r.terminal for r in results], axis=-1)
    states = (
        np.concatenate([r.states for r in results], axis=-1) if keep_states else None
    )
    return BatchResult(cfg, ledgers, terminal, states)


# ---------------------------------------------------------------------------
# initial data and export
# ---------------------------------------------------------------------------

def initial_datum(grid, kind, mode=1, amplitude=1.0, path=None) -> GridField:
    """Catalog of deterministic initial data: zero, eigenmode, bump, file."""
    if kind == "zero":
        return GridField(grid, np.zeros(grid.shape))
    if kind == "eigenmode":
        k = mode if grid.dim == 1 else (mode, mode) if np.isscalar(mode) else tuple(mode)
        return GridField(grid, amplitude * gridmod.sine_mode(grid, k))
    if kind == "bump":
        def bump(*coords):
            out = np.ones_like(coords[0])
            for x, L in zip(coords, grid.extents):
                out = out * 4.0 * x * (L - x) / L**2
            return amplitude * out
        return gridmod.field_from_function(grid, bump)
    if kind == "file":
        return gridmod.read_field(path, grid)
    raise ValueError(f"unknown initial datum kind {kind!r}")


def write_trajectory_csv(traj: Trajectory, path, comments=()):
    """One CSV per run: the ledger scalars, 17 significant digits, LF endings."""
    with open(path, "w", newline="\n") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write("step,t," + ",".join(LEDGER_COLUMNS) + "\n")
        for rec in traj.records:
            vals = [f"{rec.index}", f"{rec.t:.17g}"]
            vals += [f"{v:.17g}" for v in rec.ledger()]
            fh.write(",".join(vals) + "\n")
