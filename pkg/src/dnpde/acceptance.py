"""The acceptance-criterion suite.

Each criterion is a self-contained desk-scale experiment with pinned
tolerances, returning a list of assertions (measured value, threshold,
pass/fail).  The same functions back the ``verify`` CLI command and the
acceptance test module.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from dnpde import convex, noise as noisemod, solver as solvermod, verify as verifymod
from dnpde import grid as gridmod
from dnpde.convex import AbsPotential, ExpCoshPotential, HuberPotential, PowerPotential
from dnpde.grid import DirichletGrid, GridField
from dnpde.noise import AdditiveGain, ClippedLinearGain, NoiseModel, PathSeed
from dnpde.solver import SolverConfig
from dnpde.verify import Assertion

__all__ = ["CriterionResult", "CRITERIA", "resolve_selection", "run_criteria"]


@dataclass
class CriterionResult:
    cid: int
    name: str
    assertions: list

    @property
    def passed(self):
        return all(a.passed for a in self.assertions)

    def lines(self):
        return [f"[{self.cid}:{self.name}] {a.line()}" for a in self.assertions]


# ---------------------------------------------------------------------------
# 0. standing assumptions of the configured model
# ---------------------------------------------------------------------------

def criterion_model(workdir=None, jobs=1, rc=None):
    """Validate the configured potentials and the declared HS noise bound."""
    from dnpde import config as configmod

    if rc is None:
        rc = configmod.parse_config(_REPRO_CONFIG, "<builtin>")
    grid = configmod.build_grid(rc)
    assertions = []
    for role in ("gamma", "beta"):
        pot = configmod.build_potential(rc, role)
        if pot is None:
            continue
        report = convex.validate_potential(pot, probe_radius=10.0, sample_count=64)
        failures = sum(not c.passed for c in report.checks.values())
        assertions.append(
            Assertion(f"{role}_potential_valid", float(failures), 0.0, failures == 0)
        )
    model = configmod.build_noise(rc, grid)
    if model is not None:
        rng = np.random.default_rng(3)
        nb = model.bound
        worst_growth = -math.inf
        worst_lip = -math.inf
        for _ in range(100):
            u = rng.standard_normal(grid.shape) * rng.uniform(0.0, 3.0)
            v = rng.standard_normal(grid.shape) * rng.uniform(0.0, 3.0)
            hs_u = float(noisemod.hs_norm(model, grid, u))
            worst_growth = max(
                worst_growth, hs_u - nb * (1.0 + float(gridmod.norm_h(grid, u)))
            )
            hs_diff = math.sqrt(
                max(
                    0.0,
                    sum(
                        b * b
                        * float(
                            gridmod.dot_h(
                                grid,
                                (model.gain(u) - model.gain(v)) * ek,
                                (model.gain(u) - model.gain(v)) * ek,
                            )
                        )
                        for b, ek in zip(
                            model.amplitudes,
                            gridmod.sine_eigenpairs(grid, model.mode_count)[1],
                        )
                    ),
                )
            )
            worst_lip = max(
                worst_lip, hs_diff - nb * float(gridmod.norm_h(grid, u - v))
            )
        tol = 1e-12
        assertions.append(
            Assertion("hs_linear_growth_excess", worst_growth, tol, worst_growth <= tol)
        )
        assertions.append(
            Assertion("hs_lipschitz_excess", worst_lip, tol, worst_lip <= tol)
        )
    if not assertions:
        assertions.append(Assertion("nothing_to_validate", 0.0, 0.0, True))
    return CriterionResult(0, "model", assertions)


# ---------------------------------------------------------------------------
# 1. convex-calculus oracle equivalence
# ---------------------------------------------------------------------------

def criterion_convex_oracle(workdir=None, jobs=1, rc=None):
    rng = np.random.default_rng(11)
    graphs = [
        PowerPotential(2.0),
        PowerPotential(1.5),
        PowerPotential(4.0),   # the cubic graph r -> r^3
        AbsPotential(),
    ]
    worst_res = 0.0
    worst_yos = 0.0
    for pot in graphs:
        x = rng.uniform(-10.0, 10.0, 1000)
        for lam in (1.0, 0.1, 0.01):
            j_closed = convex.resolvent(pot, lam, x)
            j_bisect = convex.resolvent(pot, lam, x, force_bisect=True)
            worst_res = max(worst_res, float(np.abs(j_closed - j_bisect).max()))
            g = convex.yosida(pot, lam, x)
            worst_yos = max(worst_yos, float(np.abs(x - (j_closed + lam * g)).max()))

    orders = []
    lam = 0.37
    for pot in (PowerPotential(4.0), ExpCoshPotential()):
        xs = rng.uniform(0.3, 3.0, 40) * rng.choice([-1.0, 1.0], 40)
        step = 1e-2
        exact = convex.yosida(pot, lam, xs)
        errs = []
        for s in (step, step / 2):
            fd = (
                convex.moreau_envelope(pot, lam, xs + s)
                - convex.moreau_envelope(pot, lam, xs - s)
            ) / (2 * s)
            errs.append(np.abs(fd - exact))
        above_floor = errs[0] > 1e-11
        if np.any(above_floor):
            orders.append(
                float(np.log2(errs[0][above_floor] / errs[1][above_floor]).min())
            )
        else:
            orders.append(2.0)   # both errors at the floor: exact to roundoff
    return CriterionResult(
        1,
        "convex_oracle",
        [
            Assertion("resolvent_bisect_vs_closed", worst_res, 1e-10, worst_res <= 1e-10),
            Assertion("yosida_identity", worst_yos, 1e-10, worst_yos <= 1e-10),
            Assertion("envelope_fd_order", min(orders), 1.9, min(orders) >= 1.9),
        ],
    )


# ---------------------------------------------------------------------------
# 2. Fenchel-Young suite
# ---------------------------------------------------------------------------

def criterion_fenchel(workdir=None, jobs=1, rc=None):
    rng = np.random.default_rng(23)
    cases = [
        (PowerPotential(2.0), 5.0),
        (PowerPotential(4.0), 5.0),
        (PowerPotential(1.5), 5.0),
        (AbsPotential(), 0.999),          # dom P* = [-1, 1]
        (HuberPotential(1.0), 0.999),
        (ExpCoshPotential(), 5.0),
    ]
    min_residual = math.inf
    worst_pair = 0.0
    for pot, ybound in cases:
        x = rng.uniform(-5.0, 5.0, 400)
        y = rng.uniform(-ybound, ybound, 400)
        min_residual = min(min_residual, float(np.min(convex.fenchel_residual(pot, x, y))))
        for lam in (1.0, 0.1, 0.01):
            j = convex.resolvent(pot, lam, x)
            g = convex.yosida(pot, lam, x)
            worst_pair = max(
                worst_pair, float(np.max(np.abs(convex.fenchel_residual(pot, j, g))))
            )

    worst_increase = -math.inf
    lambdas = [2.0**-k for k in range(7)]   # 1 .. 1/64
    for pot, _ in cases:
        x = rng.uniform(-4.0, 4.0, 100)
        res = []
        for lam in lambdas:
            g = convex.yosida(pot, lam, x)
            res.append(np.asarray(convex.fenchel_residual(pot, x, g)))
        res = np.stack(res)
        worst_increase = max(worst_increase, float(np.diff(res, axis=0).max()))
    return CriterionResult(
        2,
        "fenchel",
        [
            Assertion("fenchel_min_residual", min_residual, -1e-8, min_residual >= -1e-8),
            Assertion("residual_at_yosida_pair", worst_pair, 1e-8, worst_pair <= 1e-8),
            Assertion(
                "lambda_halving_monotone", worst_increase, 1e-12, worst_increase <= 1e-12
            ),
        ],
    )


# ---------------------------------------------------------------------------
# 3. discrete duality
# ---------------------------------------------------------------------------

def criterion_duality(workdir=None, jobs=1, rc=None):
    rng = np.random.default_rng(31)
    worst_adj = 0.0
    worst_stencil = 0.0
    for grid in (DirichletGrid((1.0,), (128,)), DirichletGrid((1.0, 2.0), (32, 32))):
        for _ in range(100):
            u = rng.standard_normal(grid.shape)
            f = [rng.standard_normal(s) for s in grid.face_shapes()]
            lhs = gridmod.dot_h(grid, gridmod.div_arrays(grid, f), u)
            rhs = gridmod.flux_dot_h(grid, f, gridmod.grad_arrays(grid, u))
            scale = gridmod.flux_norm_h(grid, f) * gridmod.flux_norm_h(
                grid, gridmod.grad_arrays(grid, u)
            )
            worst_adj = max(worst_adj, abs(lhs + rhs) / max(scale, 1e-300))
        u = rng.standard_normal(grid.shape)
        lap = gridmod.lap_arrays(grid, u)
        stencil = np.zeros_like(u)
        for ax, h in enumerate(grid.spacing):
            p = gridmod._pad_axis(u, ax)
            up = [slice(None)] * u.ndim
            dn = [slice(None)] * u.ndim
            up[ax] = slice(2, None)
            dn[ax] = slice(None, -2)
            stencil = stencil + (p[tuple(up)] - 2 * u + p[tuple(dn)]) / h**2
        scale = np.abs(lap).max()
        worst_stencil = max(worst_stencil, float(np.abs(lap - stencil).max()) / scale)
    return CriterionResult(
        3,
        "duality",
        [
            Assertion("summation_by_parts_rel", worst_adj, 1e-12, worst_adj <= 1e-12),
            Assertion(
                "div_grad_is_stencil_rel", worst_stencil, 1e-13, worst_stencil <= 1e-13
            ),
        ],
    )


# ---------------------------------------------------------------------------
# 4. exact linear SPDE moments
# ---------------------------------------------------------------------------

def criterion_ou_moment(workdir=None, jobs=1, rc=None):
    grid = DirichletGrid((1.0,), (32,))
    model = NoiseModel((0.5,), AdditiveGain(), 0.5)
    lam = 1.0
    alpha1 = gridmod.sine_eigenvalue(grid, 1)
    a = (0.0 + 1.0 / (1.0 + lam)) * alpha1
    u0 = gridmod.sine_mode(grid, 1)
    exact = math.exp(-2 * a) * 1.0 + 0.5**2 * (1 - math.exp(-2 * a)) / (2 * a)
    assertions = []
    for dt in (1 / 64, 1 / 128):
        cfg = SolverConfig(
            grid, PowerPotential(2.0), None, model,
            lambda_yosida=lam, dt=dt, horizon=1.0, lambda_visc=0.0,
        )
        res = solvermod.run_ensemble(cfg, u0, master_seed=777, n_paths=200, jobs=jobs)
        term = res.ledgers["norm_u_sq"][-1]
        mean = float(term.mean())
        se = float(term.std(ddof=1) / math.sqrt(term.size))
        tol = max(3 * se, 5 * dt * exact)
        diff = abs(mean - exact)
        assertions.append(
            Assertion(f"ou_moment_dt_1over{round(1/dt)}", diff, tol, diff <= tol)
        )
    return CriterionResult(4, "ou_moment", assertions)


# ---------------------------------------------------------------------------
# 5. energy identity
# ---------------------------------------------------------------------------

def criterion_energy(workdir=None, jobs=1, rc=None):
    # deterministic per-step inequality
    grid = DirichletGrid((1.0,), (32,))
    cfg = SolverConfig(
        grid, PowerPotential(4.0), AbsPotential(), None,
        lambda_yosida=0.1, dt=1 / 64, horizon=0.5, lambda_visc=0.05,
    )
    u0 = GridField(grid, 1.2 * gridmod.sine_mode(grid, 1))
    traj = solvermod.integrate(cfg, u0)
    worst = -math.inf
    for prev, cur in zip(traj.records, traj.records[1:]):
        lhs = 0.5 * cur.norm_u_sq + cfg.dt * (cur.pairing_eta_gradu + cur.pairing_xi_u)
        rhs = 0.5 * prev.norm_u_sq + cfg.eps_inner * math.sqrt(cur.norm_u_sq)
        worst = max(worst, lhs - rhs)
    assertions = [Assertion("per_step_energy_slack", worst, 0.0, worst <= 0.0)]

    # stochastic path-mean residual: O(dt), fitted constant stable under halving
    model = NoiseModel((1.0,), AdditiveGain(), 1.0)
    c_default = 10.0
    fitted = []
    for dt in (1 / 64, 1 / 128):
        cfg = SolverConfig(
            grid, PowerPotential(2.0, scale=5.0), None, model,
            lambda_yosida=0.2, dt=dt, horizon=1.0, lambda_visc=0.0,
        )
        res = solvermod.run_ensemble(
            cfg, np.zeros(grid.shape), master_seed=5150, n_paths=200,
            jobs=jobs, fine_dt=1 / 128,
        )
        er = res.energy_residuals()
        mean = float(np.mean(er))
        se = float(np.std(er, ddof=1) / math.sqrt(er.size))
        bound = 3 * se + c_default * dt
        assertions.append(
            Assertion(
                f"mean_energy_residual_dt_1over{round(1/dt)}",
                abs(mean), bound, abs(mean) <= bound,
            )
        )
        fitted.append(max(0.0, abs(mean) - 3 * se) / dt)
    ratio = fitted[0] / fitted[1] if fitted[1] > 0 else math.inf
    assertions.append(
        Assertion("fitted_C_stability", ratio, 2.0, 0.5 <= ratio <= 2.0)
    )
    return CriterionResult(5, "energy", assertions)


# ---------------------------------------------------------------------------
# 6. a-priori ledger bounds uniform in the regularization
# ---------------------------------------------------------------------------

def criterion_apriori(workdir=None, jobs=1, rc=None):
    grid = DirichletGrid((1.0,), (32,))
    model = NoiseModel((0.1, 0.05), AdditiveGain(), 0.2)
    base = SolverConfig(
        grid, PowerPotential(4.0), AbsPotential(), model,
        lambda_yosida=0.25, dt=1 / 64, horizon=0.5, lambda_visc=0.01,
    )
    u0 = GridField(grid, 1.2 * gridmod.sine_mode(grid, 1))
    lambdas = [2.0**-k for k in range(2, 8)]   # 1/4 .. 1/128
    rep = verifymod.lambda_sweep(base, lambdas, PathSeed(4242, 0), u0=u0)
    ap = verifymod.apriori_report([e.trajectory for e in rep.entries])
    assertions = list(ap.assertions)

    worst_tail_increase = -math.inf
    worst_tail_ratio = 0.0
    for e in rep.entries:
        for tails in (e.tails_eta, e.tails_xi):
            if tails.size > 1:
                worst_tail_increase = max(worst_tail_increase, float(np.diff(tails).max()))
            if tails[0] > 0:
                worst_tail_ratio = max(worst_tail_ratio, float(tails[-1] / tails[0]))
    assertions.append(
        Assertion(
            "tails_nonincreasing", worst_tail_increase, 0.0, worst_tail_increase <= 0.0
        )
    )
    assertions.append(
        Assertion("tail_maxlevel_ratio", worst_tail_ratio, 0.01, worst_tail_ratio <= 0.01)
    )
    return CriterionResult(6, "apriori", assertions)


# ---------------------------------------------------------------------------
# 7. Cauchy in lambda along a coupled path
# ---------------------------------------------------------------------------

def criterion_cauchy(workdir=None, jobs=1, rc=None):
    grid = DirichletGrid((1.0,), (32,))
    lambdas = [2.0**-k for k in range(2, 8)]
    assertions = []

    model = NoiseModel((0.4, 0.2), AdditiveGain(), 0.5)
    base = SolverConfig(
        grid, PowerPotential(2.0), None, model,
        lambda_yosida=0.25, dt=1 / 64, horizon=0.5,
    )
    u0 = GridField(grid, gridmod.sine_mode(grid, 1))
    rep = verifymod.lambda_sweep(base, lambdas, PathSeed(42, 0), u0=u0)
    inc = float(np.diff(rep.cauchy).max())
    order = verifymod.observed_order(rep.cauchy, lambdas[:-1])
    assertions.append(Assertion("quadratic_cauchy_decreasing", inc, 0.0, inc < 0.0))
    assertions.append(Assertion("quadratic_cauchy_order", order, 0.9, order >= 0.9))

    base2 = SolverConfig(
        grid, PowerPotential(4.0), AbsPotential(), model,
        lambda_yosida=0.25, dt=1 / 64, horizon=0.25,
    )
    u02 = GridField(grid, 1.2 * gridmod.sine_mode(grid, 1))
    rep2 = verifymod.lambda_sweep(base2, lambdas, PathSeed(42, 0), u0=u02)
    inc2 = float(np.diff(rep2.cauchy).max())
    assertions.append(Assertion("power4_sign_cauchy_decreasing", inc2, 0.0, inc2 < 0.0))
    return CriterionResult(7, "cauchy", assertions)


# ---------------------------------------------------------------------------
# 8. Lipschitz solution map
# ---------------------------------------------------------------------------

def criterion_lipschitz(workdir=None, jobs=1, rc=None):
    grid = DirichletGrid((1.0,), (32,))
    assertions = []

    model = NoiseModel((0.3, 0.15), AdditiveGain(), 0.4)
    cfg = SolverConfig(
        grid, PowerPotential(4.0), AbsPotential(), model,
        lambda_yosida=0.25, dt=1 / 64, horizon=0.5,
    )
    u0_a = GridField(grid, gridmod.sine_mode(grid, 1))
    u0_b = solvermod.initial_datum(grid, "bump", amplitude=0.7)
    rep = verifymod.lipschitz_test(cfg, u0_a, u0_b, n_paths=8, master_seed=31337)
    for a in rep.assertions:
        assertions.append(
            replace(a, name=f"additive_{a.name}")
        )

    amps = tuple(0.5 / k for k in range(1, 5))
    mult = NoiseModel(amps, ClippedLinearGain(1.0), 1.0)
    nb_valid = noisemod.default_bound(NoiseModel(amps, ClippedLinearGain(1.0)), grid)
    assertions.append(
        Assertion("declared_NB_valid", nb_valid, 1.0, nb_valid <= 1.0)
    )
    cfg_m = SolverConfig(
        grid, PowerPotential(2.0), None, mult,
        lambda_yosida=0.5, dt=1 / 64, horizon=0.5,
    )
    rep_m = verifymod.lipschitz_test(
        cfg_m, u0_a, u0_b, n_paths=200, master_seed=90125
    )
    assertions.append(
        Assertion(
            "multiplicative_ratio_vs_e", rep_m.ratio, math.e, rep_m.ratio <= math.e
        )
    )
    return CriterionResult(8, "lipschitz", assertions)


# ---------------------------------------------------------------------------
# 9. uniqueness of the combination -div(eta) + xi
# ---------------------------------------------------------------------------

def criterion_phi_unique(workdir=None, jobs=1, rc=None):
    grid = DirichletGrid((1.0,), (16,))
    model = NoiseModel((0.3, 0.15), AdditiveGain(), 0.4)
    xs = gridmod.node_coordinates(grid)[0]
    u0 = GridField(grid, 0.5 * np.clip(8 * xs * (1 - xs), 0.0, 1.0))
    lam0, dt0, n_steps = 0.25, 2e-4, 80
    horizon = n_steps * dt0
    dts = [dt0 / 2**level for level in range(3)]
    tables, _ = verifymod.coupled_increment_tables(909, 0, dts, horizon, model.mode_count)

    phi_d, eta_sup = [], []
    for level in range(3):
        cfg_a = SolverConfig(
            grid, AbsPotential(), None, model,
            lambda_yosida=lam0 / 2**level, dt=dts[level], horizon=horizon,
            scheme="implicit_opt",
        )
        cfg_b = replace(cfg_a, scheme="semi_implicit")
        seed = PathSeed(909, 0)
        traj_a = solvermod.integrate(cfg_a, u0, seed, tables[level])
        traj_b = solvermod.integrate(cfg_b, u0, seed, tables[level])
        pa = verifymod.build_phi(traj_a, [horizon])
        pb = verifymod.build_phi(traj_b, [horizon])
        phi_d.append(float(gridmod.dual_norm_v0(grid, pa.values[0] - pb.values[0])))
        worst = 0.0
        for ra, rb in zip(traj_a.records, traj_b.records):
            for ea, eb in zip(ra.eta, rb.eta):
                worst = max(worst, float(np.abs(ea - eb).max()))
        eta_sup.append(worst)

    assertions = []
    for level in range(2):
        ratio = phi_d[level] / phi_d[level + 1]
        assertions.append(
            Assertion(f"phi_contraction_level_{level}", ratio, 1.5, ratio >= 1.5)
        )
    separation = min(eta_sup) / (10.0 * phi_d[-1])
    assertions.append(
        Assertion("eta_vs_phi_separation", separation, 1.0, separation >= 1.0)
    )
    return CriterionResult(9, "phi_unique", assertions)


# ---------------------------------------------------------------------------
# 10. byte-identical reproducibility of the CLI
# ---------------------------------------------------------------------------

_REPRO_CONFIG = """\
[grid]
dimension = 1
extent = 1.0
nodes = 16

[potentials]
gamma_kind = power
gamma_p = 2.0

[noise]
mode_count = 1
amplitudes = 0.5
gain = additive
master_seed = 20260809

[solver]
lambda_yosida = 0.5
dt = 0.03125
horizon = 0.25
u0_kind = eigenmode
u0_mode = 1
u0_amplitude = 1.0

[verify]
families = convex_oracle

[output]
prefix = repro
"""


def _tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            p = os.path.join(dirpath, name)
            rel = os.path.relpath(p, root)
            with open(p, "rb") as fh:
                out[rel] = fh.read()
    return out


def criterion_repro(workdir=None, jobs=1, rc=None):
    import contextlib
    import io

    from dnpde import cli

    base = workdir or tempfile.mkdtemp(prefix="dnpde-repro-")
    os.makedirs(base, exist_ok=True)
    cfg_path = os.path.join(base, "repro.cfg")
    with open(cfg_path, "w", newline="\n") as fh:
        fh.write(_REPRO_CONFIG)

    commands = {
        "run": ["run", cfg_path],
        "sweep": ["sweep", cfg_path, "--param", "lambda_yosida", "--values", "0.2,0.1"],
        "verify": ["verify", cfg_path, "--select", "convex_oracle"],
    }
    assertions = []
    for name, argv in commands.items():
        dirs = [os.path.join(base, f"{name}_{i}") for i in (0, 1)]
        codes = []
        for d in dirs:
            os.makedirs(d, exist_ok=True)
            with contextlib.redirect_stdout(io.StringIO()):
                codes.append(cli.main(argv + ["--out", d]))
        trees = [_tree_bytes(d) for d in dirs]
        same_names = set(trees[0]) == set(trees[1])
        mismatched = (
            sum(trees[0][k] != trees[1][k] for k in trees[0])
            if same_names
            else len(set(trees[0]) ^ set(trees[1]))
        )
        ok = same_names and mismatched == 0 and codes[0] == codes[1] == 0 and trees[0]
        assertions.append(
            Assertion(f"{name}_byte_identical", float(mismatched), 0.0, bool(ok))
        )
    return CriterionResult(10, "repro", assertions)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

CRITERIA = {
    0: ("model", criterion_model),
    1: ("convex_oracle", criterion_convex_oracle),
    2: ("fenchel", criterion_fenchel),
    3: ("duality", criterion_duality),
    4: ("ou_moment", criterion_ou_moment),
    5: ("energy", criterion_energy),
    6: ("apriori", criterion_apriori),
    7: ("cauchy", criterion_cauchy),
    8: ("lipschitz", criterion_lipschitz),
    9: ("phi_unique", criterion_phi_unique),
    10: ("repro", criterion_repro),
}

ALIASES = {
    "all": tuple(CRITERIA),
    "convex_core": (1, 2),
}


def resolve_selection(tokens):
    """Map ids, names or aliases to an ordered criterion id list."""
    by_name = {name: cid for cid, (name, _) in CRITERIA.items()}
    chosen = []
    for tok in tokens:
        tok = tok.strip()
        if not tok:
            continue
        if tok in ALIASES:
            chosen.extend(ALIASES[tok])
        elif tok in by_name:
            chosen.append(by_name[tok])
        elif tok.isdigit() and int(tok) in CRITERIA:
            chosen.append(int(tok))
        else:
            raise ValueError(f"unknown criterion selector {tok!r}")
    seen = []
    for cid in chosen:
        if cid not in seen:
            seen.append(cid)
    return seen


def run_criteria(ids, workdir=None, jobs=1, rc=None):
    results = []
    for cid in ids:
        name, fn = CRITERIA[cid]
        results.append(fn(workdir=workdir, jobs=jobs, rc=rc))
    return results
