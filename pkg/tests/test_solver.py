"""Solver tests: per-mode recursion oracles, energy dissipation, coupling."""

import math

import numpy as np
import pytest

from dnpde import convex as cx
from dnpde import grid as gd
from dnpde import noise as nz
from dnpde import solver as sv
from dnpde.grid import DirichletGrid, GridField

G16 = DirichletGrid((1.0,), (16,))
G8 = DirichletGrid((1.0,), (8,))


def heat_cfg(**kw):
    args = dict(
        grid=G16, gamma=cx.PowerPotential(2.0), beta=None, noise=None,
        lambda_yosida=0.5, dt=1 / 64, horizon=0.25, lambda_visc=0.1,
    )
    args.update(kw)
    return sv.SolverConfig(**args)


def test_config_validation():
    with pytest.raises(ValueError):
        heat_cfg(lambda_yosida=0.0)
    with pytest.raises(ValueError):
        heat_cfg(dt=-1.0)
    with pytest.raises(ValueError):
        heat_cfg(horizon=1 / 128)
    with pytest.raises(ValueError):
        heat_cfg(scheme="magic")
    with pytest.raises(ValueError):
        heat_cfg(horizon=0.99 * 1 / 64 * 7)   # not a multiple of dt
    with pytest.raises(ValueError):
        heat_cfg(gamma=cx.RadialPotential(cx.PowerPotential(2.0), 2))
    assert heat_cfg(lambda_visc=None).visc == 0.5   # tied to lambda_yosida


def test_implicit_step_zero_fixed_point():
    cfg = heat_cfg(beta=cx.AbsPotential())
    z = GridField(G16, np.zeros(G16.shape))
    out = sv.implicit_step(cfg, z, z)
    assert np.abs(out.values).max() <= 1e-12


def test_implicit_step_eigenmode_recursion_oracle():
    # gamma quadratic, beta absent: v = u / (1 + dt*(visc + 1/(1+lam))*alpha_1)
    cfg = heat_cfg()
    e1 = gd.sine_mode(G16, 1)
    a1 = gd.sine_eigenvalue(G16, 1)
    u = GridField(G16, e1)
    v = sv.implicit_step(cfg, u, u)
    factor = 1.0 / (1.0 + cfg.dt * (cfg.visc + 1.0 / (1.0 + cfg.lambda_yosida)) * a1)
    assert np.abs(v.values - factor * e1).max() <= 1e-9


def test_implicit_step_single_node_sign_graph_oracle():
    # (v - f)/dt + beta_lam(v) = 0 on one effective node, matched to bisection
    grid = DirichletGrid((1.0,), (3,))
    cfg = sv.SolverConfig(
        grid, None, cx.AbsPotential(), None,
        lambda_yosida=0.2, dt=0.5, horizon=0.5, lambda_visc=0.0,
    )
    f = GridField(grid, np.array([0.4, -0.1, 0.9]))
    v = sv.implicit_step(cfg, f, f)

    def beta_lam(r):
        return (r - np.sign(r) * np.maximum(np.abs(r) - 0.2, 0.0)) / 0.2

    for fi, vi in zip(f.values, v.values):
        lo, hi = -2.0, 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if (mid - fi) / 0.5 + beta_lam(np.array(mid)) < 0:
                lo = mid
            else:
                hi = mid
        assert abs(vi - 0.5 * (lo + hi)) <= 1e-9


def test_step_optimality_certificate():
    cfg = heat_cfg(gamma=cx.PowerPotential(4.0), beta=cx.AbsPotential())
    rng = np.random.default_rng(3)
    u = rng.standard_normal(G16.shape)
    pb = sv._Problem.build(cfg)
    v = sv._implicit_step_arrays(pb, u, u)
    gnorm = gd.norm_h(G16, sv._grad_objective(pb, v, u))
    assert gnorm <= cfg.eps_inner


def test_semi_implicit_eigenmode_recursion_oracle():
    # scalar recursion: v = u*(1 - dt*alpha_1/(1+lam)) / (1 + dt*visc*alpha_1)
    cfg = sv.SolverConfig(
        G8, cx.PowerPotential(2.0), None, None,
        lambda_yosida=0.5, dt=1e-3, horizon=1e-3, lambda_visc=0.2,
        scheme="semi_implicit",
    )
    assert cfg.stability_bound() <= 1.0
    e1 = gd.sine_mode(G8, 1)
    a1 = gd.sine_eigenvalue(G8, 1)
    u = GridField(G8, e1)
    v = sv.semi_implicit_step(cfg, u, u)
    factor = (1.0 - cfg.dt * a1 / (1.0 + cfg.lambda_yosida)) / (1.0 + cfg.dt * cfg.visc * a1)
    assert np.abs(v.values - factor * e1).max() <= 1e-10


def test_semi_implicit_refuses_unstable_step():
    cfg = heat_cfg(scheme="semi_implicit")
    assert cfg.stability_bound() > 1.0
    u = GridField(G16, gd.sine_mode(G16, 1))
    with pytest.raises(sv.StabilityError):
        sv.semi_implicit_step(cfg, u, u)
    with pytest.raises(sv.StabilityError):
        sv.integrate(cfg, u)


def test_schemes_agree_to_second_order_per_step():
    rng = np.random.default_rng(4)
    u = gd.sine_mode(G8, 1) + 0.3 * gd.sine_mode(G8, 2)
    errs = []
    dts = [8e-4, 4e-4, 2e-4]
    for dt in dts:
        cfg = sv.SolverConfig(
            G8, cx.PowerPotential(2.0), None, None,
            lambda_yosida=0.5, dt=dt, horizon=dt, lambda_visc=0.2,
        )
        pb = sv._Problem.build(cfg)
        vi = sv._implicit_step_arrays(pb, u, u)
        vs = sv._semi_implicit_step_arrays(pb, u, u)
        errs.append(float(gd.norm_h(G8, vi - vs)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


def test_scheme_agreement_in_trajectory_norm():
    # the two routes converge to each other in C([0,T];H) at order >= 0.9
    dists, dts = [], [3.2e-4, 1.6e-4, 8e-5]
    for dt in dts:
        T = 160 * 3.2e-4
        cfg_i = sv.SolverConfig(
            G8, cx.PowerPotential(2.0), None, None,
            lambda_yosida=0.5, dt=dt, horizon=T, lambda_visc=0.2,
        )
        cfg_s = sv.SolverConfig(
            G8, cx.PowerPotential(2.0), None, None,
            lambda_yosida=0.5, dt=dt, horizon=T, lambda_visc=0.2,
            scheme="semi_implicit",
        )
        u0 = GridField(G8, gd.sine_mode(G8, 1))
        ti = sv.integrate(cfg_i, u0)
        ts = sv.integrate(cfg_s, u0)
        diff = ti.states() - ts.states()
        dists.append(float(np.sqrt(G8.node_volume * (diff**2).sum(axis=1)).max()))
    orders = np.log2(np.array(dists[:-1]) / np.array(dists[1:]))
    assert np.all(orders >= 0.9)


def test_integrate_zero_equilibrium():
    cfg = heat_cfg(beta=cx.AbsPotential())
    traj = sv.integrate(cfg, GridField(G16, np.zeros(G16.shape)))
    assert all(r.norm_u_sq == 0.0 for r in traj.records)
    assert traj.energy_residual == 0.0


def test_integrate_deterministic_dissipation():
    cfg = heat_cfg(gamma=cx.PowerPotential(4.0), lambda_visc=0.0, lambda_yosida=0.1)
    u0 = GridField(G16, 1.5 * gd.sine_mode(G16, 1))
    traj = sv.integrate(cfg, u0)
    norms = traj.ledger_column("norm_u_sq")
    assert np.all(np.diff(norms) < 0)
    # ledger pairings nonnegative (graphs through the origin)
    assert traj.ledger_column("pairing_eta_gradu").min() >= -1e-10
    assert traj.ledger_column("pairing_xi_u").min() >= -1e-10
    # graph consistency at every recorded step
    assert traj.max_graph_residual <= 1e-8


def test_energy_residual_heat_sign_and_order():
    residuals = []
    for dt in (1 / 32, 1 / 64, 1 / 128):
        cfg = heat_cfg(dt=dt, horizon=0.5, lambda_visc=0.0, lambda_yosida=0.3)
        traj = sv.integrate(cfg, GridField(G16, gd.sine_mode(G16, 1)))
        residuals.append(traj.energy_residual)
    assert all(r <= 0 for r in residuals)
    orders = np.log2(np.abs(residuals[:-1]) / np.abs(residuals[1:]))
    assert np.all(orders >= 0.9)


def test_per_step_energy_inequality():
    cfg = heat_cfg(gamma=cx.PowerPotential(4.0), beta=cx.AbsPotential(), lambda_visc=0.05)
    traj = sv.integrate(cfg, GridField(G16, 1.2 * gd.sine_mode(G16, 1)))
    for prev, cur in zip(traj.records, traj.records[1:]):
        lhs = 0.5 * cur.norm_u_sq + cfg.dt * (cur.pairing_eta_gradu + cur.pairing_xi_u)
        assert lhs <= 0.5 * prev.norm_u_sq + cfg.eps_inner * math.sqrt(cur.norm_u_sq) + 1e-14


def test_deterministic_contraction():
    cfg = heat_cfg(gamma=cx.PowerPotential(4.0), beta=cx.AbsPotential(), lambda_visc=0.1)
    ua = sv.integrate(cfg, GridField(G16, gd.sine_mode(G16, 1)))
    ub = sv.integrate(cfg, sv.initial_datum(G16, "bump", amplitude=0.7))
    dist = np.sqrt(
        G16.node_volume * ((ua.states() - ub.states()) ** 2).sum(axis=1)
    )
    assert np.all(dist <= dist[0] + 10 * cfg.eps_inner * np.arange(dist.size))


def test_integrate_stochastic_determinism_and_ledger():
    model = nz.NoiseModel((0.4, 0.2), nz.AdditiveGain(), 0.5)
    cfg = heat_cfg(noise=model)
    seed = nz.PathSeed(2718, 5)
    u0 = GridField(G16, gd.sine_mode(G16, 1))
    t1 = sv.integrate(cfg, u0, seed)
    t2 = sv.integrate(cfg, u0, seed)
    assert np.array_equal(t1.states(), t2.states())
    assert t1.records[0].hs_sq == pytest.approx(0.4**2 + 0.2**2)
    with pytest.raises(ValueError):
        sv.integrate(cfg, u0)   # seed required with noise
    with pytest.raises(ValueError):
        sv.integrate(cfg, u0, seed, np.zeros((3, 2)))   # wrong table length


def test_batch_matches_ledger_shape_and_residuals():
    model = nz.NoiseModel((0.4,), nz.AdditiveGain(), 0.4)
    cfg = heat_cfg(noise=model, horizon=0.125)
    res = sv.run_ensemble(cfg, np.zeros(G16.shape), master_seed=4, n_paths=3)
    assert res.n_paths == 3
    assert res.ledgers["norm_u_sq"].shape == (cfg.n_steps + 1, 3)
    # batched residuals equal the single-path residuals path by path
    for i in range(3):
        inc = nz.sample_increments(nz.PathSeed(4, i), cfg.n_steps, cfg.dt, 1)
        traj = sv.integrate(cfg, GridField(G16, np.zeros(G16.shape)), nz.PathSeed(4, i), inc)
        assert res.energy_residuals()[i] == pytest.approx(traj.energy_residual, rel=1e-9, abs=1e-12)


def test_ensemble_worker_count_invariance():
    model = nz.NoiseModel((0.4,), nz.AdditiveGain(), 0.4)
    cfg = heat_cfg(noise=model, horizon=0.125)
    a = sv.run_ensemble(cfg, np.zeros(G16.shape), master_seed=7, n_paths=70)
    b = sv.run_ensemble(cfg, np.zeros(G16.shape), master_seed=7, n_paths=70, jobs=3)
    assert np.array_equal(a.terminal, b.terminal)
    assert all(np.array_equal(a.ledgers[k], b.ledgers[k]) for k in a.ledgers)


def test_initial_datum_kinds(tmp_path):
    z = sv.initial_datum(G16, "zero")
    assert np.all(z.values == 0)
    e = sv.initial_datum(G16, "eigenmode", mode=2, amplitude=3.0)
    assert np.allclose(e.values, 3.0 * gd.sine_mode(G16, 2))
    b = sv.initial_datum(G16, "bump", amplitude=2.0)
    assert b.values.max() <= 2.0 + 1e-12
    path = tmp_path / "u0.txt"
    gd.write_field(b, path)
    f = sv.initial_datum(G16, "file", path=path)
    assert np.array_equal(f.values, b.values)
    with pytest.raises(ValueError):
        sv.initial_datum(G16, "mystery")


def test_bisection_only_potentials_in_stepper():
    # expcosh flux graph and huber absorption have no closed resolvents
    model = nz.NoiseModel((0.3,), nz.AdditiveGain(), 0.3)
    cfg = sv.SolverConfig(
        G16, cx.ExpCoshPotential(), cx.HuberPotential(0.5), model,
        lambda_yosida=0.25, dt=1 / 32, horizon=0.25,
    )
    traj = sv.integrate(cfg, GridField(G16, 1.5 * gd.sine_mode(G16, 1)), nz.PathSeed(3, 0))
    assert traj.max_graph_residual <= 1e-8
    assert traj.ledger_column("pairing_eta_gradu").min() >= -1e-10

    xs = np.linspace(-8, 8, 161)
    pot = cx.SampledSlopePotential.from_value_samples(xs, np.abs(xs) ** 3 / 3)
    cfg2 = sv.SolverConfig(
        G16, pot, None, None, lambda_yosida=0.25, dt=1 / 32, horizon=0.125,
    )
    traj2 = sv.integrate(cfg2, GridField(G16, gd.sine_mode(G16, 1)))
    assert np.all(np.diff(traj2.ledger_column("norm_u_sq")) < 0)


def test_2d_implicit_eigenmode_recursion_oracle():
    g = DirichletGrid((1.0, 1.0), (12, 12))
    e11 = gd.sine_mode(g, (1, 1))
    a11 = gd.sine_eigenvalue(g, (1, 1))
    cfg = sv.SolverConfig(
        g, cx.PowerPotential(2.0), None, None,
        lambda_yosida=0.5, dt=1 / 64, horizon=1 / 64, lambda_visc=0.1,
    )
    v = sv.implicit_step(cfg, GridField(g, e11), GridField(g, e11))
    factor = 1.0 / (1.0 + cfg.dt * (0.1 + 1.0 / 1.5) * a11)
    assert np.abs(v.values - factor * e11).max() <= 1e-9


def test_2d_stochastic_run_with_both_graphs():
    g = DirichletGrid((1.0, 1.0), (12, 12))
    model = nz.NoiseModel(nz.amplitudes_power_law(4, 0.3, 1.0), nz.AdditiveGain(), 0.5)
    cfg = sv.SolverConfig(
        g, cx.PowerPotential(4.0), cx.AbsPotential(), model,
        lambda_yosida=0.25, dt=1 / 32, horizon=0.25,
    )
    u0 = GridField(g, 1.2 * gd.sine_mode(g, (1, 1)))
    traj = sv.integrate(cfg, u0, nz.PathSeed(55, 0))
    assert traj.max_graph_residual <= 1e-8
    assert traj.ledger_column("pairing_eta_gradu").min() >= -1e-10
    assert traj.ledger_column("pairing_xi_u").min() >= -1e-10
    rerun = sv.integrate(cfg, u0, nz.PathSeed(55, 0))
    assert np.array_equal(traj.states(), rerun.states())


def test_trajectory_csv_format(tmp_path):
    cfg = heat_cfg(horizon=3 / 64)
    traj = sv.integrate(cfg, GridField(G16, gd.sine_mode(G16, 1)))
    path = tmp_path / "traj.csv"
    sv.write_trajectory_csv(traj, path, ["checksum=abc"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# checksum=abc"
    assert lines[1] == "step,t," + ",".join(sv.LEDGER_COLUMNS)
    assert len(lines) == 2 + cfg.n_steps + 1
    row = lines[2].split(",")
    assert row[0] == "0"
    assert float(row[2]) == traj.records[0].norm_u_sq
