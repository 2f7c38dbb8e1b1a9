"""Grid tests: exact discrete duality, spectral formulas, SPD solves, IO."""

import numpy as np
import pytest

from dnpde import grid as gd
from dnpde.grid import DirichletGrid, FluxField, GridField

G1 = DirichletGrid((1.0,), (16,))
G2 = DirichletGrid((1.0, 2.0), (8, 12))


def test_grid_validation():
    with pytest.raises(ValueError):
        DirichletGrid((1.0,), (2,))
    with pytest.raises(ValueError):
        DirichletGrid((-1.0,), (8,))
    with pytest.raises(ValueError):
        DirichletGrid((1.0, 1.0, 1.0), (4, 4, 4))
    assert G2.spacing == (1.0 / 9, 2.0 / 13)
    assert G2.node_volume == pytest.approx((1.0 / 9) * (2.0 / 13))


def test_field_validation():
    with pytest.raises(ValueError):
        GridField(G1, np.zeros(7))
    with pytest.raises(ValueError):
        GridField(G1, np.full(16, np.nan))
    with pytest.raises(ValueError):
        FluxField(G1, (np.zeros(16),))   # faces are n+1


def test_gradient_of_zero_and_linearity():
    rng = np.random.default_rng(1)
    z = gd.grad_arrays(G2, np.zeros(G2.shape))
    assert all(np.all(c == 0) for c in z)
    u = rng.standard_normal(G2.shape)
    v = rng.standard_normal(G2.shape)
    gu = gd.grad_arrays(G2, u)
    gv = gd.grad_arrays(G2, v)
    gsum = gd.grad_arrays(G2, u + v)
    for a, b, c in zip(gu, gv, gsum):
        assert np.abs(a + b - c).max() < 1e-14


def test_gradient_of_hat_is_piecewise_constant():
    # ramp up to the midpoint then down: forward differences are +-slope
    n = 15
    g = DirichletGrid((1.0,), (n,))
    h = g.spacing[0]
    x = h * np.arange(1, n + 1)
    u = np.minimum(x, 1.0 - x)
    flux = gd.grad_arrays(g, u)[0]
    assert np.allclose(flux[: (n + 1) // 2], 1.0)
    assert np.allclose(flux[(n + 1) // 2 + 1:], -1.0)


def test_summation_by_parts_exact():
    rng = np.random.default_rng(2)
    for g in (G1, G2):
        for _ in range(100):
            u = rng.standard_normal(g.shape)
            f = [rng.standard_normal(s) for s in g.face_shapes()]
            lhs = gd.dot_h(g, gd.div_arrays(g, f), u)
            rhs = gd.flux_dot_h(g, f, gd.grad_arrays(g, u))
            scale = max(1.0, abs(lhs), abs(rhs))
            assert abs(lhs + rhs) <= 1e-12 * scale


def test_div_grad_is_dirichlet_stencil():
    rng = np.random.default_rng(3)
    u = rng.standard_normal(G1.shape)
    h = G1.spacing[0]
    lap = gd.lap_arrays(G1, u)
    up = np.pad(u, 1)
    stencil = (up[2:] - 2 * u + up[:-2]) / h**2
    assert np.abs(lap - stencil).max() <= 1e-13 * np.abs(stencil).max()

    u = rng.standard_normal(G2.shape)
    lap = gd.lap_arrays(G2, u)
    up = np.pad(u, 1)
    hx, hy = G2.spacing
    stencil = (up[2:, 1:-1] - 2 * u + up[:-2, 1:-1]) / hx**2 + (
        up[1:-1, 2:] - 2 * u + up[1:-1, :-2]
    ) / hy**2
    assert np.abs(lap - stencil).max() <= 1e-13 * np.abs(stencil).max()


def test_wrapper_types_roundtrip():
    rng = np.random.default_rng(4)
    u = GridField(G2, rng.standard_normal(G2.shape))
    flux = gd.gradient(G2, u)
    back = gd.divergence(G2, flux)
    assert np.allclose(back.values, gd.lap_arrays(G2, u.values))
    with pytest.raises(ValueError):
        gd.gradient(G1, u)


def test_sine_modes_are_h_orthonormal_eigenvectors():
    alphas, modes = gd.sine_eigenpairs(G2, 10)
    assert np.all(np.diff(alphas) >= 0)
    for a, e in zip(alphas, modes):
        resid = -gd.lap_arrays(G2, e) - a * e
        assert np.abs(resid).max() <= 1e-10 * a
    gram = np.array(
        [[gd.dot_h(G2, a, b) for b in modes] for a in modes]
    )
    assert np.abs(gram - np.eye(10)).max() <= 1e-12


def test_lambda_max_matches_power_iteration():
    for g in (G1, G2):
        direct = gd.lambda_max(g)
        power = gd.power_iteration_lambda_max(g, iters=3000)
        assert abs(direct - power) <= 1e-8 * direct


def test_mode_count_guard():
    with pytest.raises(ValueError):
        gd.sine_eigenpairs(G1, 17)
    with pytest.raises(ValueError):
        gd.sine_eigenvalue(G1, 0)


def test_laplacian_resolvent_eigen_oracle():
    delta, m = 0.7, 3
    e1 = gd.sine_mode(G1, 1)
    a1 = gd.sine_eigenvalue(G1, 1)
    out = gd.laplacian_resolvent(G1, delta, m, GridField(G1, e1))
    expected = e1 * (1.0 + delta * a1) ** (-m)
    assert np.abs(out.values - expected).max() <= 1e-8 * np.abs(expected).max()


def test_laplacian_resolvent_identity_and_contraction():
    rng = np.random.default_rng(5)
    u = rng.standard_normal(G2.shape)
    same = gd.resolvent_arrays(G2, 0.0, 2, u)
    assert np.array_equal(same, u)
    out = gd.resolvent_arrays(G2, 0.4, 2, u)
    assert gd.norm_h(G2, out) <= gd.norm_h(G2, u)
    with pytest.raises(ValueError):
        gd.resolvent_arrays(G2, -1.0, 1, u)
    with pytest.raises(ValueError):
        gd.resolvent_arrays(G2, 1.0, 0, u)


def test_dual_norm_v0():
    assert gd.dual_norm_v0(G1, np.zeros(G1.shape)) == 0.0
    e1 = gd.sine_mode(G1, 1)
    a1 = gd.sine_eigenvalue(G1, 1)
    val = gd.dual_norm_v0(G1, e1, m=2)
    assert val == pytest.approx((1 + a1) ** -2 * gd.norm_h(G1, e1), rel=1e-8)
    rng = np.random.default_rng(6)
    f = rng.standard_normal(G1.shape)
    assert gd.dual_norm_v0(G1, 3.5 * f) == pytest.approx(3.5 * gd.dual_norm_v0(G1, f), rel=1e-10)


def test_gradient_refinement_first_order():
    errs = []
    hs = []
    for n in (16, 32, 64, 128):
        g = DirichletGrid((1.0,), (n,))
        x = gd.node_coordinates(g)[0]
        u = np.sin(np.pi * x) * x * (1 - x)
        flux = gd.grad_arrays(g, u)[0]
        xf = g.spacing[0] * np.arange(0, n + 1) + g.spacing[0] / 2

        def du(t):
            return np.pi * np.cos(np.pi * t) * t * (1 - t) + np.sin(np.pi * t) * (1 - 2 * t)

        errs.append(np.abs(flux - du(xf)).max())
        hs.append(g.spacing[0])
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 0.9)


def test_batched_operations_match_loop():
    rng = np.random.default_rng(7)
    batch = rng.standard_normal(G2.shape + (5,))
    g_batch = gd.grad_arrays(G2, batch)
    for p in range(5):
        single = gd.grad_arrays(G2, batch[..., p])
        for a, b in zip(g_batch, single):
            assert np.array_equal(a[..., p], b)
    r_batch = gd.resolvent_arrays(G2, 0.3, 2, batch)
    for p in range(5):
        single = gd.resolvent_arrays(G2, 0.3, 2, batch[..., p])
        assert np.abs(r_batch[..., p] - single).max() <= 1e-11


def test_cg_rejects_indefinite_operator():
    with pytest.raises(RuntimeError):
        gd.cg_solve(G1, lambda v: -v, np.ones(G1.shape), diag=1.0)


def test_field_io_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    for g in (G1, G2):
        field = GridField(g, rng.standard_normal(g.shape))
        path = tmp_path / f"field_{g.dim}d.txt"
        gd.write_field(field, path)
        back = gd.read_field(path)
        assert back.grid == g
        assert np.array_equal(back.values, field.values)
    with pytest.raises(ValueError):
        gd.read_field(tmp_path / "field_1d.txt", grid=G2)
