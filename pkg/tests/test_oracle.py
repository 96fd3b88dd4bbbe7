import math

import numpy as np
import pytest

from fastspread.evolve import PASSIVE, PKS, ModelSpec, SimConfig, run
from fastspread.fields import GridSpec, ParameterError, integrate, sample_gaussian
from fastspread.kernels import FlowSpec, apply_kernel, hyperbolic_kernel_2d
from fastspread.oracle import (
    FD_MAX_N,
    QUADRATURE_MAX_N,
    CostGuardError,
    compare_runs,
    fd_run,
    fd_stable_dt,
    heat_matrix_1d,
    kernel_quadrature_apply,
    reduce_grid,
    shear_factorization_check,
)


def _cfg(grid, model=PASSIVE, t_end=0.25, flow=None, **kw):
    flow = flow or FlowSpec("none", 0.0, grid.dim)
    return SimConfig(grid, flow, ModelSpec(model), t_end, adaptive_box=False, **kw)


def test_fd_heat_gaussian():
    g = GridSpec(2, 64, 6.0)
    s, t = 0.5, 0.25
    f0 = sample_gaussian(g, sigma=s, mass=1.0)
    traj = fd_run(_cfg(g, t_end=t), f0)
    v = s * s + 2 * t
    x1, x2 = g.mesh()
    exact = np.exp(-(x1**2 + x2**2) / (2 * v)) / (2 * math.pi * v)
    got = traj.final.field.values
    assert np.linalg.norm(got - exact) / np.linalg.norm(exact) < 5e-3
    assert abs(integrate(traj.final.field) - integrate(f0)) < 1e-13
    assert traj.final.t == pytest.approx(t)


def test_fd_size_and_step_guards():
    big = GridSpec(2, 2 * FD_MAX_N, 6.0)
    with pytest.raises(ParameterError):
        fd_run(_cfg(big), sample_gaussian(big, sigma=0.5))
    g = GridSpec(2, 32, 6.0)
    with pytest.raises(ParameterError):
        fd_run(_cfg(g), sample_gaussian(g, sigma=0.5), dt=2 * fd_stable_dt(g, 1.0))


def test_fd_matches_spectral_pks_subcritical():
    g = GridSpec(2, 64, 6.0)
    f0 = sample_gaussian(g, sigma=0.6, mass=2 * math.pi)
    times = (0.05, 0.1)
    cfg = _cfg(g, model=PKS, t_end=0.1, snapshot_times=times)
    rows = compare_runs(run(cfg, f0), fd_run(cfg, f0), times)
    assert [r["t"] for r in rows] == list(times)
    for r in rows:
        assert r["rel_l2_gap"] < 0.01
        assert r["mass_fd"] == pytest.approx(2 * math.pi, abs=1e-10)
        assert r["mass_spectral"] == pytest.approx(2 * math.pi, abs=1e-10)


def test_reduce_grid():
    g = GridSpec(2, (512, 128), (8.0, 4.0))
    r = reduce_grid(g)
    assert r.n == (64, 64) and r.half_length == g.half_length
    assert reduce_grid(GridSpec(2, 32, 1.0)).n == (32, 32)


@pytest.mark.parametrize("t,A", [(0.5, 1.0), (1.0, 4.0)])
def test_quadrature_matches_spectral_kernel(t, A):
    g = GridSpec(2, 32, 6.0)
    f = sample_gaussian(g, sigma=0.8, center=(0.3, -0.2))
    quad = kernel_quadrature_apply(f, t, A)
    spec = apply_kernel(f, t, A)
    assert np.abs(quad.values - spec.values).max() / spec.values.max() < 1e-6


def test_quadrature_is_dense_sum():
    g = GridSpec(2, 32, 3.0)
    f = sample_gaussian(g, sigma=0.4)
    i, j = 5, 20
    x = (g.axis(0)[i], g.axis(1)[j])
    x1, x2 = np.meshgrid(g.axis(0), g.axis(1), indexing="ij")
    direct = g.cell_volume * np.sum(hyperbolic_kernel_2d(0.7, 2.0, np.array(x), np.stack([x1, x2], axis=-1)) * f.values)
    assert kernel_quadrature_apply(f, 0.7, 2.0).values[i, j] == pytest.approx(direct, rel=1e-12)


def test_quadrature_guards():
    g = GridSpec(2, 64, 3.0)
    assert max(g.n) > QUADRATURE_MAX_N
    with pytest.raises(CostGuardError):
        kernel_quadrature_apply(sample_gaussian(g, sigma=0.4), 1.0, 1.0)
    with pytest.raises(ParameterError):
        kernel_quadrature_apply(sample_gaussian(GridSpec(3, 32, 3.0), sigma=0.4), 1.0, 1.0)


def test_heat_matrix_rows_sum_to_one_inside():
    x = np.linspace(-10, 10, 401)
    H = heat_matrix_1d(x, x[1] - x[0], 0.5)
    assert np.allclose(H[100:301].sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(H, H.T)


@pytest.mark.parametrize("profile", ["sin", "const"])
def test_shear_factorization(profile):
    g = GridSpec.channel(2, (256, 32), 16.0)
    rho0 = sample_gaussian(g, sigma=1.0)
    assert shear_factorization_check(rho0, profile, 8.0, 0.5, 1e-3) < 1e-6
