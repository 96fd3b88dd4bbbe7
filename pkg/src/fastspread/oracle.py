"""Independent low-tech references for cross-checking the spectral paths.

* :func:`fd_run`: explicit Euler with second-order central differences.
* :func:`kernel_quadrature_apply`: the 2D kernel integral as one dense sum.
* :func:`shear_factorization_check`: the shear solution written as an x1 heat
  convolution of the solution without x1 diffusion.
"""
from __future__ import annotations

import math

import numpy as np

from . import diagnostics as dg
from .elliptic import inverse_laplacian
from .evolve import (
    IGNITION,
    PKS,
    FrameParams,
    LinearStepper,
    StepperState,
    Trajectory,
    ignition_f,
)
from .fields import GridSpec, ParameterError, ScalarField, boundary_ratio
from .kernels import SHEAR, FlowSpec, hyperbolic_kernel_2d

FD_MAX_N = 64
QUADRATURE_MAX_N = 48


class CostGuardError(ValueError):
    pass


def _ddx(v, axis, h):
    return (np.roll(v, -1, axis) - np.roll(v, 1, axis)) / (2 * h)


def _laplacian(v, spacing):
    out = np.zeros_like(v)
    for i, h in enumerate(spacing):
        out += (np.roll(v, -1, i) - 2 * v + np.roll(v, 1, i)) / h**2
    return out


def fd_stable_dt(grid, kappa):
    return 0.2 * min(grid.spacing) ** 2 / (2 * grid.dim * kappa)


def fd_run(config, initial, dt=None, record_every=None):
    """Explicit finite-difference run of ``config`` on a small grid.

    Works in the config frame (diffusivity 1 or ``1/A``); advection and the
    chemotactic flux are written in conservative centred form, so mass is
    conserved to rounding.  Records use the same format as the spectral run.
    """
    g = initial.grid
    if max(g.n) > FD_MAX_N:
        raise ParameterError(f"finite-difference oracle is limited to {FD_MAX_N} points per axis")
    A = config.flow.amplitude
    params = FrameParams(config.frame, A) if A > 0 else FrameParams("original", 0.0)
    kappa = params.kappa
    dt_limit = fd_stable_dt(g, kappa)
    dt = dt_limit if dt is None else dt
    if dt > dt_limit * (1 + 1e-12):
        raise ParameterError(f"dt {dt:g} exceeds the explicit limit {dt_limit:g}")
    vel = [v * (params.rate / A) if A > 0 else v for v in config.flow.velocity(g)]
    vmax = max(float(np.abs(v).max()) for v in vel)
    if vmax * dt > min(g.spacing):
        raise ParameterError("advective CFL number exceeds 1")
    every = record_every or config.record_every

    snaps = sorted(config.snapshot_times)
    t_end = config.t_end
    values = initial.values.copy()
    t, step = 0.0, 0
    records, events, snapshots = [], [], []
    worst = boundary_ratio(initial)

    def rhs(v):
        out = kappa * _laplacian(v, g.spacing)
        for i in range(g.dim):
            out -= _ddx(vel[i] * v, i, g.spacing[i])
        if config.model.kind == PKS:
            c = inverse_laplacian(ScalarField(g, v)).c.values
            for i in range(g.dim):
                out -= params.coeff * _ddx(v * _ddx(c, i, g.spacing[i]), i, g.spacing[i])
        elif config.model.kind == IGNITION:
            out += params.coeff * ignition_f(v, config.model.alpha)
        return out

    def record(h):
        f = ScalarField(g, values)
        r = dg.make_record(step, *params.times(t), h, f)
        records.append(r)
        return r

    record(0.0)
    if snaps and snaps[0] == 0:
        snapshots.append((0.0, initial.copy()))
    while t < t_end * (1 - 1e-13):
        target = next((s for s in snaps if s > t * (1 + 1e-12) + 1e-14), t_end)
        h = min(dt, target - t)
        values = values + h * rhs(values)
        t = target if abs(t + h - target) < 1e-12 * max(1.0, target) else t + h
        step += 1
        hit = abs(t - target) < 1e-12 * max(1.0, target)
        if step % every == 0 or hit:
            r = record(h)
            worst = max(worst, boundary_ratio(ScalarField(g, values)))
            if config.model.kind == PKS:
                ev = dg.blowup_detect([records[0], r], config.blowup_linf_factor, config.blowup_tail_limit)
                if ev is None and not np.isfinite(values).all():
                    ev = dg.EventRecord(dg.BLOWUP, r.t_original, "non-finite values")
                if ev is not None:
                    events.append(ev)
                    break
        if hit and target in snaps:
            snapshots.append((t, ScalarField(g, values.copy())))
    final = StepperState(t, ScalarField(g, values), step)
    return Trajectory(config, records, events, snapshots, final, worst)


def reduce_grid(grid, n=FD_MAX_N):
    return GridSpec(grid.dim, tuple(min(v, n) for v in grid.n), grid.half_length, grid.topology)


def kernel_quadrature_apply(f, t, A):
    """Apply the 2D kernel by a direct double sum over all node pairs."""
    g = f.grid
    if g.dim != 2:
        raise ParameterError("direct quadrature is 2D only")
    if max(g.n) > QUADRATURE_MAX_N:
        raise CostGuardError(f"direct quadrature is limited to {QUADRATURE_MAX_N} points per axis")
    x1, x2 = np.meshgrid(g.axis(0), g.axis(1), indexing="ij")
    pts = np.stack([x1.ravel(), x2.ravel()], axis=-1)
    K = hyperbolic_kernel_2d(t, A, pts[:, None, :], pts[None, :, :])
    out = (K @ f.values.ravel()) * g.cell_volume
    return ScalarField(g, out.reshape(g.shape))


def heat_matrix_1d(x, h, t):
    """Rectangle-rule matrix of the unit-diffusivity heat kernel on the line."""
    d = x[:, None] - x[None, :]
    return h * np.exp(-(d**2) / (4 * t)) / math.sqrt(4 * math.pi * t)


def shear_factorization_check(rho0, profile, A, t, dt=1e-3):
    """Relative Linf gap between the full solution and its factorised form.

    The full solution is computed with the spectral stepper.  The second
    route evolves with diffusion only across the channel, then applies the
    x1 heat kernel by real-space quadrature.
    """
    g = rho0.grid
    flow = FlowSpec(SHEAR, float(A), g.dim, profile)
    full = LinearStepper(g, flow, kappa=1.0, rate=A).evolve(rho0, t, dt)
    psi = LinearStepper(g, flow, kappa=1.0, rate=A, diffuse_axes=range(1, g.dim)).evolve(rho0, t, dt)
    H = heat_matrix_1d(g.axis(0), g.spacing[0], t)
    factored = np.tensordot(H, psi.values, axes=([1], [0]))
    return float(np.abs(full.values - factored).max() / np.abs(full.values).max())


def compare_runs(spectral, fd, times):
    """Rows of (t, mass, linf and relative l2 gap) at shared snapshot times."""
    rows = []
    for t in times:
        a = spectral.snapshot_at(t)
        b = fd.snapshot_at(t)
        gap = float(np.linalg.norm(a.values - b.values) / max(np.linalg.norm(a.values), 1e-300))
        h = a.grid.cell_volume
        rows.append({
            "t": t,
            "mass_spectral": h * float(a.values.sum()),
            "mass_fd": h * float(b.values.sum()),
            "linf_spectral": float(np.abs(a.values).max()),
            "linf_fd": float(np.abs(b.values).max()),
            "rel_l2_gap": gap,
        })
    return rows
