"""Split-step time integration.

One step is ``D(dt/2) Adv(dt) N(dt) D(dt/2)``: exact spectral diffusion,
exact advection (band-limited resampling for the hyperbolic flow, a Fourier
phase shift for shears), and an explicit substep for the nonlinearity.

Times are handled in one of two frames.  In the original frame the flow has
amplitude ``A`` and unit diffusivity; in the rescaled frame (``t' = A t``)
the flow has unit speed, diffusivity ``1/A``, and the nonlinearity is scaled
by ``1/A``.  Hyperbolic runs with ``A > 0`` always step in the rescaled
frame; config times given in the original frame are converted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from . import diagnostics as dg
from .elliptic import inverse_laplacian
from .fields import (
    CHANNEL,
    FULL,
    MONITOR_TOL,
    GridSpec,
    ParameterError,
    ScalarField,
    UnsupportedDomainError,
    boundary_excess,
    boundary_ratio,
    dealias_mask,
    lp_norm,
    write_snapshot,
)
from .kernels import HYPERBOLIC, SHEAR, FlowSpec

PASSIVE = "passive"
PKS = "pks"
IGNITION = "ignition"
ORIGINAL = "original"
RESCALED = "rescaled"

# adaptive box thresholds, relative to the field peak
GROW_TOL = 1e-9
SHRINK_TOL = 1e-12
DECIMATE_TOL = MONITOR_TOL  # box resizing may lose what the boundary monitor tolerates
MAX_REFINE = 8


def to_rescaled(t, A):
    if not A > 0:
        raise ParameterError("amplitude must be positive")
    return A * t


def to_original(t_rescaled, A):
    if not A > 0:
        raise ParameterError("amplitude must be positive")
    return t_rescaled / A


# reaction ------------------------------------------------------------------


def ignition_f(z, alpha):
    z = np.asarray(z, dtype=float)
    return np.where((z >= alpha) & (z <= 1.0), (z - alpha) * (1.0 - z), 0.0)


def ignition_beta(alpha):
    """``sup_{0 < z <= 1} f(z) / z``, attained at ``z = sqrt(alpha)``."""
    return (1.0 - math.sqrt(alpha)) ** 2


def reaction_step(n, dt, alpha, max_substep=0.01):
    """Pointwise RK4 for ``z' = f(z)``; values outside (alpha, 1) are fixed."""
    if dt < 0:
        raise ParameterError("dt must be non-negative")
    vals = n.values if isinstance(n, ScalarField) else np.asarray(n, float)
    z = vals.copy()
    active = (z > alpha) & (z < 1.0)
    if dt > 0 and active.any():
        w = z[active]
        m = max(1, math.ceil(dt / max_substep))
        h = dt / m
        for _ in range(m):
            k1 = ignition_f(w, alpha)
            k2 = ignition_f(w + 0.5 * h * k1, alpha)
            k3 = ignition_f(w + 0.5 * h * k2, alpha)
            k4 = ignition_f(w + h * k3, alpha)
            w = w + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        z[active] = w
    return ScalarField(n.grid, z) if isinstance(n, ScalarField) else z


def ignition_exact(z0, t, alpha):
    """Closed-form solution of ``z' = (z - alpha)(1 - z)`` for ``alpha < z0 < 1``."""
    w = (z0 - alpha) / (1 - z0) * math.exp((1 - alpha) * t)
    return (alpha + w) / (1 + w)


# linear substeps --------------------------------------------------------------


def diffusion_step_exact(f, dt, kappa, axes=None):
    """Heat flow by the Fourier multiplier ``exp(-kappa |k|^2 dt)``.

    ``axes`` restricts diffusion to a subset of axes.
    """
    if dt < 0:
        raise ParameterError("dt must be non-negative")
    if dt == 0:
        return f.copy()
    ks = f.grid.wavenumbers()
    axes = range(f.grid.dim) if axes is None else axes
    K2 = sum(ks[i] ** 2 for i in axes)
    F = sfft.rfftn(f.values) * np.exp(-kappa * dt * K2)
    return ScalarField(f.grid, sfft.irfftn(F, s=f.grid.shape))


def _periodic_sinc(u, n):
    # Dirichlet kernel of the even-n trigonometric interpolant (split Nyquist);
    # equals 1 at multiples of n
    u = np.asarray(u, float)
    t = np.tan(np.pi * u / n)
    small = np.abs(t) < 1e-12
    return np.where(small, 1.0, np.sin(np.pi * u) / (n * np.where(small, 1.0, t)))


@lru_cache(maxsize=4)  # one step needs two scales; a refined axis makes each matrix 4096^2 doubles
def resample_matrix(n, L, scale):
    """Matrix evaluating the trig interpolant of axis data at ``scale * x``.

    Rows whose target leaves the box are zero.
    """
    h = 2 * L / n
    x = -L + h * np.arange(n)
    y = scale * x
    M = _periodic_sinc((y[:, None] - x[None, :]) / h, n)
    M[(y < -L) | (y >= L)] = 0.0
    M.setflags(write=False)
    return M


def _apply_along(values, M, axis):
    return np.moveaxis(np.tensordot(M, values, axes=([1], [axis])), 0, axis)


def hyperbolic_scales(dim, dt):
    """Per-axis factors ``s_i``: the advected field at ``x`` is ``f(s * x)``."""
    return [math.exp(dt / (dim - 1))] * (dim - 1) + [math.exp(-dt)]


def advect_exact_hyperbolic(f, dt):
    """Transport by the unit-speed hyperbolic flow for time ``dt``."""
    if f.grid.topology != FULL:
        raise UnsupportedDomainError("hyperbolic flow needs full-space topology")
    if dt == 0:
        return f.copy()
    g = f.grid
    out = f.values
    for i, s in enumerate(hyperbolic_scales(g.dim, dt)):
        out = _apply_along(out, resample_matrix(g.n[i], g.half_length[i], s), i)
    return ScalarField(g, out)


def advect_exact_shear(f, A, dt, profile):
    """Shift each transverse row along x1 by ``A u dt`` (Fourier phase)."""
    if f.grid.topology != CHANNEL:
        raise UnsupportedDomainError("shear flow needs channel topology")
    g = f.grid
    u = np.asarray(profile, float)
    if u.shape != tuple(g.n[1:]):
        raise ParameterError(f"profile shape {u.shape} does not match {tuple(g.n[1:])}")
    if A * dt == 0 or not u.any():
        return f.copy()
    k1 = np.pi * np.fft.rfftfreq(g.n[0], 1.0 / g.n[0]) / g.half_length[0]
    F = sfft.rfft(f.values, axis=0)
    F *= np.exp(-1j * (A * dt) * k1.reshape((-1,) + (1,) * (g.dim - 1)) * u[None])
    return ScalarField(g, sfft.irfft(F, n=g.n[0], axis=0))


# nonlinear term -------------------------------------------------------------------


def pks_rhs(n, dealias=True):
    """``-div(n grad c)`` with ``-Laplace c = n``, evaluated spectrally."""
    g = n.grid
    chem = inverse_laplacian(n, gradient_only=True)
    ks = g.wavenumbers()
    mask = dealias_mask(g) if dealias else 1.0
    div = 0.0
    for k, gc in zip(ks, chem.grad_c):
        div = div + 1j * k * (sfft.rfftn(n.values * gc.values) * mask)
    return ScalarField(g, -sfft.irfftn(div, s=g.shape))


# configuration -----------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    kind: str = PASSIVE
    alpha: float = None

    def __post_init__(self):
        if self.kind not in (PASSIVE, PKS, IGNITION):
            raise ParameterError(f"unknown model kind {self.kind!r}")
        if self.kind == IGNITION:
            if self.alpha is None or not 0 < self.alpha < 1:
                raise ParameterError("ignition alpha must lie in (0, 1)")

    @property
    def beta(self):
        return ignition_beta(self.alpha) if self.kind == IGNITION else 0.0


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Full description of one run.

    ``t_end``, ``dt_max``, ``snapshot_times`` and ``mark_times`` are in the
    units of ``frame``.  Steps land exactly on snapshot and mark times, and a
    record is forced there.  ``fixed_dt`` overrides the adaptive policy.
    ``adaptive_box`` (default: on for hyperbolic full-space runs) lets the
    box follow the stretching and contracting axes, refining an axis up to
    ``max_refine`` times its starting node count when it cannot be coarsened.
    """

    grid: GridSpec
    flow: FlowSpec
    model: ModelSpec
    t_end: float
    frame: str = ORIGINAL
    c_stab: float = 0.1
    dt_max: float = 0.01
    dealias: bool = True
    record_every: int = 1
    snapshot_times: tuple = ()
    mark_times: tuple = ()
    fixed_dt: float = None
    adaptive_box: bool = None
    blowup_linf_factor: float = 1e4
    blowup_tail_limit: float = 0.1
    stop_on: tuple = dg.TERMINAL_KINDS
    snapshot_dir: str = None
    max_refine: int = MAX_REFINE

    def __post_init__(self):
        if not self.t_end > 0:
            raise ParameterError("t_end must be positive")
        if not 0 < self.c_stab <= 1:
            raise ParameterError("c_stab must lie in (0, 1]")
        if not self.dt_max > 0:
            raise ParameterError("dt_max must be positive")
        if self.frame not in (ORIGINAL, RESCALED):
            raise ParameterError(f"unknown frame {self.frame!r}")
        if self.frame == RESCALED and not self.flow.amplitude > 0:
            raise ParameterError("the rescaled frame needs a positive amplitude")
        if self.record_every < 1:
            raise ParameterError("record_every must be >= 1")
        if self.max_refine < 1 or self.max_refine & (self.max_refine - 1):
            raise ParameterError("max_refine must be a power of two")
        if self.flow.kind == HYPERBOLIC and self.flow.active and self.grid.topology != FULL:
            raise UnsupportedDomainError("hyperbolic flow needs full-space topology")
        if self.flow.kind == SHEAR and self.grid.topology != CHANNEL:
            raise UnsupportedDomainError("shear flow needs channel topology")
        object.__setattr__(self, "snapshot_times", tuple(sorted(self.snapshot_times)))
        object.__setattr__(self, "mark_times", tuple(sorted(self.mark_times)))

    def with_amplitude(self, A):
        frame = self.frame if A > 0 else ORIGINAL
        return replace(self, flow=self.flow.with_amplitude(A), frame=frame)

    @property
    def internal_frame(self):
        if self.flow.kind == HYPERBOLIC and self.flow.active:
            return RESCALED
        return self.frame

    @property
    def time_factor(self):
        """Multiply config-frame times by this to get internal times."""
        if self.internal_frame == self.frame:
            return 1.0
        return self.flow.amplitude

    @property
    def use_adaptive_box(self):
        if self.adaptive_box is not None:
            return self.adaptive_box
        return self.flow.kind == HYPERBOLIC and self.flow.active


@dataclass
class StepperState:
    """Evolving solution; ``t`` is in the internal frame of the run."""

    t: float
    field: ScalarField
    step_count: int = 0


@dataclass
class Trajectory:
    config: SimConfig
    records: list
    events: list
    snapshots: list
    final: StepperState
    monitor_worst: float

    @property
    def terminal_event(self):
        for e in self.events:
            if e.terminal:
                return e
        return None

    def snapshot_at(self, t, tol=1e-9):
        for ts, f in self.snapshots:
            if abs(ts - t) <= tol * max(1.0, abs(t)):
                return f
        raise KeyError(t)


class FrameParams:
    """Advection rate, diffusivity and nonlinear coefficient of a frame."""

    def __init__(self, frame, A):
        if frame == RESCALED:
            self.rate, self.kappa, self.coeff = 1.0, 1.0 / A, 1.0 / A
        else:
            self.rate, self.kappa, self.coeff = A, 1.0, 1.0
        self.frame = frame
        self.A = A

    def times(self, t):
        """(original, rescaled) times for an internal time ``t``."""
        if self.frame == RESCALED:
            return t / self.A, t
        return t, t * self.A


class LinearStepper:
    """Advection-diffusion steps without a nonlinearity.

    ``rate`` multiplies the flow (amplitude in the original frame, 1 in the
    rescaled frame).  ``diffuse_axes`` restricts the diffusion.
    """

    def __init__(self, grid, flow, kappa=1.0, rate=None, diffuse_axes=None):
        self.grid = grid
        self.flow = flow
        self.kappa = kappa
        self.rate = flow.amplitude if rate is None else rate
        self.diffuse_axes = diffuse_axes
        self._profile = flow.profile_on(grid) if flow.kind == SHEAR else None

    def advect(self, f, dt):
        if not self.flow.active or self.rate == 0:
            return f
        if self.flow.kind == HYPERBOLIC:
            return advect_exact_hyperbolic(f, self.rate * dt)
        return advect_exact_shear(f, self.rate, dt, self._profile)

    def diffuse(self, f, dt):
        return diffusion_step_exact(f, dt, self.kappa, self.diffuse_axes)

    def step(self, f, dt):
        f = self.diffuse(f, dt / 2)
        f = self.advect(f, dt)
        return self.diffuse(f, dt / 2)

    def evolve(self, f, duration, dt):
        if duration <= 0:
            return f.copy()
        m = max(1, math.ceil(duration / dt - 1e-9))
        h = duration / m
        for _ in range(m):
            f = self.step(f, h)
        return f


def nonlinear_substep(f, dt, model, coeff, dealias=True):
    if model.kind == PKS:
        half = f + (0.5 * dt * coeff) * pks_rhs(f, dealias)
        return f + (dt * coeff) * pks_rhs(half, dealias)
    if model.kind == IGNITION:
        return reaction_step(f, dt * coeff, model.alpha)
    return f


def policy_dt(f, config, params):
    if config.fixed_dt is not None:
        return config.fixed_dt * config.time_factor
    dt_max = config.dt_max * config.time_factor
    if config.model.kind == PASSIVE:
        return dt_max
    peak = lp_norm(f, np.inf)
    return min(dt_max, config.c_stab / (params.coeff * (1.0 + peak)))


def strang_step(state, config, dt=None, params=None):
    """Advance ``state`` by one split step of size ``dt`` (internal units)."""
    params = params or FrameParams(config.internal_frame, config.flow.amplitude)
    if dt is None:
        dt = policy_dt(state.field, config, params)
    lin = LinearStepper(state.field.grid, config.flow, params.kappa, params.rate)
    f = lin.diffuse(state.field, dt / 2)
    f = lin.advect(f, dt)
    f = nonlinear_substep(f, dt, config.model, params.coeff, config.dealias)
    f = lin.diffuse(f, dt / 2)
    return StepperState(state.t + dt, f, state.step_count + 1)


# adaptive box ------------------------------------------------------------------------


class DomainOverflow(RuntimeError):
    pass


def _axis_shell_max(values, x, mask_fn, axis):
    sel = mask_fn(np.abs(x))
    if not sel.any():
        return 0.0
    return float(np.abs(np.compress(sel, values, axis=axis)).max())


def _axis_lowpass(values, axis, frac):
    """Keep modes with ``|m| < frac * n`` along ``axis`` (zero mode untouched)."""
    n = values.shape[axis]
    last = axis == values.ndim - 1
    F = sfft.rfft(values, axis=axis) if last else sfft.fft(values, axis=axis)
    m = np.abs(np.fft.rfftfreq(n, 1.0 / n) if last else np.fft.fftfreq(n, 1.0 / n))
    keep = (m < frac * n).reshape([-1 if i == axis else 1 for i in range(values.ndim)])
    return sfft.irfft(F * keep, n=n, axis=axis) if last else sfft.ifft(F * keep, axis=axis).real


def _lowpass_half(f, axis):
    """Keep modes with ``|m| < n/6`` along ``axis``; returns (low, relative loss).

    After a 2:1 decimation those modes fill the dealiased two thirds of the
    coarse band; content at the coarse band edge would spoil the mass balance
    of the advection resampling.
    """
    low = _axis_lowpass(f.values, axis, 1 / 6)
    peak = float(np.abs(f.values).max())
    lost = float(np.abs(f.values - low).max())
    return low, (lost / peak if peak > 0 else 0.0)


def _axis_slice(dim, axis, s):
    out = [slice(None)] * dim
    out[axis] = s
    return tuple(out)


def _embed(values, axis, n_new):
    # zero-fill around the old box, then smooth the seams at its edges by
    # keeping the dealiased two thirds of the band
    shape = list(values.shape)
    shape[axis] = n_new
    out = np.zeros(shape)
    out[_axis_slice(len(shape), axis, slice(n_new // 4, 3 * n_new // 4))] = values
    return _axis_lowpass(out, axis, 1 / 3)


def double_axis(f, axis):
    """Twice the half length, same node count: low-pass then keep every other node."""
    g = f.grid
    n = g.n[axis]
    low, loss = _lowpass_half(f, axis)
    if loss > DECIMATE_TOL:
        raise DomainOverflow(f"axis {axis} not band-limited enough to coarsen (loss {loss:.2e})")
    out = _embed(low[_axis_slice(g.dim, axis, slice(0, n, 2))], axis, n)
    return ScalarField(g.with_axis(axis, half_length=2 * g.half_length[axis]), out)


def extend_axis(f, axis):
    """Twice the half length and node count at fixed spacing, zero-filled."""
    g = f.grid
    n = g.n[axis]
    out = _embed(f.values, axis, 2 * n)
    return ScalarField(g.with_axis(axis, n=2 * n, half_length=2 * g.half_length[axis]), out)


def coarsen_axis(f, axis):
    """Half the node count over the same box; ``None`` if that loses content."""
    g = f.grid
    n = g.n[axis]
    low, loss = _lowpass_half(f, axis)
    if loss > DECIMATE_TOL:
        return None
    return ScalarField(g.with_axis(axis, n=n // 2), low[_axis_slice(g.dim, axis, slice(0, n, 2))].copy())


def halve_axis(f, axis):
    """Half the half length, same node count, by trigonometric interpolation."""
    g = f.grid
    n = g.n[axis]
    F = sfft.fft(f.values, axis=axis)
    shape = list(F.shape)
    shape[axis] = 2 * n
    G = np.zeros(shape, dtype=complex)

    def sl(a, b):
        s = [slice(None)] * g.dim
        s[axis] = slice(a, b)
        return tuple(s)

    G[sl(0, n // 2)] = F[sl(0, n // 2)]
    G[sl(2 * n - n // 2 + 1, 2 * n)] = F[sl(n // 2 + 1, n)]
    G[sl(n // 2, n // 2 + 1)] = 0.5 * F[sl(n // 2, n // 2 + 1)]
    G[sl(2 * n - n // 2, 2 * n - n // 2 + 1)] = 0.5 * F[sl(n // 2, n // 2 + 1)]
    fine = 2 * sfft.ifft(G, axis=axis).real
    out = fine[sl(n // 2, n // 2 + n)]
    return ScalarField(g.with_axis(axis, half_length=g.half_length[axis] / 2), out)


def adapt_box(f, stretch_dt, base_n=None, max_refine=MAX_REFINE):
    """Resize a hyperbolic-run box before a step with stretch ``stretch_dt``.

    The stretching (last) axis grows until the content beyond
    ``0.8 L exp(-stretch_dt)`` is negligible, and every axis grows when its
    outer shell carries mass.  Growth keeps the node count when the field is
    smooth enough for a 2:1 decimation, and otherwise doubles the node count
    at fixed spacing, up to ``max_refine`` times ``base_n``.  Axes above
    ``base_n`` return to coarser spacing once that is lossless; contracting
    axes halve when the field fits well inside the inner part of the box.
    """
    d = f.grid.dim
    base_n = f.grid.n if base_n is None else tuple(base_n)
    peak = float(np.abs(f.values).max())
    if peak == 0 or not np.isfinite(peak):
        return f
    for axis in range(d):
        stretching = axis == d - 1
        grow = math.exp(stretch_dt if stretching else 0.0)
        for _ in range(64):
            # content at the level of the ringing floor is not a reason to grow;
            # the floor is re-read after each resize, whose seam smoothing rings too
            floor = max(GROW_TOL * peak, -min(0.0, float(f.values.min())))
            L = f.grid.half_length[axis]
            x = f.grid.axis(axis)
            outer = _axis_shell_max(f.values, x, lambda r: r > 0.8 * L / grow, axis)
            if outer <= floor:
                break
            try:
                f = double_axis(f, axis)
            except DomainOverflow:
                if 2 * f.grid.n[axis] > max_refine * base_n[axis]:
                    raise
                f = extend_axis(f, axis)
        while f.grid.n[axis] > base_n[axis]:
            coarse = coarsen_axis(f, axis)
            if coarse is None:
                break
            f = coarse
        if not stretching:
            for _ in range(64):
                L = f.grid.half_length[axis]
                x = f.grid.axis(axis)
                outer = _axis_shell_max(f.values, x, lambda r: r > 0.4 * L, axis)
                if outer > SHRINK_TOL * peak:
                    break
                f = halve_axis(f, axis)
    return f


# driver -------------------------------------------------------------------------------


def _next_stop(t, stops, t_end):
    for s in stops:
        if s > t * (1 + 1e-12) + 1e-14:
            return min(s, t_end)
    return t_end


def run(config, initial, callbacks=()):
    """Integrate ``initial`` to ``config.t_end`` or a stopping event."""
    if initial.grid.topology != config.grid.topology or initial.grid.dim != config.grid.dim:
        raise ParameterError("initial field does not live on the configured grid")
    params = FrameParams(config.internal_frame, config.flow.amplitude)
    tf = config.time_factor
    t_end = config.t_end * tf
    snaps = [s * tf for s in config.snapshot_times if s <= config.t_end]
    marks = sorted(set(snaps + [m * tf for m in config.mark_times if m <= config.t_end]))
    adaptive = config.use_adaptive_box

    state = StepperState(0.0, initial.copy(), 0)
    records, events, snapshots = [], [], []
    monitor_worst = boundary_ratio(state.field)
    linf0 = lp_norm(initial, np.inf)
    quenched = False
    seen = set()
    band = 2.0 / 3.0 if (config.dealias and config.model.kind == PKS) else 1.0

    def record(dt):
        r = dg.make_record(state.step_count, *params.times(state.t), dt, state.field, band)
        records.append(r)
        for cb in callbacks:
            cb(state, r)
        return r

    def take_snapshot():
        t_cfg = state.t / tf
        snapshots.append((t_cfg, state.field.copy()))
        if config.snapshot_dir:
            name = f"snapshot_{len(snapshots) - 1:04d}.bin"
            write_snapshot(f"{config.snapshot_dir}/{name}", state.field, t_cfg)

    def check(r):
        nonlocal quenched
        found = []
        if not (math.isfinite(r.linf) and math.isfinite(r.mass)):
            found.append(dg.EventRecord(dg.BLOWUP, r.t_original, "non-finite values"))
        elif config.model.kind == PKS:
            if linf0 > 0 and r.linf > config.blowup_linf_factor * linf0:
                found.append(dg.EventRecord(dg.BLOWUP, r.t_original,
                                            f"linf {r.linf:.6g} > {config.blowup_linf_factor:g} x initial"))
            elif r.tail_fraction > config.blowup_tail_limit:
                found.append(dg.EventRecord(dg.BLOWUP, r.t_original,
                                            f"tail fraction {r.tail_fraction:.3g} > {config.blowup_tail_limit:g}"))
        if found and found[0].kind in seen:
            found = []
        if config.model.kind == IGNITION and not quenched and r.linf < config.model.alpha:
            quenched = True
            found.append(dg.EventRecord(dg.QUENCH, r.t_original, f"linf {r.linf:.6g} < alpha"))
        seen.update(e.kind for e in found)
        return found

    def monitor(f):
        nonlocal monitor_worst
        ratio = boundary_ratio(f)
        monitor_worst = max(monitor_worst, ratio)
        if boundary_excess(f) > 1.0 and dg.DOMAIN_OVERFLOW not in seen:
            seen.add(dg.DOMAIN_OVERFLOW)
            return dg.EventRecord(dg.DOMAIN_OVERFLOW, params.times(state.t)[0],
                                  f"boundary ratio {ratio:.3e} > {MONITOR_TOL:g}")
        return None

    r = record(0.0)
    events.extend(check(r))
    if snaps and abs(snaps[0]) < 1e-14:
        take_snapshot()
    ev = monitor(state.field)
    if ev:
        events.append(ev)
    stop = any(e.kind in config.stop_on for e in events)

    since_record = 0
    while not stop and state.t < t_end * (1 - 1e-13):
        target = _next_stop(state.t, marks, t_end)
        dt = policy_dt(state.field, config, params)
        remaining = target - state.t
        if dt >= remaining * (1 - 1e-9):
            dt = remaining
        elif dt > remaining / 2:
            dt = remaining / 2
        if adaptive:
            try:
                field_ = adapt_box(state.field, params.rate * dt, config.grid.n, config.max_refine)
            except DomainOverflow as exc:
                events.append(dg.EventRecord(dg.DOMAIN_OVERFLOW, params.times(state.t)[0], str(exc)))
                break
            state = StepperState(state.t, field_, state.step_count)
        state = strang_step(state, config, dt, params)
        if abs(state.t - target) <= 1e-12 * max(1.0, abs(target)):
            state.t = target
        since_record += 1
        at_mark = any(abs(state.t - m) <= 1e-12 * max(1.0, m) for m in marks)
        at_end = state.t >= t_end * (1 - 1e-13)
        ev = monitor(state.field)
        new = [ev] if ev else []
        if since_record >= config.record_every or at_mark or at_end or new:
            since_record = 0
            new += check(record(dt))
        if any(abs(state.t - s) <= 1e-12 * max(1.0, s) for s in snaps):
            take_snapshot()
        events.extend(new)
        stop = any(e.kind in config.stop_on for e in new)
    if records[-1].step != state.step_count:
        record(0.0)
    return Trajectory(config, records, events, snapshots, state, monitor_worst)
