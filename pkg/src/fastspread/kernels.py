"""Exact Green's functions for advection-diffusion under the hyperbolic flow.

Everything here is written in rescaled time ``t`` (unit-speed flow, diffusivity
``1/A``).  In ``d`` dimensions the flow contracts the first ``d - 1`` axes at
rate ``1/(d-1)`` and stretches the last one at rate 1, so the solution
operator factorises into independent one-dimensional Ornstein-Uhlenbeck
kernels, one per axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np
from scipy.integrate import cubature
from scipy.optimize import brentq

from .fields import FULL, ParameterError, ScalarField, UnsupportedDomainError


class KernelDomainError(ValueError):
    """Raised for non-positive times."""


class HorizonError(RuntimeError):
    """The operator-norm curve did not reach 1/2 within the horizon."""


HYPERBOLIC = "hyperbolic"
SHEAR = "shear"
NONE = "none"

NAMED_PROFILES = {
    "sin": lambda y: np.sin(y[0]),
    "sin+sin2": lambda y: np.sin(y[0]) + np.sin(2 * y[0]),
    "const": lambda y: np.ones_like(y[0]) if len(y) == 1 else np.ones(np.broadcast(*y).shape),
    "zero": lambda y: np.zeros_like(y[0]) if len(y) == 1 else np.zeros(np.broadcast(*y).shape),
}


@dataclass(frozen=True, eq=False)
class FlowSpec:
    """Background flow.

    ``kind`` is ``"hyperbolic"``, ``"shear"`` or ``"none"``.  A shear
    ``profile`` is a name from :data:`NAMED_PROFILES`, a callable taking the
    transverse coordinate arrays, or an array sampled on the transverse grid.
    ``amplitude = 0`` is accepted and means the flow is switched off.
    """

    kind: str
    amplitude: float = 0.0
    dim: int = 2
    profile: object = None

    def __post_init__(self):
        if self.kind not in (HYPERBOLIC, SHEAR, NONE):
            raise ParameterError(f"unknown flow kind {self.kind!r}")
        if not self.amplitude >= 0:
            raise ParameterError("amplitude must be non-negative")
        if self.kind == SHEAR and self.profile is None:
            raise ParameterError("shear flow needs a profile")
        if isinstance(self.profile, str) and self.profile not in NAMED_PROFILES:
            raise ParameterError(f"unknown profile {self.profile!r}")

    @property
    def active(self):
        return self.kind != NONE and self.amplitude > 0

    def with_amplitude(self, A):
        return FlowSpec(self.kind, float(A), self.dim, self.profile)

    def profile_on(self, grid):
        """Shear profile sampled on the transverse nodes of a channel grid."""
        shape = tuple(grid.n[1:])
        p = self.profile
        if isinstance(p, np.ndarray):
            if p.shape != shape:
                raise ParameterError(f"profile shape {p.shape} does not match {shape}")
            return p.astype(float)
        ys = np.meshgrid(*[grid.axis(i) for i in range(1, grid.dim)], indexing="ij")
        fn = NAMED_PROFILES[p] if isinstance(p, str) else p
        return np.broadcast_to(np.asarray(fn(ys), dtype=float), shape).copy()

    def velocity(self, grid):
        """Velocity components on the grid (original-frame, amplitude included)."""
        A = self.amplitude
        if not self.active:
            return [np.zeros(grid.shape) for _ in range(grid.dim)]
        if self.kind == HYPERBOLIC:
            d = grid.dim
            mesh = grid.mesh()
            out = [np.broadcast_to(-A * mesh[i] / (d - 1), grid.shape) for i in range(d - 1)]
            out.append(np.broadcast_to(A * mesh[-1], grid.shape))
            return [np.array(v) for v in out]
        u = self.profile_on(grid)
        out = [np.broadcast_to(A * u[None], grid.shape).copy()]
        out += [np.zeros(grid.shape) for _ in range(grid.dim - 1)]
        return out


def _check_t(t):
    if not t > 0:
        raise KernelDomainError(f"time must be positive, got {t}")


# one-dimensional factors, normalised in the source variable x'
def _stretch_factor(t, kappa, x, xp):
    var = kappa * (1 - math.exp(-2 * t))
    return np.exp(-((x * math.exp(-t) - xp) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)


def _contract_factor_2d(t, kappa, x, xp):
    var = kappa * math.expm1(2 * t)
    return np.exp(-((x * math.exp(t) - xp) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)


def _contract_factor_3d(t, kappa, x, xp):
    var = 2 * kappa * math.expm1(t)
    return np.exp(-((x * math.exp(t / 2) - xp) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)


def axis_factors(t, A, dim):
    """Per-axis kernel factors ``k_i(x, x')`` whose product is the full kernel."""
    _check_t(t)
    kappa = 1.0 / A
    if dim == 2:
        return [
            lambda x, xp: _contract_factor_2d(t, kappa, x, xp),
            lambda x, xp: _stretch_factor(t, kappa, x, xp),
        ]
    if dim == 3:
        c = lambda x, xp: _contract_factor_3d(t, kappa, x, xp)
        return [c, c, lambda x, xp: _stretch_factor(t, kappa, x, xp)]
    raise ParameterError("dim must be 2 or 3")


def kernel_prefactor(t, A, dim):
    """Kernel supremum over both arguments."""
    _check_t(t)
    if dim == 2:
        return A / (4 * math.pi * math.sinh(t))
    return A**1.5 / (2**2.5 * math.pi**1.5 * math.sqrt(math.expm1(2 * t)) * (-math.expm1(-t)))


kernel_sup = kernel_prefactor


def hyperbolic_kernel_2d(t, A, x, xp):
    """Transition density from ``x`` to ``x'`` after rescaled time ``t``.

    ``x`` and ``xp`` are arrays with trailing axis of length 2; they broadcast.
    """
    _check_t(t)
    x = np.asarray(x, float)
    xp = np.asarray(xp, float)
    kappa = 1.0 / A
    e_stretch = (x[..., 1] * math.exp(-t) - xp[..., 1]) ** 2 / (2 * kappa * (1 - math.exp(-2 * t)))
    e_contract = (x[..., 0] * math.exp(t) - xp[..., 0]) ** 2 / (2 * kappa * math.expm1(2 * t))
    return kernel_prefactor(t, A, 2) * np.exp(-e_stretch - e_contract)


def hyperbolic_kernel_3d(t, A, x, xp):
    _check_t(t)
    x = np.asarray(x, float)
    xp = np.asarray(xp, float)
    kappa = 1.0 / A
    e_stretch = (x[..., 2] * math.exp(-t) - xp[..., 2]) ** 2 / (2 * kappa * (1 - math.exp(-2 * t)))
    g = math.exp(t / 2)
    e_contract = ((x[..., 0] * g - xp[..., 0]) ** 2 + (x[..., 1] * g - xp[..., 1]) ** 2) / (
        4 * kappa * math.expm1(t)
    )
    return kernel_prefactor(t, A, 3) * np.exp(-e_stretch - e_contract)


def _gaussian_extent(t, A, dim, point, over):
    """Centre and standard deviation of the kernel in the integrated variable."""
    kappa = 1.0 / A
    g = math.exp(t / (dim - 1))
    var_c = kappa * math.expm1(2 * t) if dim == 2 else 2 * kappa * math.expm1(t)
    sd_c = math.sqrt(var_c)
    sd_s = math.sqrt(kappa * -math.expm1(-2 * t))
    point = np.asarray(point, float)
    if over == "source":
        centre = np.append(point[:-1] * g, point[-1] * math.exp(-t))
        sd = np.array([sd_c] * (dim - 1) + [sd_s])
    elif over == "target":
        centre = np.append(point[:-1] / g, point[-1] * math.exp(t))
        sd = np.array([sd_c / g] * (dim - 1) + [sd_s * math.exp(t)])
    else:
        raise ParameterError("over must be 'source' or 'target'")
    return centre, sd


def kernel_normalization(t, A, dim, point, over="source", rtol=1e-10, width=12.0):
    """Integral of the kernel over one argument, the other fixed at ``point``.

    Adaptive cubature over the box of ``width`` standard deviations around
    the kernel's Gaussian centre; should return 1 in both directions.
    """
    _check_t(t)
    kern = hyperbolic_kernel_2d if dim == 2 else hyperbolic_kernel_3d
    centre, sd = _gaussian_extent(t, A, dim, point, over)
    fixed = np.asarray(point, float)
    if over == "source":
        fn = lambda p: kern(t, A, fixed, p)
    else:
        fn = lambda p: kern(t, A, p, fixed)
    res = cubature(fn, centre - width * sd, centre + width * sd, rtol=rtol, atol=0.0)
    if res.status != "converged":
        raise RuntimeError("kernel cubature did not converge")
    return float(res.estimate)


def axis_matrices(grid, t, A):
    """Quadrature matrices ``W_i[a, b] = h_i k_i(x_a, x_b)`` for each axis."""
    mats = []
    for i, k in enumerate(axis_factors(t, A, grid.dim)):
        x = grid.axis(i)
        mats.append(grid.spacing[i] * k(x[:, None], x[None, :]))
    return mats


def apply_axis_matrices(values, mats):
    out = values
    for i, W in enumerate(mats):
        out = np.moveaxis(np.tensordot(W, out, axes=([1], [i])), 0, i)
    return out


def apply_kernel(f, t, A):
    """Evolve ``f`` by rescaled time ``t`` with the exact kernel.

    The integral over the source point is done one axis at a time with the
    rectangle rule, which costs one small matrix product per axis.
    """
    if f.grid.topology != FULL:
        raise UnsupportedDomainError("the hyperbolic kernel lives on full space")
    if not A > 0:
        raise ParameterError("amplitude must be positive")
    return ScalarField(f.grid, apply_axis_matrices(f.values, axis_matrices(f.grid, t, A)))


def linf_envelope(t, A, dim):
    """Upper bound on ``||S_t f||_inf / ||f||_1`` with the non-sharp constants.

    The 2D value is ``A / sinh t``, which exceeds the kernel supremum by 4 pi.
    """
    _check_t(t)
    if dim == 2:
        return A / math.sinh(t)
    if dim == 3:
        return A**1.5 / (math.sqrt(math.expm1(2 * t)) * (-math.expm1(-t)))
    raise ParameterError("dim must be 2 or 3")


@dataclass
class DissipationEstimate:
    tau: float
    operator_norm_curve: list = field(default_factory=list)
    method: str = "closed-form"


def dissipation_time_closed_form(A, dim=2):
    """Original time at which the kernel supremum drops to 1/2."""
    if not A > 0:
        raise ParameterError("amplitude must be positive")
    if dim == 2:
        return math.asinh(A / (2 * math.pi)) / A
    # 3D: the supremum is monotone in t, so a bracketed root is unique
    g = lambda s: kernel_prefactor(s, A, 3) - 0.5
    hi = 1.0
    while g(hi) > 0:
        hi *= 2
    lo = hi / 2
    while g(lo) < 0:
        lo /= 2
    return brentq(g, lo, hi, xtol=1e-15, rtol=1e-14) / A


def _norm_curve(fn, taus):
    return [(float(s), float(fn(s))) for s in taus]


def dissipation_time(flow, grid=None, horizon=None, rtol=1e-4):
    """Dissipation time of ``flow`` in original (unrescaled) time.

    Hyperbolic flows use the closed form.  Shear flows evolve a narrow
    Gaussian on ``grid`` and bisect on the measured ``||rho||_inf/||rho_0||_1``.
    """
    A = flow.amplitude
    if not A > 0:
        raise ParameterError("amplitude must be positive")
    if flow.kind == HYPERBOLIC:
        tau = dissipation_time_closed_form(A, flow.dim)
        taus = tau * np.array([0.25, 0.5, 1.0, 2.0, 4.0])
        curve = _norm_curve(lambda s: kernel_prefactor(A * s, A, flow.dim), taus)
        return DissipationEstimate(tau, curve, "closed-form")
    if flow.kind == SHEAR:
        if grid is None:
            raise ParameterError("shear dissipation time needs a channel grid")
        return shear_dissipation_time(flow, grid, horizon=horizon or 10.0, rtol=rtol)
    raise ParameterError("dissipation time needs a hyperbolic or shear flow")


def _bisect_crossing(norm_at, lo, hi, rtol):
    """Smallest time where a decreasing curve reaches 1/2, given a bracket."""
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if norm_at(mid) <= 0.5:
            hi = mid
        else:
            lo = mid
    return hi


def hyperbolic_dissipation_numeric(A, grid, rtol=1e-6, horizon=None):
    """Bisection on the L1 -> Linf norm measured with :func:`apply_kernel`.

    The datum is a unit mass on the central node, so the measured norm is the
    largest entry of the discrete evolution of a point source.
    """
    if grid.dim != 2 or grid.topology != FULL:
        raise ParameterError("numeric hyperbolic estimate needs a 2D full-space grid")
    delta = np.zeros(grid.shape)
    centre = tuple(n // 2 for n in grid.n)
    delta[centre] = 1.0 / grid.cell_volume
    f = ScalarField(grid, delta)

    def norm_at(s):
        return float(apply_kernel(f, A * s, A).values.max())

    horizon = horizon or 10.0
    hi = 1e-3 / A
    curve = []
    while norm_at(hi) > 0.5:
        curve.append((hi, norm_at(hi)))
        hi *= 2
        if hi > horizon:
            raise HorizonError("operator norm never dropped below 1/2")
    lo = hi / 2 if curve else 0.0
    tau = _bisect_crossing(norm_at, lo, hi, rtol)
    curve.append((tau, norm_at(tau)))
    curve.sort()
    return DissipationEstimate(tau, curve, "kernel-bisection")


def shear_dissipation_time(flow, grid, horizon=10.0, rtol=1e-4, dt=None):
    from . import evolve  # local import: evolve depends on this module

    h = min(grid.spacing)
    sigma = 3 * h
    x = grid.mesh()
    r2 = sum(xi**2 for xi in x)
    rho0 = ScalarField(grid, np.exp(-r2 / (2 * sigma**2)))
    mass0 = float(grid.cell_volume * rho0.values.sum())
    dt = dt or min(1e-3, 0.1 / max(flow.amplitude, 1.0))
    stepper = evolve.LinearStepper(grid, flow, kappa=1.0, rate=flow.amplitude)

    curve = [(0.0, rho0.max() / mass0)]
    f = rho0
    t = 0.0
    while True:
        f_next = stepper.step(f, dt)
        val = f_next.max() / mass0
        if val <= 0.5:
            break
        t += dt
        f = f_next
        curve.append((t, val))
        if t > horizon:
            raise HorizonError("operator norm never dropped below 1/2")

    base_t, base_f = t, f

    def norm_at(s):
        return stepper.evolve(base_f, s - base_t, dt).max() / mass0

    tau = _bisect_crossing(norm_at, base_t, base_t + dt, rtol)
    curve.append((tau, norm_at(tau)))
    return DissipationEstimate(tau, curve, "solver-bisection")


@dataclass
class PlateauResult:
    empty: bool
    witness: tuple = None


def spectral_derivative(values, orders):
    """Mixed derivative of a periodic sample on [-pi, pi)^k.

    ``orders`` gives the derivative order per axis.  The Nyquist mode is
    dropped for odd orders so that derivatives of real data stay real.
    """
    F = np.fft.fftn(values)
    for ax, o in enumerate(orders):
        if o == 0:
            continue
        n = values.shape[ax]
        k = np.fft.fftfreq(n, 1.0 / n)
        mult = (1j * k) ** o
        if o % 2 == 1:
            mult[n // 2] = 0
        s = [1] * values.ndim
        s[ax] = n
        F = F * mult.reshape(s)
    return np.fft.ifftn(F).real


def plateau_check(profile, max_order=4, tol=1e-6):
    """Look for grid points where every derivative up to ``max_order`` vanishes.

    ``profile`` is sampled on the uniform grid of [-pi, pi)^k (k = 1 or 2).
    Returns ``empty=True`` when no such point exists, otherwise one witness.
    """
    u = np.asarray(profile, dtype=float)
    if max_order < 1:
        raise ParameterError("max_order must be at least 1")
    largest = np.zeros(u.shape)
    for order in range(1, max_order + 1):
        for axes in combinations_with_replacement(range(u.ndim), order):
            orders = [axes.count(a) for a in range(u.ndim)]
            largest = np.maximum(largest, np.abs(spectral_derivative(u, orders)))
    flat = largest <= tol
    if not flat.any():
        return PlateauResult(True, None)
    idx = np.unravel_index(np.argmax(flat), u.shape)
    point = tuple(-np.pi + 2 * np.pi * i / n for i, n in zip(idx, u.shape))
    return PlateauResult(False, point)
