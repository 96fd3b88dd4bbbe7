"""Grids, scalar fields, quadrature and the spectral transform pair.

Unbounded domains are represented by truncated boxes ``[-L_i, L_i)`` with
uniform nodes ``x_j = -L + j h``.  Two topologies are supported:

* ``"full"``: every axis truncates the real line (R^d).
* ``"channel"``: axis 0 truncates R, the remaining axes are exactly
  periodic with period 2*pi (R x T^{d-1}).

Transforms treat every axis as periodic; the truncation is only valid while
the field is negligible near the box edges, which :func:`boundary_ratio`
monitors.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy import special

FULL = "full"
CHANNEL = "channel"
TOPOLOGIES = (FULL, CHANNEL)

#: relative size of the outer shell watched by the boundary monitor
MONITOR_SHELL = 0.1
#: the monitor fails when the shell maximum exceeds this fraction of the peak
MONITOR_TOL = 1e-6


class UnsupportedDomainError(ValueError):
    pass


class ParameterError(ValueError):
    pass


def _is_pow2(k):
    return k > 0 and (k & (k - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid on a truncated box.

    ``n`` and ``half_length`` may be given as scalars, in which case they are
    broadcast to every axis.  For the channel the transverse half lengths are
    forced to pi.
    """

    dim: int
    n: tuple
    half_length: tuple
    topology: str = FULL

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ParameterError(f"dim must be 2 or 3, got {self.dim}")
        n = self.n if np.ndim(self.n) else (self.n,) * self.dim
        L = self.half_length if np.ndim(self.half_length) else (self.half_length,) * self.dim
        n = tuple(int(v) for v in n)
        L = [float(v) for v in L]
        if self.topology not in TOPOLOGIES:
            raise ParameterError(f"unknown topology {self.topology!r}")
        if self.topology == CHANNEL:
            if len(L) == 1:
                L = L + [math.pi] * (self.dim - 1)
            for v in L[1:]:
                if v != math.pi:
                    raise ParameterError("channel transverse half lengths must equal pi")
        if len(n) != self.dim or len(L) != self.dim:
            raise ParameterError("n and half_length need one entry per axis")
        for v in n:
            if v < 32 or not _is_pow2(v):
                raise ParameterError(f"points per axis must be a power of two >= 32, got {v}")
        for v in L:
            if not v > 0:
                raise ParameterError("half lengths must be positive")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "half_length", tuple(L))

    @classmethod
    def channel(cls, dim, n, half_length_x1):
        return cls(dim, n, (half_length_x1,) + (math.pi,) * (dim - 1), CHANNEL)

    @property
    def shape(self):
        return self.n

    @property
    def spacing(self):
        return tuple(2 * L / n for L, n in zip(self.half_length, self.n))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def size(self):
        return int(np.prod(self.n))

    def axis(self, i):
        L, n = self.half_length[i], self.n[i]
        return -L + (2 * L / n) * np.arange(n)

    def axes(self):
        return [self.axis(i) for i in range(self.dim)]

    def mesh(self):
        """Open (broadcastable) coordinate arrays, one per axis."""
        out = []
        for i in range(self.dim):
            s = [1] * self.dim
            s[i] = self.n[i]
            out.append(self.axis(i).reshape(s))
        return out

    def radius2(self):
        return sum(x * x for x in self.mesh())

    def wavenumbers(self):
        """Broadcastable wavenumbers matching :func:`numpy.fft.rfftn` layout.

        k_i = pi m_i / L_i; the last axis holds only non-negative modes.
        """
        ks = []
        for i in range(self.dim):
            n, L = self.n[i], self.half_length[i]
            if i == self.dim - 1:
                m = np.fft.rfftfreq(n, 1.0 / n)
            else:
                m = np.fft.fftfreq(n, 1.0 / n)
            s = [1] * self.dim
            s[i] = m.size
            ks.append((np.pi * m / L).reshape(s))
        return ks

    def mode_indices(self):
        """Integer mode numbers |m_i| / (n_i/2), broadcastable like wavenumbers."""
        out = []
        for i in range(self.dim):
            n = self.n[i]
            m = np.fft.rfftfreq(n, 1.0 / n) if i == self.dim - 1 else np.fft.fftfreq(n, 1.0 / n)
            s = [1] * self.dim
            s[i] = m.size
            out.append((np.abs(m) / (n / 2)).reshape(s))
        return out

    def with_axis(self, i, n=None, half_length=None):
        nn = list(self.n)
        LL = list(self.half_length)
        if n is not None:
            nn[i] = n
        if half_length is not None:
            LL[i] = half_length
        return GridSpec(self.dim, tuple(nn), tuple(LL), self.topology)

    def to_json(self):
        return {
            "dim": self.dim,
            "n": list(self.n),
            "half_length": list(self.half_length),
            "topology": self.topology,
        }


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real values on a grid, stored row-major with shape ``grid.shape``."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ParameterError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)

    def copy(self):
        return ScalarField(self.grid, self.values.copy())

    def with_values(self, values):
        return ScalarField(self.grid, values)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, other):
        return self.with_values(self.values * _vals(other))

    __rmul__ = __mul__

    def max(self):
        return float(self.values.max())

    def min(self):
        return float(self.values.min())


def _vals(x):
    return x.values if isinstance(x, ScalarField) else x


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients in :func:`scipy.fft.rfftn` layout (unnormalised)."""

    grid: GridSpec
    modes: np.ndarray = field(repr=False)


def zeros(grid):
    return ScalarField(grid, np.zeros(grid.shape))


def integrate(f):
    """Rectangle rule h * sum(values)."""
    return float(f.grid.cell_volume * f.values.sum())


def lp_norm(f, p):
    if p == np.inf or p == "inf":
        return float(np.abs(f.values).max()) if f.values.size else 0.0
    p = float(p)
    if p < 1:
        raise ParameterError("p must be >= 1")
    s = f.grid.cell_volume * np.sum(np.abs(f.values) ** p)
    return float(s ** (1.0 / p))


def second_moment(f):
    """h * sum(values * |x|^2) about the box centre."""
    if f.grid.topology != FULL:
        raise UnsupportedDomainError("second moment needs full-space topology")
    return float(f.grid.cell_volume * np.sum(f.values * f.grid.radius2()))


def sample_gaussian(grid, center=None, sigma=1.0, mass=1.0):
    """Isotropic Gaussian with the given total mass (continuum normalisation)."""
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    if mass < 0:
        raise ParameterError("mass must be non-negative")
    center = np.zeros(grid.dim) if center is None else np.asarray(center, float)
    r2 = sum((x - c) ** 2 for x, c in zip(grid.mesh(), center))
    amp = mass * (2 * np.pi * sigma**2) ** (-grid.dim / 2)
    return ScalarField(grid, amp * np.exp(-r2 / (2 * sigma**2)))


def sample_plateau(grid, radius, width, height=1.0):
    """Flat-topped bump of peak ``height`` with a soft edge at ``radius``.

    The profile ``erfc((r^2 - R^2) / (2 R w))`` is smooth in ``x`` (no cusp
    at the origin) and has a Gaussian-decaying spectrum, so it stays
    band-limited when the box is resized.
    """
    if not (radius > 0 and width > 0):
        raise ParameterError("radius and width must be positive")
    r2 = grid.radius2()
    prof = special.erfc((r2 - radius**2) / (2 * radius * width))
    peak = special.erfc(-radius / (2 * width))
    return ScalarField(grid, np.broadcast_to(height * prof / peak, grid.shape).copy())


def sample_function(grid, fn):
    """Evaluate ``fn(*mesh)`` on the grid."""
    vals = np.broadcast_to(fn(*grid.mesh()), grid.shape)
    return ScalarField(grid, np.array(vals, dtype=float))


def spectral_forward(f):
    return SpectralField(f.grid, sfft.rfftn(f.values))


def spectral_inverse(F):
    return ScalarField(F.grid, sfft.irfftn(F.modes, s=F.grid.shape))


def _rfft_weights(grid):
    # multiplicity of each stored mode in the full spectrum
    n = grid.n[-1]
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    s = [1] * grid.dim
    s[-1] = w.size
    return w.reshape(s)


def mode_energy(F):
    """Per-mode energy, summing to h * sum(f**2) (discrete Parseval)."""
    g = F.grid
    return _rfft_weights(g) * np.abs(F.modes) ** 2 * g.cell_volume / g.size


def tail_fraction(F, band=1.0):
    """Energy share of the top third of the resolved band.

    ``band`` is the resolved fraction of each axis' modes (1 for the full
    grid, 2/3 when products are dealiased); a mode is in the tail when its
    normalised index exceeds ``2/3 * band`` on some axis.
    """
    e = mode_energy(F)
    total = e.sum()
    if total == 0:
        return 0.0
    mask = np.zeros(e.shape, dtype=bool)
    for m in F.grid.mode_indices():
        mask = mask | (m > 2.0 / 3.0 * band)
    return float(e[mask].sum() / total)


def dealias_mask(grid):
    """2/3-rule mask: keep modes with normalised index below 2/3 on every axis."""
    mask = np.ones(tuple(grid.n[:-1]) + (grid.n[-1] // 2 + 1,), dtype=bool)
    for m in grid.mode_indices():
        mask = mask & (m < 2.0 / 3.0)
    return mask


def shell_max(f, axis, frac):
    """max |value| over nodes with |x_axis| > (1 - frac) * L_axis."""
    x = f.grid.axis(axis)
    sel = np.abs(x) > (1 - frac) * f.grid.half_length[axis]
    if not sel.any():
        return 0.0
    return float(np.abs(np.compress(sel, f.values, axis=axis)).max())


def boundary_ratio(f, shell=MONITOR_SHELL):
    """Largest |value| in the outer shell of the truncated axes over the peak."""
    peak = float(np.abs(f.values).max())
    if peak == 0 or not np.isfinite(peak):
        return 0.0 if peak == 0 else np.inf
    axes = range(f.grid.dim) if f.grid.topology == FULL else (0,)
    return max(shell_max(f, a, shell) for a in axes) / peak


def boundary_ok(f, tol=MONITOR_TOL):
    return boundary_ratio(f) <= tol


def boundary_excess(f, tol=MONITOR_TOL):
    """Shell maximum over the larger of ``tol * peak`` and the undershoot depth.

    Spectral ringing raises a floor of small oscillations everywhere, and the
    most negative value measures that floor.  Values above 1 mean the shell
    holds more than ringing can explain, i.e. the solution reached the edge.
    """
    peak = float(np.abs(f.values).max())
    if peak == 0:
        return 0.0
    if not np.isfinite(peak):
        return np.inf
    floor = max(tol * peak, -min(0.0, float(f.values.min())))
    return boundary_ratio(f) * peak / floor


def write_snapshot(path, f, time=0.0):
    """JSON header line followed by little-endian float64 values."""
    header = f.grid.to_json()
    header["time"] = float(time)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_snapshot(path):
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    header = json.loads(data[:nl].decode("utf-8"))
    grid = GridSpec(header["dim"], tuple(header["n"]), tuple(header["half_length"]), header["topology"])
    vals = np.frombuffer(data[nl + 1:], dtype="<f8").reshape(grid.shape).copy()
    return ScalarField(grid, vals), header["time"]
