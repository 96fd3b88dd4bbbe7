"""Chemoattractant solve ``-Laplace c = n`` and its gradient.

Full space
    Zero-pad the density to twice the box size and convolve with the
    free-space Green's function restricted to one period of the padded box.
    The Fourier coefficients of that restricted kernel are not sampled from a
    grid (the log/Coulomb singularity would spoil that); they are computed
    exactly from the Green identity on the period cell, which turns the
    volume integral into a source term plus smooth face integrals.  Face
    integrals use graded Gauss-Legendre panels.

Channel
    Plain Fourier inversion; the zero mode of ``c`` is set to 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .fields import CHANNEL, FULL, ScalarField, UnsupportedDomainError

GL_ORDER = 8


@dataclass(frozen=True, eq=False)
class ChemField:
    c: ScalarField
    grad_c: tuple


def _panel_edges(X, h, scale):
    # panels no wider than the grid spacing, and finer near the origin where
    # the face integrand varies on the scale of the face distance
    edges = [0.0]
    x = 0.0
    while x < X:
        x = min(X, x + min(h, max(scale, x) / 4))
        edges.append(x)
    return np.array(edges)


def _half_line_nodes(X, h, scale):
    """Nodes/weights on [0, X] doubled, for even integrands on [-X, X]."""
    b = _panel_edges(X, h, scale)
    t, w = np.polynomial.legendre.leggauss(GL_ORDER)
    a, c = b[:-1, None], b[1:, None]
    x = (0.5 * (c - a) * t + 0.5 * (c + a)).ravel()
    ww = (0.5 * (c - a) * w).ravel()
    return x, 2 * ww


def green(r, dim):
    if dim == 2:
        return -np.log(r) / (2 * np.pi)
    return 1.0 / (4 * np.pi * r)


def green_normal_derivative(xn, r, dim):
    """d G / d x_i at a point whose i-th coordinate is ``xn``."""
    if dim == 2:
        return -xn / (2 * np.pi * r**2)
    return -xn / (4 * np.pi * r**3)


def _padded_modes(n, L, dim):
    ms, ks = [], []
    for i in range(dim):
        N = 2 * n[i]
        m = np.fft.rfftfreq(N, 1.0 / N) if i == dim - 1 else np.fft.fftfreq(N, 1.0 / N)
        ms.append(m)
        ks.append(np.pi * m / (2 * L[i]))
    return ms, ks


def _bcast(v, i, dim):
    s = [1] * dim
    s[i] = v.size
    return v.reshape(s)


@lru_cache(maxsize=8)
def free_space_kernel(n, L):
    """Fourier coefficients of G restricted to the padded period cell.

    Returns ``(Ghat, ks, G0)`` where ``Ghat`` has rfftn layout on the padded
    grid with the zero mode set to ``G0`` (the cell integral of G).
    """
    dim = len(n)
    h = [2 * L[i] / n[i] for i in range(dim)]
    X = [2 * L[i] for i in range(dim)]
    ms, ks = _padded_modes(n, L, dim)

    num = np.ones(tuple(k.size for k in ks))
    G0 = 0.0
    for i in range(dim):
        others = [j for j in range(dim) if j != i]
        nodes = [_half_line_nodes(X[j], h[j], X[i]) for j in others]
        grids = np.meshgrid(*[x for x, _ in nodes], indexing="ij")
        weight = nodes[0][1]
        for _, w in nodes[1:]:
            weight = np.multiply.outer(weight, w)
        r = np.sqrt(X[i] ** 2 + sum(g**2 for g in grids))
        dG = green_normal_derivative(X[i], r, dim)

        # face integral of cos(k_perp . x_perp) dG, as nested cosine sums
        Q = weight * dG
        for axis, j in enumerate(others):
            C = np.cos(np.outer(ks[j], nodes[axis][0]))
            Q = np.moveaxis(np.tensordot(C, Q, axes=([1], [axis])), 0, axis)
        shape = [1] * dim
        for j in others:
            shape[j] = ks[j].size
        sign = _bcast((-1.0) ** np.abs(ms[i]), i, dim)
        num = num + 2 * sign * Q.reshape(shape)

        # cell integral of G via the boundary form with w = -|x|^2 / (2 dim)
        wq = -(X[i] ** 2 + sum(g**2 for g in grids)) / (2 * dim)
        G0 += 2 * np.sum(weight * (wq * dG + green(r, dim) * X[i] / dim))

    K2 = sum(_bcast(k, i, dim) ** 2 for i, k in enumerate(ks))
    K2.flat[0] = 1.0
    Ghat = num / K2
    Ghat.flat[0] = G0
    for arr in (Ghat,):
        arr.setflags(write=False)
    return Ghat, tuple(ks), G0


def inverse_laplacian_free(n, gradient_only=False):
    """Free-space ``c = G * n`` and ``grad c`` on a full-space grid."""
    g = n.grid
    if g.topology != FULL:
        raise UnsupportedDomainError("free-space solve needs full-space topology")
    dim = g.dim
    Ghat, ks, _ = free_space_kernel(g.n, g.half_length)
    pad = tuple(2 * v for v in g.n)
    scale = np.prod(pad) / np.prod([4 * L for L in g.half_length])
    F = sfft.rfftn(n.values, s=pad) * (g.cell_volume * scale)
    GF = Ghat * F
    crop = tuple(slice(0, v) for v in g.n)
    grads = []
    for i in range(dim):
        gi = sfft.irfftn(1j * _bcast(ks[i], i, dim) * GF, s=pad)[crop]
        grads.append(ScalarField(g, gi))
    c = None if gradient_only else ScalarField(g, sfft.irfftn(GF, s=pad)[crop])
    return ChemField(c, tuple(grads))


def inverse_laplacian_channel(n, gradient_only=False):
    """Fourier inverse on the channel with the zero mode of ``c`` set to 0."""
    g = n.grid
    if g.topology != CHANNEL:
        raise UnsupportedDomainError("channel solve needs channel topology")
    ks = g.wavenumbers()
    K2 = sum(k**2 for k in ks)
    K2.flat[0] = 1.0
    C = sfft.rfftn(n.values) / K2
    C.flat[0] = 0.0
    grads = tuple(ScalarField(g, sfft.irfftn(1j * k * C, s=g.shape)) for k in ks)
    c = None if gradient_only else ScalarField(g, sfft.irfftn(C, s=g.shape))
    return ChemField(c, grads)


def inverse_laplacian(n, gradient_only=False):
    if n.grid.topology == FULL:
        return inverse_laplacian_free(n, gradient_only)
    return inverse_laplacian_channel(n, gradient_only)


def radial_gradient_2d(r, mass, sigma):
    """Exact |grad c| for a 2D radial Gaussian of the given mass."""
    r = np.asarray(r, float)
    return mass * -np.expm1(-(r**2) / (2 * sigma**2)) / (2 * math.pi * r)
