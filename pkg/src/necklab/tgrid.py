"""Piecewise Chebyshev-Lobatto grids in the cylinder variable t = log r."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


def cheb_lobatto(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Lobatto nodes on [-1, 1] (ascending) and the first-derivative matrix."""
    if p < 1:
        raise ValueError("need at least 2 nodes")
    x = -np.cos(np.pi * np.arange(p + 1) / p)
    c = np.ones(p + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(p + 1)
    X = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (X + np.eye(p + 1))
    D -= np.diag(D.sum(axis=1))
    return x, D


def clenshaw_curtis(p: int) -> np.ndarray:
    """Clenshaw-Curtis weights on [-1, 1] matching :func:`cheb_lobatto` node order."""
    theta = np.pi * np.arange(p + 1) / p
    w = np.zeros(p + 1)
    v = np.ones(p - 1)
    ii = np.arange(1, p)
    if p % 2 == 0:
        w[0] = w[p] = 1.0 / (p**2 - 1)
        for k in range(1, p // 2):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k**2 - 1)
        v -= np.cos(p * theta[ii]) / (p**2 - 1)
    else:
        w[0] = w[p] = 1.0 / p**2
        for k in range(1, (p - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k**2 - 1)
    w[ii] = 2.0 * v / p
    return w[::-1]


def barycentric_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Interpolation matrix from values at nodes x to points y."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = 1.0 / np.prod(x[:, None] - x[None, :] + np.eye(x.size), axis=1)
    diff = y[:, None] - x[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15, rtol=0)
    diff[exact] = 1.0
    M = w[None, :] / diff
    M /= M.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    M[rows] = exact[rows].astype(float)
    return M


@dataclass(frozen=True)
class ChebBands:
    """Chebyshev-Lobatto nodes on consecutive bands [edges[b], edges[b+1]].

    Nodes of adjacent bands share their interface point; arrays along the
    t-axis have length ``nbands * (p + 1)`` with duplicated interface values.
    """

    edges: tuple
    p: int = 32

    def __post_init__(self):
        e = np.asarray(self.edges, float)
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("band edges must be strictly increasing")
        object.__setattr__(self, "edges", tuple(float(v) for v in e))

    @classmethod
    def uniform(cls, t0: float, t1: float, nbands: int, p: int = 32) -> "ChebBands":
        return cls(tuple(np.linspace(t0, t1, nbands + 1)), p)

    @property
    def nbands(self) -> int:
        return len(self.edges) - 1

    @property
    def npts(self) -> int:
        return self.nbands * (self.p + 1)

    @cached_property
    def _ref(self):
        x, D = cheb_lobatto(self.p)
        return x, D, clenshaw_curtis(self.p)

    @cached_property
    def t(self) -> np.ndarray:
        x = self._ref[0]
        e = np.asarray(self.edges)
        return np.concatenate([0.5 * (e[b] + e[b + 1]) + 0.5 * (e[b + 1] - e[b]) * x for b in range(self.nbands)])

    @cached_property
    def weights(self) -> np.ndarray:
        w = self._ref[2]
        e = np.asarray(self.edges)
        return np.concatenate([0.5 * (e[b + 1] - e[b]) * w for b in range(self.nbands)])

    def band_slice(self, b: int) -> slice:
        return slice(b * (self.p + 1), (b + 1) * (self.p + 1))

    def band_D(self, b: int) -> np.ndarray:
        e = self.edges
        return self._ref[1] * (2.0 / (e[b + 1] - e[b]))

    def diff(self, values: np.ndarray, order: int = 1, axis: int = -2) -> np.ndarray:
        """Differentiate along ``axis`` bandwise."""
        v = np.moveaxis(np.asarray(values, float), axis, 0)
        out = np.empty_like(v)
        for b in range(self.nbands):
            s = self.band_slice(b)
            Dk = np.linalg.matrix_power(self.band_D(b), order)
            out[s] = np.tensordot(Dk, v[s], axes=(1, 0))
        return np.moveaxis(out, 0, axis)

    def integrate(self, values: np.ndarray, axis: int = -1) -> np.ndarray:
        v = np.moveaxis(np.asarray(values, float), axis, -1)
        return v @ self.weights

    def cumulative_integral(self, values: np.ndarray) -> np.ndarray:
        """Integral from edges[0] to each node of a 1-D sample array (spectral, bandwise)."""
        v = np.asarray(values, float)
        out = np.empty_like(v)
        acc = 0.0
        x = self._ref[0]
        for b in range(self.nbands):
            s = self.band_slice(b)
            # antiderivative through the Chebyshev interpolant
            coef = np.polynomial.chebyshev.chebfit(x, v[s], self.p)
            anti = np.polynomial.chebyshev.chebint(coef, lbnd=-1)
            half = 0.5 * (self.edges[b + 1] - self.edges[b])
            out[s] = acc + half * np.polynomial.chebyshev.chebval(x, anti)
            acc = out[s][-1]
        return out

    def interpolate(self, values: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Evaluate the bandwise interpolant of 1-D samples at points t."""
        t = np.atleast_1d(np.asarray(t, float))
        v = np.asarray(values, float)
        e = np.asarray(self.edges)
        out = np.empty(t.shape)
        band = np.clip(np.searchsorted(e, t, side="right") - 1, 0, self.nbands - 1)
        tt = self.t
        for b in np.unique(band):
            sel = band == b
            s = self.band_slice(b)
            out[sel] = barycentric_matrix(tt[s], t[sel]) @ v[s]
        return out
