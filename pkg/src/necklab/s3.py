"""Real orthonormal spherical harmonics on S^3 and product quadrature grids.

Hyperspherical coordinates (psi, theta, phi) embed S^3 in R^4 as

    x = (cos psi, sin psi cos theta, sin psi sin theta cos phi, sin psi sin theta sin phi)

with volume element sin^2(psi) sin(theta) dpsi dtheta dphi.  A degree-n
harmonic factors as

    Y_{n,k,m} = N_{n,k} sin^k(psi) C_{n-k}^{(k+1)}(cos psi) S_{k,m}(theta, phi)

where C is a Gegenbauer polynomial and S_{k,m} a real orthonormal harmonic on
S^2.  For fixed n there are sum_{k<=n} (2k+1) = (n+1)^2 functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import eval_gegenbauer, gammaln, lpmv, roots_chebyu, roots_legendre

VOL_S3 = 2.0 * np.pi**2


class UnderResolvedError(ValueError):
    """Raised when a grid cannot integrate the requested harmonic degree exactly."""


def _gegenbauer_norm_sq(k: int, lam: float) -> float:
    # int_{-1}^{1} (1-x^2)^(lam-1/2) C_k^lam(x)^2 dx
    return float(
        np.exp(
            np.log(np.pi)
            + (1.0 - 2.0 * lam) * np.log(2.0)
            + gammaln(k + 2.0 * lam)
            - gammaln(k + 1.0)
            - np.log(k + lam)
            - 2.0 * gammaln(lam)
        )
    )


@dataclass(frozen=True)
class S3Grid:
    """Product quadrature exact for polynomials of degree <= 2q-1 restricted to S^3.

    Gauss-Chebyshev (second kind) in cos(psi) absorbs the sin^2(psi) weight,
    Gauss-Legendre in cos(theta), and 2q uniform nodes in phi.
    """

    q: int

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("grid order must be >= 1")

    @cached_property
    def _nodes(self):
        xp, wp = roots_chebyu(self.q)
        xt, wt = roots_legendre(self.q)
        nphi = 2 * self.q
        phi = 2.0 * np.pi * np.arange(nphi) / nphi
        wphi = np.full(nphi, 2.0 * np.pi / nphi)
        P, T, F = np.meshgrid(np.arccos(xp), np.arccos(xt), phi, indexing="ij")
        W = wp[:, None, None] * wt[None, :, None] * wphi[None, None, :]
        return P.ravel(), T.ravel(), F.ravel(), W.ravel()

    @property
    def psi(self) -> np.ndarray:
        return self._nodes[0]

    @property
    def theta(self) -> np.ndarray:
        return self._nodes[1]

    @property
    def phi(self) -> np.ndarray:
        return self._nodes[2]

    @property
    def weights(self) -> np.ndarray:
        return self._nodes[3]

    @property
    def size(self) -> int:
        return self.psi.size

    @property
    def max_degree(self) -> int:
        """Largest harmonic degree N whose pairwise products are integrated exactly."""
        return (2 * self.q - 1) // 2

    def check_resolves(self, degree: int) -> None:
        if degree > self.max_degree:
            raise UnderResolvedError(
                f"grid q={self.q} integrates products only up to degree {self.max_degree}, "
                f"requested {degree}"
            )

    @cached_property
    def points(self) -> np.ndarray:
        """Embedded points on the unit sphere, shape (size, 4)."""
        return embed(self.psi, self.theta, self.phi)

    @cached_property
    def frame(self) -> np.ndarray:
        """Orthonormal tangent frame (e_psi, e_theta, e_phi) in R^4, shape (3, size, 4)."""
        return tangent_frame(self.psi, self.theta, self.phi)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate over the last axis."""
        return values @ self.weights

    @classmethod
    def for_degree(cls, degree: int, factor: int = 1) -> "S3Grid":
        """Smallest grid exact for products of ``factor`` pairs of degree-``degree`` harmonics."""
        return cls(max(1, factor * degree + 1))


def embed(psi, theta, phi) -> np.ndarray:
    sp, st = np.sin(psi), np.sin(theta)
    return np.stack(
        [np.cos(psi), sp * np.cos(theta), sp * st * np.cos(phi), sp * st * np.sin(phi)], axis=-1
    )


def tangent_frame(psi, theta, phi) -> np.ndarray:
    sp, cp = np.sin(psi), np.cos(psi)
    st, ct = np.sin(theta), np.cos(theta)
    sf, cf = np.sin(phi), np.cos(phi)
    z = np.zeros_like(psi)
    e_psi = np.stack([-sp, cp * ct, cp * st * cf, cp * st * sf], axis=-1)
    e_theta = np.stack([z, -st, ct * cf, ct * sf], axis=-1)
    e_phi = np.stack([z, z, -sf, cf], axis=-1)
    return np.stack([e_psi, e_theta, e_phi])


def cartesian_to_hyperspherical(x: np.ndarray):
    """Inverse of :func:`embed` for points of any nonzero norm; returns (r, psi, theta, phi)."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    psi = np.arccos(np.clip(x[..., 0] / r, -1.0, 1.0))
    rho = np.linalg.norm(x[..., 1:], axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(rho > 0, np.arccos(np.clip(x[..., 1] / np.where(rho > 0, rho, 1), -1, 1)), 0.0)
    phi = np.mod(np.arctan2(x[..., 3], x[..., 2]), 2.0 * np.pi)
    return r, psi, theta, phi


@dataclass(frozen=True)
class S3Basis:
    """All real orthonormal harmonics of degree 0..N, ordered by (n, k, m)."""

    N: int
    labels: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.N < 0:
            raise ValueError("truncation degree must be >= 0")
        labs = [(n, k, m) for n in range(self.N + 1) for k in range(n + 1) for m in range(-k, k + 1)]
        object.__setattr__(self, "labels", tuple(labs))

    @property
    def size(self) -> int:
        return len(self.labels)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([lab[0] for lab in self.labels])

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues n(n+2) of -Laplacian on S^3 per basis function."""
        n = self.degrees
        return n * (n + 2.0)

    def index(self, n: int, slot: int) -> int:
        """Basis position of the ``slot``-th (1-based) harmonic of degree n."""
        if not 0 <= n <= self.N:
            raise IndexError(f"degree {n} outside 0..{self.N}")
        h = (n + 1) ** 2
        if not 1 <= slot <= h:
            raise IndexError(f"slot {slot} outside 1..{h}")
        return n * (n + 1) * (2 * n + 1) // 6 + slot - 1

    def evaluate(self, psi, theta, phi, gradient: bool = False):
        """Values (npts, M) and optionally tangent gradients (3, npts, M) in the frame
        (e_psi, e_theta, e_phi)."""
        psi = np.atleast_1d(np.asarray(psi, float))
        theta = np.atleast_1d(np.asarray(theta, float))
        phi = np.atleast_1d(np.asarray(phi, float))
        xp, sp = np.cos(psi), np.sin(psi)
        xt, st = np.cos(theta), np.sin(theta)
        npts = psi.size
        vals = np.empty((npts, self.size))
        grads = np.empty((3, npts, self.size)) if gradient else None

        # S^2 factors and their theta-derivative, cached per (k, m)
        s2 = {}
        for k in range(self.N + 1):
            for m in range(-k, k + 1):
                am = abs(m)
                norm = np.sqrt((2 * k + 1) / (4 * np.pi) * np.exp(gammaln(k - am + 1) - gammaln(k + am + 1)))
                P = lpmv(am, k, xt)
                if gradient:
                    Pm1 = lpmv(am, k - 1, xt) if k > 0 else np.zeros_like(xt)
                    dP = (k * xt * P - (k + am) * Pm1) / st
                if m == 0:
                    ang, dang = np.ones_like(phi), np.zeros_like(phi)
                elif m > 0:
                    norm *= np.sqrt(2.0)
                    ang, dang = np.cos(m * phi), -m * np.sin(m * phi)
                else:
                    norm *= np.sqrt(2.0)
                    ang, dang = np.sin(am * phi), am * np.cos(am * phi)
                if gradient:
                    s2[k, m] = (norm * P * ang, norm * dP * ang, norm * P * dang)
                else:
                    s2[k, m] = (norm * P * ang,)

        for j, (n, k, m) in enumerate(self.labels):
            lam = k + 1.0
            nk = 1.0 / np.sqrt(_gegenbauer_norm_sq(n - k, lam))
            C = eval_gegenbauer(n - k, lam, xp)
            G = nk * sp**k * C
            S = s2[k, m]
            vals[:, j] = G * S[0]
            if gradient:
                dC = 2 * lam * eval_gegenbauer(n - k - 1, lam + 1, xp) if n - k >= 1 else 0.0
                dG = nk * ((k * sp ** (k - 1) * xp * C if k > 0 else 0.0) - sp ** (k + 1) * dC)
                grads[0, :, j] = dG * S[0]
                grads[1, :, j] = G * S[1] / sp
                grads[2, :, j] = G * S[2] / (sp * st)
        return (vals, grads) if gradient else vals

    def on_grid(self, grid: S3Grid, gradient: bool = False):
        return self.evaluate(grid.psi, grid.theta, grid.phi, gradient=gradient)
