"""Independent reference computations shared by several test modules."""

import itertools
import math

import mpmath
import numpy as np

from necklab.s3 import S3Basis


class PolynomialField:
    """Vector field on R^4 with monomial components and a symbolic divergence."""

    def __init__(self, terms):
        # terms[k] = {exponent tuple: coefficient} for component k
        self.terms = terms

    @classmethod
    def random(cls, rng, degree=3, density=0.5):
        monos = [e for d in range(degree + 1) for e in itertools.product(range(d + 1), repeat=4) if sum(e) == d]
        terms = []
        for _ in range(4):
            comp = {e: float(rng.standard_normal()) for e in monos if rng.random() < density}
            terms.append(comp)
        return cls(terms)

    @staticmethod
    def _eval(poly, x):
        out = np.zeros(x.shape[0], dtype=x.dtype)
        for e, c in poly.items():
            out = out + c * np.prod(x ** np.array(e), axis=1)
        return out

    def __call__(self, x):
        return np.stack([self._eval(p, x) for p in self.terms], axis=1)

    def divergence(self, x):
        out = np.zeros(x.shape[0])
        for k, poly in enumerate(self.terms):
            d = {}
            for e, c in poly.items():
                if e[k] == 0:
                    continue
                e2 = list(e)
                e2[k] -= 1
                d[tuple(e2)] = d.get(tuple(e2), 0.0) + c * e[k]
            out += self._eval(d, np.asarray(x, float))
        return out


def annulus_points(rng, count, r_lo=0.5, r_hi=2.0):
    x = rng.standard_normal((count, 4))
    x /= np.linalg.norm(x, axis=1)[:, None]
    return x * rng.uniform(r_lo, r_hi, count)[:, None]


def direct_energy(fld, i, L, nr=120, nang=24):
    """Tensor quadrature of int_{A_i} |x|^-4 f^2 dx evaluating f pointwise."""
    xr, wr = np.polynomial.legendre.leggauss(nr)
    r0, r1 = math.exp(-i * L), math.exp(-(i - 1) * L)
    # in r: dx = r^3 dr dtheta, weight |x|^-4 -> dr / r; use log-spaced mapping for accuracy
    s = 0.5 * (math.log(r0) + math.log(r1)) + 0.5 * (math.log(r1) - math.log(r0)) * xr
    ws = 0.5 * (math.log(r1) - math.log(r0)) * wr
    r = np.exp(s)
    # angles: Gauss-Legendre directly in psi and theta with explicit Jacobian
    xa, wa = np.polynomial.legendre.leggauss(nang)
    psi = 0.5 * math.pi * (xa + 1)
    wpsi = 0.5 * math.pi * wa * np.sin(psi) ** 2
    th = psi.copy()
    wth = 0.5 * math.pi * wa * np.sin(th)
    nphi = 2 * nang
    phi = 2 * math.pi * np.arange(nphi) / nphi
    P, T, F = np.meshgrid(psi, th, phi, indexing="ij")
    W = (wpsi[:, None, None] * wth[None, :, None] * np.full(nphi, 2 * math.pi / nphi)).ravel()
    Y = S3Basis(fld.N).evaluate(P.ravel(), T.ravel(), F.ravel())
    basis = S3Basis(fld.N)
    total = 0.0
    for rk, wk in zip(r, ws):
        tk = math.log(rk)
        f = np.zeros(W.size)
        for idx, q in fld.modes.items():
            f += q.jets(np.array([tk]), 0)[0, 0] * Y[:, basis.index(idx.n, idx.l)]
        f += fld.mean.jets(np.array([tk]), 0)[0, 0]
        total += wk * (W @ f**2)
    return total


def chain_first_violation(A, B, n, L, l_range):
    """First l with F_l < e^L F_{l+1} for the single mode A e^{nt} + B e^{-(n+2)t}.

    F_l is the exact integral of the squared profile over [-lL, -(l-1)L].
    """
    with mpmath.workdps(50):
        return _chain_scan(mpmath.mpf(A), mpmath.mpf(B), n, mpmath.mpf(L), l_range)


def _chain_scan(A, B, n, L, l_range):
    def F(l):
        prim = lambda t: (A**2 * mpmath.exp(2 * n * t) / (2 * n) - A * B * mpmath.exp(-2 * t)
                          - B**2 * mpmath.exp(-2 * (n + 2) * t) / (2 * (n + 2)))
        return prim(-(l - 1) * L) - prim(-l * L)

    for l in l_range:
        if F(l) < mpmath.exp(L) * F(l + 1):
            return l
    return None


def exp_integral(k, a, b, panels=16, nodes=30):
    """int_a^b e^{kt} dt by paneled Gauss-Legendre, scaled by the largest endpoint factor."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    top = max(k * a, k * b)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    t = (edges[:-1] + half)[:, None] + half[:, None] * x[None, :]
    return math.exp(top) * float(np.sum(half[:, None] * w[None, :] * np.exp(k * t - top)))
