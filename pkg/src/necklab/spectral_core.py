"""Mode-space representation of biharmonic functions on annuli of R^4.

A biharmonic function with zero spherical mean decomposes over S^3
eigenmodes; degree n contributes the radial profile

    A r^n + B r^-(n+2) + C r^(n+2) + D r^-n,

and the spherical mean is A0 + B0 r^2 + C0 r^-2 + D0 log r.  With r = e^t the
weighted energy on the annulus A_i = {e^-iL <= |x| <= e^-(i-1)L} is

    F_i(f) = int_{A_i} |x|^-4 f^2 dx = int dt int_{S^3} f^2 dtheta,

a quadratic form in the coefficients whose matrix has entries g(beta).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import mpmath
import numpy as np

from .s3 import VOL_S3, S3Basis, S3Grid, UnderResolvedError
from .tgrid import ChebBands

__all__ = [
    "Precision",
    "DOUBLE",
    "ModeIndex",
    "RadialQuadruple",
    "MeanModeQuadruple",
    "BiharmonicField",
    "AnnulusChain",
    "QuadraticForm4",
    "EnergyProfile",
    "CylinderField",
    "eigenvalue",
    "multiplicity",
    "g_beta",
    "assemble_M",
    "mean_mode_matrix",
    "F_energy",
    "energy_profile",
    "rescale",
    "synthesize",
    "analyze",
    "sample",
    "UnderResolvedError",
]


# --------------------------------------------------------------------------
# precision policy


@dataclass(frozen=True)
class Precision:
    """Arithmetic used by a numeric operation.

    ``kind`` is ``"double"`` (numpy floats), ``"mp"`` (mpmath mpf at ``bits``) or
    ``"interval"`` (mpmath interval arithmetic at ``bits``, outward rounded).
    """

    kind: str = "double"
    bits: int = 53

    def __post_init__(self):
        if self.kind not in ("double", "mp", "interval"):
            raise ValueError(f"unknown precision kind {self.kind!r}")
        if self.bits < 24:
            raise ValueError("need at least 24 bits")

    @property
    def ctx(self):
        if self.kind == "interval":
            return mpmath.iv
        return mpmath.mp

    def scalar(self, x):
        if self.kind == "double":
            return float(x)
        if self.kind == "interval":
            return mpmath.iv.mpf(x)
        return mpmath.mpf(x)

    def exp(self, x):
        if self.kind == "double":
            return math.exp(x)
        return self.ctx.exp(x)

    def workprec(self):
        """Context manager setting the working precision of the mpmath context."""
        if self.kind == "double":
            return _Prec(None, 0)
        return _Prec(self.ctx, self.bits)


class _Prec:
    # mpmath.iv has no workprec(); set and restore prec by hand
    def __init__(self, ctx, bits):
        self.ctx, self.bits = ctx, bits

    def __enter__(self):
        if self.ctx is not None:
            self.saved = self.ctx.prec
            self.ctx.prec = self.bits
        return self

    def __exit__(self, *exc):
        if self.ctx is not None:
            self.ctx.prec = self.saved
        return False


DOUBLE = Precision()


# --------------------------------------------------------------------------
# mode bookkeeping


def eigenvalue(n: int) -> int:
    """Eigenvalue n(n+2) of -Laplacian on S^3 for degree n."""
    if n < 0:
        raise ValueError("degree must be >= 0")
    return n * (n + 2)


def multiplicity(n: int) -> int:
    """Dimension (n+1)^2 of the degree-n eigenspace on S^3 (n >= 1)."""
    if n < 1:
        raise ValueError("multiplicity is defined for n >= 1; the mean mode is stored separately")
    return (n + 1) ** 2


@dataclass(frozen=True, order=True)
class ModeIndex:
    n: int
    l: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("mode degree must be >= 1 (mean mode is separate)")
        if not 1 <= self.l <= multiplicity(self.n):
            raise ValueError(f"slot {self.l} outside 1..{multiplicity(self.n)}")


@dataclass(frozen=True)
class RadialQuadruple:
    """Coefficients of r^n, r^-(n+2), r^(n+2), r^-n."""

    A: float = 0.0
    B: float = 0.0
    C: float = 0.0
    D: float = 0.0
    n: int = 1

    @property
    def exponents(self) -> tuple[int, int, int, int]:
        n = self.n
        return (n, -(n + 2), n + 2, -n)

    @property
    def coefficients(self) -> tuple:
        return (self.A, self.B, self.C, self.D)

    def matrix_vector(self) -> tuple:
        """Coefficients in the order (r^n, r^(n+2), r^-n, r^-(n+2)) used by :func:`assemble_M`."""
        return (self.A, self.C, self.D, self.B)

    def jets(self, t: np.ndarray, order: int = 4) -> np.ndarray:
        """Radial profile and its t-derivatives, shape (order+1, len(t))."""
        t = np.asarray(t, float)
        out = np.zeros((order + 1,) + t.shape)
        for c, e in zip(self.coefficients, self.exponents):
            if c == 0:
                continue
            base = c * np.exp(e * t)
            for k in range(order + 1):
                out[k] += base * float(e) ** k
        return out


@dataclass(frozen=True)
class MeanModeQuadruple:
    """Coefficients of 1, r^2, r^-2, log r."""

    A0: float = 0.0
    B0: float = 0.0
    C0: float = 0.0
    D0: float = 0.0

    @property
    def is_zero(self) -> bool:
        return self.A0 == 0 and self.B0 == 0 and self.C0 == 0 and self.D0 == 0

    def jets(self, t: np.ndarray, order: int = 4) -> np.ndarray:
        t = np.asarray(t, float)
        out = np.zeros((order + 1,) + t.shape)
        out[0] += self.A0 + self.D0 * t
        if order >= 1:
            out[1] += self.D0
        for c, e in ((self.B0, 2.0), (self.C0, -2.0)):
            if c == 0:
                continue
            base = c * np.exp(e * t)
            for k in range(order + 1):
                out[k] += base * e**k
        return out


@dataclass
class BiharmonicField:
    """Finite sum of separated biharmonic modes plus the spherical-mean profile."""

    modes: dict = field(default_factory=dict)
    mean: MeanModeQuadruple = field(default_factory=MeanModeQuadruple)
    N: int | None = None

    def __post_init__(self):
        for idx, quad in self.modes.items():
            if not isinstance(idx, ModeIndex):
                raise TypeError("mode keys must be ModeIndex")
            if quad.n != idx.n:
                raise ValueError(f"quadruple degree {quad.n} does not match mode {idx}")
        top = max((idx.n for idx in self.modes), default=0)
        if self.N is None:
            self.N = top
        elif self.N < top:
            raise ValueError("truncation degree below the largest mode present")

    @property
    def mean_zero(self) -> bool:
        return self.mean.is_zero

    def add(self, n: int, l: int, A=0.0, B=0.0, C=0.0, D=0.0) -> "BiharmonicField":
        self.modes[ModeIndex(n, l)] = RadialQuadruple(A, B, C, D, n)
        self.N = max(self.N, n)
        return self

    def scale(self) -> float:
        vals = [abs(v) for q in self.modes.values() for v in q.coefficients]
        vals += [abs(v) for v in (self.mean.A0, self.mean.B0, self.mean.C0, self.mean.D0)]
        return max(vals, default=0.0)

    def to_json(self, L: float | None = None) -> str:
        doc = {
            "L": L,
            "N": self.N,
            "mean": [self.mean.A0, self.mean.B0, self.mean.C0, self.mean.D0],
            "modes": [
                {"n": idx.n, "l": idx.l, "ABCD": list(q.coefficients)}
                for idx, q in sorted(self.modes.items())
            ],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "BiharmonicField":
        doc = json.loads(text)
        fld = cls(mean=MeanModeQuadruple(*map(float, doc.get("mean", [0, 0, 0, 0]))))
        for m in doc.get("modes", []):
            fld.add(int(m["n"]), int(m["l"]), *map(float, m["ABCD"]))
        if doc.get("N") is not None:
            fld.N = max(fld.N, int(doc["N"]))
        return fld

    @classmethod
    def random(cls, rng: np.random.Generator, N: int, nmodes: int = 6, branches: str = "ABCD",
               mean: bool = False, spread: float = 1.0) -> "BiharmonicField":
        """Random field; ``branches`` selects which of A, B, C, D may be nonzero."""
        fld = cls(N=N)
        for _ in range(nmodes):
            n = int(rng.integers(1, N + 1))
            l = int(rng.integers(1, multiplicity(n) + 1))
            coef = {b: 0.0 for b in "ABCD"}
            for b in branches:
                coef[b] = float(spread * rng.standard_normal())
            fld.add(n, l, **coef)
        if mean:
            fld.mean = MeanModeQuadruple(*(float(v) for v in spread * rng.standard_normal(4)))
        return fld


def rescale(fld: BiharmonicField, L: float) -> BiharmonicField:
    """Coefficients of x -> f(e^L x), so that F_{i+1} of the result equals F_i(f)."""
    out = BiharmonicField(N=fld.N)
    for idx, q in fld.modes.items():
        n = q.n
        out.modes[idx] = RadialQuadruple(
            q.A * math.exp(n * L), q.B * math.exp(-(n + 2) * L),
            q.C * math.exp((n + 2) * L), q.D * math.exp(-n * L), n,
        )
    m = fld.mean
    out.mean = MeanModeQuadruple(m.A0 + L * m.D0, m.B0 * math.exp(2 * L), m.C0 * math.exp(-2 * L), m.D0)
    return out


# --------------------------------------------------------------------------
# annuli and quadratic forms


@dataclass(frozen=True)
class AnnulusChain:
    """Annuli A_i = {e^-iL <= |x| <= e^-(i-1)L} for l_lo <= i <= l_hi."""

    L: float
    l_lo: int
    l_hi: int

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("gap L must be positive")
        if self.l_lo > self.l_hi:
            raise ValueError("l_lo must not exceed l_hi")

    @property
    def indices(self) -> range:
        return range(self.l_lo, self.l_hi + 1)

    def __len__(self) -> int:
        return self.l_hi - self.l_lo + 1

    def radii(self, i: int) -> tuple[float, float]:
        return math.exp(-i * self.L), math.exp(-(i - 1) * self.L)

    def t_interval(self, i: int) -> tuple[float, float]:
        return -i * self.L, -(i - 1) * self.L

    @property
    def t_span(self) -> tuple[float, float]:
        return -self.l_hi * self.L, -(self.l_lo - 1) * self.L

    def bands(self, p: int = 32) -> ChebBands:
        """One Chebyshev band per annulus, ordered by increasing t."""
        edges = [-(i * self.L) for i in range(self.l_hi, self.l_lo - 2, -1)]
        return ChebBands(tuple(edges), p)


def g_beta(i: int, L, beta, precision: Precision = DOUBLE):
    """int_{e^-iL}^{e^-(i-1)L} r^(beta-1) dr."""
    if not L > 0:
        raise ValueError("gap L must be positive")
    if isinstance(beta, float) and not math.isfinite(beta):
        raise ValueError("beta must be finite")
    if precision.kind == "double":
        if beta == 0:
            return float(L)
        # exponent i*beta*L may overflow; report rather than return inf
        e1 = -i * beta * L
        e2 = -(i - 1) * beta * L
        if max(e1, e2) > 709.0:
            raise OverflowError(f"g(beta) overflows double for i={i}, L={L}, beta={beta}")
        return math.exp(e1) * math.expm1(beta * L) / beta
    ctx = precision.ctx
    with precision.workprec():
        Lx = ctx.mpf(L)
        if beta == 0:
            return Lx
        b = ctx.mpf(beta)
        return ctx.exp(-i * b * Lx) * (ctx.exp(b * Lx) - 1) / b


def _beta_table(n: int) -> tuple:
    return (
        (2 * n, 2 * n + 2, 0, -2),
        (2 * n + 2, 2 * n + 4, 2, 0),
        (0, 2, -2 * n, -2 * n - 2),
        (-2, 0, -2 * n - 2, -2 * n - 4),
    )


@dataclass(frozen=True)
class QuadraticForm4:
    """Symmetric 4x4 form in the basis (r^n, r^(n+2), r^-n, r^-(n+2))."""

    matrix: tuple
    i: int
    L: float
    n: int

    def entry(self, a: int, b: int):
        return self.matrix[a][b]

    def as_array(self) -> np.ndarray:
        return np.array([[float(v) for v in row] for row in self.matrix])

    def form(self, v) -> float:
        m = self.matrix
        return sum(v[a] * m[a][b] * v[b] for a in range(4) for b in range(4))


def assemble_M(i: int, L, n: int, precision: Precision = DOUBLE) -> QuadraticForm4:
    """Matrix M_i of F_i restricted to one degree-n mode."""
    if n < 1:
        raise ValueError("degree must be >= 1")
    cache = {}
    rows = []
    for row in _beta_table(n):
        out = []
        for beta in row:
            if beta not in cache:
                cache[beta] = g_beta(i, L, beta, precision)
            out.append(cache[beta])
        rows.append(tuple(out))
    return QuadraticForm4(tuple(rows), i, float(L), n)


def _int_t_exp(k: float, a: float, b: float, power: int) -> float:
    # int_a^b t^power e^(k t) dt for power in {0, 1, 2}
    if k == 0:
        return (b ** (power + 1) - a ** (power + 1)) / (power + 1)
    def F(t):
        if power == 0:
            return math.exp(k * t) / k
        if power == 1:
            return math.exp(k * t) * (t / k - 1 / k**2)
        return math.exp(k * t) * (t * t / k - 2 * t / k**2 + 2 / k**3)
    return F(b) - F(a)


def mean_mode_matrix(i: int, L: float) -> np.ndarray:
    """Gram matrix of (1, r^2, r^-2, log r) for int_{A_i} |x|^-4 (.)^2 dx."""
    a, b = -i * L, -(i - 1) * L
    ks = (0.0, 2.0, -2.0)
    M = np.empty((4, 4))
    for p in range(3):
        for q in range(3):
            M[p, q] = _int_t_exp(ks[p] + ks[q], a, b, 0)
        M[p, 3] = M[3, p] = _int_t_exp(ks[p], a, b, 1)
    M[3, 3] = _int_t_exp(0.0, a, b, 2)
    return VOL_S3 * M


def F_energy(fld: BiharmonicField, i: int, L: float, precision: Precision = DOUBLE):
    """Weighted energy F_i of a field, summed over its orthonormal modes."""
    total = precision.scalar(0)
    by_degree: dict[int, list] = {}
    for q in fld.modes.values():
        by_degree.setdefault(q.n, []).append(q)
    with precision.workprec():
        for n, quads in by_degree.items():
            M = assemble_M(i, L, n, precision)
            for q in quads:
                v = [precision.scalar(c) for c in q.matrix_vector()]
                total += M.form(v)
        if not fld.mean.is_zero:
            m = fld.mean
            w = np.array([m.A0, m.B0, m.C0, m.D0])
            total += precision.scalar(float(w @ mean_mode_matrix(i, L) @ w))
    return total


@dataclass
class EnergyProfile:
    chain: AnnulusChain
    values: dict

    def __post_init__(self):
        if any(v < 0 for v in self.values.values()):
            raise ValueError("energy values must be nonnegative")

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.array(sorted(self.values))
        return idx, np.array([float(self.values[i]) for i in idx])


def energy_profile(fld: BiharmonicField, chain: AnnulusChain, precision: Precision = DOUBLE) -> EnergyProfile:
    return EnergyProfile(chain, {i: F_energy(fld, i, chain.L, precision) for i in chain.indices})


# --------------------------------------------------------------------------
# cylinder fields


@dataclass
class CylinderField:
    """Vector-valued field on [T0, T1] x S^3 stored as S^3 coefficients per t-slice.

    ``coeffs`` has shape (K, Nt, M) over the basis of degree <= N.  When
    ``jets`` is given (shape (order+1, K, Nt, M)) t-derivatives are read from
    it; otherwise they are computed by Chebyshev collocation on ``bands``.
    ``unit_norm`` marks fields meant to take values in the unit sphere S^(K-1).
    """

    t: np.ndarray
    basis: S3Basis
    coeffs: np.ndarray
    bands: ChebBands | None = None
    jets: np.ndarray | None = None
    unit_norm: bool = False

    def __post_init__(self):
        self.t = np.asarray(self.t, float)
        self.coeffs = np.asarray(self.coeffs, float)
        if self.coeffs.ndim == 2:
            self.coeffs = self.coeffs[None]
        if self.coeffs.shape[1:] != (self.t.size, self.basis.size):
            raise ValueError("coefficient array does not match (t, basis) sizes")
        if self.bands is not None and self.bands.npts != self.t.size:
            raise ValueError("bands do not match t grid")

    @property
    def K(self) -> int:
        return self.coeffs.shape[0]

    @property
    def N(self) -> int:
        return self.basis.N

    def dt(self, order: int) -> np.ndarray:
        if order == 0:
            return self.coeffs
        if self.jets is not None and order < self.jets.shape[0]:
            return self.jets[order]
        if self.bands is None:
            raise ValueError("no derivative jets and no collocation bands for t-derivatives")
        return self.bands.diff(self.coeffs, order, axis=1)

    def mean_profile(self) -> np.ndarray:
        """Spherical average per component and slice, shape (K, Nt)."""
        return self.coeffs[:, :, 0] / math.sqrt(VOL_S3)

    def with_coeffs(self, coeffs: np.ndarray, jets: np.ndarray | None = None) -> "CylinderField":
        return CylinderField(self.t, self.basis, coeffs, self.bands, jets, self.unit_norm)


def synthesize(fld: BiharmonicField, t, order: int = 4, bands: ChebBands | None = None) -> CylinderField:
    """Exact coefficient jets of a mode field on the t-grid (or a ChebBands)."""
    if isinstance(t, ChebBands):
        bands, t = t, t.t
    t = np.asarray(t, float)
    basis = S3Basis(fld.N)
    jets = np.zeros((order + 1, 1, t.size, basis.size))
    if not fld.mean.is_zero:
        jets[:, 0, :, 0] = math.sqrt(VOL_S3) * fld.mean.jets(t, order)
    for idx, q in fld.modes.items():
        jets[:, 0, :, basis.index(idx.n, idx.l)] += q.jets(t, order)
    return CylinderField(t, basis, jets[0].copy(), bands, jets)


def sample(cf: CylinderField, grid: S3Grid, order: int = 0) -> np.ndarray:
    """Grid values of the order-th t-derivative, shape (K, Nt, grid.size)."""
    Y = _basis_values(cf.N, grid.q)
    return cf.dt(order) @ Y.T


def analyze(samples: np.ndarray, grid: S3Grid, N: int) -> np.ndarray:
    """Project grid samples (..., grid.size) onto harmonics of degree <= N."""
    grid.check_resolves(N)
    Y = _basis_values(N, grid.q)
    return (np.asarray(samples, float) * grid.weights) @ Y


@lru_cache(maxsize=32)
def _basis_values(N: int, q: int) -> np.ndarray:
    return S3Basis(N).on_grid(S3Grid(q))


@lru_cache(maxsize=32)
def basis_values_and_gradients(N: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    return S3Basis(N).on_grid(S3Grid(q), gradient=True)


def to_csv_rows(cf: CylinderField, grid: S3Grid) -> Iterable[list]:
    """Rows (t, psi, theta, phi, value_1..value_K) for grid serialization."""
    vals = sample(cf, grid)
    for j, tj in enumerate(cf.t):
        for p in range(grid.size):
            yield [tj, grid.psi[p], grid.theta[p], grid.phi[p], *vals[:, j, p]]
