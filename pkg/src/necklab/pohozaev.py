"""Pohozaev-type slice identities for fields on the cylinder R x S^3.

With r = e^t, a field u(t, theta) on R^4 minus the origin satisfies

    Lap u     = e^{-2t} (d_t^2 + 2 d_t + Lap_S) u
    Lap^2 u   = e^{-4t} ((d_t^2 + Lap_S)^2 - 4 d_t^2) u

and testing the bi-Laplacian against d_t u over a slice gives a conserved
bracket Q(t).  Quadratic slice integrals are evaluated exactly in coefficient
space (Parseval on S^3); the quartic brackets of the intrinsic variants are
evaluated on an S^3 product grid.  Intrinsic variants assume the round unit
sphere as target, where B(y)(X, Y) = -<X, Y> y.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.polynomial import chebyshev as npcheb

from .s3 import VOL_S3, S3Basis, S3Grid, UnderResolvedError
from .spectral_core import (
    BiharmonicField,
    CylinderField,
    analyze,
    basis_values_and_gradients,
    sample,
    synthesize,
)
from .tgrid import ChebBands

__all__ = [
    "VARIANTS",
    "PohozaevReport",
    "cylinder_laplacian",
    "cylinder_bilaplacian",
    "boundary_quantity_Q",
    "theta",
    "psi_term",
    "force_work",
    "ode_residual",
    "intrinsic_boundary_terms",
    "bracket_scale",
    "energy_bookkeeping",
    "theta_envelope",
    "sphere_P",
    "sphere_B",
    "div_decompose",
    "unit_norm_deviation",
    "field_from_sample_jets",
    "geodesic_circle_field",
    "rotating_sphere_field",
    "normalized_field",
]

VARIANTS = ("extrinsic", "intrinsic-laplace", "intrinsic-hessian")


# ---------------------------------------------------------------- derivatives

def _t_resolution_check(cf: CylinderField, tol: float = 1e-9) -> None:
    """Raise if the trailing Chebyshev coefficients on some band are not small."""
    bands = cf.bands
    scale = np.abs(cf.coeffs).max()
    if scale == 0:
        return
    for b in range(bands.nbands):
        s = bands.band_slice(b)
        vals = cf.coeffs[:, s, :]
        x = bands._ref[0]
        c = npcheb.chebfit(x, np.moveaxis(vals, 1, 0).reshape(bands.p + 1, -1), bands.p)
        tail = np.abs(c[-2:]).max()
        if tail > tol * scale:
            raise UnderResolvedError(
                f"band {b}: trailing Chebyshev coefficient {tail:.2e} exceeds {tol:.0e} x field scale"
            )


def _derivs(cf: CylinderField, order: int) -> list[np.ndarray]:
    have = cf.jets.shape[0] - 1 if cf.jets is not None else 0
    if have < order:
        if cf.bands is None:
            raise UnderResolvedError(f"need {order} t-derivatives, field carries {have} and no collocation bands")
        _t_resolution_check(cf)
    return [cf.dt(k) for k in range(order + 1)]


def cylinder_laplacian(cf: CylinderField) -> CylinderField:
    """Flat Laplacian in cylinder form, e^{-2t}(d_t^2 + 2 d_t + Lap_S) u."""
    c0, c1, c2 = _derivs(cf, 2)
    lam = cf.basis.eigenvalues
    w = np.exp(-2.0 * cf.t)[None, :, None]
    return cf.with_coeffs(w * (c2 + 2.0 * c1 - lam * c0))


def cylinder_bilaplacian(cf: CylinderField) -> CylinderField:
    """Flat bi-Laplacian in cylinder form, e^{-4t}((d_t^2 + Lap_S)^2 - 4 d_t^2) u."""
    c0, _, c2, _, c4 = _derivs(cf, 4)
    lam = cf.basis.eigenvalues
    w = np.exp(-4.0 * cf.t)[None, :, None]
    return cf.with_coeffs(w * (c4 - 2.0 * lam * c2 + lam**2 * c0 - 4.0 * c2))


def _dot(a, b, w=None) -> np.ndarray:
    if w is None:
        return np.einsum("knm,knm->n", a, b)
    return np.einsum("knm,knm,m->n", a, b, w)


# ---------------------------------------------------------------- quartic terms

def _check_variant(cf: CylinderField, variant: str, tol: float) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant == "extrinsic":
        return
    if not cf.unit_norm:
        raise ValueError("intrinsic variants need a sphere-valued field (unit_norm flag)")
    dev = unit_norm_deviation(cf)
    if dev > tol:
        raise ValueError(f"field leaves the unit sphere by {dev:.2e} (tolerance {tol:.0e})")


def _grid_for(cf: CylinderField, grid: S3Grid | None) -> S3Grid:
    grid = grid or S3Grid.for_degree(cf.N, factor=2)
    grid.check_resolves(cf.N)
    return grid


_PW_CACHE: dict = {}


@dataclass
class _Pointwise:
    """Grid values of d_t u, d_t^2 u and tangential gradients of u and d_t u."""

    weights: np.ndarray
    du: np.ndarray    # (K, Nt, P)
    d2u: np.ndarray   # (K, Nt, P)
    gu: np.ndarray    # (K, 3, Nt, P)
    gdu: np.ndarray   # (K, 3, Nt, P)

    @classmethod
    def of(cls, cf: CylinderField, grid: S3Grid) -> "_Pointwise":
        key = (id(cf), grid.q)
        hit = _PW_CACHE.get(key)
        if hit is not None and hit[0] is cf:
            return hit[1]
        pw = cls._build(cf, grid)
        _PW_CACHE.clear()
        _PW_CACHE[key] = (cf, pw)
        return pw

    @classmethod
    def _build(cls, cf: CylinderField, grid: S3Grid) -> "_Pointwise":
        _, c1, c2 = _derivs(cf, 2)
        Y, G = basis_values_and_gradients(cf.N, grid.q)
        return cls(
            grid.weights,
            c1 @ Y.T,
            c2 @ Y.T,
            np.einsum("knm,ipm->kinp", cf.coeffs, G, optimize=True),
            np.einsum("knm,ipm->kinp", c1, G, optimize=True),
        )

    def integrate(self, f: np.ndarray) -> np.ndarray:
        return f @ self.weights

    @cached_property
    def a(self):
        return np.einsum("knp,knp->np", self.du, self.du)

    @cached_property
    def s(self):
        return np.einsum("kinp,kinp->np", self.gu, self.gu, optimize=True)

    @cached_property
    def c(self):
        return np.einsum("knp,kinp->inp", self.du, self.gu, optimize=True)

    @cached_property
    def S(self):
        return np.einsum("kinp,kjnp->ijnp", self.gu, self.gu, optimize=True)


def _quartic(cf: CylinderField, variant: str, grid: S3Grid | None):
    """(extra conserved bracket, extra Theta, Psi) per slice for the variant."""
    zero = np.zeros(cf.t.size)
    if variant == "extrinsic":
        return zero, zero, zero
    pw = _Pointwise.of(cf, _grid_for(cf, grid))
    a, s = pw.a, pw.s
    w = a + s
    # on the unit sphere <B(X,Y), B(Z,W)> = <X,Y><Z,W>, so |B(grad u, grad u)|^2 = w^2
    bracket = 4 * w * a - w**2
    th = -a * s + 0.5 * s**2
    if variant == "intrinsic-hessian":
        c, S = pw.c, pw.S
        c2 = np.einsum("inp,inp->np", c, c)
        S2 = np.einsum("ijnp,ijnp->np", S, S)
        # round-sphere curvature R = g(x)g - g(x)g collapses the four-slot sum
        bracket = bracket - 2 * c2 + 2 * a * s + S2 - s**2
        th = th + c2 - a * s - 0.5 * S2 + 0.5 * s**2
    return pw.integrate(bracket), pw.integrate(th), pw.integrate(1.5 * a**2)


def _extrinsic_terms(cf: CylinderField) -> list[np.ndarray]:
    c0, c1, c2, c3 = _derivs(cf, 3)
    lam = cf.basis.eigenvalues
    return [
        2.0 * _dot(c1, c3),
        -_dot(c2, c2),
        _dot(c0, c0, lam**2),
        -2.0 * _dot(c1, c1, lam),
        -4.0 * _dot(c1, c1),
    ]


def boundary_quantity_Q(cf: CylinderField, variant: str = "extrinsic", grid: S3Grid | None = None,
                        constraint_tol: float = 1e-6) -> np.ndarray:
    """Slice integral of the conserved bracket
    2 u_t u_ttt - |u_tt|^2 + |Lap_S u|^2 - 2|grad_S u_t|^2 - 4|u_t|^2 (plus intrinsic terms)."""
    _check_variant(cf, variant, constraint_tol)
    return sum(_extrinsic_terms(cf)) + _quartic(cf, variant, grid)[0]


def intrinsic_boundary_terms(cf: CylinderField, variant: str, grid: S3Grid | None = None,
                             constraint_tol: float = 1e-6) -> np.ndarray:
    """Slice integral of the bracket whose t-derivative the intrinsic
    Euler-Lagrange terms add to the extrinsic identity (doubled, matching Q)."""
    _check_variant(cf, variant, constraint_tol)
    return _quartic(cf, variant, grid)[0]


def theta(cf: CylinderField, variant: str = "extrinsic", grid: S3Grid | None = None,
          constraint_tol: float = 1e-6) -> np.ndarray:
    """Tangential right-hand side of the radial energy ODE per slice."""
    _check_variant(cf, variant, constraint_tol)
    c0, c1 = _derivs(cf, 1)
    lam = cf.basis.eigenvalues
    base = -0.5 * _dot(c0, c0, lam**2) + _dot(c1, c1, lam)
    return base + _quartic(cf, variant, grid)[1]


def psi_term(cf: CylinderField, variant: str = "extrinsic", grid: S3Grid | None = None,
             constraint_tol: float = 1e-6) -> np.ndarray:
    """Quartic radial term (3/2)|B(u_t, u_t)|^2 moved to the left side (zero for extrinsic)."""
    _check_variant(cf, variant, constraint_tol)
    return _quartic(cf, variant, grid)[2]


def bracket_scale(cf: CylinderField, variant: str = "extrinsic", grid: S3Grid | None = None) -> float:
    """Largest slice sum of absolute bracket terms; the natural unit for residuals."""
    total = sum(np.abs(x) for x in _extrinsic_terms(cf))
    if variant != "extrinsic":
        total = total + np.abs(_quartic(cf, variant, grid)[0])
    return float(np.max(total))


# ---------------------------------------------------------------- force work

def force_work(cf: CylinderField, variant: str = "extrinsic", grid: S3Grid | None = None) -> np.ndarray:
    """Slice integral of E(u) . d_t u, where E is the cylinder Euler-Lagrange
    operator of the variant (before projection), computed from the operator itself.

    Divergence terms are integrated by parts over the closed slice only, so the
    result is independent of the t-manipulations behind the brackets.
    """
    c0, c1, c2, c3, c4 = _derivs(cf, 4)
    lam = cf.basis.eigenvalues
    work = _dot(c1, c4 - 2.0 * lam * c2 + lam**2 * c0 - 4.0 * c2)
    if variant == "extrinsic":
        return work
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    pw = _Pointwise.of(cf, _grid_for(cf, grid))
    du, d2u, gu, gdu = pw.du, pw.d2u, pw.gu, pw.gdu
    a = pw.a
    w = a + pw.s
    du_d2u = np.einsum("knp,knp->np", du, d2u)
    gu_gdu = np.einsum("kinp,kinp->np", gu, gdu)
    dw = 2.0 * (du_d2u + gu_gdu)
    # d_t u . div(w grad u) integrated over the slice
    lap_part = dw * a + w * du_d2u - w * gu_gdu
    if variant == "intrinsic-laplace":
        return work + 2.0 * pw.integrate(lap_part)
    c = pw.c
    S = pw.S
    da = 2.0 * du_d2u
    dc = np.einsum("knp,kinp->inp", d2u, gu) + np.einsum("knp,kinp->inp", du, gdu)
    dVt = (da * du + a * d2u + np.einsum("inp,kinp->knp", dc, gu) + np.einsum("inp,kinp->knp", c, gdu))
    Vj = c[None] * du[:, None] + np.einsum("ijnp,kinp->kjnp", S, gu)
    hess_part = np.einsum("knp,knp->np", du, dVt) - np.einsum("kjnp,kjnp->np", gdu, Vj)
    return work + pw.integrate(4.0 * lap_part - 2.0 * hess_part)


# ---------------------------------------------------------------- the ODE

@dataclass
class PohozaevReport:
    t: np.ndarray
    Q: np.ndarray
    Theta: np.ndarray
    Psi: np.ndarray
    ode_residual: np.ndarray
    variant: str
    scale: float
    anchor: str = "left"
    work: np.ndarray | None = field(default=None, repr=False)

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.ode_residual)))

    @property
    def Q_drift(self) -> float:
        return float(np.max(np.abs(self.Q - self.Q[0])))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "Q", "Theta", "ode_residual", "variant"])
        for row in zip(self.t, self.Q, self.Theta, self.ode_residual):
            w.writerow([f"{v:.17g}" for v in row] + [self.variant])
        return buf.getvalue()

    def write_plot_data(self, directory) -> list[Path]:
        """One two-column (t, value) file per curve."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in ("Q", "Theta", "Psi", "ode_residual"):
            p = directory / f"{name}_{self.variant}.dat"
            vals = getattr(self, name)
            p.write_text("".join(f"{a:.17g} {b:.17g}\n" for a, b in zip(self.t, vals)))
            paths.append(p)
        return paths


def ode_residual(cf: CylinderField, variant: str = "extrinsic", anchor: str = "left", work: bool = False,
                 grid: S3Grid | None = None, constraint_tol: float = 1e-6) -> PohozaevReport:
    """Residual of  d_t P - int(3/2|u_tt|^2 + 2|u_t|^2 - Psi) - Theta  per slice, P = int u_t u_tt.

    ``anchor="origin"`` keeps the raw residual (zero when the field extends
    smoothly over the origin); ``"left"`` subtracts its value at the first slice,
    which is the integration constant on an annulus.  With ``work=True`` the
    accumulated force work int_{T0}^t int E(u).u_t is subtracted as well, so the
    residual vanishes for any field, not only for solutions.
    When collocation bands are present, d_t P is obtained by differentiating P
    numerically rather than by the product rule.
    """
    if anchor not in ("left", "origin"):
        raise ValueError("anchor must be 'left' or 'origin'")
    _check_variant(cf, variant, constraint_tol)
    _, c1, c2, c3 = _derivs(cf, 3)
    P = _dot(c1, c2)
    dP = cf.bands.diff(P, 1, axis=0) if cf.bands is not None else _dot(c2, c2) + _dot(c1, c3)
    extra_Q, _, Psi = _quartic(cf, variant, grid)
    Th = theta(cf, variant, grid, constraint_tol)
    res = dP - (1.5 * _dot(c2, c2) + 2.0 * _dot(c1, c1)) + Psi - Th
    W = None
    if work:
        if cf.bands is None:
            raise ValueError("subtracting the force work needs collocation bands for t-quadrature")
        W = force_work(cf, variant, grid)
        res = res - cf.bands.cumulative_integral(W)
    if anchor == "left":
        res = res - res[0]
    Q = sum(_extrinsic_terms(cf)) + extra_Q
    return PohozaevReport(cf.t.copy(), Q, Th, Psi, res, variant, bracket_scale(cf, variant, grid), anchor, W)


def energy_bookkeeping(cf: CylinderField) -> dict:
    """Compare int int (3/2)|u_tt|^2 + 2|u_t|^2 over the cylinder with the value
    predicted by integrating the ODE with zero residual: P(T1) - P(T0) - int Theta."""
    if cf.bands is None:
        raise ValueError("needs collocation bands for t-quadrature")
    _, c1, c2 = _derivs(cf, 2)
    bands = cf.bands
    direct = float(bands.integrate(1.5 * _dot(c2, c2) + 2.0 * _dot(c1, c1)))
    P = _dot(c1, c2)
    predicted = float(P[-1] - P[0] - bands.integrate(theta(cf)))
    return {"direct": direct, "from_identity": predicted, "difference": predicted - direct}


def theta_envelope(t, values, T0: float, T1: float) -> float:
    """Smallest C with |Theta(t)| <= C (e^{-(T1-t)} + e^{-(t-T0)}) on the samples."""
    t = np.asarray(t, float)
    env = np.exp(-(T1 - t)) + np.exp(-(t - T0))
    return float(np.max(np.abs(values) / env))


# ---------------------------------------------------------------- sphere geometry

def _on_sphere(y, tol):
    y = np.asarray(y, float)
    dev = abs(np.linalg.norm(y) - 1.0)
    if dev > tol:
        raise ValueError(f"|y| differs from 1 by {dev:.2e}")
    return y


def sphere_P(y, tol: float = 1e-8) -> np.ndarray:
    """Orthogonal projection onto the tangent space of the unit sphere at y."""
    y = _on_sphere(y, tol)
    return np.eye(y.size) - np.outer(y, y)


def sphere_B(y, X, Y, tol: float = 1e-8) -> np.ndarray:
    """Second fundamental form of the unit sphere, B(y)(X, Y) = -<X, Y> y."""
    y = _on_sphere(y, tol)
    return -float(np.dot(X, Y)) * y


def _cstep(f, x0, direction, h=1e-30):
    """Complex-step derivative of f along ``direction`` at points x0 (P, d)."""
    return np.imag(f(x0 + 1j * h * direction)) / h


def div_decompose(X, points) -> dict:
    """Check div X = d_r X_r + (3/r) X_r + div_S X^T at sample points of R^4 minus 0.

    ``X`` maps arrays (P, 4) to (P, 4) and must accept complex input; all
    derivatives are complex-step derivatives, exact to rounding for analytic X.
    """
    x = np.asarray(points, float)
    r = np.linalg.norm(x, axis=1)
    n = x / r[:, None]
    I = np.eye(4)
    div = sum(_cstep(X, x.astype(complex), I[k])[:, k] for k in range(4))

    # radial component along rays x = rho n
    def Xr(z):
        return np.sum(X(z) * n, axis=1)

    dXr = _cstep(Xr, x.astype(complex), n)
    Xr0 = np.real(Xr(x.astype(complex)))
    # tangential divergence on the sphere of radius r: sum over an orthonormal
    # tangent frame of e_i . d_{e_i} X^T, differentiating along great circles
    frame = np.linalg.qr(np.concatenate([n[:, :, None], np.broadcast_to(I, (len(x), 4, 4))], axis=2))[0]
    divT = np.zeros(len(x))
    for i in range(1, 4):
        e = frame[:, :, i]

        def XT(z, e=e):
            # X^T at the rotated point z = r (cos s n + sin s e), expressed via the
            # projection onto the sphere through z
            zz = z / np.sqrt(np.sum(z * z, axis=1))[:, None]
            v = X(z)
            return v - np.sum(v * zz, axis=1)[:, None] * zz

        def along(s, e=e):
            z = r[:, None] * (np.cos(s)[:, None] * n + np.sin(s)[:, None] * e)
            return np.sum(XT(z) * (np.cos(s)[:, None] * e - np.sin(s)[:, None] * n), axis=1)

        h = 1e-30
        divT += np.imag(along(np.full(len(x), 1j * h))) / h / r
    decomposition = dXr + 3.0 / r * Xr0 + divT
    return {
        "div": div,
        "radial_derivative": dXr,
        "radial_term": 3.0 / r * Xr0,
        "sphere_divergence": divT,
        "residual": np.abs(div - decomposition),
    }


# ---------------------------------------------------------------- test fields

def unit_norm_deviation(cf: CylinderField, grid: S3Grid | None = None) -> float:
    """max over grid and slices of ||u| - 1|."""
    grid = grid or S3Grid.for_degree(cf.N, factor=2)
    vals = sample(cf, grid)
    return float(np.max(np.abs(np.sqrt(np.sum(vals**2, axis=0)) - 1.0)))


def field_from_sample_jets(jets: np.ndarray, bands: ChebBands, grid: S3Grid, N: int,
                           unit_norm: bool = False) -> CylinderField:
    """Project grid samples of u and its t-derivatives, shape (order+1, K, Nt, P),
    onto harmonics of degree <= N."""
    coeff_jets = analyze(jets, grid, N)
    return CylinderField(bands.t, S3Basis(N), coeff_jets[0].copy(), bands, coeff_jets, unit_norm)


def _jet_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a * b)
    for k in range(a.shape[0]):
        for j in range(k + 1):
            out[k] += math.comb(k, j) * a[j] * b[k - j]
    return out


def _jet_compose(fd: list, g: np.ndarray) -> np.ndarray:
    """Jets of f(g) up to order 4 from f^(k)(g_0) and the jets of g."""
    order = g.shape[0] - 1
    if order > 4:
        raise ValueError("composition implemented up to order 4")
    g1 = g[1] if order >= 1 else 0
    g2 = g[2] if order >= 2 else 0
    g3 = g[3] if order >= 3 else 0
    g4 = g[4] if order >= 4 else 0
    h = [fd[0],
         fd[1] * g1,
         fd[1] * g2 + fd[2] * g1**2,
         fd[1] * g3 + 3 * fd[2] * g1 * g2 + fd[3] * g1**3,
         fd[1] * g4 + fd[2] * (4 * g1 * g3 + 3 * g2**2) + 6 * fd[3] * g1**2 * g2 + fd[4] * g1**4]
    return np.stack([np.broadcast_to(h[k], g[0].shape) for k in range(order + 1)])


def _cos_sin_jets(s: np.ndarray):
    c, sn = np.cos(s[0]), np.sin(s[0])
    cos_j = _jet_compose([c, -sn, -c, sn, c], s)
    sin_j = _jet_compose([sn, c, -sn, -c, sn], s)
    return cos_j, sin_j


def _poly_jets(coeffs, t, order=4) -> np.ndarray:
    p = np.polynomial.Polynomial(coeffs)
    return np.stack([p.deriv(k)(t) if k else p(t) for k in range(order + 1)])


def geodesic_circle_field(bands: ChebBands, s_coeffs=(0.0, 0.3, 0.05)) -> CylinderField:
    """Radial map u(t) = (cos s(t), sin s(t), 0) into S^2 with polynomial s."""
    s = _poly_jets(s_coeffs, bands.t)
    cj, sj = _cos_sin_jets(s)
    root = math.sqrt(VOL_S3)
    jets = np.zeros((5, 3, bands.t.size, 1))
    jets[:, 0, :, 0] = root * cj
    jets[:, 1, :, 0] = root * sj
    return CylinderField(bands.t, S3Basis(0), jets[0].copy(), bands, jets, unit_norm=True)


def rotating_sphere_field(bands: ChebBands, s_coeffs=(0.4, 0.2), omega: float = 0.7,
                          grid: S3Grid | None = None) -> CylinderField:
    """Exactly unit-norm degree-1 map into S^7: u = (cos s(t) x, sin s(t) A(t) x)
    for x in S^3, with A(t) rotating the (x1, x2) and (x3, x4) planes at rates omega, 2 omega."""
    grid = grid or S3Grid.for_degree(1, factor=2)
    t = bands.t
    s = _poly_jets(s_coeffs, t)
    cj, sj = _cos_sin_jets(s)
    x = grid.points  # (P, 4)
    jets = np.zeros((5, 8, t.size, grid.size))
    for k in range(5):
        jets[k, :4] = cj[k][None, :, None] * x.T[:, None, :]
    # jets of A(t) x: rotation by angle r*omega*t in the two planes
    rot = np.zeros((5, 4, t.size, grid.size))
    for (i, j), rate in (((0, 1), omega), ((2, 3), 2 * omega)):
        for k in range(5):
            ang = rate * t[:, None] + k * math.pi / 2
            f = rate**k
            rot[k, i] = f * (np.cos(ang) * x[:, i] - np.sin(ang) * x[:, j])
            rot[k, j] = f * (np.sin(ang) * x[:, i] + np.cos(ang) * x[:, j])
    sj_b = sj[:, None, :, None]
    jets[:, 4:] = _jet_mul(np.broadcast_to(sj_b, rot.shape), rot)
    return field_from_sample_jets(jets, bands, grid, 1, unit_norm=True)


def normalized_field(bands: ChebBands, perturbations: list[BiharmonicField], amplitude: float = 0.2,
                     N: int = 6, grid: S3Grid | None = None) -> CylinderField:
    """Sphere-valued field u = v/|v|, v = e_0 + (0, w_1, ..., w_m) with the w_k
    rescaled to peak value ``amplitude``; exact t-jets, projected onto
    harmonics of degree <= N."""
    grid = grid or S3Grid.for_degree(N, factor=2)
    K = len(perturbations) + 1
    v = np.zeros((5, K, bands.t.size, grid.size))
    v[0, 0] = 1.0
    for k, fld in enumerate(perturbations):
        cf = synthesize(fld, bands.t, order=4)
        for j in range(5):
            v[j, k + 1] = sample(cf, grid, j)[0]
    peak = np.abs(v[0, 1:]).max()
    if peak > 0:
        v[:, 1:] *= amplitude / peak
    w = sum(_jet_mul(v[:, k], v[:, k]) for k in range(K))
    w0 = w[0]
    rho = _jet_compose([w0**-0.5, -0.5 * w0**-1.5, 0.75 * w0**-2.5, -1.875 * w0**-3.5, 6.5625 * w0**-4.5], w)
    u = np.stack([_jet_mul(v[:, k], rho) for k in range(K)], axis=1)
    return field_from_sample_jets(u, bands, grid, N, unit_norm=True)
