"""Synthetic bubbling families on B_1 in R^4 and the measurements run on them:
oscillation and energy on necks, per-annulus energy budgets, scaled sup
bounds, and the one-sided removable-singularity experiment.

Maps are objects with ``jets(x) -> (u, Du, D2u)`` on points x of shape (P, 4),
returning arrays of shape (P, K), (P, K, 4) and (P, K, 4, 4).  Every
implementation is complex-analytic in x so that third derivatives can be taken
by a complex step on the Hessian.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull

from .s3 import S3Grid, UnderResolvedError
from .spectral_core import AnnulusChain

__all__ = [
    "ConstantMap",
    "RadialProjection",
    "PolynomialMap",
    "NeckProfile",
    "GreatCircleMap",
    "ScaledMap",
    "InfeasibleConfigError",
    "NeckMember",
    "NeckFamily",
    "NeckReport",
    "AnnulusEnergyTable",
    "SupNormVerdict",
    "BubbleLimitVerdict",
    "RemovableReport",
    "DEFAULT_FAMILY",
    "energy_density",
    "third_derivative",
    "neck_energy",
    "oscillation",
    "annulus_energy_table",
    "sup_norm_check",
    "synth_family",
    "noneck_report",
    "trend_check",
    "rescaling_check",
    "bubble_limit_check",
    "removable_singularity_experiment",
]


# ---------------------------------------------------------------- maps

def _sq(x):
    return np.sum(x * x, axis=-1)


class ConstantMap:
    def __init__(self, value):
        self.value = np.asarray(value, float)
        self.K = self.value.size

    def jets(self, x):
        P = x.shape[0]
        dt = np.result_type(x, float)
        u = np.broadcast_to(self.value, (P, self.K)).astype(dt)
        return u, np.zeros((P, self.K, 4), dt), np.zeros((P, self.K, 4, 4), dt)


class RadialProjection:
    """x -> x/|x| onto S^3."""

    K = 4

    def jets(self, x):
        r2 = _sq(x)
        r = np.sqrt(r2)
        y = x / r[:, None]
        I = np.eye(4)
        Du = (I[None] - y[:, :, None] * y[:, None, :]) / r[:, None, None]
        # d_j d_k (x_i / r) = -(d_ij y_k + d_ik y_j + d_jk y_i)/r^2 + 3 y_i y_j y_k / r^2
        sym = (np.einsum("ij,pk->pijk", I, y) + np.einsum("ik,pj->pijk", I, y)
               + np.einsum("jk,pi->pijk", I, y))
        D2u = (-sym + 3 * np.einsum("pi,pj,pk->pijk", y, y, y)) / r2[:, None, None, None]
        return y, Du, D2u


def _monomial(x, e):
    out = np.ones(x.shape[0], dtype=x.dtype)
    for j, p in enumerate(e):
        if p:
            out = out * x[:, j] ** p
    return out


class PolynomialMap:
    """Components given as {exponent 4-tuple: coefficient}."""

    def __init__(self, terms):
        self.terms = [dict(t) for t in terms]
        self.K = len(self.terms)

    def jets(self, x):
        P = x.shape[0]
        dt = np.result_type(x, float)
        u = np.zeros((P, self.K), dt)
        Du = np.zeros((P, self.K, 4), dt)
        D2u = np.zeros((P, self.K, 4, 4), dt)
        for a, poly in enumerate(self.terms):
            for e, c in poly.items():
                u[:, a] += c * _monomial(x, e)
                for j in range(4):
                    if e[j] == 0:
                        continue
                    ej = list(e)
                    ej[j] -= 1
                    Du[:, a, j] += c * e[j] * _monomial(x, ej)
                    for k in range(4):
                        if ej[k] == 0:
                            continue
                        ejk = list(ej)
                        ejk[k] -= 1
                        D2u[:, a, j, k] += c * e[j] * ej[k] * _monomial(x, ejk)
        return u, Du, D2u


@dataclass(frozen=True)
class NeckProfile:
    """Scalar angle s(x) = A (h(|x|^2) + c g(x) + b |x|^2) with

    h = z/(1+z), z = (|x|/lam)^k  (plateau transition at scale lam, k even),
    g = (x_0/lam) (1 + |x|^2/lam^2)^-2  (angular part decaying like (lam/|x|)^3).
    """

    lam: float
    amplitude: float = 1.0
    sharpness: int = 4
    angular: float = 0.1
    limit_slope: float = 0.3

    def __post_init__(self):
        if self.sharpness <= 0 or self.sharpness % 2:
            raise ValueError("sharpness must be a positive even integer")
        if not self.lam > 0:
            raise ValueError("scale lam must be positive")

    def jets(self, x):
        lam, m = self.lam, self.sharpness // 2
        Q = _sq(x)
        l2m = lam ** (2 * m)
        z = Q**m / l2m
        w = 1.0 + z
        hp = m * Q ** (m - 1) / l2m / w**2
        hpp = -2 * m * m * Q ** (2 * m - 2) / l2m**2 / w**3
        if m > 1:
            hpp = hpp + m * (m - 1) * Q ** (m - 2) / l2m / w**2
        v = 1.0 + Q / lam**2
        phi, phi1, phi2 = v**-2, -2.0 / lam**2 * v**-3, 6.0 / lam**4 * v**-4
        x0 = x[:, 0]
        I = np.eye(4)
        e0 = I[0]
        xx = x[:, :, None] * x[:, None, :]
        s = z / w + self.angular * x0 * phi / lam + self.limit_slope * Q
        ds = (2 * hp[:, None] * x
              + self.angular / lam * (phi[:, None] * e0 + 2 * (x0 * phi1)[:, None] * x)
              + 2 * self.limit_slope * x)
        cross = e0[None, :, None] * x[:, None, :] + x[:, :, None] * e0[None, None, :]
        d2s = (2 * hp[:, None, None] * I + 4 * hpp[:, None, None] * xx
               + self.angular / lam * (2 * phi1[:, None, None] * cross + 2 * (x0 * phi1)[:, None, None] * I
                                       + 4 * (x0 * phi2)[:, None, None] * xx)
               + 2 * self.limit_slope * I)
        A = self.amplitude
        return A * s, A * ds, A * d2s


class GreatCircleMap:
    """u = cos(s) e + sin(s) f for an orthonormal pair (e, f) in R^K."""

    def __init__(self, profile, frame):
        frame = np.asarray(frame, float)
        if frame.shape[0] != 2 or not np.allclose(frame @ frame.T, np.eye(2), atol=1e-12):
            raise ValueError("frame must be an orthonormal pair")
        self.profile = profile
        self.frame = frame
        self.K = frame.shape[1]

    def jets(self, x):
        s, ds, d2s = self.profile.jets(x)
        e, f = self.frame
        c, sn = np.cos(s), np.sin(s)
        gam = c[:, None] * e + sn[:, None] * f
        gam1 = -sn[:, None] * e + c[:, None] * f
        Du = gam1[:, :, None] * ds[:, None, :]
        D2u = (-gam[:, :, None, None] * (ds[:, :, None] * ds[:, None, :])[:, None]
               + gam1[:, :, None, None] * d2s[:, None])
        return gam, Du, D2u

    def energy_density(self, x):
        # gamma is a unit-speed geodesic: |Du|^2 = |ds|^2, |D2u|^2 = |ds|^4 + |D2s|^2
        _, ds, d2s = self.profile.jets(x)
        g2 = np.sum(ds * ds, axis=1)
        return np.sum(d2s * d2s, axis=(1, 2)) + 2 * g2 * g2


class ScaledMap:
    """x -> base(scale x)."""

    def __init__(self, base, scale: float):
        self.base = base
        self.scale = float(scale)
        self.K = base.K

    def jets(self, x):
        u, Du, D2u = self.base.jets(self.scale * x)
        return u, self.scale * Du, self.scale**2 * D2u


def third_derivative(u, x, h: float = 1e-30):
    """D^3 u by a complex step on the Hessian, shape (P, K, 4, 4, 4)."""
    x = np.asarray(x, float)
    out = np.empty((x.shape[0], u.K, 4, 4, 4))
    for m in range(4):
        xc = x.astype(complex)
        xc[:, m] += 1j * h
        out[..., m] = u.jets(xc)[2].imag / h
    return out


# ---------------------------------------------------------------- quadrature

def _t_nodes(a: float, b: float, panel: float, nodes: int):
    npan = max(1, math.ceil((b - a) / panel - 1e-12))
    edges = np.linspace(a, b, npan + 1)
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * gx).ravel()
    w = (half[:, None] * gw).ravel()
    return t, w


def energy_density(u, x) -> np.ndarray:
    """|D^2 u|^2 + |Du|^4 at the points x."""
    if hasattr(u, "energy_density"):
        return u.energy_density(x)
    _, Du, D2u = u.jets(x)
    g2 = np.sum(Du * Du, axis=(1, 2))
    return np.sum(D2u * D2u, axis=(1, 2, 3)) + g2 * g2


def _annulus_integral(u, rho: float, delta: float, q: int, panel: float, nodes: int) -> float:
    # dx = e^{4t} dt dtheta on the cylinder t = log|x|
    grid = S3Grid(q)
    y = grid.points
    t, wt = _t_nodes(math.log(rho), math.log(delta), panel, nodes)
    per = max(1, 65536 // grid.size)
    total = 0.0
    for a in range(0, t.size, per):
        r = np.exp(t[a:a + per])
        dens = energy_density(u, (r[:, None, None] * y[None]).reshape(-1, 4)).reshape(r.size, grid.size)
        total += float((wt[a:a + per] * r**4) @ grid.integrate(dens))
    return total


def neck_energy(u, delta: float, rho: float, q: int = 8, panel: float = 0.5, nodes: int = 10,
                tol: float = 1e-8) -> float:
    """int_{rho < |x| < delta} |D^2 u|^2 + |Du|^4 dx, cross-checked against a refined rule."""
    if not delta > rho > 0:
        raise ValueError("need delta > rho > 0")
    coarse = _annulus_integral(u, rho, delta, q, panel, nodes)
    fine = _annulus_integral(u, rho, delta, q + 2, panel / 2, nodes)
    if abs(fine - coarse) > tol * max(abs(fine), 1e-300) and abs(fine - coarse) > 1e-14:
        raise UnderResolvedError(f"neck energy changes by {abs(fine - coarse):.3e} under refinement")
    return fine


def _samples(u, rho: float, delta: float, nt: int, q: int):
    grid = S3Grid(q)
    t = np.linspace(math.log(rho), math.log(delta), nt)
    x = (np.exp(t)[:, None, None] * grid.points[None]).reshape(-1, 4)
    return x, u.jets(x)[0].real


def _diameter(P: np.ndarray) -> float:
    # the diametral pair lies on the convex hull of the image inside its affine span
    if P.shape[0] < 2:
        return 0.0
    C = P - P.mean(axis=0)
    _, sv, Vt = np.linalg.svd(C, full_matrices=False)
    rank = int(np.sum(sv > 1e-10 * max(sv[0], 1e-300)))
    if rank == 0:
        return 0.0
    Z = C @ Vt[:rank].T
    if rank == 1:
        return float(Z.max() - Z.min())
    V = Z[ConvexHull(Z).vertices]
    d2 = _sq(V)[:, None] + _sq(V)[None, :] - 2 * V @ V.T
    return math.sqrt(max(float(d2.max()), 0.0))


def oscillation(u, delta: float, rho: float, nt: int = 33, q: int = 6) -> float:
    """Diameter of the image of {rho <= |x| <= delta} over a tensor sample."""
    if not delta > rho > 0:
        raise ValueError("empty region: need delta > rho > 0")
    return _diameter(_samples(u, rho, delta, nt, q)[1])


@dataclass
class AnnulusEnergyTable:
    values: dict
    budget: float | None
    violations: list

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["annulus", "energy", "over_budget"])
        for l in sorted(self.values):
            w.writerow([l, f"{self.values[l]:.17g}", int(l in self.violations)])
        return buf.getvalue()


def annulus_energy_table(u, chain: AnnulusChain, eps: float | None = None, q: int = 8,
                         panel: float = 0.5, nodes: int = 10) -> AnnulusEnergyTable:
    """Energies of every annulus A_l of the chain, flagged against the eps^4 budget."""
    vals = {}
    for l in chain.indices:
        r0, r1 = chain.radii(l)
        vals[l] = _annulus_integral(u, r0, r1, q, panel, nodes)
    budget = None if eps is None else eps**4
    bad = [] if budget is None else [l for l, v in vals.items() if v >= budget]
    return AnnulusEnergyTable(vals, budget, bad)


@dataclass
class SupNormVerdict:
    eps: float
    required: dict          # k -> max over the chain of |x|^k |D^k u|
    per_annulus: dict       # (l, k) -> sup on A_l

    @property
    def passed(self) -> bool:
        return all(v <= self.eps for v in self.required.values())

    @property
    def verdict(self) -> str:
        return "Pass" if self.passed else "Fail"


def sup_norm_check(u, chain: AnnulusChain, eps: float, orders=(1, 2, 3), nt: int = 9, q: int = 6) -> SupNormVerdict:
    """Scaled bounds |x|^k |D^k u| <= eps on every annulus of the chain."""
    orders = tuple(orders)
    if any(k not in (1, 2, 3) for k in orders):
        raise ValueError("orders must be among 1, 2, 3")
    per = {}
    for l in chain.indices:
        r0, r1 = chain.radii(l)
        grid = S3Grid(q)
        t = np.linspace(math.log(r0), math.log(r1), nt)
        x = (np.exp(t)[:, None, None] * grid.points[None]).reshape(-1, 4)
        r = np.sqrt(_sq(x))
        _, Du, D2u = u.jets(x)
        norms = {1: np.sqrt(np.sum(Du**2, axis=(1, 2))), 2: np.sqrt(np.sum(D2u**2, axis=(1, 2, 3)))}
        if 3 in orders:
            norms[3] = np.sqrt(np.sum(third_derivative(u, x) ** 2, axis=(1, 2, 3, 4)))
        for k in orders:
            per[(l, k)] = float(np.max(r**k * norms[k]))
    req = {k: max(per[(l, k)] for l in chain.indices) for k in orders}
    return SupNormVerdict(eps, req, per)


# ---------------------------------------------------------------- families

class InfeasibleConfigError(ValueError):
    """The configuration cannot meet the per-annulus energy budget."""


DEFAULT_FAMILY = {
    "K": 3,
    "indices": [1, 2, 3, 4, 5, 6, 7, 8],
    "lambda": None,          # default 10^-(i+3)
    "R": None,               # default i
    "delta": None,           # default 1/i
    "epsilon": 0.1,
    "amplitude": 1.0,
    "sharpness": 4,
    "angular": 0.1,
    "limit_slope": 0.3,
    "L": 3.0,
    "chain": {"R": 16.0, "delta": 0.05},
    "check_budget": True,
    "seed": 0,
}


@dataclass
class NeckMember:
    i: int
    lam: float
    R: float
    delta: float
    map: GreatCircleMap
    chain: AnnulusChain | None

    @property
    def rho(self) -> float:
        return self.lam * self.R


@dataclass
class NeckFamily:
    cfg: dict
    members: list
    bubble: GreatCircleMap
    budgets: dict = field(default_factory=dict)


def _full_cfg(cfg) -> dict:
    out = json.loads(json.dumps(DEFAULT_FAMILY))
    for k, v in (cfg or {}).items():
        if k not in out:
            raise ValueError(f"unknown family option {k!r}")
        out[k] = v
    idx = [int(i) for i in out["indices"]]
    if not idx or any(i < 1 for i in idx) or sorted(set(idx)) != idx:
        raise ValueError("indices must be distinct increasing positive integers")
    out["indices"] = idx
    for key, default in (("lambda", lambda i: 10.0 ** -(i + 3)), ("R", float), ("delta", lambda i: 1.0 / i)):
        vals = out[key]
        out[key] = [float(default(i)) for i in idx] if vals is None else [float(v) for v in vals]
        if len(out[key]) != len(idx):
            raise ValueError(f"{key} must have one entry per index")
    lam = out["lambda"]
    if any(v <= 0 for v in lam) or any(b >= a for a, b in zip(lam, lam[1:])):
        raise ValueError("scales lambda must be positive and strictly decreasing")
    if int(out["K"]) < 2:
        raise ValueError("target sphere needs K >= 2")
    if not out["epsilon"] > 0 or not out["L"] > 0:
        raise ValueError("epsilon and L must be positive")
    return out


def _frame(K: int, seed: int) -> np.ndarray:
    Q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((K, 2)))
    return Q.T


def _budget_chain(lam: float, L: float, R: float, delta: float) -> AnnulusChain | None:
    lo = math.ceil(1 + (-math.log(delta)) / L - 1e-12)
    hi = math.floor(-math.log(lam * R) / L + 1e-12)
    return AnnulusChain(L, lo, hi) if lo <= hi else None


def synth_family(cfg: dict | None = None) -> NeckFamily:
    """Bubble profile at scale lam_i glued to a smooth limit map along one great circle."""
    c = _full_cfg(cfg)
    frame = _frame(int(c["K"]), int(c["seed"]))
    shape = {k: c[k] for k in ("amplitude", "sharpness", "angular", "limit_slope")}
    members, budgets = [], {}
    for i, lam, R, delta in zip(c["indices"], c["lambda"], c["R"], c["delta"]):
        if not delta > lam * R:
            raise ValueError(f"member {i}: neck region is empty (delta <= lam R)")
        u = GreatCircleMap(NeckProfile(lam, **shape), frame)
        chain = _budget_chain(lam, c["L"], c["chain"]["R"], c["chain"]["delta"])
        members.append(NeckMember(i, lam, R, delta, u, chain))
        if c["check_budget"]:
            if chain is None:
                raise InfeasibleConfigError(f"member {i}: budget window holds no annulus of width L")
            table = annulus_energy_table(u, chain, c["epsilon"])
            if not table.passed:
                worst = max(table.values[l] for l in table.violations)
                raise InfeasibleConfigError(
                    f"member {i}: annuli {table.violations} exceed eps^4 = {table.budget:.3e} (max {worst:.3e})")
            budgets[i] = table
    bubble = GreatCircleMap(NeckProfile(1.0, **{**shape, "limit_slope": 0.0}), frame)
    return NeckFamily(c, members, bubble, budgets)


@dataclass
class NeckReport:
    rows: list
    eps: float

    def column(self, key: str) -> dict:
        return {r["i"]: r[key] for r in self.rows}

    def trends(self, start: int = 2, threshold: float = 1e-2) -> dict:
        return {k: trend_check(self.column(k), start, threshold) for k in ("oscillation", "neck_energy")}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = ["i", "lambda", "R", "delta", "oscillation", "osc_over_eps", "neck_energy"]
        w.writerow(keys)
        for r in self.rows:
            w.writerow([r["i"]] + [f"{r[k]:.17g}" for k in keys[1:]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"eps": self.eps, "rows": self.rows, "trends": self.trends()}


def noneck_report(family: NeckFamily, q: int = 8) -> NeckReport:
    rows = []
    eps = family.cfg["epsilon"]
    for m in family.members:
        osc = oscillation(m.map, m.delta, m.rho)
        rows.append({
            "i": m.i, "lambda": m.lam, "R": m.R, "delta": m.delta,
            "oscillation": osc, "osc_over_eps": osc / eps,
            "neck_energy": neck_energy(m.map, m.delta, m.rho, q=q),
            "annulus_energies": ({str(l): v for l, v in family.budgets[m.i].values.items()}
                                 if m.i in family.budgets else {}),
        })
    return NeckReport(rows, eps)


def trend_check(values: dict, start: int = 2, threshold: float = 1e-2, rtol: float = 1e-12) -> dict:
    """Monotone nonincreasing for indices >= start and below threshold at the last index."""
    idx = sorted(values)
    tail = [values[i] for i in idx if i >= start]
    mono = all(b <= a * (1 + rtol) + 1e-300 for a, b in zip(tail, tail[1:]))
    last = values[idx[-1]]
    return {"monotone": bool(mono), "final": last, "below": bool(last < threshold), "passed": bool(mono and last < threshold)}


def rescaling_check(family: NeckFamily, radius: float = 2.0, nt: int = 9, q: int = 6) -> dict:
    """sup over |y| <= radius of |u_i(lam_i y) - omega(y)| for each member."""
    grid = S3Grid(q)
    t = np.linspace(math.log(radius) - 8.0, math.log(radius), nt)
    y = np.concatenate([np.zeros((1, 4)), (np.exp(t)[:, None, None] * grid.points[None]).reshape(-1, 4)])
    ref = family.bubble.jets(y)[0]
    return {m.i: float(np.max(np.linalg.norm(ScaledMap(m.map, m.lam).jets(y)[0] - ref, axis=1)))
            for m in family.members}


@dataclass
class BubbleLimitVerdict:
    radii: list
    tail_oscillation: list
    tol: float
    limit: list

    @property
    def passed(self) -> bool:
        return min(self.tail_oscillation) < self.tol

    @property
    def verdict(self) -> str:
        return "Pass" if self.passed else "Fail"


def bubble_limit_check(profile, tol: float = 1e-2, R0: float = 1.0, factor: float = 2.0, levels: int = 10,
                       nt: int = 9, q: int = 6) -> BubbleLimitVerdict:
    """Cauchy test for lim_{|x|->inf}: oscillation on B_{R_max} \\ B_{R_k} for R_k = R0 factor^k."""
    radii = [R0 * factor**k for k in range(levels + 1)]
    top = radii[-1]
    tails = [oscillation(profile, top, r, nt=nt, q=q) for r in radii[:-1]]
    grid = S3Grid(q)
    lim = grid.integrate(profile.jets(top * grid.points)[0].real.T) / grid.integrate(np.ones(grid.size))
    return BubbleLimitVerdict(radii, tails, tol, [float(v) for v in lim])


# ---------------------------------------------------------------- removable singularity

DEFAULT_REMOVABLE = {
    "field": None,
    "seed": 0,
    "N": 3,
    "nmodes": 4,
    "branches": "AC",
    "epsilon": 0.1,
    "L": 3.0,
    "l_max": 8,
    "T": 30.0,
    "anchors": [-14.0, -13.0, -12.0, -11.0, -10.0, -9.0, -8.0],
    "q": 8,
}


@dataclass
class RemovableReport:
    chain: object
    envelope_rate: float | None
    certificates: list
    bound_exponent: float | None
    pointwise_exponent: float | None
    C_pointwise: float
    C_certified: float
    eps: float

    @property
    def passed(self) -> bool:
        ok = self.chain.passed and all(c.passed for c in self.certificates)
        if self.bound_exponent is not None:
            ok = ok and 0.45 <= self.bound_exponent <= 0.55
        if self.envelope_rate is not None:
            ok = ok and self.envelope_rate >= 0.45
        return bool(ok)

    def to_dict(self) -> dict:
        return {
            "verdict": "Pass" if self.passed else "Fail",
            "chain": self.chain.to_dict(),
            "envelope_rate": self.envelope_rate,
            "bound_exponent": self.bound_exponent,
            "pointwise_exponent": self.pointwise_exponent,
            "C_pointwise": self.C_pointwise,
            "C_certified": self.C_certified,
            "epsilon": self.eps,
            "certificates": [c.to_dict() for c in self.certificates],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t0", "bound_F1", "measured_F1", "verdict"])
        for c in self.certificates:
            w.writerow([f"{c.t0:.17g}", f"{c.bound:.17g}", f"{c.F1:.17g}", c.verdict])
        return buf.getvalue()


def _slice_gradients(fld, t: np.ndarray, q: int):
    # sup over the sphere of |tangential gradient| and of |x||Du| = sqrt(u_t^2 + |grad u|^2)
    from .spectral_core import basis_values_and_gradients, synthesize
    cf = synthesize(fld, t, order=1)
    Y, G = basis_values_and_gradients(cf.N, q)
    c0, c1 = cf.dt(0)[0], cf.dt(1)[0]
    tang = np.sqrt(sum((c0 @ G[a].T) ** 2 for a in range(3)))
    full = np.sqrt(tang**2 + (c1 @ Y.T) ** 2)
    return tang.max(axis=1), full.max(axis=1)


def _fit_slope(x, y) -> float | None:
    keep = np.isfinite(y) & (y > 0)
    if keep.sum() < 2:
        return None
    return float(np.polyfit(np.asarray(x)[keep], np.log(np.asarray(y)[keep]), 1)[0])


def removable_singularity_experiment(cfg: dict | None = None) -> RemovableReport:
    """Chain monotonicity, tangential e^{t/2} envelope and one-sided bounds on (-T, 0] x S^3."""
    from .decay_ode import (forcing_constant, monotone_chain_check, one_sided_bound, one_sided_forcing,
                            window_energy)
    from .spectral_core import BiharmonicField, energy_profile

    c = json.loads(json.dumps(DEFAULT_REMOVABLE))
    for k, v in (cfg or {}).items():
        if k not in c:
            raise ValueError(f"unknown experiment option {k!r}")
        c[k] = v
    eps, T, q = float(c["epsilon"]), float(c["T"]), int(c["q"])
    anchors = sorted(float(a) for a in c["anchors"])
    if anchors and 2 * anchors[0] + 1 < -T:
        raise ValueError("deepest anchor needs T >= -2 t0 - 1")
    t = np.linspace(-T, 0.0, 601)
    if c["field"] is not None:
        fld = BiharmonicField.from_json(json.dumps(c["field"]))
    else:
        fld = BiharmonicField.random(np.random.default_rng(int(c["seed"])), int(c["N"]), int(c["nmodes"]),
                                     branches=c["branches"])
        peak = _slice_gradients(fld, t, q)[1].max()
        if peak > 0:
            for idx, m in list(fld.modes.items()):
                fld.add(idx.n, idx.l, *(v * eps / peak for v in m.coefficients))

    chain = AnnulusChain(float(c["L"]), 1, int(c["l_max"]))
    verdict = monotone_chain_check(energy_profile(fld, chain))
    tang, full = _slice_gradients(fld, t, q)
    inner = t <= -1.0
    rate = _fit_slope(t[inner], tang[inner])

    certs = []
    K = forcing_constant(fld, -T, 0.0, eps, one_sided=True)
    for t0 in anchors:
        curve = window_energy(fld, t0, -t0 - 1.0, domain=(-T, 0.0))
        certs.append(one_sided_bound(curve, K=K, forcing=one_sided_forcing(1.0, eps, t0), eps=eps, T_top=0.0))
    bounds = np.array([cert.bound for cert in certs])
    b_exp = _fit_slope(anchors, np.sqrt(bounds)) if len(certs) > 1 else None
    at = np.interp(anchors, t, full) if anchors else np.array([])
    p_exp = _fit_slope(anchors, at) if len(anchors) > 1 else None
    window = t >= (anchors[0] if anchors else -T)
    C_pt = float(np.max(full[window] / (eps * np.exp(t[window] / 2))))
    C_cert = float(np.max(np.sqrt(bounds) / (eps * np.exp(np.array(anchors) / 2)))) if certs else 0.0
    return RemovableReport(verdict, rate, certs, b_exp, p_exp, C_pt, C_cert, eps)
