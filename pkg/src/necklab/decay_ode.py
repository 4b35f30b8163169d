"""Differential inequality F <= c F' + G for windowed radial energies and the
exponential decay bounds obtained by integrating it.  The customary form takes
c = 1/2; the boundary term actually allows c = 1/(2 sqrt 3).

For an anchor t0 the window energy is

    F(s) = int_{t0-s}^{t0+s} int_{S^3} (3/2)|u_tt|^2 + 2|u_t|^2 dtheta dt,

and (e^{-s/c} F)' >= -(1/c) e^{-s/c} G(s) integrated from s = 1 to the far
end of the admissible range bounds F(1).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .pohozaev import boundary_quantity_Q, theta
from .spectral_core import BiharmonicField, CylinderField, EnergyProfile, synthesize

__all__ = [
    "SHARP_COEFFICIENT",
    "EnergyWindowCurve",
    "InequalityCheck",
    "DecayCertificate",
    "ChainVerdict",
    "slice_energy",
    "window_energy",
    "measured_forcing",
    "two_sided_forcing",
    "one_sided_forcing",
    "forcing_constant",
    "derivative",
    "verify_inequality",
    "two_sided_bound",
    "one_sided_bound",
    "monotone_chain_check",
    "synthetic_neck",
]

SHARP_COEFFICIENT = 1.0 / (2.0 * math.sqrt(3.0))

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


# ---------------------------------------------------------------- curves

@dataclass
class EnergyWindowCurve:
    t0: float
    s: np.ndarray
    F: np.ndarray
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.s = np.asarray(self.s, float)
        self.F = np.asarray(self.F, float)
        if self.s.shape != self.F.shape:
            raise ValueError("window samples and energies differ in length")
        tol = 1e-12 * max(self.scale, 1e-300)
        if np.any(self.F < -tol):
            raise ValueError("window energies must be nonnegative")
        if np.any(np.diff(self.F) < -tol):
            raise ValueError("window energies must be nondecreasing in the half-width")

    @property
    def scale(self) -> float:
        return float(np.max(np.abs(self.F))) if self.F.size else 0.0

    def at(self, s: float) -> float:
        return float(np.interp(s, self.s, self.F))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "F"])
        for a, b in zip(self.s, self.F):
            w.writerow([f"{a:.17g}", f"{b:.17g}"])
        return buf.getvalue()


def slice_energy(u, t) -> np.ndarray:
    """e(t) = int_{S^3} (3/2)|u_tt|^2 + 2|u_t|^2 at the given t."""
    t = np.atleast_1d(np.asarray(t, float))
    if isinstance(u, BiharmonicField):
        cf = synthesize(u, t, order=2)
        c1, c2 = cf.dt(1), cf.dt(2)
        return np.einsum("knm,knm->n", c1, c1) * 2.0 + np.einsum("knm,knm->n", c2, c2) * 1.5
    if isinstance(u, CylinderField):
        if u.bands is None:
            raise ValueError("cylinder field needs collocation bands to evaluate off the grid")
        c1, c2 = u.dt(1), u.dt(2)
        nodes = np.einsum("knm,knm->n", c1, c1) * 2.0 + np.einsum("knm,knm->n", c2, c2) * 1.5
        return u.bands.interpolate(nodes, t)
    raise TypeError("expected a BiharmonicField or CylinderField")


def _domain_of(u, domain):
    if domain is not None:
        return float(domain[0]), float(domain[1])
    if isinstance(u, CylinderField):
        return float(u.t[0]), float(u.t[-1])
    raise ValueError("a mode field needs an explicit (T0, T1) domain")


def _panel_integral(fn, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gauss-Legendre integral of fn over each [a_k, b_k]."""
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * _GL_X[None, :]
    vals = fn(pts.ravel()).reshape(pts.shape)
    return half * (vals @ _GL_W)


def _window_accumulate(fn, t0: float, s: np.ndarray) -> np.ndarray:
    right = _panel_integral(fn, t0 + s[:-1], t0 + s[1:])
    left = _panel_integral(fn, t0 - s[1:], t0 - s[:-1])
    return np.concatenate([[0.0], np.cumsum(right + left)])


def _grid(t_max: float, ds: float) -> np.ndarray:
    n = max(int(round(t_max / ds)), 4)
    return np.linspace(0.0, t_max, n + 1)


def window_energy(u, t0: float, t_max: float, ds: float = 0.01, domain=None,
                  source: dict | None = None) -> EnergyWindowCurve:
    """Window energies F(s) for s in [0, t_max] on a uniform grid of step about ds."""
    T0, T1 = _domain_of(u, domain)
    slack = 1e-12 * max(1.0, abs(T0), abs(T1))
    if t0 - t_max < T0 - slack or t0 + t_max > T1 + slack:
        raise ValueError(f"window [{t0 - t_max}, {t0 + t_max}] exceeds the domain [{T0}, {T1}]")
    s = _grid(t_max, ds)
    F = _window_accumulate(lambda t: slice_energy(u, t), t0, s)
    meta = {"domain": [T0, T1]}
    meta.update(source or {})
    return EnergyWindowCurve(t0, s, F, meta)


def _theta_plus_constant(u: BiharmonicField, t: np.ndarray) -> np.ndarray:
    cf = synthesize(u, t, order=3)
    return theta(cf) + 0.5 * boundary_quantity_Q(cf)


def measured_forcing(u: BiharmonicField, t0: float, s: np.ndarray) -> np.ndarray:
    """G(s) = int_{t0-s}^{t0+s} |Theta + Q/2|, the forcing the slice identity provides.

    Integrating the radial ODE over the window gives
    F(s) = P(t0+s) - P(t0-s) - int (Theta + Q/2), with P = int u_t u_tt and
    |P| <= e/(2 sqrt 3) slice by slice, hence F <= F'/(2 sqrt 3) + G.
    """
    s = np.asarray(s, float)
    return _window_accumulate(lambda t: np.abs(_theta_plus_constant(u, t)), t0, s)


def two_sided_forcing(K: float, eps: float, t0: float, T0: float, T1: float):
    """s -> K eps^2 (e^{-(T1 - t0)} + e^{-(t0 - T0)}) e^s."""
    env = math.exp(-(T1 - t0)) + math.exp(-(t0 - T0))
    return lambda s: K * eps**2 * env * np.exp(np.asarray(s, float))


def one_sided_forcing(K: float, eps: float, t0: float):
    """s -> K eps^2 e^{t0 + s}."""
    return lambda s: K * eps**2 * np.exp(t0 + np.asarray(s, float))


def forcing_constant(u: BiharmonicField, T0: float, T1: float, eps: float, one_sided: bool = False,
                     npts: int = 2001) -> float:
    """Smallest K with |Theta + Q/2| <= K eps^2 (e^{-(T1-t)} + e^{-(t-T0)}) on [T0, T1],
    or <= K eps^2 e^t when ``one_sided``.  Window integrals of the envelope are
    then dominated by the corresponding forcing models."""
    t = np.linspace(T0, T1, npts)
    vals = np.abs(_theta_plus_constant(u, t))
    env = np.exp(t) if one_sided else np.exp(-(T1 - t)) + np.exp(-(t - T0))
    return float(np.max(vals / (eps**2 * env)))


# ---------------------------------------------------------------- the inequality

def _one_sided_weights(k: int, width: int = 7) -> np.ndarray:
    # weights of f'(x_k) from samples x_0..x_{width-1}, unit spacing
    offs = np.arange(width) - k
    V = np.vander(offs, width, increasing=True).T.astype(float)
    rhs = np.zeros(width)
    rhs[1] = 1.0
    return np.linalg.solve(V, rhs)


_END_WEIGHTS = [_one_sided_weights(k) for k in range(3)]


def derivative(F: np.ndarray, s: np.ndarray) -> np.ndarray:
    """F' on a uniform grid: centered differences at steps h, 2h, 3h combined by
    Richardson extrapolation (sixth order), matching one-sided stencils at the ends."""
    F = np.asarray(F, float)
    s = np.asarray(s, float)
    if F.size < 7:
        raise ValueError("need at least 7 samples to differentiate")
    h = s[1] - s[0]
    if not np.allclose(np.diff(s), h, rtol=1e-9, atol=0):
        raise ValueError("samples must be uniformly spaced")
    d = np.empty_like(F)
    D1 = (F[4:-2] - F[2:-4]) / (2 * h)
    D2 = (F[5:-1] - F[1:-5]) / (4 * h)
    D3 = (F[6:] - F[:-6]) / (6 * h)
    d[3:-3] = (15 * D1 - 6 * D2 + D3) / 10
    for k, w in enumerate(_END_WEIGHTS):
        d[k] = w @ F[:7] / h
        d[-1 - k] = -(w @ F[::-1][:7]) / h
    return d


def _forcing_values(forcing, s, K):
    if forcing is None:
        return np.zeros_like(s)
    vals = forcing(s) if callable(forcing) else np.asarray(forcing, float)
    if vals.shape != s.shape:
        raise ValueError("forcing samples do not match the curve")
    return K * vals


@dataclass
class InequalityCheck:
    s: np.ndarray
    margin: np.ndarray
    tol: float
    passed: bool
    worst: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "margin"])
        for a, b in zip(self.s, self.margin):
            w.writerow([f"{a:.17g}", f"{b:.17g}"])
        return buf.getvalue()


def verify_inequality(curve: EnergyWindowCurve, K: float = 1.0, forcing=None, tol: float = 1e-8,
                      coefficient: float = 0.5) -> InequalityCheck:
    """margin(s) = c F'(s) + K G(s) - F(s); passes when margin >= -tol x curve scale."""
    if curve.s.size < 7:
        raise ValueError("need at least 7 samples")
    if coefficient <= 0:
        raise ValueError("coefficient must be positive")
    margin = coefficient * derivative(curve.F, curve.s) + _forcing_values(forcing, curve.s, K) - curve.F
    thr = tol * max(curve.scale, np.finfo(float).tiny)
    worst = float(np.min(margin))
    return InequalityCheck(curve.s, margin, thr, bool(worst >= -thr), worst)


@dataclass
class DecayCertificate:
    kind: str
    t0: float
    s_end: float
    bound: float
    F1: float
    passed: bool
    constants: dict
    check: InequalityCheck = field(repr=False)

    @property
    def verdict(self) -> str:
        return "Pass" if self.passed else "Fail"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "t0": self.t0,
            "s_end": self.s_end,
            "bound_F1": self.bound,
            "measured_F1": self.F1,
            "verdict": self.verdict,
            "constants": self.constants,
            "min_margin": self.check.worst,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _weighted_forcing_integral(curve, forcing, K, a, b, c=0.5) -> float:
    """int_a^b (1/c) e^{(a-s)/c} K G(s) ds."""
    if forcing is None or b <= a:
        return 0.0
    if callable(forcing):
        val, _ = integrate.quad(lambda s: math.exp((a - s) / c) * float(forcing(s)) / c, a, b,
                                epsabs=0.0, epsrel=1e-13, limit=200)
        return K * val
    G = np.asarray(forcing, float)
    sel = (curve.s >= a - 1e-12) & (curve.s <= b + 1e-12)
    return K * float(integrate.simpson(np.exp((a - curve.s[sel]) / c) * G[sel] / c, x=curve.s[sel]))


def _integrated_bound(curve, forcing, K, s_end, tol, kind, c):
    if s_end < 1.0:
        raise ValueError("the far end must be at least one unit from the anchor")
    if s_end > curve.s[-1] + 1e-9:
        raise ValueError(f"curve covers s <= {curve.s[-1]}, needs {s_end}")
    check = verify_inequality(curve, K, forcing, tol, c)
    if not check.passed:
        raise ValueError(f"differential inequality fails (min margin {check.worst:.3e}); no {kind} bound")
    boundary = math.exp((1.0 - s_end) / c) * curve.at(s_end)
    forced = _weighted_forcing_integral(curve, forcing, K, 1.0, s_end, c)
    return check, boundary, forced


def two_sided_bound(curve: EnergyWindowCurve, domain, K: float = 1.0, forcing=None, eps: float = 1.0,
                    tol: float = 1e-8, coefficient: float = 0.5) -> DecayCertificate:
    """Integrate toward the nearer end of (T0, T1):
    F(1) <= e^{(1-d)/c} F(d) + (1/c) int_1^d e^{(1-s)/c} K G(s) ds,  d = min(T1 - t0, t0 - T0),
    reported as F(1) <= C' eps^2 (e^{-(T1-t0)} + e^{-(t0-T0)}).  With c = 1/2 this is
    e^{2-2d} F(d) + 2 e^2 int_1^d e^{-2s} K G(s) ds."""
    T0, T1 = map(float, domain)
    t0 = curve.t0
    d = min(T1 - t0, t0 - T0)
    check, boundary, forced = _integrated_bound(curve, forcing, K, d, tol, "two-sided", coefficient)
    bound = boundary + forced
    F1 = curve.at(1.0)
    env = eps**2 * (math.exp(-(T1 - t0)) + math.exp(-(t0 - T0)))
    consts = {
        "C_prime": bound / env,
        "measured_ratio": F1 / env,
        "boundary_term": boundary,
        "forcing_term": forced,
        "K": K,
        "eps": eps,
        "nearer_end": "T1" if T1 - t0 <= t0 - T0 else "T0",
        "coefficient": coefficient,
    }
    ok = F1 <= bound * (1 + 1e-10) + check.tol
    return DecayCertificate("two-sided", t0, d, bound, F1, bool(ok), consts, check)


def one_sided_bound(curve: EnergyWindowCurve, K: float = 1.0, forcing=None, eps: float = 1.0, T_top: float = 0.0,
                    tol: float = 1e-8, coefficient: float = 0.5) -> DecayCertificate:
    """Cylinder (-inf, T_top]: integrate from s = 1 to s_end = T_top - t0 - 1,
    F(1) <= e^{(1-s_end)/c} F(s_end) + (1/c) int_1^{s_end} e^{(1-s)/c} K G(s) ds.
    For c = 1/2 the first factor is e^{4 - 2 T_top} e^{2 t0}; with G = eps^2 e^{t0+s}
    the second term is C eps^2 e^{t0}."""
    t0 = curve.t0
    s_end = T_top - t0 - 1.0
    check, boundary, forced = _integrated_bound(curve, forcing, K, s_end, tol, "one-sided", coefficient)
    bound = boundary + forced
    F1 = curve.at(1.0)
    consts = {
        "C_boundary": math.exp((1.0 - s_end) / coefficient - 2.0 * t0),
        "F_far": curve.at(s_end),
        "C_forcing": forced / (eps**2 * math.exp(t0)),
        "boundary_term": boundary,
        "forcing_term": forced,
        "K": K,
        "eps": eps,
        "coefficient": coefficient,
    }
    ok = F1 <= bound * (1 + 1e-10) + check.tol
    return DecayCertificate("one-sided", t0, s_end, bound, F1, bool(ok), consts, check)


# ---------------------------------------------------------------- chains

@dataclass
class ChainVerdict:
    passed: bool
    first_violation: int | None
    ratios: dict

    def to_dict(self) -> dict:
        return {"passed": self.passed, "first_violation": self.first_violation,
                "ratios": {str(k): v for k, v in self.ratios.items()}}


def monotone_chain_check(profile, L: float | None = None, l_min: int = 3, rtol: float = 1e-12) -> ChainVerdict:
    """Check F_l >= e^L F_{l+1} for every l >= l_min with both annuli present."""
    if isinstance(profile, EnergyProfile):
        L = profile.chain.L if L is None else L
        values = profile.values
    else:
        values = dict(profile)
    if L is None:
        raise ValueError("gap L required for a plain sequence")
    g = math.exp(L)
    ratios = {}
    first = None
    for l in sorted(values):
        if l < l_min or l + 1 not in values:
            continue
        a, b = float(values[l]), float(values[l + 1])
        ratios[l] = a / b if b > 0 else math.inf
        if a < g * b * (1 - rtol) and first is None:
            first = l
    return ChainVerdict(first is None, first, ratios)


# ---------------------------------------------------------------- test fields

def synthetic_neck(rng: np.random.Generator, eps: float, T0: float, T1: float, N: int = 3,
                   lowest_weight: float = 1.0) -> BiharmonicField:
    """Biharmonic neck on [T0, T1]: each degree n carries a mode e^{n(t-T1)} entering
    from the outer end and e^{-n(t-T0)} from the inner end, with amplitude eps on
    the ends; degree 1 weighted by ``lowest_weight`` and higher degrees by 1/n^2."""
    fld = BiharmonicField(N=N)
    for n in range(1, N + 1):
        w = lowest_weight if n == 1 else 1.0 / n**2
        a, d = eps * w * rng.choice([-1.0, 1.0], 2) * rng.uniform(0.5, 1.0, 2)
        l_out, l_in = (int(v) for v in rng.integers(1, (n + 1) ** 2 + 1, 2))
        if l_in == l_out:
            fld.add(n, l_out, A=a * math.exp(-n * T1), D=d * math.exp(n * T0))
        else:
            fld.add(n, l_out, A=a * math.exp(-n * T1))
            fld.add(n, l_in, D=d * math.exp(n * T0))
    return fld
