"""Approximately biharmonic functions on annulus chains.

Writing u = sum_k c_k(t) Y_k on the cylinder t = log|x|, the equation

    Delta^2 u = a1 d_r(Delta u) + a2 d_r^2 u + a3 d_r u + a4 u
                + mean_{S^3}(b1 d_r(Delta u) + b2 d_r^2 u + b3 d_r u + b4 u)

with a_j = alpha_j |x|^-j, b_j = beta_j |x|^-j becomes, per mode of eigenvalue lam,

    (D^4 - 2(lam+2) D^2 + lam^2) c = alpha1 X1 c + alpha2 X2 c + alpha3 X3 c + alpha4 c

with X1 = D^3 - (lam+4) D + 2 lam, X2 = D^2 - D, X3 = D, and the beta terms
acting on the spherical mean only.  Smallness reads |alpha_j| + |beta_j| <= eta.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import least_squares

from .s3 import VOL_S3, S3Basis, S3Grid
from .spectral_core import AnnulusChain, CylinderField, EnergyProfile, basis_values_and_gradients, _basis_values
from .tgrid import ChebBands, barycentric_matrix

__all__ = [
    "CoefficientTerm",
    "CoefficientField",
    "ApproxProblem",
    "SolverError",
    "TrichotomyVerdict",
    "DecayFit",
    "mean_project",
    "neck_function",
    "apply_operator",
    "verify_smallness",
    "solve_bvp",
    "band_energies",
    "energy_profile_of",
    "trichotomy_test",
    "estimate_eta_star",
    "decay_fit",
    "cascade_profile",
    "pointwise_decay_check",
    "poincare_constant",
    "interior_estimate_ratio",
    "random_problem",
    "biharmonic_interpolant",
    "trichotomy_from_values",
    "relative_residual",
]


class SolverError(RuntimeError):
    """Raised when the collocation system is too ill-conditioned to trust."""


# --------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class CoefficientTerm:
    """amp * cos(freq * t + phase), optionally times the coordinate y_axis of S^3."""

    amp: float
    freq: float = 0.0
    phase: float = 0.0
    axis: int | None = None

    def radial(self, t):
        return self.amp * np.cos(self.freq * np.asarray(t, float) + self.phase)

    def __call__(self, t, y=None):
        r = self.radial(t)
        if self.axis is None:
            return r if y is None else r[:, None] * np.ones(len(y))[None, :]
        if y is None:
            raise ValueError("angular coefficient needs sphere points")
        return r[:, None] * np.asarray(y)[None, :, self.axis]


@dataclass
class CoefficientField:
    """Scaled coefficients alpha_j = |x|^j a_j and beta_j = |x|^j b_j, j = 1..4.

    Each entry is a list of :class:`CoefficientTerm` or a callable. Callables
    take (t) for radial coefficients or (t, y) with y points on S^3 when
    ``radial`` is False.
    """

    alpha: list = field(default_factory=lambda: [[], [], [], []])
    beta: list = field(default_factory=lambda: [[], [], [], []])
    eta: float | None = None

    def __post_init__(self):
        if len(self.alpha) != 4 or len(self.beta) != 4:
            raise ValueError("need four alpha and four beta coefficients")

    @property
    def radial(self) -> bool:
        return not any(isinstance(term, CoefficientTerm) and term.axis is not None
                       for coef in (*self.alpha, *self.beta) if isinstance(coef, list) for term in coef) \
            and not any(getattr(coef, "angular", False) for coef in (*self.alpha, *self.beta))

    @property
    def is_zero(self) -> bool:
        return all(isinstance(c, list) and not c for c in (*self.alpha, *self.beta))

    @staticmethod
    def _eval(coef, t, y=None):
        t = np.asarray(t, float)
        if isinstance(coef, list):
            if not coef:
                return np.zeros(t.shape) if y is None else np.zeros((t.size, len(y)))
            return sum(term(t, y) for term in coef)
        return coef(t) if y is None else coef(t, y)

    def alpha_at(self, j: int, t, y=None):
        return self._eval(self.alpha[j - 1], t, y)

    def beta_at(self, j: int, t, y=None):
        return self._eval(self.beta[j - 1], t, y)

    @classmethod
    def from_physical(cls, a=None, b=None, eta=None) -> "CoefficientField":
        """Build from radial functions a_j(r), b_j(r) in the original variables."""
        def scaled(f, j):
            if f is None:
                return []
            return lambda t, _j=j, _f=f: np.exp(_j * np.asarray(t, float)) * _f(np.exp(np.asarray(t, float)))
        a = list(a or [None] * 4)
        b = list(b or [None] * 4)
        return cls([scaled(a[j], j + 1) for j in range(4)], [scaled(b[j], j + 1) for j in range(4)], eta)

    def to_dict(self) -> dict:
        def ser(coef):
            if not isinstance(coef, list):
                raise TypeError("only term-list coefficients serialize")
            return [{"amp": c.amp, "freq": c.freq, "phase": c.phase, "axis": c.axis} for c in coef]
        return {"alpha": [ser(c) for c in self.alpha], "beta": [ser(c) for c in self.beta], "eta": self.eta}

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientField":
        def de(lst):
            return [CoefficientTerm(float(c["amp"]), float(c.get("freq", 0)), float(c.get("phase", 0)), c.get("axis"))
                    for c in lst]
        return cls([de(c) for c in d.get("alpha", [[]] * 4)], [de(c) for c in d.get("beta", [[]] * 4)], d.get("eta"))

    @classmethod
    def random(cls, rng: np.random.Generator, eta: float, L: float, nterms: int = 2,
               use_beta: bool = True, angular: bool = False) -> "CoefficientField":
        """Random smooth coefficients with sum of amplitudes per j at most eta."""
        alpha, beta = [], []
        for _ in range(4):
            k = nterms * (2 if use_beta else 1)
            w = rng.random(k)
            w *= eta * rng.uniform(0.5, 1.0) / w.sum()
            terms = [CoefficientTerm(float(w[m] * rng.choice([-1, 1])), float(rng.uniform(0, 2 * math.pi / L)),
                                     float(rng.uniform(0, 2 * math.pi)),
                                     int(rng.integers(0, 4)) if angular and rng.random() < 0.5 else None)
                     for m in range(k)]
            alpha.append(terms[:nterms])
            beta.append(terms[nterms:] if use_beta else [])
        return cls(alpha, beta, eta)


def verify_smallness(coef: CoefficientField, eta: float, t=None, grid: S3Grid | None = None,
                     chain: AnnulusChain | None = None) -> tuple[bool, dict]:
    """sup of |x|^j (|a_j| + |b_j|) over sample points against eta."""
    if t is None:
        if chain is None:
            raise ValueError("need sample points t or a chain")
        t = chain.bands(32).t
    t = np.asarray(t, float)
    y = None if coef.radial else (grid or S3Grid(6)).points
    worst = {"value": 0.0, "j": None, "t": None}
    for j in range(1, 5):
        v = np.abs(coef.alpha_at(j, t, y)) + np.abs(coef.beta_at(j, t, y))
        k = int(np.argmax(v))
        if v.flat[k] > worst["value"]:
            idx = np.unravel_index(k, v.shape)
            worst = {"value": float(v.flat[k]), "j": j, "t": float(t[idx[0]]), "r": float(math.exp(t[idx[0]]))}
    ok = worst["value"] <= eta * (1 + 8 * np.finfo(float).eps)
    worst["margin"] = eta - worst["value"]
    return ok, worst


# --------------------------------------------------------------------------
# problems


@dataclass
class ApproxProblem:
    """Clamped boundary-value problem on an annulus chain.

    ``boundary`` has shape (4, K, M): value and t-derivative at the left end
    (t = -l_hi L), then at the right end (t = -(l_lo - 1) L), per component
    and basis coefficient of degree <= N.
    """

    chain: AnnulusChain
    coefficients: CoefficientField
    boundary: np.ndarray
    N: int
    p: int = 32

    def __post_init__(self):
        self.boundary = np.asarray(self.boundary, float)
        if len(self.chain) < 3:
            raise ValueError("chain needs at least 3 annuli for an interior index")
        M = S3Basis(self.N).size
        if self.boundary.ndim != 3 or self.boundary.shape[0] != 4 or self.boundary.shape[2] != M:
            raise ValueError(f"boundary must have shape (4, K, {M})")
        if np.any(self.boundary[:, :, 0] != 0):
            raise ValueError("boundary data must have zero spherical mean")

    @property
    def K(self) -> int:
        return self.boundary.shape[1]

    @property
    def bands(self) -> ChebBands:
        return self.chain.bands(self.p)

    def to_json(self) -> str:
        return json.dumps({
            "L": self.chain.L, "l_lo": self.chain.l_lo, "l_hi": self.chain.l_hi, "N": self.N, "p": self.p,
            "coefficients": self.coefficients.to_dict(), "boundary": self.boundary.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "ApproxProblem":
        d = json.loads(text)
        return cls(AnnulusChain(float(d["L"]), int(d["l_lo"]), int(d["l_hi"])),
                   CoefficientField.from_dict(d.get("coefficients", {})),
                   np.asarray(d["boundary"], float), int(d["N"]), int(d.get("p", 32)))


def random_problem(rng: np.random.Generator, eta: float = 1e-3, L: float = 3.0, nann: int = 12, N: int = 3,
                   K: int = 1, angular: bool = False, p: int = 32, l_lo: int = 1) -> ApproxProblem:
    chain = AnnulusChain(L, l_lo, l_lo + nann - 1)
    M = S3Basis(N).size
    bd = rng.standard_normal((4, K, M))
    bd[:, :, 0] = 0.0
    return ApproxProblem(chain, CoefficientField.random(rng, eta, L, angular=angular), bd, N, p)


# --------------------------------------------------------------------------
# mode-space operators


def _first_kind(p: int) -> np.ndarray:
    m = p - 3
    return -np.cos(np.pi * (2 * np.arange(m) + 1) / (2 * m))


def _X_ops(Dp: list, lam: float) -> list:
    I = Dp[0]
    return [Dp[3] - (lam + 4) * Dp[1] + 2 * lam * I, Dp[2] - Dp[1], Dp[1], I]


def _L0(Dp: list, lam: float) -> np.ndarray:
    return Dp[4] - 2 * (lam + 2) * Dp[2] + lam**2 * Dp[0]


def mean_project(u: CylinderField) -> np.ndarray:
    """Spherical average u*(t) per component, shape (K, Nt)."""
    return u.mean_profile()


def neck_function(u: CylinderField) -> CylinderField:
    """w = u - u*, i.e. u with its degree-0 coefficient removed."""
    c = u.coeffs.copy()
    c[:, :, 0] = 0.0
    jets = None
    if u.jets is not None:
        jets = u.jets.copy()
        jets[:, :, :, 0] = 0.0
    return u.with_coeffs(c, jets)


def _mode_derivs(u: CylinderField, order: int = 4) -> list:
    return [u.dt(k) for k in range(order + 1)]


def apply_operator(problem_or_coef, u: CylinderField) -> CylinderField:
    """Residual Delta^2 u - (local terms) - (spherical-mean terms), in mode space.

    The returned coefficients are those of the residual in the original
    variables (weight e^{-4t} included).
    """
    coef = problem_or_coef.coefficients if isinstance(problem_or_coef, ApproxProblem) else problem_or_coef
    d = _mode_derivs(u)
    lam = u.basis.eigenvalues[None, None, :]
    L0 = d[4] - 2 * (lam + 2) * d[2] + lam**2 * d[0]
    X = [d[3] - (lam + 4) * d[1] + 2 * lam * d[0], d[2] - d[1], d[1], d[0]]
    rhs = np.zeros_like(L0)
    t = u.t
    if coef.radial:
        for j in range(1, 5):
            a = coef.alpha_at(j, t)[None, :, None]
            rhs += a * X[j - 1]
            b = coef.beta_at(j, t)
            rhs[:, :, 0] += b[None, :] * X[j - 1][:, :, 0]
    else:
        q = u.N + 2
        grid = S3Grid(q)
        grid.check_resolves(u.N + 1)
        Y = _basis_values(u.N, q)
        Yw = Y * grid.weights[:, None]
        y = grid.points
        for j in range(1, 5):
            a = coef.alpha_at(j, t, y)  # (Nt, P)
            b = coef.beta_at(j, t, y)
            Xg = X[j - 1] @ Y.T  # (K, Nt, P)
            rhs += (a[None] * Xg) @ Yw
            rhs[:, :, 0] += (b[None] * Xg) @ grid.weights / math.sqrt(VOL_S3)
    res = (L0 - rhs) * np.exp(-4 * t)[None, :, None]
    return u.with_coeffs(res)


# --------------------------------------------------------------------------
# collocation solver


@dataclass
class _BandOps:
    Dp: list
    P: np.ndarray
    y: np.ndarray


def _band_ops(bands: ChebBands) -> list:
    xs = _first_kind(bands.p)
    out = []
    for b in range(bands.nbands):
        D = bands.band_D(b)
        Dp = [np.eye(bands.p + 1)]
        for _ in range(4):
            Dp.append(Dp[-1] @ D)
        e0, e1 = bands.edges[b], bands.edges[b + 1]
        y = 0.5 * (e0 + e1) + 0.5 * (e1 - e0) * xs
        P = barycentric_matrix(bands.t[bands.band_slice(b)], y)
        out.append(_BandOps([P @ Dk for Dk in Dp], P, y))
    return out


def _envelope(bands: ChebBands, n: int, data: np.ndarray) -> np.ndarray:
    """Per-node magnitude of the slowest branches entering from each end."""
    T0, T1 = bands.edges[0], bands.edges[-1]
    left = np.abs(data[:2]).max(initial=0.0)
    right = np.abs(data[2:]).max(initial=0.0)
    rate = max(n, 1)
    env = right * np.exp(rate * (bands.t - T1)) + left * np.exp(-rate * (bands.t - T0))
    return np.maximum(env, 1e-300)


def _assemble_scalar(bands, ops, lam, alphas, sigma):
    """Collocation matrix for one mode with radial coefficients; column k scaled by sigma[k]."""
    pp = bands.p + 1
    B = bands.nbands
    n = B * pp
    A = np.zeros((n, n))
    row = 0
    for b, op in enumerate(ops):
        X = _X_ops(op.Dp, lam)
        blk = _L0(op.Dp, lam)
        for j in range(4):
            blk = blk - alphas[j][b][:, None] * X[j]
        A[row:row + blk.shape[0], b * pp:(b + 1) * pp] = blk * sigma[bands.band_slice(b)]
        row += blk.shape[0]
    _continuity_rows(A, row, 0, bands, sigma)
    return A


def _continuity_rows(A, row, off, bands, sigma):
    """C^3 matching at interfaces, then clamped rows at both ends, for the block at column ``off``."""
    pp = bands.p + 1
    B = bands.nbands
    I = np.eye(pp)
    for b in range(B - 1):
        Pa, Pb = I, I
        for _ in range(4):
            A[row, off + b * pp:off + (b + 1) * pp] = Pa[-1] * sigma[bands.band_slice(b)]
            A[row, off + (b + 1) * pp:off + (b + 2) * pp] = -Pb[0] * sigma[bands.band_slice(b + 1)]
            row += 1
            Pa, Pb = Pa @ bands.band_D(b), Pb @ bands.band_D(b + 1)
    end = off + (B - 1) * pp
    first, last = sigma[bands.band_slice(0)], sigma[bands.band_slice(B - 1)]
    A[row, off:off + pp] = I[0] * first
    A[row + 1, off:off + pp] = bands.band_D(0)[0] * first
    A[row + 2, end:end + pp] = I[-1] * last
    A[row + 3, end:end + pp] = bands.band_D(B - 1)[-1] * last
    return row + 4


def _solve(A, rhs, cond_limit):
    scale = np.abs(A).max(axis=1)
    scale[scale == 0] = 1.0
    As = A / scale[:, None]
    cond = float(np.linalg.cond(As, 1)) if As.shape[0] <= 4000 else None
    if cond is not None and (not np.isfinite(cond) or cond > cond_limit):
        raise SolverError(f"collocation system ill-conditioned (1-norm condition estimate {cond:.3e})")
    lu = lu_factor(As)
    return lu_solve(lu, rhs / scale[:, None]), cond


def _branch_jets(n: int, T0: float, T1: float, t, order: int) -> np.ndarray:
    """Kernel basis of the degree-n radial operator, each branch normalized at the end it
    grows towards; shape (order+1, len(t), 4)."""
    t = np.asarray(t, float)
    out = np.empty((order + 1, t.size, 4))
    if n == 0:
        span = T1 - T0
        for k in range(order + 1):
            out[k, :, 0] = 1.0 if k == 0 else 0.0
            out[k, :, 1] = 2.0**k * np.exp(2 * (t - T1))
            out[k, :, 2] = (-2.0) ** k * np.exp(-2 * (t - T0))
            out[k, :, 3] = ((t - T0) / span) if k == 0 else (1 / span if k == 1 else 0.0)
        return out
    rates = ((n, T1), (-(n + 2), T0), (n + 2, T1), (-n, T0))
    for j, (e, Tr) in enumerate(rates):
        base = np.exp(e * (t - Tr))
        for k in range(order + 1):
            out[k, :, j] = float(e) ** k * base
    return out


def biharmonic_interpolant(n: int, T0: float, T1: float, data: np.ndarray) -> np.ndarray:
    """Coefficients in the normalized kernel basis matching clamped data (4, R)."""
    Phi0 = _branch_jets(n, T0, T1, [T0], 1)[:, 0]
    Phi1 = _branch_jets(n, T0, T1, [T1], 1)[:, 0]
    Phi = np.vstack([Phi0, Phi1])
    return np.linalg.solve(Phi, np.asarray(data, float).reshape(4, -1))


def _kernel_part(n, bands, ops, data):
    """u0 on the nodes and X_j u0 at the collocation points of each band."""
    T0, T1 = bands.edges[0], bands.edges[-1]
    c = biharmonic_interpolant(n, T0, T1, data)
    u0 = _branch_jets(n, T0, T1, bands.t, 0)[0] @ c
    lam = n * (n + 2.0)
    Xu = []
    for op in ops:
        J = _branch_jets(n, T0, T1, op.y, 3) @ c  # (4, ny, R)
        Xu.append([J[3] - (lam + 4) * J[1] + 2 * lam * J[0], J[2] - J[1], J[1], J[0]])
    return u0, Xu


def solve_bvp(problem: ApproxProblem, cond_limit: float = 1e13, return_info: bool = False, path: str = "auto"):
    """Collocation solve of the clamped problem; returns a :class:`CylinderField`.

    The solution is split as u = u0 + delta with u0 the exact biharmonic
    interpolant of the boundary data, so only the perturbation is
    discretized.  Radial coefficients decouple the modes and each degree is
    one 4th-order two-point problem; angular coefficients couple all modes
    of degree <= N through Galerkin products computed by quadrature.
    ``path`` forces "radial" or "galerkin"; "auto" picks by the coefficients.
    """
    if path not in ("auto", "radial", "galerkin"):
        raise ValueError(f"unknown path {path!r}")
    bands = problem.bands
    ops = _band_ops(bands)
    basis = S3Basis(problem.N)
    K, M = problem.K, basis.size
    nt = bands.npts
    nrow = bands.p - 3
    coef = problem.coefficients
    bd = problem.boundary
    radial = coef.radial if path == "auto" else path == "radial"
    if radial and not coef.radial:
        raise ValueError("angular coefficients need the galerkin path")
    info = {"cond": {}, "path": "radial" if radial else "galerkin"}
    out = np.zeros((K, nt, M))
    if radial:
        for n in range(problem.N + 1):
            cols = [basis.index(n, s) for s in range(1, (n + 1) ** 2 + 1)]
            data = bd[:, :, cols].reshape(4, -1)
            if not np.any(data):
                continue
            u0, Xu = _kernel_part(n, bands, ops, data)
            if n == 0:
                alphas = [[coef.alpha_at(j, op.y) + coef.beta_at(j, op.y) for op in ops] for j in range(1, 5)]
            else:
                alphas = [[coef.alpha_at(j, op.y) for op in ops] for j in range(1, 5)]
            rhs = np.zeros((nt, data.shape[1]))
            for b in range(bands.nbands):
                rhs[b * nrow:(b + 1) * nrow] = sum(alphas[j][b][:, None] * Xu[b][j] for j in range(4))
            sol = u0
            if np.any(rhs):
                sigma = _envelope(bands, n, data)
                A = _assemble_scalar(bands, ops, n * (n + 2.0), alphas, sigma)
                v, cond = _solve(A, rhs, cond_limit)
                info["cond"][n] = cond
                sol = u0 + v * sigma[:, None]
            out[:, :, cols] = np.transpose(sol.reshape(nt, K, len(cols)), (1, 0, 2))
    else:
        out, cond = _solve_galerkin(problem, bands, ops, basis, cond_limit)
        info["cond"]["all"] = cond
    cf = CylinderField(bands.t, basis, out, bands)
    return (cf, info) if return_info else cf


def _solve_galerkin(problem, bands, ops, basis, cond_limit):
    coef = problem.coefficients
    N, M, K = problem.N, basis.size, problem.K
    pp, B = bands.p + 1, bands.nbands
    nt = bands.npts
    nrow = pp - 4
    q = N + 2
    grid = S3Grid(q)
    grid.check_resolves(N + 1)
    Y = _basis_values(N, q)
    Yw = Y * grid.weights[:, None]
    y = grid.points
    lam = basis.eigenvalues
    bd = problem.boundary
    top = np.abs(bd).max(axis=(1, 2))[:, None]
    # modes without data are still driven through the coupling; scale them like the largest data
    sig = np.stack([_envelope(bands, int(basis.degrees[k]), bd[:, :, k] if np.any(bd[:, :, k]) else top)
                    for k in range(M)])
    kern = [_kernel_part(int(basis.degrees[k]), bands, ops, bd[:, :, k]) for k in range(M)]
    u0 = np.stack([kern[k][0] for k in range(M)])  # (M, nt, K)
    A = np.zeros((M * nt, M * nt))
    rhs = np.zeros((M * nt, K))
    for b, op in enumerate(ops):
        W = []
        for j in range(1, 5):
            Wj = np.einsum("sg,gp,gq->spq", coef.alpha_at(j, op.y, y), Yw, Y)
            Wj[:, 0, :] += (coef.beta_at(j, op.y, y) * grid.weights) @ Y / math.sqrt(VOL_S3)
            W.append(Wj)
        for pidx in range(M):
            r0 = pidx * nt + b * nrow
            for qidx in range(M):
                Xq = _X_ops(op.Dp, lam[qidx])
                blk = _L0(op.Dp, lam[qidx]) if pidx == qidx else np.zeros((nrow, pp))
                for j in range(4):
                    w = W[j][:, pidx, qidx]
                    if np.any(w):
                        blk = blk - w[:, None] * Xq[j]
                        rhs[r0:r0 + nrow] += w[:, None] * kern[qidx][1][b][j]
                c0 = qidx * nt + b * pp
                A[r0:r0 + nrow, c0:c0 + pp] = blk * sig[qidx, bands.band_slice(b)]
    for k in range(M):
        _continuity_rows(A, k * nt + B * nrow, k * nt, bands, sig[k])
    out = np.transpose(u0, (2, 1, 0)).copy()
    cond = None
    if np.any(rhs):
        v, cond = _solve(A, rhs, cond_limit)
        for k in range(M):
            out[:, :, k] += (v[k * nt:(k + 1) * nt] * sig[k][:, None]).T
    return out, cond


# --------------------------------------------------------------------------
# energies and the trichotomy


def band_energies(u: CylinderField, chain: AnnulusChain) -> dict:
    """F_i = int dt int_{S^3} |u|^2 per annulus, using bands aligned with the chain."""
    bands = u.bands
    if bands is None or bands.nbands != len(chain) or not np.allclose(bands.edges, chain.bands(bands.p).edges):
        raise ValueError("field bands must coincide with the annuli of the chain")
    density = np.sum(u.coeffs**2, axis=(0, 2))
    out = {}
    for b in range(bands.nbands):
        s = bands.band_slice(b)
        w = bands.weights[s]
        out[chain.l_hi - b] = float(density[s] @ w)
    return out


def energy_profile_of(u: CylinderField, chain: AnnulusChain) -> EnergyProfile:
    return EnergyProfile(chain, band_energies(u, chain))


@dataclass
class TrichotomyVerdict:
    L: float
    rows: list

    @property
    def all_hold(self) -> bool:
        return all(r["clause_a"] and r["clause_b"] and r["clause_c"] for r in self.rows)

    @property
    def clause_c_everywhere(self) -> bool:
        return all(r["clause_c"] for r in self.rows)

    @property
    def counts(self) -> dict:
        return {k: sum(bool(r[k]) for r in self.rows) for k in ("clause_a", "clause_b", "clause_c")}

    def to_csv(self) -> str:
        lines = ["i,F_i,clause_a,clause_b,clause_c,ratio_prev,ratio_next,margin_c"]
        for r in self.rows:
            lines.append(f"{r['i']},{r['F']:.17g},{int(r['clause_a'])},{int(r['clause_b'])},{int(r['clause_c'])},"
                         f"{r['ratio_prev']:.17g},{r['ratio_next']:.17g},{r['margin_c']:.17g}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"L": self.L, "interior": len(self.rows), "all_hold": self.all_hold, **self.counts,
                "min_margin_c": min((r["margin_c"] for r in self.rows), default=None)}


def trichotomy_from_values(F: dict, L: float) -> TrichotomyVerdict:
    """Clauses (a), (b), (c) at every interior index of an energy sequence."""
    thr = math.exp(-L)
    idx = sorted(F)
    rows = []
    for i in idx[1:-1]:
        Fm, F0, Fp = F[i - 1], F[i], F[i + 1]
        # i - 1 is the outer annulus, i + 1 the inner one
        dec_in = Fp <= thr * F0
        dec_out = Fm <= thr * F0
        c = F0 <= thr * Fm or F0 <= thr * Fp
        a = (not dec_in) or F0 <= thr * Fm
        b = (not dec_out) or F0 <= thr * Fp
        rp = F0 / Fm if Fm > 0 else (0.0 if F0 == 0 else math.inf)
        rn = F0 / Fp if Fp > 0 else (0.0 if F0 == 0 else math.inf)
        rows.append({"i": i, "F_prev": Fm, "F": F0, "F_next": Fp, "clause_a": a, "clause_b": b, "clause_c": c,
                     "ratio_prev": rp, "ratio_next": rn, "margin_c": thr - min(rp, rn)})
    return TrichotomyVerdict(float(L), rows)


def trichotomy_test(w: CylinderField, chain: AnnulusChain, L: float | None = None) -> TrichotomyVerdict:
    L = chain.L if L is None else L
    return trichotomy_from_values(band_energies(w, chain), L)


def estimate_eta_star(L: float = 3.0, nann: int = 12, N: int = 3, trials: int = 8, lo: float = 1e-4,
                      hi: float = 10.0, steps: int = 8, seed: int = 0) -> dict:
    """Empirical largest eta without a Monte Carlo counterexample to the trichotomy.

    Bisection in log(eta).  This is an estimate from finitely many random
    instances, not a bound.
    """
    def survives(eta, k):
        rng = np.random.default_rng([seed, k])
        for _ in range(trials):
            pr = random_problem(rng, eta=eta, L=L, nann=nann, N=N)
            try:
                w = neck_function(solve_bvp(pr))
            except (SolverError, np.linalg.LinAlgError):
                return False
            if not trichotomy_test(w, pr.chain).all_hold:
                return False
        return True

    tested = []
    if not survives(lo, 0):
        return {"eta_star": 0.0, "tested": [(lo, False)], "estimate": True}
    tested.append((lo, True))
    if survives(hi, 1):
        return {"eta_star": hi, "tested": tested + [(hi, True)], "estimate": True}
    tested.append((hi, False))
    a, b = math.log(lo), math.log(hi)
    for k in range(steps):
        mid = 0.5 * (a + b)
        ok = survives(math.exp(mid), k + 2)
        tested.append((math.exp(mid), ok))
        a, b = (mid, b) if ok else (a, mid)
    return {"eta_star": math.exp(a), "tested": tested, "estimate": True}


# --------------------------------------------------------------------------
# decay envelopes


@dataclass
class DecayFit:
    C: float
    rate_left: float
    rate_right: float
    max_residual: float
    C_at_L: float
    decaying: bool
    L: float

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def _two_sided_fit(l, v, L):
    l = np.asarray(l, float)
    v = np.asarray(v, float)
    l0, li = l[0], l[-1]
    if not np.any(v > 0):
        return DecayFit(0.0, L, L, 0.0, 0.0, True, L)
    floor = v[v > 0].min() * 1e-12
    lv = np.log(np.maximum(v, floor))

    def env(a, b):
        return np.logaddexp(-a * (l - l0), -b * (li - l))

    def resid(x):
        return np.logaddexp(x[0] - x[2] * (l - l0), x[1] - x[3] * (li - l)) - lv

    top = lv.max()
    best = None
    for x0 in ((lv[0], lv[-1], L, L), (top, top, 0.1 * L, 0.1 * L), (lv[0], lv[-1], 3 * L, 3 * L)):
        r = least_squares(resid, x0, bounds=([-np.inf, -np.inf, 0, 0], [np.inf, np.inf, 50 * L, 50 * L]))
        if best is None or r.cost < best.cost:
            best = r
    a, b = best.x[2], best.x[3]
    C = float(np.exp(np.max(lv - env(a, b))))
    C_L = float(np.exp(np.max(lv - env(L, L))))
    return DecayFit(C, float(a), float(b), float(np.max(np.abs(best.fun))), C_L,
                    bool(min(a, b) >= 0.1 * L), float(L))


def decay_fit(profile: EnergyProfile) -> DecayFit:
    """Least-squares fit of log F_l to log(C_0 e^{-a(l-l0)} + C_1 e^{-b(l1-l)}).

    ``C`` is the smallest constant with F_l <= C (e^{-a(l-l0)} + e^{-b(l1-l)})
    at the fitted rates; ``C_at_L`` the same with both rates equal to L.
    """
    idx, vals = profile.as_arrays()
    if idx.size < 5:
        raise ValueError("decay fit needs at least 5 annuli")
    return _two_sided_fit(idx, vals, profile.chain.L)


def cascade_profile(rng: np.random.Generator, L: float, nann: int = 12, slack: float = 0.02,
                    balance: float | None = None) -> EnergyProfile:
    """Two-sided saturated cascade: the sum of an outer and an inner sequence, each step of
    which shrinks by s e^{-L} with s drawn from [e^{-slack L}, 1]."""
    chain = AnnulusChain(L, 1, nann)
    lo = math.exp(-slack * L)
    left = [1.0]
    right = [1.0]
    for _ in range(nann - 1):
        left.append(left[-1] * math.exp(-L) * rng.uniform(lo, 1.0))
        right.append(right[-1] * math.exp(-L) * rng.uniform(lo, 1.0))
    w = rng.uniform(0.1, 10.0) if balance is None else balance
    F = {l: left[l - 1] + w * right[nann - l] for l in chain.indices}
    return EnergyProfile(chain, F)


def _cyl_radial_derivative(u: CylinderField, p: int) -> np.ndarray:
    if p == 0:
        return u.coeffs
    d = [u.dt(k) for k in range(p + 1)]
    if p == 1:
        return d[1]
    if p == 2:
        return d[2] - d[1]
    if p == 3:
        return d[3] - 3 * d[2] + 2 * d[1]
    raise ValueError("p must be in 0..3")


def pointwise_decay_check(u: CylinderField, chain: AnnulusChain, p: int = 0, q: int = 1,
                          grid: S3Grid | None = None) -> dict:
    """Per-annulus sup of |x|^p |d_r^p grad^q u| and a two-sided exponential fit.

    q = 1 is the tangential gradient; q = 2 uses |Laplacian_S3 u| and q = 3
    |grad Laplacian_S3 u| as the higher tangential quantities.
    """
    if not (q >= 1 and p + q <= 3):
        raise ValueError("need q >= 1 and p + q <= 3")
    c = _cyl_radial_derivative(u, p)
    lam = u.basis.eigenvalues
    if q >= 2:
        c = -c * lam[None, None, :]
    grid = grid or S3Grid(u.N + 3)
    if q == 2:
        vals = np.abs(c @ _basis_values(u.N, grid.q).T)
        mag = np.sqrt(np.sum(vals**2, axis=0))
    else:
        _, G = basis_values_and_gradients(u.N, grid.q)
        g = np.einsum("ktm,dpm->ktdp", c, G)
        mag = np.sqrt(np.sum(g**2, axis=(0, 2)))
    bands = u.bands
    sup = {}
    for b in range(bands.nbands):
        sup[chain.l_hi - b] = float(mag[bands.band_slice(b)].max())
    idx = np.array(sorted(sup))
    v = np.array([sup[i] for i in idx])
    fit = _two_sided_fit(idx, v, chain.L) if idx.size >= 5 and np.any(v > 0) else None
    return {"p": p, "q": q, "sup": sup, "fit": None if fit is None else fit.to_dict(),
            "half_rate": chain.L / 2}


def poincare_constant(u: CylinderField, chain: AnnulusChain) -> dict:
    """Per annulus int |w|^2 / int (|u_t|^2 + |grad_S3 u|^2) on the cylinder."""
    c = u.coeffs
    ct = u.dt(1)
    lam = u.basis.eigenvalues
    w2 = np.sum(c[:, :, 1:] ** 2, axis=(0, 2))
    e = np.sum(ct**2, axis=(0, 2)) + np.sum(c**2 * lam[None, None, :], axis=(0, 2))
    out = {}
    bands = u.bands
    for b in range(bands.nbands):
        s = bands.band_slice(b)
        den = float(e[s] @ bands.weights[s])
        out[chain.l_hi - b] = float(w2[s] @ bands.weights[s]) / den if den > 0 else 0.0
    return {"ratios": out, "C": max(out.values())}


def interior_estimate_ratio(u: CylinderField, chain: AnnulusChain, i: int) -> float:
    """Discrete W^{4,2} norm on annulus i over the L^2 norm on annuli i-1, i, i+1."""
    bands = u.bands
    lam = u.basis.eigenvalues
    b = chain.l_hi - i
    if not 1 <= b <= bands.nbands - 2:
        raise ValueError("annulus must have both neighbours in the chain")
    s = bands.band_slice(b)
    w = bands.weights[s]
    num = 0.0
    for j in range(5):
        d = u.dt(j)[:, s, :]
        num += float(np.sum(d**2 * (1 + lam[None, None, :]) ** (4 - j), axis=(0, 2)) @ w)
    den = 0.0
    for bb in (b - 1, b, b + 1):
        s2 = bands.band_slice(bb)
        den += float(np.sum(u.coeffs[:, s2, :] ** 2, axis=(0, 2)) @ bands.weights[s2])
    return math.sqrt(num / den)


def relative_residual(problem_or_coef, u: CylinderField) -> float:
    """Max over bands of |cylinder residual| / |D^4 u| with everything in cylinder scaling."""
    r = apply_operator(problem_or_coef, u).coeffs * np.exp(4 * u.t)[None, :, None]
    d4 = u.dt(4)
    lam = u.basis.eigenvalues[None, None, :]
    ref = np.abs(d4) + 2 * (lam + 2) * np.abs(u.dt(2)) + lam**2 * np.abs(u.coeffs)
    worst = 0.0
    for b in range(u.bands.nbands):
        s = u.bands.band_slice(b)
        den = ref[:, s].max()
        if den > 0:
            worst = max(worst, float(np.abs(r[:, s]).max() / den))
    return worst
