import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from necklab.s3 import VOL_S3, S3Grid, UnderResolvedError
from necklab.spectral_core import BiharmonicField, CylinderField, MeanModeQuadruple, sample, synthesize
from necklab.pohozaev import (
    VARIANTS,
    boundary_quantity_Q,
    bracket_scale,
    cylinder_bilaplacian,
    cylinder_laplacian,
    div_decompose,
    energy_bookkeeping,
    force_work,
    geodesic_circle_field,
    intrinsic_boundary_terms,
    normalized_field,
    ode_residual,
    psi_term,
    rotating_sphere_field,
    sphere_B,
    sphere_P,
    theta,
    theta_envelope,
)
from necklab.tgrid import ChebBands

from oracles import PolynomialField, annulus_points

BANDS = ChebBands.uniform(-1.0, 1.0, 4, 24)


def mode(n, **kw):
    return BiharmonicField().add(n, 1, **kw)


# ---------------------------------------------------------------- operators

def test_laplacian_examples():
    for fld in (BiharmonicField(mean=MeanModeQuadruple(A0=2.0)), mode(3, A=1.0), mode(2, B=0.5)):
        cf = synthesize(fld, BANDS)
        assert np.abs(cylinder_laplacian(cf).coeffs).max() < 1e-12
        assert np.abs(cylinder_bilaplacian(cf).coeffs).max() < 1e-10


def test_bilaplacian_of_r_cubed():
    # radial e^{3t}: ((D^2)^2 - 4 D^2) e^{3t} = 45 e^{3t}, times e^{-4t}
    t = BANDS.t
    jets = np.stack([3.0**k * np.exp(3 * t) for k in range(5)])[:, None, :, None] * math.sqrt(VOL_S3)
    from necklab.s3 import S3Basis

    cf = CylinderField(t, S3Basis(0), jets[0].copy(), BANDS, jets)
    got = cylinder_bilaplacian(cf).coeffs[0, :, 0] / math.sqrt(VOL_S3)
    assert np.allclose(got, 45 * np.exp(-t), rtol=1e-13)


def test_collocation_derivatives_agree_with_jets():
    rng = np.random.default_rng(3)
    cf = synthesize(BiharmonicField.random(rng, 3, nmodes=4), BANDS)
    bare = CylinderField(cf.t, cf.basis, cf.coeffs, BANDS)
    a = cylinder_laplacian(cf).coeffs
    b = cylinder_laplacian(bare).coeffs
    assert np.abs(a - b).max() < 1e-9 * np.abs(cf.coeffs).max()


def test_under_resolution_reported():
    from necklab.s3 import S3Basis

    t = np.linspace(0, 1, 5)
    cf = CylinderField(t, S3Basis(1), np.ones((1, 5, 5)))
    with pytest.raises(UnderResolvedError):
        cylinder_bilaplacian(cf)
    coarse = ChebBands.uniform(-1, 1, 1, 6)
    rough = synthesize(mode(6, C=1.0), coarse.t)
    rough = CylinderField(rough.t, rough.basis, rough.coeffs, coarse)
    with pytest.raises(UnderResolvedError):
        cylinder_bilaplacian(rough)


# ---------------------------------------------------------------- Q and Theta

def test_Q_constant_field_is_zero():
    cf = synthesize(BiharmonicField(mean=MeanModeQuadruple(A0=3.0)), BANDS)
    assert np.all(boundary_quantity_Q(cf) == 0)


def test_Q_log_mode():
    D0 = 0.7
    cf = synthesize(BiharmonicField(mean=MeanModeQuadruple(D0=D0)), BANDS)
    assert np.allclose(boundary_quantity_Q(cf), -4 * D0**2 * VOL_S3, rtol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["ABCD", "AC", "BD", "AB"]), st.booleans())
def test_Q_conserved_for_biharmonic_fields(seed, branches, mean):
    rng = np.random.default_rng(seed)
    fld = BiharmonicField.random(rng, 8, nmodes=6, branches=branches, mean=mean)
    cf = synthesize(fld, np.linspace(-1, 1, 41))
    Q = boundary_quantity_Q(cf)
    assert np.abs(Q - Q[0]).max() < 1e-12 * bracket_scale(cf)


def test_Q_vanishes_for_smooth_branches():
    rng = np.random.default_rng(5)
    fld = BiharmonicField.random(rng, 6, nmodes=6, branches="AC")
    fld.mean = MeanModeQuadruple(A0=1.0, B0=0.5)
    cf = synthesize(fld, np.linspace(-20, 0, 81))
    Q = boundary_quantity_Q(cf)
    scale = bracket_scale(cf)
    assert abs(Q[0]) < 1e-6 * scale and np.abs(Q).max() < 1e-12 * scale


def test_theta_radial_is_zero():
    cf = synthesize(BiharmonicField(mean=MeanModeQuadruple(A0=1, B0=2, D0=0.3)), BANDS)
    assert np.all(theta(cf) == 0)


@pytest.mark.parametrize("n", [1, 2, 5])
def test_theta_single_mode_closed_form(n):
    cf = synthesize(mode(n, A=1.0), BANDS)
    lam = n * (n + 2)
    ref = np.exp(2 * n * BANDS.t) * lam * (n**2 - lam / 2)
    assert np.allclose(theta(cf), ref, rtol=1e-13)


def test_theta_envelope_metric():
    t = np.linspace(0, 4, 9)
    vals = 0.3 * (np.exp(-(4 - t)) + np.exp(-t))
    assert theta_envelope(t, vals, 0.0, 4.0) == pytest.approx(0.3)


# ---------------------------------------------------------------- the ODE

def test_ode_residual_constant_field():
    cf = synthesize(BiharmonicField(mean=MeanModeQuadruple(A0=1.0)), BANDS)
    assert np.all(ode_residual(cf, anchor="origin").ode_residual == 0)


@pytest.mark.parametrize("seed", range(4))
def test_ode_residual_agrees_with_Q(seed):
    rng = np.random.default_rng(seed)
    cf = synthesize(BiharmonicField.random(rng, 5, nmodes=5, mean=True), BANDS)
    rep = ode_residual(cf, anchor="origin")
    # the radial ODE is half the conserved bracket
    assert np.allclose(rep.ode_residual, 0.5 * rep.Q, atol=1e-9 * rep.scale)
    left = ode_residual(cf)
    assert left.max_residual < 1e-9 * left.scale
    assert rep.Q_drift < 1e-12 * rep.scale


def test_ode_residual_smooth_field_origin_anchor():
    rng = np.random.default_rng(8)
    cf = synthesize(BiharmonicField.random(rng, 4, nmodes=4, branches="AC"), BANDS)
    rep = ode_residual(cf, anchor="origin")
    assert rep.max_residual < 1e-9 * rep.scale


def test_perturbed_field_residual_is_force_work():
    rng = np.random.default_rng(2)
    fld = BiharmonicField.random(rng, 2, nmodes=3, branches="AC", spread=0.2)
    cf = synthesize(fld, BANDS)
    # add a non-biharmonic piece t^2 e^{t} Y_{2,1}
    t = BANDS.t
    g = [t**2, 2 * t + t**2, 2 + 4 * t + t**2, 6 + 6 * t + t**2, 12 + 8 * t + t**2]
    jets = cf.jets.copy()
    j = cf.basis.index(2, 1)
    for k in range(5):
        jets[k, 0, :, j] += 0.3 * g[k] * np.exp(t)
    pert = cf.with_coeffs(jets[0].copy(), jets)
    rep = ode_residual(pert)
    assert rep.max_residual > 1e-4 * rep.scale
    # direct S^3 quadrature of (e^{4t} Lap^2 u) . u_t
    grid = S3Grid(6)
    op = cylinder_bilaplacian(pert).coeffs * np.exp(4 * t)[None, :, None]
    from necklab.spectral_core import _basis_values

    Y = _basis_values(pert.N, grid.q)
    W_direct = grid.integrate((op @ Y.T) * (jets[1] @ Y.T))[0]
    assert np.allclose(force_work(pert), W_direct, atol=1e-10 * np.abs(W_direct).max())
    acc = BANDS.cumulative_integral(W_direct)
    assert np.allclose(rep.ode_residual, acc, atol=1e-8 * rep.scale)
    assert ode_residual(pert, work=True).max_residual < 1e-8 * rep.scale


def test_energy_bookkeeping():
    rng = np.random.default_rng(4)
    fld = BiharmonicField.random(rng, 4, nmodes=5, branches="AC")
    cf = synthesize(fld, ChebBands.uniform(-3.0, 0.0, 6, 24))
    book = energy_bookkeeping(cf)
    assert abs(book["difference"]) < 1e-10 * abs(book["direct"])


def test_report_outputs(tmp_path):
    cf = synthesize(mode(2, A=1.0, D=0.5), BANDS)
    rep = ode_residual(cf)
    text = rep.to_csv()
    assert text.splitlines()[0] == "t,Q,Theta,ode_residual,variant"
    assert len(text.splitlines()) == BANDS.npts + 1
    paths = rep.write_plot_data(tmp_path)
    assert len(paths) == 4 and all(len(p.read_text().splitlines()) == BANDS.npts for p in paths)


# ---------------------------------------------------------------- intrinsic terms

def test_intrinsic_rejects_non_sphere_field():
    cf = synthesize(mode(1, A=1.0), BANDS)
    with pytest.raises(ValueError):
        theta(cf, "intrinsic-laplace")
    bad = CylinderField(cf.t, cf.basis, cf.coeffs, BANDS, cf.jets, unit_norm=True)
    with pytest.raises(ValueError):
        boundary_quantity_Q(bad, "intrinsic-hessian")
    with pytest.raises(ValueError):
        theta(cf, "bogus")


def test_geodesic_circle_symbolic():
    coeffs = (0.1, 0.4, -0.2, 0.05)
    u = geodesic_circle_field(BANDS, coeffs)
    p = np.polynomial.Polynomial(coeffs)
    s1, s2, s3 = (p.deriv(k)(BANDS.t) for k in (1, 2, 3))
    Q_ref = VOL_S3 * (2 * s1 * s3 - s2**2 - 3 * s1**4 - 4 * s1**2)
    assert np.allclose(boundary_quantity_Q(u), Q_ref, rtol=1e-12, atol=1e-12)
    for v in ("intrinsic-laplace", "intrinsic-hessian"):
        # B(u_t, u_t) = -(s')^2 u, tangential parts vanish
        assert np.allclose(psi_term(u, v), 1.5 * VOL_S3 * s1**4, rtol=1e-12)
        assert np.allclose(intrinsic_boundary_terms(u, v), 3 * VOL_S3 * s1**4, rtol=1e-12)
        assert np.allclose(theta(u, v), 0.0, atol=1e-14)


def test_constant_map_brackets_vanish():
    u = geodesic_circle_field(BANDS, (0.7,))
    for v in VARIANTS:
        assert np.allclose(boundary_quantity_Q(u, v), 0.0, atol=1e-15)
        assert np.allclose(intrinsic_boundary_terms(u, v) if v != "extrinsic" else 0.0, 0.0)


@pytest.mark.parametrize("variant", VARIANTS)
def test_intrinsic_identity_rotating_map(variant):
    u = rotating_sphere_field(BANDS)
    rep = ode_residual(u, variant, work=True)
    assert rep.max_residual < 1e-10 * rep.scale


@pytest.mark.parametrize("variant", VARIANTS)
def test_intrinsic_identity_normalized_map(variant):
    rng = np.random.default_rng(11)
    pert = [BiharmonicField.random(rng, 2, nmodes=3) for _ in range(2)]
    u = normalized_field(BANDS, pert, amplitude=0.1, N=4)
    rep = ode_residual(u, variant, work=True, constraint_tol=1e-4)
    assert rep.max_residual < 1e-10 * rep.scale


def test_hessian_bracket_differs_on_rank_two_maps():
    u = rotating_sphere_field(BANDS)
    a = intrinsic_boundary_terms(u, "intrinsic-laplace")
    b = intrinsic_boundary_terms(u, "intrinsic-hessian")
    assert np.abs(a - b).max() > 1e-3 * np.abs(a).max()


# ---------------------------------------------------------------- sphere geometry

def test_sphere_projection_and_form():
    rng = np.random.default_rng(0)
    for _ in range(20):
        y = rng.standard_normal(3)
        y /= np.linalg.norm(y)
        P = sphere_P(y)
        assert np.allclose(P @ y, 0, atol=1e-15)
        X, Y = P @ rng.standard_normal(3), P @ rng.standard_normal(3)
        B = sphere_B(y, X, Y)
        assert np.allclose(P @ B, 0, atol=1e-14)
        assert np.dot(B, y) == pytest.approx(-np.dot(X, Y), rel=1e-13)
    with pytest.raises(ValueError):
        sphere_P(np.array([2.0, 0, 0]))


def test_div_decompose_examples():
    x = annulus_points(np.random.default_rng(1), 30)
    d = div_decompose(lambda z: z, x)
    assert np.allclose(d["div"], 4.0)
    assert np.allclose(d["radial_derivative"], 1.0) and np.allclose(d["radial_term"], 3.0)
    assert np.allclose(d["sphere_divergence"], 0.0, atol=1e-13)
    e1 = lambda z: np.broadcast_to(np.array([1.0, 0, 0, 0]), z.shape).astype(z.dtype)
    assert div_decompose(e1, x)["residual"].max() < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_div_decompose_polynomial_fields(seed):
    rng = np.random.default_rng(seed)
    X = PolynomialField.random(rng, degree=3)
    x = annulus_points(rng, 25)
    d = div_decompose(X, x)
    exact = X.divergence(x)
    assert np.abs(d["div"] - exact).max() < 1e-10 * (1 + np.abs(exact).max())
    assert d["residual"].max() < 1e-8
