import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from necklab.spectral_core import BiharmonicField, MeanModeQuadruple, assemble_M
from necklab.three_circle import (
    G_matrix,
    block_dominance,
    certify_matrix,
    certify_tail,
    certify_theorem,
    falsify_inequality,
    minimal_certified_L,
    mode_ratio,
    paper_lambda_bound,
    paper_m_bound,
    paper_mu_bound,
    ratio_supremum,
    smallest_eigenvalue_2x2,
)


def oracle_lambda_min(L, n):
    digits = int(4 * n * L * 0.4343) + 80
    with mpmath.workdps(digits):
        G = mpmath.matrix(G_matrix(L, n, mpmath.mp))
        return min(mpmath.eigsy(G, eigvals_only=True))


def test_G_entries_match_M_combination():
    L, n = 1.3, 3
    G = np.array([[float(v) for v in row] for row in G_matrix(L, n, mpmath.mp)])
    M = {k: assemble_M(k, L, n).as_array() for k in (-1, 0, 1)}
    ref = math.exp(-L) * (M[-1] + M[1]) - 2 * M[0]
    assert np.allclose(G, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


def test_block_B_matches_closed_form():
    L = 3.0
    G = G_matrix(L, 4, mpmath.mp)
    assert float(G[0][2]) == pytest.approx(2 * L * (math.exp(-L) - 1), rel=1e-14)
    b12 = -0.5 * (math.exp(-2 * L) - 1) * (math.exp(-3 * L) + math.exp(L) - 2)
    b21 = 0.5 * (math.exp(2 * L) - 1) * (math.exp(L) + math.exp(-3 * L) - 2)
    assert float(G[0][3]) == pytest.approx(b12, rel=1e-14)
    assert float(G[1][2]) == pytest.approx(b21, rel=1e-14)


def test_certify_small_degrees():
    assert certify_matrix(3.0, 1).certified
    for n in range(2, 101):
        assert certify_matrix(3.0, n).certified, n


@pytest.mark.parametrize("n", [1, 7, 50, 300])
def test_lower_bound_is_sound(n):
    cert = certify_matrix(3.0, n)
    lo = oracle_lambda_min(3.0, n)
    assert lo >= cert.lambda_min_lower
    # not vacuous: within a factor 4 (Frobenius vs spectral norm on 4x4)
    assert cert.lambda_min_lower >= lo / 4


def test_small_gap_is_rejected():
    cert = certify_matrix(0.5, 1)
    assert cert.status == "NotPositiveDefinite"
    assert "pivot" in cert.diagnostics


@pytest.mark.parametrize("n", [1, 3, 8])
def test_verdict_independent_of_anchor(n):
    for L in (1.0, 3.0):
        base = certify_matrix(L, n).status
        for i in range(-2, 3):
            assert certify_matrix(L, n, i=i).status == base


def test_certificate_json_fields():
    d = certify_matrix(3.0, 5000).to_dict()
    assert {"L", "n_range", "status", "lambda_min_lower", "method", "precision_bits"} <= set(d)
    assert isinstance(d["lambda_min_lower"], str)
    assert d["log10_lambda_min_lower"] > 1000


def test_smallest_eigenvalue_2x2_examples():
    assert smallest_eigenvalue_2x2(1, 0, 1) == 1
    assert smallest_eigenvalue_2x2(2, 0, 3) == 2


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 10), st.floats(-3, 3), st.floats(0.01, 10))
def test_smallest_eigenvalue_2x2_quadratic(a, b, c):
    if a * c - b * b <= 1e-6:
        return
    disc = math.sqrt((a + c) ** 2 - 4 * (a * c - b * b))
    root = ((a + c) - disc) / 2
    assert smallest_eigenvalue_2x2(a, b, c) == pytest.approx(root, rel=1e-10, abs=1e-12)


def test_paper_bounds_examples():
    assert paper_m_bound(3.0) == pytest.approx(0.5 * math.exp(9), rel=1e-15)
    assert paper_lambda_bound(2, 3.0) == pytest.approx(math.exp(21) / 432, rel=1e-15)
    assert paper_mu_bound(2, 3.0) == pytest.approx(math.exp(9) / 216, rel=1e-15)
    with pytest.raises(ValueError):
        paper_lambda_bound(1, 3.0)


@pytest.mark.parametrize("n", list(range(2, 65, 3)))
def test_block_bounds_hold(n):
    d = block_dominance(3.0, n)
    assert d["ordered"] and d["lambda_bound_ok"] and d["mu_bound_ok"] and d["m_bound_ok"]


def test_certify_tail():
    assert certify_tail(3.0, 2).certified
    rep = certify_tail(0.1, 2)
    assert not rep.within_validity_domain and not rep.certified
    import time

    t = time.perf_counter()
    assert certify_tail(3.0, 1000).certified
    assert time.perf_counter() - t < 1.0
    with pytest.raises(ValueError):
        certify_tail(3.0, 1)


def test_certify_theorem_small_switch():
    cert = certify_theorem(3.0, n_switch=200)
    assert cert.certified and not cert.failures and not cert.dominance_failures
    with pytest.raises(ValueError):
        certify_theorem(3.0, n_switch=0)


def test_certify_theorem_switch_one():
    # tail then starts at n = 2, matrix branch covers n = 1
    cert = certify_theorem(3.0, n_switch=1)
    assert cert.certified and cert.tail.n_threshold == 2


def test_minimal_L_grid():
    res = minimal_certified_L(n_max=64)
    assert res["verdicts"][3.0]["certified"]
    L_min = res["minimal_L"]
    assert L_min is not None and L_min <= 3.0
    # every grid value below the minimum fails, consistent with the exact supremum
    sups = {L: max(ratio_supremum(L, 64)) for L in res["verdicts"]}
    for L, v in res["verdicts"].items():
        assert v["certified"] == (sups[L] < math.exp(-L))


def test_mode_ratio_single_mode():
    fld = BiharmonicField().add(1, 1, A=1.0)
    assert mode_ratio(fld, 3.0) == pytest.approx(2 / (math.exp(6) + math.exp(-6)), rel=1e-14)
    assert mode_ratio(fld, 3.0) == pytest.approx(4.957e-3, abs=1e-6)


def test_falsify_small():
    rep = falsify_inequality(3.0, n_max=8, samples=5000, seed=1)
    assert rep.passed and rep.margin > 0
    rep2 = falsify_inequality(2.0, n_max=4, samples=5000, seed=1)
    assert not rep2.passed
    with pytest.raises(ValueError):
        falsify_inequality(3.0, mean=(1.0, 0, 0, 0))


def test_falsify_deterministic():
    a = falsify_inequality(3.0, n_max=6, samples=3000, seed=4).max_ratio
    b = falsify_inequality(3.0, n_max=6, samples=3000, seed=4).max_ratio
    assert a == b


def test_monte_carlo_never_exceeds_supremum():
    rep = falsify_inequality(3.0, n_max=6, samples=20000, seed=2)
    assert rep.max_ratio <= max(rep.sup_by_degree) * (1 + 1e-9)
