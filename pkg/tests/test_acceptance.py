"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed
even when output capture is on.
"""

import json
import math
import subprocess
import sys
import time

import mpmath
import numpy as np
import pytest

from necklab.approx_biharmonic import cascade_profile, decay_fit, neck_function, random_problem, solve_bvp, trichotomy_test
from necklab.decay_ode import (
    SHARP_COEFFICIENT,
    measured_forcing,
    monotone_chain_check,
    one_sided_bound,
    one_sided_forcing,
    synthetic_neck,
    two_sided_bound,
    verify_inequality,
    window_energy,
)
from necklab.neck_lab import noneck_report, removable_singularity_experiment, synth_family
from necklab.pohozaev import (
    VARIANTS,
    boundary_quantity_Q,
    bracket_scale,
    div_decompose,
    geodesic_circle_field,
    normalized_field,
    ode_residual,
    rotating_sphere_field,
)
from necklab.s3 import VOL_S3
from necklab.spectral_core import AnnulusChain, BiharmonicField, F_energy, MeanModeQuadruple, energy_profile, synthesize
from necklab.tgrid import ChebBands
from necklab.three_circle import G_matrix, certify_matrix, certify_theorem, falsify_inequality

from oracles import PolynomialField, annulus_points, chain_first_violation, direct_energy


@pytest.fixture
def verdict(capsys):
    def report(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail
    return report


def oracle_lambda_min(L, n):
    with mpmath.workdps(int(4 * n * L * 0.4343) + 80):
        G = mpmath.matrix(G_matrix(L, n, mpmath.mp))
        return min(mpmath.eigsy(G, eigvals_only=True))


def test_three_circle_certificate(verdict):
    t = time.perf_counter()
    cert = certify_theorem(L=3.0, n_switch=10_000)
    runtime = time.perf_counter() - t
    rng = np.random.default_rng(31)
    degrees = sorted({1, *rng.integers(2, 10_001, size=19).tolist()})
    unsound = [n for n in degrees if not oracle_lambda_min(3.0, n) >= certify_matrix(3.0, n).lambda_min_lower]
    ok = cert.certified and not cert.failures and cert.tail.certified and runtime < 60 and not unsound
    verdict("three-circle certificate", ok,
            f"status={cert.status} tail={cert.tail.certified} runtime={runtime:.1f}s "
            f"oracle checks={len(degrees)} unsound={unsound}")


def test_inequality_falsification(verdict):
    t = time.perf_counter()
    rep = falsify_inequality(L=3.0, n_max=32, samples=100_000, seed=0)
    runtime = time.perf_counter() - t
    ok = rep.passed and rep.max_ratio < math.exp(-3) and runtime < 120
    verdict("inequality falsification", ok,
            f"max ratio={rep.max_ratio:.6g} < e^-3={math.exp(-3):.6g} margin={rep.margin:.4g} runtime={runtime:.1f}s")


def test_quadratic_form_vs_quadrature(verdict):
    rng = np.random.default_rng(99)
    worst = 0.0
    for k in range(50):
        fld = BiharmonicField.random(rng, N=int(rng.integers(1, 9)), nmodes=5, mean=bool(k % 2))
        i, L = int(rng.integers(-1, 3)), float(rng.uniform(0.5, 3.0))
        ref = direct_energy(fld, i, L)
        worst = max(worst, abs(F_energy(fld, i, L) - ref) / abs(ref))
    verdict("quadratic form vs quadrature", worst < 1e-8, f"50 cases, worst relative error={worst:.3g}")


def _corpus(seed=2024, count=100):
    rng = np.random.default_rng(seed)
    for k in range(count):
        yield BiharmonicField.random(rng, int(rng.integers(1, 17)), nmodes=6,
                                     branches=["ABCD", "AC", "BD", "AB", "CD"][k % 5], mean=bool(k % 2))


BANDS = ChebBands.uniform(-1.0, 1.0, 4, 24)


def test_Q_conservation(verdict):
    drift = 0.0
    for fld in _corpus():
        cf = synthesize(fld, BANDS)
        Q = boundary_quantity_Q(cf)
        drift = max(drift, np.abs(Q - Q[0]).max() / bracket_scale(cf))
    log_err = 0.0
    for D0 in (0.3, -1.1, 2.5):
        Q = boundary_quantity_Q(synthesize(BiharmonicField(mean=MeanModeQuadruple(D0=D0)), BANDS))
        ref = -4 * D0**2 * VOL_S3
        log_err = max(log_err, np.abs(Q / ref - 1).max())
    rng = np.random.default_rng(5)
    left = 0.0
    for _ in range(10):
        fld = BiharmonicField.random(rng, 6, nmodes=6, branches="AC")
        fld.mean = MeanModeQuadruple(A0=float(rng.normal()), B0=float(rng.normal()))
        cf = synthesize(fld, np.linspace(-20, 0, 81))
        left = max(left, abs(boundary_quantity_Q(cf)[0]) / bracket_scale(cf))
    ok = drift < 1e-8 and log_err < 1e-8 and left < 1e-6
    verdict("Q conservation", ok, f"drift/scale={drift:.3g} log-mode rel err={log_err:.3g} |Q(-20)|/scale={left:.3g}")


def test_ode_identity(verdict):
    worst = 0.0
    for fld in _corpus():
        rep = ode_residual(synthesize(fld, BANDS), anchor="left")
        worst = max(worst, rep.max_residual / rep.scale)
    rng = np.random.default_rng(11)
    sphere = {"geodesic": geodesic_circle_field(BANDS), "rotating": rotating_sphere_field(BANDS),
              "normalized": normalized_field(BANDS, [BiharmonicField.random(rng, 2, nmodes=3) for _ in range(2)],
                                             amplitude=0.1, N=4)}
    per_variant = {}
    for variant in VARIANTS:
        r = 0.0
        for u in sphere.values():
            rep = ode_residual(u, variant, work=True, constraint_tol=1e-4)
            r = max(r, rep.max_residual / rep.scale)
        per_variant[variant] = r
    ok = worst < 1e-7 and max(per_variant.values()) < 1e-7
    verdict("ODE identity", ok, f"biharmonic corpus={worst:.3g} sphere-valued " +
            " ".join(f"{k}={v:.3g}" for k, v in per_variant.items()))


def test_trichotomy(verdict):
    rng = np.random.default_rng(7)
    held = 0
    for _ in range(200):
        pr = random_problem(rng, eta=1e-3, nann=12)
        held += trichotomy_test(neck_function(solve_bvp(pr)), pr.chain).all_hold
    rate_err = 0.0
    for _ in range(50):
        fit = decay_fit(cascade_profile(rng, 3.0))
        rate_err = max(rate_err, abs(fit.rate_left / 3 - 1), abs(fit.rate_right / 3 - 1))
    ok = held == 200 and rate_err < 0.05
    verdict("trichotomy", ok, f"clauses hold in {held}/200, worst cascade rate deviation={rate_err:.3%}")


def test_decay_machinery(verdict):
    T0, T1, eps = -24.0, 0.0, 0.1
    ratios, checks = [], True
    for seed in range(4):
        fld = synthetic_neck(np.random.default_rng(seed), eps, T0, T1)
        for t0 in (-16.0, -12.0, -8.0):
            d = min(T1 - t0, t0 - T0)
            c = window_energy(fld, t0, d, domain=(T0, T1))
            G = measured_forcing(fld, t0, c.s)
            cert = two_sided_bound(c, (T0, T1), forcing=G, eps=eps, coefficient=SHARP_COEFFICIENT)
            checks = checks and verify_inequality(c, forcing=G).passed and cert.passed and cert.F1 <= cert.bound
            ratios.append(cert.constants["C_prime"] / cert.constants["measured_ratio"])
        # one-sided bound with the boundary factor e^{4 - 2 T_top}
        t0 = -8.0
        c = window_energy(fld, t0, T1 - t0 - 1.0, domain=(T0, T1))
        one = one_sided_bound(c, K=1.0, forcing=one_sided_forcing(1.0, eps, t0), eps=eps, T_top=T1)
        checks = checks and one.passed and one.constants["C_boundary"] == pytest.approx(math.exp(4 - 2 * T1))
    rem = removable_singularity_experiment({})
    expo = rem.bound_exponent
    ok = checks and max(ratios) < 10 and expo is not None and 0.45 <= expo <= 0.55 and rem.passed
    verdict("decay machinery", ok, f"certificates ok={checks} max C'/measured={max(ratios):.3f} "
            f"fitted exponent={expo:.4f}")


def test_removable_monotonicity(verdict):
    rng = np.random.default_rng(17)
    smooth_fail = 0
    for _ in range(20):
        fld = BiharmonicField.random(rng, int(rng.integers(1, 6)), nmodes=5, branches="AC")
        L = float(rng.uniform(0.5, 3.0))
        smooth_fail += not monotone_chain_check(energy_profile(fld, AnnulusChain(L, 1, 14))).passed
    mismatched, cases = [], 0
    while cases < 20:
        n, B, L = int(rng.integers(1, 5)), float(10 ** rng.uniform(-12, -3)), float(rng.uniform(0.5, 1.5))
        pred = chain_first_violation(1.0, B, n, L, range(3, 30))
        if pred is None:
            continue
        cases += 1
        fld = BiharmonicField(N=n).add(n, 1, A=1.0, B=B)
        got = monotone_chain_check(energy_profile(fld, AnnulusChain(L, 1, 30))).first_violation
        if got != pred:
            mismatched.append((n, B, L, pred, got))
    ok = smooth_fail == 0 and not mismatched
    verdict("removable-singularity monotonicity", ok,
            f"smooth failures={smooth_fail}/20, singular index mismatches={len(mismatched)}/20 {mismatched}")


def test_neck_trends(verdict):
    t = time.perf_counter()
    rep = noneck_report(synth_family({}))
    runtime = time.perf_counter() - t
    tr = rep.trends(2, 1e-2)
    last = rep.rows[-1]
    ok = tr["oscillation"]["passed"] and tr["neck_energy"]["passed"] and runtime < 600
    verdict("neck trends", ok, f"i=8 oscillation={last['oscillation']:.3g} neck energy={last['neck_energy']:.3g} "
            f"runtime={runtime:.1f}s")


def test_divergence_decomposition(verdict):
    rng = np.random.default_rng(71)
    worst = 0.0
    for _ in range(100):
        X = PolynomialField.random(rng, degree=int(rng.integers(1, 5)))
        worst = max(worst, div_decompose(X, annulus_points(rng, 25))["residual"].max())
    verdict("divergence decomposition", worst < 1e-8, f"100 fields, worst residual={worst:.3g}")


CLI_RUNS = {
    "certify": ["--n-switch", "500"],
    "falsify": ["--samples", "5000", "--seed", "3"],
    "solve": ["--count", "3", "--seed", "2"],
    "pohozaev": ["--seed", "4"],
    "pohozaev-intrinsic": ["--variant", "intrinsic-hessian", "--test-field", "normalized", "--seed", "4"],
    "decay": ["--seed", "1"],
    "decay-one-sided": ["--seed", "1", "--one-sided"],
    "neck": ["--experiment", "removable"],
}


def _cli(command, args, out):
    proc = subprocess.run([sys.executable, "-m", "necklab.cli", command.split("-")[0], *args, "--out", str(out)],
                          capture_output=True)
    files = {p.name: p.read_bytes() for p in sorted(out.iterdir())} if out.exists() else {}
    return proc.returncode, proc.stdout, files


def test_cli_determinism(tmp_path, verdict):
    differ = []
    for name, args in CLI_RUNS.items():
        a = _cli(name, args, tmp_path / f"{name}-a")
        b = _cli(name, args, tmp_path / f"{name}-b")
        if a != b or a[0] == 2 or not a[2]:
            differ.append(name)
    cfg = tmp_path / "neck.json"
    cfg.write_text(json.dumps({"command": "neck", "experiment": "noneck", "family": {"indices": [3, 4, 5]}}))
    a = _cli("neck", ["--config", str(cfg)], tmp_path / "noneck-a")
    b = _cli("neck", ["--config", str(cfg)], tmp_path / "noneck-b")
    if a != b or a[0] == 2 or not a[2]:
        differ.append("neck-noneck")
    verdict("CLI determinism", not differ, f"{len(CLI_RUNS) + 1} runs compared, differing={differ}")
