"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines; every
tolerance is pinned here and matches the package documentation.
"""

import time

import numpy as np
import pytest
import scipy.linalg

from vortexlab import bundle_metrics, flow_solvers, product_space, stability
from vortexlab.errors import NonConvergence, NotFlatSection
from vortexlab.flat_bundles import make_flat_bundle, make_flat_pair
from vortexlab.flow_solvers import SolverConfig
from vortexlab.torus_geometry import (
    del_,
    delbar,
    integrate,
    make_torus,
    random_form,
)

JORDAN = np.array([[1.0, 1.0], [0.0, 1.0]])
JORDAN3 = np.eye(3) + np.diag([1.0, 1.0], k=1)


def _report(num, name, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {num} [{name}]: {tag} {detail}".rstrip())
    assert ok, f"criterion {num} ({name}) failed: {detail}"


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    # exclude one-time JIT compilation from the per-criterion stopwatches
    from vortexlab._kernels import eigmin_hermitian, expm_batch, flow_step

    a = np.eye(2, dtype=complex)[None]
    expm_batch(a)
    eigmin_hermitian(a)
    flow_step(a, a, 0.01)


# --- corpora -------------------------------------------------------------------


def _t2_bundle_corpus():
    """Commuting monodromy tuples on T^2, ranks 1..3, mixed structure."""
    u1 = scipy.linalg.expm(1j * 0.4 * np.array([[1.0, 0.3], [0.3, -0.5]]))
    u2 = scipy.linalg.expm(1j * 0.7 * np.array([[1.0, 0.3], [0.3, -0.5]]))
    return [
        ("rank1 scalars", [np.array([[2.0]]), np.array([[3.0]])]),
        ("rank1 unitary", [np.array([[np.exp(0.4j)]]),
                           np.array([[np.exp(-0.7j)]])]),
        ("rank2 jordan", [JORDAN, JORDAN @ JORDAN]),
        ("rank2 diagonal", [np.diag([2.0, 3.0]), np.diag([5.0, 7.0])]),
        ("rank2 unitary", [u1, u2]),
        ("rank3 jordan", [JORDAN3, JORDAN3 @ JORDAN3]),
    ]


def _pair_corpus():
    """Flat pairs on the unit T^1 for the solver/stability comparison.

    A rank-2 pair with cyclic phi would require a monodromy-fixed vector
    with full orbit; no such flat section exists on tori (the span of a
    fixed vector is already invariant), so that row is exercised as a
    construction-time rejection instead (see criterion 7).
    """
    return [
        ("trivial line", [np.eye(1)], [1.0]),
        ("scaled line", [np.eye(1)], [2.0]),
        ("rank2 jordan", [JORDAN], [1.0, 0.0]),
        ("rank2 identity", [np.eye(2)], [1.0, 0.0]),
        ("rank2 mixed diag", [np.diag([1.0, 2.0])], [1.0, 0.0]),
        ("rank3 identity", [np.eye(3)], [1.0, 0.0, 0.0]),
    ]


# --- criteria -------------------------------------------------------------------


def test_criterion_1_operator_calculus():
    start = time.perf_counter()
    worst = 0.0
    count = 0
    for n in (1, 2):
        torus = make_torus(n, np.eye(n), 32)
        bidegrees = [(k, l) for k in range(n + 1) for l in range(n + 1)]
        per_form = 50 // len(bidegrees) + 1
        for k, l in bidegrees:
            for i in range(per_form):
                if count >= 100:
                    break
                f = random_form(torus, k, l, band=5,
                                rng=1000 * n + 10 * k + l + i)
                count += 1
                if k + 2 <= n:
                    worst = max(worst, del_(del_(f)).sup_norm())
                if l + 2 <= n:
                    worst = max(worst, delbar(delbar(f)).sup_norm())
                if k + 1 <= n and l + 1 <= n:
                    anti = del_(delbar(f)) + delbar(del_(f))
                    worst = max(worst, anti.sup_norm())
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 10.0 and count == 100
    _report(1, "operator calculus", ok,
            f"sup residual {worst:.2e} on {count} forms in {elapsed:.1f}s")


def test_criterion_2_stokes_and_int_parts():
    start = time.perf_counter()
    worst_m = 0.0
    for n in (1, 2):
        torus = make_torus(n, np.eye(n), 32)
        for seed in range(5):
            chi = random_form(torus, n - 1, n, band=4, rng=seed)
            worst_m = max(worst_m, abs(integrate(del_(chi))))
    pg = product_space.make_projective_grid(16)
    torus = make_torus(1, [[1.0]], 32)
    geom = product_space.ProductGeometry(torus, pg)
    worst_int = 0.0
    worst_pt = 0.0
    for seed in range(10):
        f = product_space.random_product_form(geom, 1, 2, rng=seed)
        integral, pointwise = product_space.int_parts_check(f)
        worst_int = max(worst_int, integral)
        worst_pt = max(worst_pt, pointwise)
    elapsed = time.perf_counter() - start
    ok = (worst_m < 1e-10 and worst_int < 1e-8 and worst_pt < 1e-8
          and elapsed < 30.0)
    _report(2, "stokes / integration by parts", ok,
            f"M {worst_m:.2e}, X integral {worst_int:.2e}, "
            f"pointwise {worst_pt:.2e} in {elapsed:.1f}s")


def test_criterion_3_degree_vanishing():
    worst_deg = 0.0
    worst_gap = 0.0
    for gmat in (np.eye(2), np.diag([2.0, 1.0])):
        torus = make_torus(2, gmat, 32)
        for name, mats in _t2_bundle_corpus():
            bundle = make_flat_bundle(mats)
            degs = []
            for seed in (0, 1):
                h = bundle_metrics.random_metric(bundle, torus,
                                                 rng=seed)
                degs.append(bundle_metrics.degree(bundle, torus, h))
            worst_deg = max(worst_deg, max(abs(d) for d in degs))
            worst_gap = max(worst_gap, abs(degs[0] - degs[1]))
    ok = worst_deg < 1e-8 and worst_gap < 1e-8
    _report(3, "degree vanishing / well-definedness", ok,
            f"max |deg| {worst_deg:.2e}, metric gap {worst_gap:.2e}")


def test_criterion_4_chern_trace_identity():
    worst = 0.0
    for n, g in ((1, np.eye(1)), (2, np.eye(2))):
        torus = make_torus(n, g, 32)
        mats = [JORDAN] if n == 1 else [JORDAN, JORDAN @ JORDAN]
        bundle = make_flat_bundle(mats)
        for seed in range(3):
            h = bundle_metrics.random_metric(bundle, torus, rng=seed)
            worst = max(worst,
                        bundle_metrics.chern_trace_check(h, torus))
    ok = worst < 1e-8
    _report(4, "mean-curvature trace identity", ok,
            f"sup residual {worst:.2e}")


def test_criterion_5_degrees_on_X():
    start = time.perf_counter()
    torus = make_torus(1, [[1.0]], 32)
    pg = product_space.make_projective_grid(16)
    pair = make_flat_pair([JORDAN], [1.0, 0.0])
    setup = product_space.ReductionSetup(torus=torus, pgrid=pg, pair=pair,
                                         sigma=2 * np.pi)
    h = bundle_metrics.random_metric(pair.bundle, torus, rng=1)
    dV = product_space.degree_sigma("pullback_V", setup)
    dE = product_space.degree_sigma("pullback_E", setup, hE=h)
    dF = product_space.degree_sigma("F", setup, hE=h)
    elapsed = time.perf_counter() - start
    ok = (abs(dV - 4 * np.pi) < 1e-6 * 4 * np.pi
          and abs(dE) < 1e-8
          and abs(dF - 4 * np.pi) < 1e-6 * 4 * np.pi
          and abs(dF - dE - dV) < 1e-8
          and elapsed < 60.0)
    _report(5, "degrees on the product space", ok,
            f"q*TP1 {dV:.8f} (target {4 * np.pi:.8f}), p*E {dE:.2e}, "
            f"F {dF:.8f}, additivity {abs(dF - dE - dV):.2e} in {elapsed:.1f}s")


def test_criterion_6_trivial_pair_solutions():
    torus = make_torus(1, [[1.0]], 32)
    pair = make_flat_pair([np.eye(1)], [1.0])
    ok = True
    details = []
    for tau in (0.5, 2.0, 5.0):
        for h0_val in (1.0, 100.0):
            start = time.perf_counter()
            h0 = bundle_metrics.scalar_metric(pair.bundle, torus, h0_val)
            metric, diag = flow_solvers.solve_vortex(pair, tau, torus,
                                                     h0=h0)
            err = float(np.abs(metric.H - tau).max())
            gap = abs(flow_solvers.bradlow_identity_gap(pair, metric, tau,
                                                        torus))
            elapsed = time.perf_counter() - start
            case_ok = (diag.final_residual < 1e-8 and err < 1e-6
                       and gap < 1e-8 and elapsed < 30.0)
            ok = ok and case_ok
            details.append(f"tau={tau} h0={h0_val}: res "
                           f"{diag.final_residual:.1e} err {err:.1e}")
    _report(6, "explicit constant solutions", ok, "; ".join(details[:2]))


def test_criterion_7_solver_matches_polystability(tmp_path):
    from vortexlab.cli import main

    torus = make_torus(1, [[1.0]], 32)
    ok = True
    lines = []
    for name, mats, phi in _pair_corpus():
        pair = make_flat_pair(mats, phi)
        for tau in (2.0, -2.0):
            tau_hat = 0.5 * tau * torus.volume
            verdict = stability.is_tau_polystable(pair, tau_hat, torus)
            try:
                _, diag = flow_solvers.solve_vortex(
                    pair, tau, torus, cfg=SolverConfig(max_iters=4000))
                converged = True
                floor = diag.final_residual
            except NonConvergence as exc:
                converged = False
                floor = exc.diagnostics.final_residual
            match = converged == verdict.is_polystable
            if not converged and floor <= 0:
                match = False
            ok = ok and match
            lines.append(f"{name} tau={tau:+}: converged={converged} "
                         f"polystable={verdict.is_polystable} "
                         f"floor={floor:.2e}")

    # no flat pair with cyclic phi exists: construction must reject it
    with pytest.raises(NotFlatSection):
        make_flat_pair([JORDAN], [0.0, 1.0])

    # non-convergent runs exit with code 2 through the CLI
    config = """
[manifold]
n = 1
g = 1.0
N = 32

[bundle]
rho1 = 1+0i 1+0i ; 0+0i 1+0i
phi = 1+0i 0+0i

[run]
command = solve-vortex
tau = 2.0
max_iters = 4000
"""
    cfg_path = tmp_path / "jordan.cfg"
    cfg_path.write_text(config)
    code = main(["solve-vortex", "--config", str(cfg_path),
                 "--out", str(tmp_path / "out")])
    ok = ok and code == 2
    _report(7, "solvability matches pair polystability", ok,
            f"{len(lines)} runs, cli exit {code}; e.g. {lines[0]}")


def test_criterion_8_constant_curvature_iff_polystable():
    torus = make_torus(1, [[1.0]], 32)
    ok = True
    details = []
    for mats in ([np.array([[2.0]])], [np.diag([2.0, 3.0])]):
        bundle = make_flat_bundle(mats)
        metric, diag, gamma = flow_solvers.solve_hermitian_einstein(
            bundle, torus)
        case_ok = (diag.converged and abs(gamma) < 1e-12
                   and diag.final_residual < 1e-8)
        ok = ok and case_ok
        details.append(f"rank{bundle.rank}: res {diag.final_residual:.1e}")
    bundle = make_flat_bundle([JORDAN])
    cfg = SolverConfig()
    try:
        flow_solvers.solve_hermitian_einstein(bundle, torus, cfg=cfg)
        ok = False
        details.append("jordan unexpectedly converged")
    except NonConvergence as exc:
        floor = exc.diagnostics.final_residual
        ok = ok and floor > 10 * cfg.tol
        details.append(f"jordan floor {floor:.2e}")
    _report(8, "constant curvature iff polystable", ok, "; ".join(details))


def test_criterion_9_dimensional_reduction():
    start = time.perf_counter()
    torus = make_torus(1, [[1.0]], 32)
    pg = product_space.make_projective_grid(16)
    pair = make_flat_pair([np.eye(1)], [1.0])

    # one-time calibration of the FS-block scale at (tau=2, sigma=2pi)
    c_star = product_space.calibrate_fs_block_scale(tau=2.0)
    frozen = product_space.FS_BLOCK_SCALE_DEFAULT
    calibration_ok = abs(c_star - frozen) < 1e-6 * frozen

    sigma2, _ = product_space.sigma_from_tau(pair, 2.0, torus)
    setup2 = product_space.ReductionSetup(torus=torus, pgrid=pg, pair=pair,
                                          sigma=sigma2)
    h2, _ = flow_solvers.solve_vortex(pair, 2.0, torus)
    _, res2 = product_space.he_residual_on_X(
        product_space.induced_metric_on_F(h2, setup2), setup2)

    # tau = 5 with the re-derived sigma, no recalibration
    sigma5, _ = product_space.sigma_from_tau(pair, 5.0, torus)
    setup5 = product_space.ReductionSetup(torus=torus, pgrid=pg, pair=pair,
                                          sigma=sigma5)
    h5, _ = flow_solvers.solve_vortex(pair, 5.0, torus)
    _, res5 = product_space.he_residual_on_X(
        product_space.induced_metric_on_F(h5, setup5), setup5)

    # perturbation scan: residual decreases monotonically to the floor
    x = torus.coordinates()[0]
    scan = []
    for amp in (0.2, 0.1, 0.05):
        hp = bundle_metrics.scalar_metric(
            pair.bundle, torus, 2.0 * np.exp(amp * np.sin(2 * np.pi * x)))
        _, r = product_space.he_residual_on_X(
            product_space.induced_metric_on_F(hp, setup2), setup2)
        scan.append(r)
    monotone = scan[0] > scan[1] > scan[2] > res2
    elapsed = time.perf_counter() - start
    ok = (calibration_ok and res2 < 1e-4 and res5 < 1e-3 and monotone
          and elapsed < 300.0)
    _report(9, "dimensional reduction", ok,
            f"calibrated {c_star:.6f} (frozen {frozen:.6f}), "
            f"residuals tau=2 {res2:.2e}, tau=5 {res5:.2e}, "
            f"scan {['%.2e' % r for r in scan]} in {elapsed:.1f}s")


def test_criterion_10_round_trip_and_flatness():
    torus = make_torus(1, [[1.0]], 32)
    pg = product_space.make_projective_grid(16)
    worst_rt = 0.0
    worst_curv = 0.0
    for name, mats, phi in _pair_corpus():
        pair = make_flat_pair(mats, phi)
        setup = product_space.ReductionSetup(torus=torus, pgrid=pg,
                                             pair=pair, sigma=1.0)
        data = product_space.build_F(setup)
        recovered = product_space.extract_phi(data)
        worst_rt = max(worst_rt, float(np.abs(
            recovered.vector - pair.phi.vector).max()))
        worst_curv = max(worst_curv, product_space.partial_curvature(data))
    ok = worst_rt < 1e-12 and worst_curv < 1e-10
    _report(10, "correspondence round trip / flatness", ok,
            f"round trip {worst_rt:.2e}, curvature {worst_curv:.2e}")
