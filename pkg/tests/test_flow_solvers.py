import numpy as np
import pytest

from vortexlab.bundle_metrics import (
    constant_metric,
    identity_metric,
    random_metric,
    scalar_metric,
)
from vortexlab.errors import NonConvergence, NonPositiveTau, ZeroSection
from vortexlab.flat_bundles import make_flat_bundle, make_flat_pair
from vortexlab.flow_solvers import (
    SolverConfig,
    bradlow_identity_gap,
    phi_norm_squared,
    phi_phi_star,
    solve_hermitian_einstein,
    solve_vortex,
    trivial_pair_solution,
    vortex_residual,
)
from vortexlab.torus_geometry import make_torus

JORDAN = np.array([[1.0, 1.0], [0.0, 1.0]])


@pytest.fixture
def t1():
    return make_torus(1, [[1.0]], 32)


@pytest.fixture
def trivial_pair(t1):
    return make_flat_pair([np.eye(1)], [1.0])


# --- phi phi^* -----------------------------------------------------------------


def test_phi_phi_star_trivial_line(t1, trivial_pair):
    h = scalar_metric(trivial_pair.bundle, t1, 3.0)
    pps = phi_phi_star(trivial_pair.phi, h)
    assert np.allclose(pps.values, 3.0)


def test_phi_phi_star_rank2_identity(t1):
    pair = make_flat_pair([np.eye(2)], [1.0, 0.0])
    h = identity_metric(pair.bundle, t1)
    pps = phi_phi_star(pair.phi, h)
    assert np.allclose(pps.values, np.diag([1.0, 0.0]))


def test_phi_phi_star_contract(t1):
    # h-self-adjoint, psd, rank <= 1, trace = |phi|_h^2
    pair = make_flat_pair([np.eye(2)], [1.0, 0.0])
    h = constant_metric(pair.bundle, t1, np.array([[2.0, 0.3], [0.3, 1.0]]))
    pps = phi_phi_star(pair.phi, h)
    assert pps.hermitian_residual(h) < 1e-12
    tr = np.trace(pps.values, axis1=-2, axis2=-1)
    assert np.allclose(tr, phi_norm_squared(pair.phi, h))
    assert np.linalg.matrix_rank(pps.values[0], tol=1e-10) <= 1
    evals = np.linalg.eigvalsh(
        h.H[0] @ pps.values[0] + (h.H[0] @ pps.values[0]).conj().T)
    assert evals.min() > -1e-12


def test_phi_phi_star_diag_metric(t1):
    pair = make_flat_pair([np.eye(2)], [1.0, 0.0])
    h = constant_metric(pair.bundle, t1, np.diag([4.0, 9.0]))
    pps = phi_phi_star(pair.phi, h)
    tr = np.trace(pps.values, axis1=-2, axis2=-1)
    assert np.allclose(tr, 4.0)
    assert np.linalg.matrix_rank(pps.values[0], tol=1e-10) == 1


def test_phi_phi_star_zero_section(t1, trivial_pair):
    h = identity_metric(trivial_pair.bundle, t1)

    class Zero:
        vector = np.zeros(1)

    with pytest.raises(ZeroSection):
        phi_phi_star(Zero(), h)


# --- vortex residual ------------------------------------------------------------


def test_vortex_residual_at_solution(t1, trivial_pair):
    h = scalar_metric(trivial_pair.bundle, t1, 2.0)
    V = vortex_residual(trivial_pair, h, 2.0, t1)
    assert V.sup_norm() < 1e-12


def test_vortex_residual_constant_offset(t1, trivial_pair):
    h = scalar_metric(trivial_pair.bundle, t1, 1.0)
    V = vortex_residual(trivial_pair, h, 2.0, t1)
    assert np.allclose(V.values, -0.5)


def test_vortex_residual_rank2(t1):
    pair = make_flat_pair([np.eye(2)], [1.0, 0.0])
    h = identity_metric(pair.bundle, t1)
    V = vortex_residual(pair, h, 0.0, t1)
    assert np.allclose(V.values, 0.5 * np.diag([1.0, 0.0]))


# --- trivial pair solution --------------------------------------------------------


def test_trivial_pair_solution_values():
    assert np.allclose(trivial_pair_solution(1.0, 3.0).H, 3.0)
    assert np.allclose(trivial_pair_solution(2.0, 2.0).H, 0.5)
    with pytest.raises(NonPositiveTau):
        trivial_pair_solution(1.0, -1.0)
    with pytest.raises(NonPositiveTau):
        trivial_pair_solution(1.0, 0.0)


# --- vortex flow -------------------------------------------------------------------


def test_solve_vortex_trivial_pair(t1, trivial_pair):
    h, diag = solve_vortex(trivial_pair, 2.0, t1)
    assert diag.converged
    assert diag.final_residual < 1e-8
    assert np.abs(h.H - 2.0).max() < 1e-6


def test_solve_vortex_far_start(t1, trivial_pair):
    h0 = scalar_metric(trivial_pair.bundle, t1, 100.0)
    h, diag = solve_vortex(trivial_pair, 2.0, t1, h0=h0)
    assert diag.converged
    assert np.abs(h.H - 2.0).max() < 1e-6


def test_solve_vortex_initialization_independence(t1, trivial_pair):
    h_a, _ = solve_vortex(trivial_pair, 2.0, t1)
    h0 = scalar_metric(trivial_pair.bundle, t1, 100.0)
    h_b, _ = solve_vortex(trivial_pair, 2.0, t1, h0=h0)
    assert np.abs(h_a.H - h_b.H).max() < 1e-6


def test_solve_vortex_jordan_pair_no_solution(t1):
    pair = make_flat_pair([JORDAN], [1.0, 0.0])
    with pytest.raises(NonConvergence) as exc:
        solve_vortex(pair, 2.0, t1)
    diag = exc.value.diagnostics
    assert diag.final_residual > 0.1  # positive residual floor
    assert not diag.converged


def test_solve_vortex_negative_tau_no_solution(t1, trivial_pair):
    with pytest.raises(NonConvergence) as exc:
        solve_vortex(trivial_pair, -2.0, t1)
    assert exc.value.diagnostics.final_residual > 0.5


def test_flow_determinism(t1, trivial_pair):
    _, d1 = solve_vortex(trivial_pair, 2.0, t1)
    _, d2 = solve_vortex(trivial_pair, 2.0, t1)
    assert d1.sup_trace == d2.sup_trace  # bit-identical reruns


def test_positivity_preserved_along_flow(t1):
    pair = make_flat_pair([JORDAN], [1.0, 0.0])
    cfg = SolverConfig(max_iters=300, stall_window=100)
    try:
        solve_vortex(pair, 2.0, t1, cfg=cfg)
    except NonConvergence as exc:
        assert exc.diagnostics.positivity_margin > 1e-12


# --- Bradlow integral identity ------------------------------------------------------


def test_bradlow_gap_at_solution(t1, trivial_pair):
    h = scalar_metric(trivial_pair.bundle, t1, 2.0)
    assert abs(bradlow_identity_gap(trivial_pair, h, 2.0, t1)) < 1e-10


def test_bradlow_gap_non_solution(t1, trivial_pair):
    h = scalar_metric(trivial_pair.bundle, t1, 1.0)
    gap = bradlow_identity_gap(trivial_pair, h, 2.0, t1)
    assert gap == pytest.approx(-0.5, abs=1e-10)


def test_bradlow_gap_rank2_nonzero(t1):
    pair = make_flat_pair([np.eye(2)], [1.0, 0.0])
    h = identity_metric(pair.bundle, t1)
    gap = bradlow_identity_gap(pair, h, 2.0, t1)
    assert gap == pytest.approx(0.5 - 2.0, abs=1e-9)


def test_trace_residual_integrates_to_bradlow_gap(t1):
    # quadrature identity at every iterate, converged or not
    pair = make_flat_pair([np.eye(2)], [1.0, 0.0])
    from vortexlab.flow_solvers import _integral_of_scalar

    h = random_metric(pair.bundle, t1, rng=3)
    for tau in (0.0, 2.0):
        V = vortex_residual(pair, h, tau, t1)
        trV = np.trace(V.values, axis1=-2, axis2=-1)
        lhs = _integral_of_scalar(t1, trV)
        rhs = bradlow_identity_gap(pair, h, tau, t1)
        assert abs(lhs - rhs) < 1e-9


# --- constant-curvature flow ----------------------------------------------------------


def test_solve_he_twisted_line(t1):
    b = make_flat_bundle([np.array([[2.0]])])
    h, diag, gamma = solve_hermitian_einstein(b, t1)
    assert diag.converged
    assert gamma == pytest.approx(0.0, abs=1e-10)
    assert diag.final_residual < 1e-8


def test_solve_he_diagonal(t1):
    b = make_flat_bundle([np.diag([2.0, 3.0])])
    # spatially varying diagonal start; the explicit spectral step needs
    # the diffusive CFL bound dt <= 4 / (g^-1 (pi N)^2), about 4e-4 at N=32
    x = t1.coordinates()[0]
    H0 = np.zeros((32, 2, 2), dtype=complex)
    H0[:, 0, 0] = np.exp(0.3 * np.sin(2 * np.pi * x))
    H0[:, 1, 1] = np.exp(0.2 * np.cos(2 * np.pi * x))
    from vortexlab.bundle_metrics import MetricField

    cfg = SolverConfig(dt=3e-4, max_iters=20000)
    h, diag, gamma = solve_hermitian_einstein(
        b, t1, cfg=cfg, h0=MetricField(b, t1, H0))
    assert diag.converged
    assert gamma == pytest.approx(0.0, abs=1e-10)


def test_solve_he_jordan_nonconvergent(t1):
    b = make_flat_bundle([JORDAN])
    cfg = SolverConfig(max_iters=3000)
    with pytest.raises(NonConvergence) as exc:
        solve_hermitian_einstein(b, t1, cfg=cfg)
    assert exc.value.diagnostics.final_residual > 10 * cfg.tol


def test_flow_equivariance_preserved(t1):
    # reconstructed flat-frame metric keeps h(x+1) = rho^* h(x) rho along
    # the flow (checked on a fixed flow segment, convergence not required)
    import scipy.linalg

    rng = np.random.default_rng(2)
    w = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    rho = scipy.linalg.expm(0.4 * (w - w.conj().T))
    b = make_flat_bundle([rho])
    h0 = random_metric(b, t1, rng=8)
    cfg = SolverConfig(dt=3e-4, max_iters=400, stall_window=400)
    try:
        h, _, _ = solve_hermitian_einstein(b, t1, cfg=cfg, h0=h0)
    except NonConvergence as exc:
        h = exc.diagnostics.last_metric
    x = t1.coordinates()[0]
    G0 = b.log_frame([x])
    G1 = b.log_frame([x + 1.0])
    f0 = np.conj(np.swapaxes(G0, -1, -2)) @ h.H @ G0
    f1 = np.conj(np.swapaxes(G1, -1, -2)) @ h.H @ G1
    expected = np.conj(rho).T[None] @ f0 @ rho[None]
    assert np.abs(f1 - expected).max() < 1e-10
