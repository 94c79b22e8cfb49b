"""Heat flows for the pair equation and the constant-mean-curvature equation.

Both flows are explicit exponential Euler steps

    H  <-  H exp(-2 dt V),

where V is the pointwise residual endomorphism.  Because V is h-self-adjoint
the update preserves Hermitian positivity exactly; the matrix exponentials
run through the batched kernels in :mod:`vortexlab._kernels`.

Stopping logic:

* converged: sup |V| <= tol;
* NonConvergence: residual stall (relative decrease below 1% over
  stall_window iterations), the iteration cap, or a collapsing positivity
  margin while the residual is not increasing (the degeneration signature
  of a non-existent solution);
* StepUnstable: the positivity margin collapses while the residual went up,
  which points at a too-large time step rather than non-existence.

With the default dt = 0.05 the scalar model linearization H -> H - tau dt H
is contractive for tau <= 10 at N = 32 (|1 - tau dt| < 1 needs dt < 2/tau);
this was checked once against the constant-solution case and is recorded
here rather than re-derived at runtime.
"""

from dataclasses import dataclass, field

import numpy as np

from ._kernels import eigmin_hermitian, flow_step
from .bundle_metrics import (
    EndField,
    MetricField,
    constant_metric,
    degree,
    identity_metric,
    mean_curvature,
)
from .errors import NonConvergence, NonPositiveTau, StepUnstable, ZeroSection
from .torus_geometry import FormField, form_power, integrate, metric_form, wedge

POSITIVITY_FLOOR = 1e-12


@dataclass
class SolverConfig:
    dt: float = 0.05
    max_iters: int = 20000
    tol: float = 1e-8
    stall_window: int = 2000
    checkpoint_every: int = 0  # 0 disables checkpoint callbacks

    def __post_init__(self):
        if self.dt <= 0 or self.tol <= 0 or self.max_iters < 1:
            raise ValueError("dt > 0, tol > 0 and max_iters >= 1 required")


@dataclass
class FlowDiagnostics:
    sup_trace: list = field(default_factory=list)
    l2_trace: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    final_residual: float = float("nan")
    stop_reason: str = ""
    positivity_margin: float = float("nan")
    last_metric: object = None  # metric at the stopping iterate

    def record(self, sup, l2):
        self.sup_trace.append(sup)
        self.l2_trace.append(l2)


def phi_phi_star(phi, h):
    """The endomorphism s -> phi h(s, phi), i.e. the matrix (phi phi^*) H.

    h-self-adjoint, positive semidefinite, rank <= 1, with pointwise trace
    equal to |phi|_h^2.
    """
    v = np.asarray(phi.vector, dtype=complex)
    if np.linalg.norm(v) == 0:
        raise ZeroSection("phi must be nonzero")
    outer = np.outer(v, np.conj(v))
    return EndField(values=outer @ h.H)


def phi_norm_squared(phi, h):
    """|phi|_h^2 as a grid scalar field."""
    v = np.asarray(phi.vector, dtype=complex)
    return np.real(np.einsum("a,...ab,b->...", np.conj(v), h.H, v))


def vortex_residual(pair, h, tau, torus):
    """V = K_h + (1/2) phi phi^* - (tau/2) id, pointwise."""
    K = mean_curvature(h, torus)
    pps = phi_phi_star(pair.phi, h)
    r = h.rank
    eye = np.eye(r, dtype=complex)
    return EndField(values=K.values + 0.5 * pps.values - 0.5 * tau * eye)


def _integral_of_scalar(torus, values):
    """Integral of a scalar field against omega^n / nu."""
    om_n = form_power(metric_form(torus), torus.n)
    f = FormField(torus, torus.n, torus.n,
                  np.asarray(values, dtype=complex)[None, None]
                  * om_n.coeffs)
    return integrate(f, torus).real


def bradlow_identity_gap(pair, h, tau, torus):
    """n deg(E) + (1/2) int |phi|_h^2 - (tau/2) rank vol(M).

    Vanishes exactly at solutions of the pair equation (integrate the trace
    against omega^n / nu and use the mean-curvature trace identity).
    """
    n = torus.n
    r = pair.bundle.rank
    deg = degree(pair.bundle, torus, h)
    phi_int = _integral_of_scalar(torus, phi_norm_squared(pair.phi, h))
    return n * deg + 0.5 * phi_int - 0.5 * tau * r * torus.volume


def trivial_pair_solution(phi_abs, tau):
    """Constant metric tau / |phi|^2 on the trivial line bundle.

    The pair is stable exactly when tau > 0, so non-positive tau is refused.
    """
    if tau <= 0:
        raise NonPositiveTau(f"trivial pair requires tau > 0, got {tau}")
    if phi_abs <= 0:
        raise ZeroSection("phi must be nonzero")
    from .flat_bundles import make_flat_bundle
    from .torus_geometry import make_torus

    bundle = make_flat_bundle([np.eye(1)])
    torus = make_torus(1, [[1.0]], 32)
    return constant_metric(bundle, torus, [[tau / phi_abs**2]])


def _run_flow(h, residual_fn, cfg, on_checkpoint=None):
    """Shared flow loop; residual_fn(h) -> EndField to be driven to zero."""
    diag = FlowDiagnostics()
    H = h.H.copy()
    metric = MetricField(h.bundle, h.torus, H)
    for it in range(cfg.max_iters):
        V = residual_fn(metric)
        sup = V.sup_norm()
        diag.record(sup, V.l2_norm())
        diag.iterations = it + 1
        diag.last_metric = metric
        margin = float(eigmin_hermitian(metric.H).min())
        diag.positivity_margin = margin

        if sup <= cfg.tol:
            diag.converged = True
            diag.final_residual = sup
            diag.stop_reason = "converged"
            return metric, diag

        if margin < POSITIVITY_FLOOR:
            diag.final_residual = sup
            window = diag.sup_trace[-min(len(diag.sup_trace), 50):]
            if sup <= window[0] * (1 + 1e-9):
                diag.stop_reason = "metric degenerated (positivity collapse)"
                raise NonConvergence(diag.stop_reason, diag)
            diag.stop_reason = "positivity collapse with rising residual"
            raise StepUnstable(diag.stop_reason, diag)

        if it >= cfg.stall_window:
            past = diag.sup_trace[it - cfg.stall_window]
            if past - sup < 0.01 * max(past, 1e-300):
                diag.final_residual = sup
                diag.stop_reason = (
                    f"residual stalled over {cfg.stall_window} iterations"
                )
                raise NonConvergence(diag.stop_reason, diag)

        metric = MetricField(h.bundle, h.torus,
                             flow_step(metric.H, V.values, cfg.dt))
        if on_checkpoint and cfg.checkpoint_every and (
            (it + 1) % cfg.checkpoint_every == 0
        ):
            on_checkpoint(it + 1, metric, diag)

    diag.final_residual = diag.sup_trace[-1]
    diag.last_metric = metric
    diag.stop_reason = f"iteration cap ({cfg.max_iters}) reached"
    raise NonConvergence(diag.stop_reason, diag)


def solve_vortex(pair, tau, torus, cfg=None, h0=None, on_checkpoint=None):
    """Flow H exp(-2 dt V) from h0 (identity by default) to a pair solution.

    Returns (metric, diagnostics); raises NonConvergence / StepUnstable with
    the diagnostics attached when no solution is reached.
    """
    cfg = cfg or SolverConfig()
    h = h0.copy() if h0 is not None else identity_metric(pair.bundle, torus)

    def residual(metric):
        return vortex_residual(pair, metric, tau, torus)

    return _run_flow(h, residual, cfg, on_checkpoint)


def hermitian_einstein_gamma(bundle, torus):
    """gamma = n mu_g(E) / vol(M), fixed a priori from the degree."""
    from .bundle_metrics import slope as _slope

    return torus.n * _slope(bundle, torus) / torus.volume


def solve_hermitian_einstein(bundle, torus, cfg=None, h0=None,
                             on_checkpoint=None):
    """Flow toward K_h = gamma id with gamma fixed from the degree."""
    cfg = cfg or SolverConfig()
    gamma = hermitian_einstein_gamma(bundle, torus)
    h = h0.copy() if h0 is not None else identity_metric(bundle, torus)
    eye = np.eye(bundle.rank, dtype=complex)

    def residual(metric):
        K = mean_curvature(metric, torus)
        return EndField(values=K.values - gamma * eye)

    metric, diag = _run_flow(h, residual, cfg, on_checkpoint)
    return metric, diag, gamma
