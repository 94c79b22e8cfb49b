"""Hermitian metrics on flat bundles: connection form, curvature, degree.

Metrics are stored in the periodic log frame (see flat_bundles), where the
flat structure contributes the constant connection term Lambda = sum L_i dx^i.
In a local flat frame the connection form is h^{-1} del h; transported to the
log frame this becomes

    theta_i = (1/2) H^{-1} (d_i H + L_i^* H),
    R_ij    = -(1/2) d_j theta_i + (1/2) (L_j theta_i - theta_i L_j),

with all coordinate derivatives trigonometric-spectral.  The commuting-log
identity kills the Lambda-quadratic terms, so these are exact, and frame
covariance back to flat frames is checked in the tests rather than assumed.

log det h splits into the periodic part log det H plus a term linear in x
coming from the monodromy twist; the linear part is annihilated by del delbar
and is dropped exactly in the first Chern form.
"""

from dataclasses import dataclass, field

import numpy as np

from ._kernels import eigmin_hermitian
from .errors import SingularMetric, WrongDegree, ZeroRank
from .torus_geometry import (
    AffineTorus,
    FormField,
    form_power,
    index_sets,
    integrate,
    metric_form,
    spectral_derivative,
    wedge,
    zero_form,
)

HERMITIAN_TOL = 1e-12
POSITIVITY_MARGIN = 1e-10


@dataclass
class MetricField:
    """Positive Hermitian metric in the log frame: H indexed (grid..., r, r)."""

    bundle: object
    torus: AffineTorus
    H: np.ndarray

    @property
    def rank(self):
        return self.H.shape[-1]

    def copy(self):
        return MetricField(self.bundle, self.torus, self.H.copy())

    def validate(self):
        if np.abs(self.H - _adjoint(self.H)).max() > HERMITIAN_TOL * max(
            1.0, np.abs(self.H).max()
        ):
            raise SingularMetric("metric field is not Hermitian")
        margin = float(eigmin_hermitian(self.H).min())
        if margin <= 0:
            raise SingularMetric(
                f"metric field loses positivity (min eigenvalue {margin:.3e})"
            )
        return margin

    def flat_frame(self):
        """Reconstruct h(x) = G(x)^* H(x) G(x) on the grid."""
        G = self.bundle.log_frame(self.torus.coordinates())
        return _adjoint(G) @ self.H @ G


@dataclass
class EndField:
    """Section of End E in the log frame: values indexed (grid..., r, r)."""

    values: np.ndarray

    def sup_norm(self):
        return float(np.abs(self.values).max())

    def l2_norm(self):
        return float(np.sqrt(np.mean(np.abs(self.values) ** 2)))

    def hermitian_residual(self, h):
        """sup |HK - (HK)^*|: h-self-adjointness of this endomorphism."""
        hk = h.H @ self.values
        return float(np.abs(hk - _adjoint(hk)).max())


def _adjoint(a):
    return np.conj(np.swapaxes(a, -1, -2))


@dataclass
class EndForm:
    """End-valued (k,l)-form; coeffs indexed (I, J, grid..., r, r)."""

    torus: AffineTorus
    k: int
    l: int
    coeffs: np.ndarray

    def trace(self):
        tr = np.trace(self.coeffs, axis1=-2, axis2=-1)
        return FormField(self.torus, self.k, self.l, tr)

    def sup_norm(self):
        return float(np.abs(self.coeffs).max())


def identity_metric(bundle, torus):
    H = np.broadcast_to(
        np.eye(bundle.rank, dtype=complex),
        torus.grid_shape + (bundle.rank, bundle.rank),
    ).copy()
    return MetricField(bundle, torus, H)


def constant_metric(bundle, torus, H0):
    H0 = np.asarray(H0, dtype=complex)
    H = np.broadcast_to(H0, torus.grid_shape + H0.shape).copy()
    return MetricField(bundle, torus, H)


def scalar_metric(bundle, torus, values):
    """Line-bundle metric from a positive scalar grid function."""
    vals = np.broadcast_to(np.asarray(values, dtype=complex), torus.grid_shape)
    return MetricField(bundle, torus, vals[..., None, None].copy())


def random_metric(bundle, torus, band=1, amplitude=0.3, rng=None):
    """Random band-limited positive metric, H = exp(A) with A Hermitian.

    The default band keeps exp(A) and its inverse resolved at N = 32, so the
    spectral identities hold at their stated 1e-8 .. 1e-9 tolerances; larger
    bands alias through the nonlinear compositions.
    """
    rng = np.random.default_rng(rng)
    r = bundle.rank
    xs = torus.coordinates()
    A = np.zeros(torus.grid_shape + (r, r), dtype=complex)
    for _ in range(3):
        ks = rng.integers(-band, band + 1, size=torus.n)
        mat = rng.standard_normal((r, r)) + 1j * rng.standard_normal((r, r))
        phase = sum(kk * x for kk, x in zip(ks, xs))
        wave = np.exp(2j * np.pi * phase)
        A += amplitude * (wave[..., None, None] * mat)
    A = 0.5 * (A + _adjoint(A))
    from ._kernels import expm_batch

    return MetricField(bundle, torus, expm_batch(A))


def _metric_derivative(h, i):
    return spectral_derivative(h.H, i, h.torus.N)


def ext_connection_form(h):
    """theta as an End-valued (1,0)-form in the log frame."""
    n = h.torus.n
    margin = float(eigmin_hermitian(h.H).min())
    if margin <= 0:
        raise SingularMetric(
            f"metric not positive at some grid point (min eig {margin:.3e})"
        )
    Hinv = np.linalg.inv(h.H)
    r = h.rank
    coeffs = np.zeros((n, 1) + h.torus.grid_shape + (r, r), dtype=complex)
    for i in range(n):
        dH = _metric_derivative(h, i)
        Lstar = np.conj(h.bundle.logs[i]).T
        coeffs[i, 0] = 0.5 * (Hinv @ (dH + Lstar @ h.H))
    return EndForm(h.torus, 1, 0, coeffs)


def ext_curvature(h):
    """R = delbar theta with the log-frame connection correction."""
    theta = ext_connection_form(h)
    n = h.torus.n
    r = h.rank
    coeffs = np.zeros((n, n) + h.torus.grid_shape + (r, r), dtype=complex)
    for i in range(n):
        for j in range(n):
            dtheta = spectral_derivative(theta.coeffs[i, 0], j, h.torus.N)
            Lj = h.bundle.logs[j]
            comm = Lj @ theta.coeffs[i, 0] - theta.coeffs[i, 0] @ Lj
            coeffs[i, j] = -0.5 * dtheta + 0.5 * comm
    return EndForm(h.torus, 1, 1, coeffs)


def mean_curvature(h, torus=None):
    """K = tr_g R, pointwise inverse-metric contraction of the curvature."""
    torus = torus or h.torus
    R = ext_curvature(h)
    r = h.rank
    K = np.zeros(torus.grid_shape + (r, r), dtype=complex)
    for i in range(torus.n):
        for j in range(torus.n):
            K += torus.g_inv[i, j] * R.coeffs[i, j]
    return EndField(values=K)


def log_det_H(h):
    sign, logdet = np.linalg.slogdet(h.H)
    if np.any(sign.real <= 0.5):
        raise SingularMetric("det H must stay positive")
    return logdet


def first_chern(h):
    """c1(E,h) = -del delbar log det h, using the periodic part only.

    The monodromy twist adds a term linear in x to log det h whose second
    derivatives vanish identically, so differentiating log det H is exact.
    """
    torus = h.torus
    ld = log_det_H(h).astype(complex)
    out = zero_form(torus, 1, 1)
    for i in range(torus.n):
        d_i = spectral_derivative(ld, i, torus.N)
        for j in range(torus.n):
            out.coeffs[i, j] = -0.25 * spectral_derivative(d_i, j, torus.N)
    return out


def degree(bundle, torus, h=None):
    """deg_g(E) = integral of c1(E,h) ^ omega^{n-1} / nu (h-independent)."""
    if h is None:
        h = identity_metric(bundle, torus)
    c1 = first_chern(h)
    om_pow = form_power(metric_form(torus), torus.n - 1)
    val = integrate(wedge(c1, om_pow), torus)
    if abs(val.imag) > 1e-9 * max(1.0, abs(val.real)):
        raise WrongDegree(f"degree came out non-real: {val!r}")
    return float(val.real)


def slope(bundle, torus, h=None):
    if bundle.rank == 0:
        raise ZeroRank("slope of a rank-zero bundle")
    return degree(bundle, torus, h) / bundle.rank


def chern_trace_check(h, torus=None):
    """sup-norm residual of (tr K) omega^n = n c1 ^ omega^{n-1}."""
    torus = torus or h.torus
    K = mean_curvature(h, torus)
    trK = np.trace(K.values, axis1=-2, axis2=-1)
    om_n = form_power(metric_form(torus), torus.n)
    lhs = FormField(torus, torus.n, torus.n, trK[None, None] * om_n.coeffs)
    om_pow = form_power(metric_form(torus), torus.n - 1)
    rhs = torus.n * wedge(first_chern(h), om_pow)
    return (lhs - rhs).sup_norm()
