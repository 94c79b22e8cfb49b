"""Flat tori with constant metrics and the two-sided (k,l)-form calculus.

The base manifold is T^n = R^n / Z^n (n = 1 or 2) with affine coordinates
x^i in [0,1), a constant symmetric positive-definite metric g, and parallel
volume form nu = nu_coeff * dx^1 ^ ... ^ dx^n.  A (k,l)-form has two
separately antisymmetric index groups; coefficients are stored on strictly
increasing multi-indices only, so antisymmetry is exact by construction and
all sign bookkeeping goes through :func:`merge_sign` exactly once.

Conventions (these fix every sign in the package):

* del_ adds a first-group leg with a 1/2 factor: (del f)_{iI,J} is the
  antisymmetrization of (1/2) d_i f_{I,J}.
* delbar adds a second-group leg with the extra (-1)^k twist.
* wedge carries the sign (-1)^{l1*k2} between the groups.
* division by nu strips a full first (or second) group against nu and
  multiplies by (-1)^{n(n-1)/2} / nu_coeff.

Derivatives are trigonometric-spectral on the uniform grid (exact below
the Nyquist frequency); integration is the uniform trapezoid rule, which
is spectrally accurate for periodic integrands.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import BadGrid, DegreeOverflow, NonSPDMetric, WrongDegree

SPD_TOL = 1e-12


def index_sets(dim, k):
    """Strictly increasing multi-indices of length k in range(dim)."""
    return tuple(combinations(range(dim), k))


def merge_sign(left, right):
    """Sign of sorting the concatenation left+right, or None on a collision.

    This is the single place where permutation signs are computed; del_,
    delbar, wedge and the division maps all route through it.
    """
    if set(left) & set(right):
        return None
    inversions = sum(1 for a in left for b in right if a > b)
    return -1 if inversions % 2 else 1


def _drop_index(multi, pos):
    return multi[:pos] + multi[pos + 1:]


@dataclass(frozen=True)
class AffineTorus:
    """T^n with constant metric g, grid size N, and volume form nu."""

    n: int
    g: np.ndarray
    N: int
    nu_coeff: float
    g_inv: np.ndarray = field(repr=False, default=None)

    @property
    def grid_shape(self):
        return (self.N,) * self.n

    def coordinates(self):
        """Meshgrid arrays of the affine coordinates, indexing='ij'."""
        x = np.arange(self.N) / self.N
        return np.meshgrid(*([x] * self.n), indexing="ij")

    @property
    def volume(self):
        """vol(M) = integral of omega^n / nu."""
        return integrate(form_power(metric_form(self), self.n), self).real


def make_torus(n, g, N, nu_coeff=1.0):
    """Validate and build an :class:`AffineTorus`.

    Raises NonSPDMetric if g is not symmetric positive definite and BadGrid
    if N is odd or below 8.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (n, n):
        raise NonSPDMetric(f"metric must be {n}x{n}, got {g.shape}")
    if not np.allclose(g, g.T, atol=SPD_TOL):
        raise NonSPDMetric("metric matrix is not symmetric")
    eigs = np.linalg.eigvalsh(g)
    if eigs.min() <= 0:
        raise NonSPDMetric(f"metric eigenvalues must be positive, got {eigs}")
    if n not in (1, 2):
        raise BadGrid(f"dimension must be 1 or 2, got {n}")
    if N < 8 or N % 2 or (N & (N - 1)):
        raise BadGrid(f"grid size must be a power of two >= 8, got {N}")
    if nu_coeff <= 0:
        raise NonSPDMetric(f"nu_coeff must be positive, got {nu_coeff}")
    return AffineTorus(n=n, g=g, N=int(N), nu_coeff=float(nu_coeff),
                       g_inv=np.linalg.inv(g))


@dataclass
class FormField:
    """(k,l)-form on a torus; coeffs indexed (I-combo, J-combo, grid...)."""

    torus: AffineTorus
    k: int
    l: int
    coeffs: np.ndarray

    def __post_init__(self):
        nI = len(index_sets(self.torus.n, self.k))
        nJ = len(index_sets(self.torus.n, self.l))
        expected = (nI, nJ) + self.torus.grid_shape
        if self.coeffs.shape != expected:
            raise WrongDegree(
                f"coefficient array has shape {self.coeffs.shape}, "
                f"expected {expected}"
            )

    @property
    def bidegree(self):
        return (self.k, self.l)

    def sup_norm(self):
        return float(np.abs(self.coeffs).max()) if self.coeffs.size else 0.0

    def copy(self):
        return FormField(self.torus, self.k, self.l, self.coeffs.copy())

    def __add__(self, other):
        _check_same_type(self, other)
        return FormField(self.torus, self.k, self.l, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_same_type(self, other)
        return FormField(self.torus, self.k, self.l, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return FormField(self.torus, self.k, self.l, self.coeffs * scalar)

    __rmul__ = __mul__


def _check_same_type(a, b):
    if a.bidegree != b.bidegree or a.torus is not b.torus:
        raise WrongDegree("form fields have mismatched bidegree or torus")


def zero_form(torus, k, l):
    nI = len(index_sets(torus.n, k))
    nJ = len(index_sets(torus.n, l))
    return FormField(torus, k, l,
                     np.zeros((nI, nJ) + torus.grid_shape, dtype=complex))


def function_form(torus, values):
    """Wrap a scalar grid function as a (0,0)-form."""
    arr = np.broadcast_to(np.asarray(values, dtype=complex),
                          torus.grid_shape).copy()
    return FormField(torus, 0, 0, arr[None, None])


def metric_form(torus):
    """omega = sum g_ij dx^i (x) dx^j as a constant (1,1)-form."""
    out = zero_form(torus, 1, 1)
    for i in range(torus.n):
        for j in range(torus.n):
            out.coeffs[i, j] += torus.g[i, j]
    return out


def form_power(f, p):
    """p-fold wedge power; p = 0 gives the constant function 1."""
    out = function_form(f.torus, 1.0)
    for _ in range(p):
        out = wedge(out, f)
    return out


def random_form(torus, k, l, band=3, rng=None):
    """Random band-limited (k,l)-form, used throughout the tests."""
    rng = np.random.default_rng(rng)
    n, N = torus.n, torus.N
    xs = torus.coordinates()
    nI = len(index_sets(n, k))
    nJ = len(index_sets(n, l))
    coeffs = np.zeros((nI, nJ) + torus.grid_shape, dtype=complex)
    freqs = range(-band, band + 1)
    for a in range(nI):
        for b in range(nJ):
            fld = np.zeros(torus.grid_shape, dtype=complex)
            for _ in range(4):
                ks = [rng.choice(list(freqs)) for _ in range(n)]
                amp = rng.standard_normal() + 1j * rng.standard_normal()
                phase = sum(kk * x for kk, x in zip(ks, xs))
                fld += amp * np.exp(2j * np.pi * phase)
            coeffs[a, b] = fld
    return FormField(torus, k, l, coeffs)


# --- spectral differentiation -------------------------------------------------

def spectral_derivative(values, axis, N):
    """d/dx along one periodic axis with unit period; Nyquist mode zeroed."""
    kfreq = np.fft.fftfreq(N) * N
    kfreq[N // 2] = 0.0  # odd derivative of the Nyquist cosine is ambiguous
    shape = [1] * values.ndim
    shape[axis] = N
    mult = (2j * np.pi * kfreq).reshape(shape)
    return np.fft.ifft(np.fft.fft(values, axis=axis) * mult, axis=axis)


def _grid_axis(f, i):
    # grid axes sit after the two combo axes
    return 2 + i


def del_(f):
    """del: (k,l) -> (k+1,l), the half-d on the first index group."""
    n = f.torus.n
    if f.k >= n:
        raise DegreeOverflow(f"del on a ({f.k},{f.l})-form in dimension {n}")
    out = zero_form(f.torus, f.k + 1, f.l)
    in_sets = index_sets(n, f.k)
    out_sets = index_sets(n, f.k + 1)
    for a_out, I_out in enumerate(out_sets):
        for pos, i in enumerate(I_out):
            a_in = in_sets.index(_drop_index(I_out, pos))
            sign = -1 if pos % 2 else 1
            der = spectral_derivative(f.coeffs[a_in], _grid_axis(f, i) - 1,
                                      f.torus.N)
            out.coeffs[a_out] += 0.5 * sign * der
    return out


def delbar(f):
    """delbar: (k,l) -> (k,l+1), with the (-1)^k twist."""
    n = f.torus.n
    if f.l >= n:
        raise DegreeOverflow(f"delbar on a ({f.k},{f.l})-form in dimension {n}")
    out = zero_form(f.torus, f.k, f.l + 1)
    in_sets = index_sets(n, f.l)
    out_sets = index_sets(n, f.l + 1)
    twist = -1 if f.k % 2 else 1
    for b_out, J_out in enumerate(out_sets):
        for pos, j in enumerate(J_out):
            b_in = in_sets.index(_drop_index(J_out, pos))
            sign = -1 if pos % 2 else 1
            der = spectral_derivative(f.coeffs[:, b_in],
                                      _grid_axis(f, j) - 1, f.torus.N)
            out.coeffs[:, b_out] += 0.5 * twist * sign * der
    return out


def wedge(f1, f2):
    """Exterior product with the cross sign (-1)^{l1 k2}."""
    if f1.torus is not f2.torus:
        raise WrongDegree("wedge of forms on different tori")
    n = f1.torus.n
    k, l = f1.k + f2.k, f1.l + f2.l
    if k > n or l > n:
        raise DegreeOverflow(
            f"wedge of ({f1.k},{f1.l}) and ({f2.k},{f2.l}) exceeds degree {n}"
        )
    out = zero_form(f1.torus, k, l)
    cross = -1 if (f1.l * f2.k) % 2 else 1
    I1s, J1s = index_sets(n, f1.k), index_sets(n, f1.l)
    I2s, J2s = index_sets(n, f2.k), index_sets(n, f2.l)
    Iouts, Jouts = index_sets(n, k), index_sets(n, l)
    for a1, I1 in enumerate(I1s):
        for a2, I2 in enumerate(I2s):
            sI = merge_sign(I1, I2)
            if sI is None:
                continue
            a_out = Iouts.index(tuple(sorted(I1 + I2)))
            for b1, J1 in enumerate(J1s):
                for b2, J2 in enumerate(J2s):
                    sJ = merge_sign(J1, J2)
                    if sJ is None:
                        continue
                    b_out = Jouts.index(tuple(sorted(J1 + J2)))
                    out.coeffs[a_out, b_out] += (
                        cross * sI * sJ * f1.coeffs[a1, b1] * f2.coeffs[a2, b2]
                    )
    return out


@dataclass
class ExteriorField:
    """Plain exterior form on the torus, the output of division by nu."""

    torus: AffineTorus
    degree: int
    coeffs: np.ndarray  # (combos, grid...)

    def sup_norm(self):
        return float(np.abs(self.coeffs).max()) if self.coeffs.size else 0.0


def divide_by_nu(f):
    """Strip one full-degree factor against nu.

    Accepts (n,l) or (k,n); both apply the sign (-1)^{n(n-1)/2} and divide
    by nu_coeff.  For (n,n) the two readings agree.
    """
    n = f.torus.n
    sign = -1 if (n * (n - 1) // 2) % 2 else 1
    scale = sign / f.torus.nu_coeff
    if f.k == n:
        return ExteriorField(f.torus, f.l, scale * f.coeffs[0].copy())
    if f.l == n:
        return ExteriorField(f.torus, f.k, scale * f.coeffs[:, 0].copy())
    raise WrongDegree(
        f"division by nu needs a full-degree factor, got ({f.k},{f.l})"
    )


def integrate(f, torus=None):
    """Integral of an (n,n)-form over M: trapezoid of f/nu."""
    torus = torus or f.torus
    if f.bidegree != (torus.n, torus.n):
        raise WrongDegree(f"integrate needs an (n,n)-form, got {f.bidegree}")
    density = divide_by_nu(f).coeffs[0]
    return complex(density.mean())


def trace_g(f, torus=None):
    """Inverse-metric contraction of a (1,1)-form, returning a scalar field.

    Normalized so that trace_g(omega) = n and the mean-curvature identity
    (tr K) omega^n = n c1 ^ omega^{n-1} holds with no extra constant.
    """
    torus = torus or f.torus
    if f.bidegree != (1, 1):
        raise WrongDegree(f"trace_g needs a (1,1)-form, got {f.bidegree}")
    out = np.zeros(torus.grid_shape, dtype=complex)
    for i in range(torus.n):
        for j in range(torus.n):
            out += torus.g_inv[i, j] * f.coeffs[i, j]
    return out


def gauduchon_residual(torus):
    """sup-norm of del delbar (omega^{n-1}); zero for constant metrics."""
    om_pow = form_power(metric_form(torus), torus.n - 1)
    return del_(delbar(om_pow)).sup_norm()
