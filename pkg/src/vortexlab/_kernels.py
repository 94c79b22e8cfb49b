"""Hot numeric kernels: batched small-matrix exponentials and eigen bounds.

The flow solvers spend essentially all their non-FFT time exponentiating
r x r complex matrices (r <= 3) at every grid point, every iteration.  Two
interchangeable backends implement the same scaling-and-squaring Taylor
algorithm:

* a numba ``@njit`` backend looping over grid points (default when numba
  imports cleanly), and
* a pure-numpy vectorized fallback.

Selection: set ``VORTEXLAB_NUMBA=0`` to force the numpy path, ``=1`` to
require numba (ImportError escalates).  Anything else (or unset) means
"use numba if available".  ``benchmarks/bench_kernels.py`` compares the two.

All reductions are plain sequential numpy sums, so repeated runs on one
machine are bit-identical.
"""

import os

import numpy as np

_TAYLOR_TERMS = 20   # exp series terms after scaling; 0.25^20/20! ~ 1e-31
_SCALE_TARGET = 0.25

_env = os.environ.get("VORTEXLAB_NUMBA", "").strip()
if _env == "0":
    NUMBA_ENABLED = False
elif _env == "1":
    from numba import njit  # noqa: F401  (hard requirement requested)

    NUMBA_ENABLED = True
else:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - exercised only without numba
        NUMBA_ENABLED = False


# --- pure numpy backend -----------------------------------------------------

def _expm_batch_numpy(a):
    """exp(a) for a stack of small matrices, shape (..., r, r)."""
    a = np.asarray(a, dtype=np.complex128)
    r = a.shape[-1]
    flat = a.reshape(-1, r, r)
    norms = np.abs(flat).sum(axis=-1).max(axis=-1)  # max row sum per matrix
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(norms / _SCALE_TARGET))
    s = np.where(np.isfinite(s), s, 0.0)
    s = np.maximum(s, 0.0).astype(np.int64)
    scaled = flat / (2.0 ** s)[:, None, None]

    eye = np.broadcast_to(np.eye(r, dtype=np.complex128), flat.shape)
    out = eye + scaled
    term = scaled
    for k in range(2, _TAYLOR_TERMS + 1):
        term = term @ scaled / k
        out = out + term
    smax = int(s.max()) if s.size else 0
    for i in range(smax):
        mask = s > i
        out[mask] = out[mask] @ out[mask]
    return out.reshape(a.shape)


def _eigmin_hermitian_numpy(h):
    """Smallest eigenvalue of each Hermitian matrix in a stack (..., r, r)."""
    h = np.asarray(h, dtype=np.complex128)
    return np.linalg.eigvalsh(h)[..., 0]


def _flow_step_numpy(h, v, dt):
    """One metric flow step H <- herm(H @ exp(-2 dt V)) on a matrix stack."""
    upd = _expm_batch_numpy(-2.0 * dt * np.asarray(v, dtype=np.complex128))
    out = np.asarray(h, dtype=np.complex128) @ upd
    return 0.5 * (out + np.conj(np.swapaxes(out, -1, -2)))


# --- numba backend ----------------------------------------------------------

if NUMBA_ENABLED:

    @njit(cache=True)
    def _expm_into(a, pre, acc, scaled, term, tmp):
        """exp(pre * a) written into acc; all buffers r x r, no allocation."""
        r = a.shape[0]
        norm = 0.0
        for i in range(r):
            row = 0.0
            for j in range(r):
                row += abs(pre * a[i, j])
            if row > norm:
                norm = row
        s = 0
        if norm > _SCALE_TARGET:
            s = int(np.ceil(np.log2(norm / _SCALE_TARGET)))
        sc = pre / 2.0**s
        for i in range(r):
            for j in range(r):
                scaled[i, j] = a[i, j] * sc
                term[i, j] = scaled[i, j]
                acc[i, j] = scaled[i, j]
            acc[i, i] += 1.0
        for k in range(2, _TAYLOR_TERMS + 1):
            inv_k = 1.0 / k
            for i in range(r):
                for j in range(r):
                    z = 0.0 + 0.0j
                    for m in range(r):
                        z += term[i, m] * scaled[m, j]
                    tmp[i, j] = z * inv_k
            for i in range(r):
                for j in range(r):
                    term[i, j] = tmp[i, j]
                    acc[i, j] += tmp[i, j]
        for _ in range(s):
            for i in range(r):
                for j in range(r):
                    z = 0.0 + 0.0j
                    for m in range(r):
                        z += acc[i, m] * acc[m, j]
                    tmp[i, j] = z
            for i in range(r):
                for j in range(r):
                    acc[i, j] = tmp[i, j]

    @njit(cache=True)
    def _expm_batch_njit(flat):
        npts, r, _ = flat.shape
        out = np.empty_like(flat)
        scaled = np.empty((r, r), np.complex128)
        term = np.empty((r, r), np.complex128)
        tmp = np.empty((r, r), np.complex128)
        for p in range(npts):
            _expm_into(flat[p], 1.0, out[p], scaled, term, tmp)
        return out

    @njit(cache=True)
    def _eigmin_hermitian_njit(flat):
        out = np.empty(flat.shape[0], dtype=np.float64)
        for p in range(flat.shape[0]):
            out[p] = np.linalg.eigvalsh(flat[p])[0]
        return out

    @njit(cache=True)
    def _flow_step_njit(hflat, vflat, dt):
        npts, r, _ = hflat.shape
        out = np.empty_like(hflat)
        upd = np.empty((r, r), np.complex128)
        scaled = np.empty((r, r), np.complex128)
        term = np.empty((r, r), np.complex128)
        tmp = np.empty((r, r), np.complex128)
        for p in range(npts):
            _expm_into(vflat[p], -2.0 * dt, upd, scaled, term, tmp)
            for i in range(r):
                for j in range(r):
                    z = 0.0 + 0.0j
                    for m in range(r):
                        z += hflat[p, i, m] * upd[m, j]
                    tmp[i, j] = z
            for i in range(r):
                for j in range(r):
                    out[p, i, j] = 0.5 * (tmp[i, j] + np.conj(tmp[j, i]))
        return out


# --- public dispatchers ------------------------------------------------------

def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"


def expm_batch(a):
    """Matrix exponential of a stack of small complex matrices (..., r, r)."""
    a = np.ascontiguousarray(a, dtype=np.complex128)
    if not NUMBA_ENABLED:
        return _expm_batch_numpy(a)
    r = a.shape[-1]
    return _expm_batch_njit(a.reshape(-1, r, r)).reshape(a.shape)


def eigmin_hermitian(h):
    """Smallest eigenvalue per matrix of a Hermitian stack (..., r, r)."""
    h = np.ascontiguousarray(h, dtype=np.complex128)
    if not NUMBA_ENABLED:
        return _eigmin_hermitian_numpy(h)
    r = h.shape[-1]
    return _eigmin_hermitian_njit(h.reshape(-1, r, r)).reshape(h.shape[:-2])


def flow_step(h, v, dt):
    """H <- hermitian part of H @ exp(-2 dt V), batched over grid points.

    The exponential update keeps H positive definite exactly when V is
    h-self-adjoint; the explicit re-hermitization only removes roundoff.
    """
    h = np.ascontiguousarray(h, dtype=np.complex128)
    v = np.ascontiguousarray(v, dtype=np.complex128)
    if not NUMBA_ENABLED:
        return _flow_step_numpy(h, v, dt)
    r = h.shape[-1]
    return _flow_step_njit(
        h.reshape(-1, r, r), v.reshape(-1, r, r), float(dt)
    ).reshape(h.shape)
