import numpy as np
import pytest
import scipy.linalg

from vortexlab import _kernels
from vortexlab._kernels import (
    _eigmin_hermitian_numpy,
    _expm_batch_numpy,
    _flow_step_numpy,
    backend_name,
    eigmin_hermitian,
    expm_batch,
    flow_step,
)


def _random_batch(shape, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_expm_matches_scipy(r):
    a = _random_batch((40, r, r), seed=r)
    got = expm_batch(a)
    expected = scipy.linalg.expm(a)
    assert np.abs(got - expected).max() < 1e-12 * max(
        1.0, np.abs(expected).max())


def test_expm_large_norm_scaling():
    a = 8.0 * _random_batch((10, 3, 3), seed=9)
    got = expm_batch(a)
    expected = scipy.linalg.expm(a)
    assert np.abs(got - expected).max() < 1e-9 * np.abs(expected).max()


def test_numpy_and_active_backend_agree():
    a = _random_batch((25, 2, 2), seed=4)
    assert np.abs(expm_batch(a) - _expm_batch_numpy(a)).max() < 1e-13


def test_eigmin_hermitian():
    a = _random_batch((30, 3, 3), seed=5)
    h = a + np.conj(np.swapaxes(a, -1, -2))
    got = eigmin_hermitian(h)
    expected = np.linalg.eigvalsh(h)[..., 0]
    assert np.abs(got - expected).max() < 1e-12
    assert np.abs(_eigmin_hermitian_numpy(h) - expected).max() < 1e-12


def test_flow_step_preserves_hermitian_positivity():
    rng = np.random.default_rng(11)
    a = _random_batch((20, 2, 2), seed=8)
    H = a @ np.conj(np.swapaxes(a, -1, -2)) + 0.1 * np.eye(2)
    # V h-self-adjoint: V = H^{-1} S with S Hermitian
    s = _random_batch((20, 2, 2), seed=9)
    S = s + np.conj(np.swapaxes(s, -1, -2))
    V = np.linalg.inv(H) @ S
    out = flow_step(H, V, 0.05)
    assert np.abs(out - np.conj(np.swapaxes(out, -1, -2))).max() < 1e-12
    assert np.linalg.eigvalsh(out).min() > 0
    out_np = _flow_step_numpy(H, V, 0.05)
    assert np.abs(out - out_np).max() < 1e-12


def test_backend_name_reports():
    assert backend_name() in ("numba", "numpy")
    # env flag wiring exists
    assert hasattr(_kernels, "NUMBA_ENABLED")


def test_grid_shaped_batches():
    a = _random_batch((8, 8, 2, 2), seed=13)
    got = expm_batch(a)
    assert got.shape == (8, 8, 2, 2)
    expected = scipy.linalg.expm(a.reshape(-1, 2, 2)).reshape(8, 8, 2, 2)
    assert np.abs(got - expected).max() < 1e-12
