import numpy as np
import pytest
import scipy.linalg

from vortexlab.errors import (
    LogBranchFailure,
    NonCommuting,
    NotFlatSection,
    NotInvariant,
    RankTooLarge,
    SingularMonodromy,
    ZeroVector,
)
from vortexlab.flat_bundles import (
    FlatSubbundle,
    direct_sum,
    flat_section_space,
    invariant_subbundle_list,
    make_flat_bundle,
    make_flat_pair,
    make_flat_section,
    minimal_invariant_subbundle,
    quotient,
    restrict,
    sum_sub_quotient,
)

JORDAN = np.array([[1.0, 1.0], [0.0, 1.0]])


def test_log_of_unipotent_jordan_block():
    b = make_flat_bundle([JORDAN])
    assert np.allclose(b.logs[0], [[0.0, 1.0], [0.0, 0.0]], atol=1e-12)


def test_log_of_diagonal():
    b = make_flat_bundle([np.diag([2.0, 0.5])])
    assert np.allclose(b.logs[0], np.diag([np.log(2.0), -np.log(2.0)]), atol=1e-12)


def test_non_commuting_rejected():
    with pytest.raises(NonCommuting):
        make_flat_bundle([np.array([[0.0, 1.0], [1.0, 0.0]]), JORDAN])


def test_singular_rejected():
    with pytest.raises(SingularMonodromy):
        make_flat_bundle([np.array([[1.0, 0.0], [0.0, 0.0]])])


def test_negative_axis_rejected():
    with pytest.raises(LogBranchFailure):
        make_flat_bundle([np.diag([-1.0, 2.0])])


def test_bundle_invariants_random_commuting():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    rho1 = scipy.linalg.expm(0.3 * a)
    rho2 = scipy.linalg.expm(-0.2 * a + 0.1 * a @ a)
    b = make_flat_bundle([rho1, rho2])
    for rho, L in zip(b.monodromies, b.logs):
        assert np.abs(scipy.linalg.expm(L) - rho).max() < 1e-10
    L1, L2 = b.logs
    assert np.abs(L1 @ L2 - L2 @ L1).max() < 1e-10


def test_log_frame_periodicity_relation():
    b = make_flat_bundle([np.diag([2.0, 3.0])])
    x = np.array([0.25])
    G_x = b.log_frame([x])[0]
    G_x1 = b.log_frame([x + 1.0])[0]
    assert np.allclose(G_x1, G_x @ b.monodromies[0], atol=1e-12)


# --- flat sections ----------------------------------------------------------


def test_flat_section_space_jordan():
    b = make_flat_bundle([JORDAN])
    basis = flat_section_space(b)
    assert basis.shape[1] == 1
    assert abs(abs(basis[0, 0]) - 1.0) < 1e-12
    assert abs(basis[1, 0]) < 1e-12


def test_flat_section_space_empty():
    b = make_flat_bundle([np.diag([2.0, 3.0])])
    assert flat_section_space(b).shape[1] == 0


def test_flat_section_space_full():
    b = make_flat_bundle([np.eye(2)])
    assert flat_section_space(b).shape[1] == 2


def test_make_flat_section_validates():
    b = make_flat_bundle([JORDAN])
    s = make_flat_section(b, [1.0, 0.0])
    assert np.allclose(s.vector, [1.0, 0.0])
    with pytest.raises(NotFlatSection):
        make_flat_section(b, [0.0, 1.0])
    with pytest.raises(ZeroVector):
        make_flat_section(b, [0.0, 0.0])


# --- minimal invariant subspace ----------------------------------------------


def test_minimal_invariant_fixed_vector():
    b = make_flat_bundle([JORDAN])
    s = minimal_invariant_subbundle(b, [1.0, 0.0])
    assert s.rank == 1


def test_minimal_invariant_cyclic_vector():
    # rho e2 = e1 + e2 enlarges the span; oracle = explicit span computation
    b = make_flat_bundle([JORDAN])
    s = minimal_invariant_subbundle(b, [0.0, 1.0])
    assert s.rank == 2
    span = np.hstack([np.array([[0.0], [1.0]]),
                      JORDAN @ np.array([[0.0], [1.0]])])
    assert np.linalg.matrix_rank(span) == 2


def test_minimal_invariant_identity():
    b = make_flat_bundle([np.eye(2)])
    s = minimal_invariant_subbundle(b, [1.0, 0.0])
    assert s.rank == 1
    with pytest.raises(ZeroVector):
        minimal_invariant_subbundle(b, [0.0, 0.0])


# --- enumeration --------------------------------------------------------------


def test_invariant_list_jordan():
    b = make_flat_bundle([JORDAN])
    subs, complete, notes = invariant_subbundle_list(b)
    assert complete
    assert len(subs) == 1
    assert subs[0].rank == 1
    v = subs[0].basis[:, 0]
    assert abs(v[1]) < 1e-10  # the unique invariant line is span e1
    # oracle: scan a one-parameter family of lines for invariance
    for t in np.linspace(0, np.pi, 50)[1:-1]:
        w = np.array([np.cos(t), np.sin(t)])
        img = JORDAN @ w
        proj = w * (w @ img)
        if np.linalg.norm(img - proj) < 1e-9:
            assert abs(np.sin(t)) < 1e-9


def test_invariant_list_distinct_diagonal():
    b = make_flat_bundle([np.diag([2.0, 3.0])])
    subs, complete, _ = invariant_subbundle_list(b)
    assert complete
    assert sorted(s.rank for s in subs) == [1, 1]


def test_invariant_list_identity_incomplete():
    b = make_flat_bundle([np.eye(2)])
    subs, complete, notes = invariant_subbundle_list(b)
    assert not complete
    assert notes
    assert len(subs) == 2


def test_invariant_list_rank3_chain():
    rho = np.eye(3) + np.diag([1.0, 1.0], k=1)
    b = make_flat_bundle([rho])
    subs, complete, _ = invariant_subbundle_list(b)
    assert complete
    assert sorted(s.rank for s in subs) == [1, 2]


def test_invariant_list_rank_limit():
    b = make_flat_bundle([np.eye(4)])
    with pytest.raises(RankTooLarge):
        invariant_subbundle_list(b)


def test_minimal_contained_in_enumerated():
    b = make_flat_bundle([JORDAN])
    phi = np.array([1.0, 0.0])
    minimal = minimal_invariant_subbundle(b, phi)
    subs, _, _ = invariant_subbundle_list(b)
    for s in subs:
        proj = s.basis @ s.basis.conj().T
        if np.linalg.norm(proj @ phi - phi) < 1e-10:  # contains phi
            # minimal is inside s
            assert np.linalg.norm(
                (np.eye(2) - proj) @ minimal.basis) < 1e-10


# --- sub / quotient / direct sum ----------------------------------------------


def test_sub_quotient_jordan():
    b = make_flat_bundle([JORDAN])
    sub = FlatSubbundle(basis=np.array([[1.0], [0.0]], dtype=complex), parent=b)
    s, q = sum_sub_quotient(b, sub)
    assert np.allclose(s.monodromies[0], [[1.0]])
    assert np.allclose(q.monodromies[0], [[1.0]])


def test_quotient_diagonal():
    b = make_flat_bundle([np.diag([2.0, 3.0])])
    sub = FlatSubbundle(basis=np.array([[1.0], [0.0]], dtype=complex), parent=b)
    q = quotient(b, sub)
    assert np.allclose(q.monodromies[0], [[3.0]])


def test_ranks_add():
    b = make_flat_bundle([np.diag([2.0, 3.0, 5.0])])
    sub = FlatSubbundle(
        basis=np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], dtype=complex),
        parent=b)
    s, q = sum_sub_quotient(b, sub)
    assert s.rank + q.rank == b.rank


def test_direct_sum():
    b1 = make_flat_bundle([np.array([[2.0]])])
    b2 = make_flat_bundle([np.array([[3.0]])])
    b = direct_sum(b1, b2)
    assert np.allclose(b.monodromies[0], np.diag([2.0, 3.0]))


def test_not_invariant_rejected():
    b = make_flat_bundle([JORDAN])
    bad = FlatSubbundle(basis=np.array([[0.0], [1.0]], dtype=complex), parent=b)
    with pytest.raises(NotInvariant):
        restrict(b, bad)


def test_make_flat_pair():
    pair = make_flat_pair([JORDAN], [1.0, 0.0])
    assert pair.bundle.rank == 2
    assert np.allclose(pair.phi.vector, [1.0, 0.0])
