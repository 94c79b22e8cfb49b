"""Flat bundles over tori as commuting monodromies, plus invariant subspaces.

A flat bundle on T^n is a tuple of pairwise commuting invertible matrices
rho_1..rho_n.  All field data lives in the periodic "log frame"
G(x) = exp(sum_i x^i L_i) with exp(L_i) = rho_i; the flat structure then
shows up only through the constant connection term Lambda = sum L_i dx^i.
Principal logarithms are required, so monodromies with eigenvalues on the
closed negative real axis are rejected instead of branch-tracked.
"""

from dataclasses import dataclass, field
from itertools import combinations as _combos

import numpy as np
import scipy.linalg

from .errors import (
    LogBranchFailure,
    NonCommuting,
    NotFlatSection,
    NotInvariant,
    RankTooLarge,
    SingularMonodromy,
    ZeroVector,
)

COMMUTE_TOL = 1e-12
LOG_TOL = 1e-10
INVARIANCE_TOL = 1e-10
RANK_TOL = 1e-10


@dataclass(frozen=True)
class FlatBundle:
    """Rank-r flat bundle: commuting monodromies and their principal logs."""

    monodromies: tuple
    logs: tuple

    @property
    def rank(self):
        return self.monodromies[0].shape[0]

    @property
    def n(self):
        return len(self.monodromies)

    def log_frame(self, xs):
        """G(x) = exp(sum x^i L_i) evaluated on broadcastable coordinate arrays."""
        from ._kernels import expm_batch

        xs = [np.asarray(x) for x in xs]
        grid_shape = np.broadcast_shapes(*(x.shape for x in xs))
        r = self.rank
        acc = np.zeros(grid_shape + (r, r), dtype=complex)
        for x, L in zip(xs, self.logs):
            acc += x[..., None, None] * L
        return expm_batch(acc)


@dataclass(frozen=True)
class FlatSection:
    """Vector fixed by every monodromy; constant in the log frame too."""

    vector: np.ndarray


@dataclass(frozen=True)
class FlatPair:
    bundle: FlatBundle
    phi: FlatSection


@dataclass(frozen=True)
class FlatSubbundle:
    """Invariant column span inside a parent bundle."""

    basis: np.ndarray  # r x s, orthonormal columns
    parent: FlatBundle = field(repr=False, default=None)

    @property
    def rank(self):
        return self.basis.shape[1]


def _orthonormalize(vectors):
    q, r = np.linalg.qr(np.asarray(vectors, dtype=complex))
    keep = np.abs(np.diag(r)) > RANK_TOL * max(1.0, np.abs(r).max())
    return q[:, keep]


def make_flat_bundle(monodromies):
    """Validate commuting invertible monodromies and take principal logs."""
    mats = tuple(np.asarray(m, dtype=complex) for m in monodromies)
    r = mats[0].shape[0]
    for m in mats:
        if m.shape != (r, r):
            raise NonCommuting("monodromies must share one square size")
        if abs(np.linalg.det(m)) < 1e-12:
            raise SingularMonodromy("monodromy is not invertible")
    for a, b in _combos(mats, 2):
        comm = a @ b - b @ a
        if np.abs(comm).max() > COMMUTE_TOL * max(1.0, np.abs(a).max() * np.abs(b).max()):
            raise NonCommuting(
                f"monodromies do not commute (|[a,b]| = {np.abs(comm).max():.3e})"
            )
    logs = []
    for m in mats:
        eigs = np.linalg.eigvals(m)
        on_neg_axis = (eigs.real <= 0) & (
            np.abs(eigs.imag) <= 1e-12 * np.maximum(1.0, np.abs(eigs))
        )
        if np.any(on_neg_axis):
            raise LogBranchFailure(
                f"eigenvalue on the closed negative real axis: {eigs}"
            )
        L = scipy.linalg.logm(m)
        if np.abs(scipy.linalg.expm(L) - m).max() > LOG_TOL:
            raise LogBranchFailure("principal logarithm failed to reproduce rho")
        logs.append(np.asarray(L, dtype=complex))
    for La, Lb in _combos(logs, 2):
        if np.abs(La @ Lb - Lb @ La).max() > LOG_TOL:
            raise LogBranchFailure("principal logarithms do not commute")
    return FlatBundle(monodromies=mats, logs=tuple(logs))


def flat_section_space(bundle):
    """Orthonormal basis of the common fixed space of all monodromies."""
    r = bundle.rank
    basis = np.eye(r, dtype=complex)
    for rho in bundle.monodromies:
        if basis.shape[1] == 0:
            break
        block = (rho - np.eye(r)) @ basis
        _, s, vh = np.linalg.svd(block)
        null_mask = np.concatenate(
            [s <= RANK_TOL * max(1.0, s.max() if s.size else 0.0),
             np.ones(vh.shape[0] - s.size, dtype=bool)]
        )
        basis = basis @ vh.conj().T[:, null_mask]
    return basis


def make_flat_section(bundle, vector):
    """Validate rho_i v = v and wrap the vector."""
    v = np.asarray(vector, dtype=complex)
    if np.linalg.norm(v) == 0:
        raise ZeroVector("flat section must be nonzero")
    for rho in bundle.monodromies:
        if np.linalg.norm(rho @ v - v) > 1e-12 * max(1.0, np.linalg.norm(v)):
            raise NotFlatSection("vector is not fixed by the monodromies")
    return FlatSection(vector=v)


def make_flat_pair(monodromies, phi):
    bundle = make_flat_bundle(monodromies)
    return FlatPair(bundle=bundle, phi=make_flat_section(bundle, phi))


def minimal_invariant_subbundle(bundle, v):
    """Smallest subspace containing v, invariant under all rho_i and rho_i^-1."""
    v = np.asarray(v, dtype=complex)
    if np.linalg.norm(v) == 0:
        raise ZeroVector("minimal invariant subspace of the zero vector")
    gens = [m for rho in bundle.monodromies
            for m in (rho, np.linalg.inv(rho))]
    basis = _orthonormalize(v.reshape(-1, 1))
    while True:
        images = [g @ basis for g in gens]
        enlarged = _orthonormalize(np.hstack([basis] + images))
        if enlarged.shape[1] == basis.shape[1]:
            return FlatSubbundle(basis=enlarged, parent=bundle)
        basis = enlarged


def _is_invariant(bundle, basis):
    proj = basis @ basis.conj().T
    eye = np.eye(bundle.rank)
    for rho in bundle.monodromies:
        for mat in (rho, np.linalg.inv(rho)):
            img = mat @ basis
            if np.abs((eye - proj) @ img).max() > INVARIANCE_TOL * max(
                1.0, np.abs(img).max()
            ):
                return False
    return True


def _joint_generalized_eigenspaces(bundle):
    """Split C^r into joint generalized eigenspaces of the commuting family."""
    r = bundle.rank
    spaces = [np.eye(r, dtype=complex)]
    for rho in bundle.monodromies:
        new_spaces = []
        for basis in spaces:
            sub = np.linalg.lstsq(basis, rho @ basis, rcond=None)[0]
            eigs = np.linalg.eigvals(sub)
            # cluster eigenvalues
            used = np.zeros(len(eigs), dtype=bool)
            for i, lam in enumerate(eigs):
                if used[i]:
                    continue
                cluster = np.abs(eigs - lam) < 1e-8 * max(1.0, np.abs(lam))
                used |= cluster
                m = int(cluster.sum())
                nil = np.linalg.matrix_power(
                    sub - lam * np.eye(sub.shape[0]), sub.shape[0]
                )
                _, s, vh = np.linalg.svd(nil)
                null = vh.conj().T[:, np.concatenate([
                    s <= 1e-8 * max(1.0, s.max() if s.size else 0.0),
                    np.ones(vh.shape[0] - s.size, dtype=bool)])]
                if null.shape[1] != m:
                    # fall back to Schur-based split for ill-separated spectra
                    null = null[:, :m]
                new_spaces.append(_orthonormalize(basis @ null))
        spaces = new_spaces
    return spaces


def _block_invariant_subspaces(bundle, block_basis):
    """Invariant subspaces inside one joint generalized eigenspace.

    Returns (list of bases in parent coordinates, complete flag, note).
    Within a block every monodromy acts as scalar + commuting nilpotent.
    """
    d = block_basis.shape[1]
    nils = []
    for rho in bundle.monodromies:
        sub = np.linalg.lstsq(block_basis, rho @ block_basis, rcond=None)[0]
        lam = np.trace(sub) / d
        nils.append(sub - lam * np.eye(d))
    nil_norms = [np.abs(nmat).max() for nmat in nils]
    if d == 1:
        return [], True, None  # no proper nonzero subspaces inside a line
    if max(nil_norms) < 1e-10:
        # scalar block: every subspace is invariant
        reps = [block_basis[:, [j]] for j in range(d)]
        if d == 3:
            reps += [block_basis[:, [i, j]] for i in range(3) for j in range(i + 1, 3)]
        note = f"scalar block of dimension {d}: invariant subspaces form a continuum"
        return reps, False, note
    # nontrivial nilpotent structure: build the lattice generated by kernels
    # and images of all nilpotent generators (exact for d <= 3 single-chain)
    candidates = []
    for nmat in nils:
        if np.abs(nmat).max() < 1e-10:
            continue
        for power in (nmat, nmat @ nmat):
            _, s, vh = np.linalg.svd(power)
            tolr = 1e-10 * max(1.0, s.max() if s.size else 0.0)
            ker = vh.conj().T[:, np.concatenate([
                s <= tolr, np.ones(vh.shape[0] - s.size, dtype=bool)])]
            img = _orthonormalize(power)
            if 0 < ker.shape[1] < d:
                candidates.append(ker)
            if 0 < img.shape[1] < d:
                candidates.append(img)
    # close under intersection and sum, keep invariant ones
    found = []

    def _add(basis):
        basis = _orthonormalize(basis)
        if basis.shape[1] in (0, d):
            return
        full = block_basis @ basis
        if not _is_invariant(bundle, full):
            return
        for other in found:
            if other.shape[1] == basis.shape[1] and np.allclose(
                other @ other.conj().T, basis @ basis.conj().T, atol=1e-9
            ):
                return
        found.append(basis)

    for c in candidates:
        _add(c)
    for a in list(found):
        for b in list(found):
            _add(np.hstack([a, b]))
    # single-chain blocks have a unique full flag; mixed structures may not
    chain = all(np.abs(nm).max() < 1e-10 or np.linalg.matrix_rank(nm, tol=1e-10)
                == d - 1 for nm in nils)
    complete = chain
    note = None if chain else (
        f"nilpotent block of dimension {d} with non-chain structure: "
        "representatives only"
    )
    return [block_basis @ b for b in found], complete, note


def invariant_subbundle_list(bundle):
    """All proper nonzero invariant subspaces (for rank <= 3).

    Returns (subbundles, complete, notes).  When continuum families exist
    (e.g. scalar blocks of dimension >= 2) the flag is False and
    representatives plus a description are returned instead.
    """
    r = bundle.rank
    if r > 3:
        raise RankTooLarge("invariant subspace enumeration limited to rank <= 3")
    blocks = _joint_generalized_eigenspaces(bundle)
    per_block = []
    complete = True
    notes = []
    for basis in blocks:
        subs, comp, note = _block_invariant_subspaces(bundle, basis)
        complete &= comp
        if note:
            notes.append(note)
        # options within a block: 0, proper invariant subspaces, full block
        per_block.append([None] + subs + [basis])
    results = []

    def _recurse(idx, chosen):
        if idx == len(per_block):
            bases = [c for c in chosen if c is not None]
            if not bases:
                return
            stacked = np.hstack(bases)
            if 0 < stacked.shape[1] < r:
                results.append(FlatSubbundle(
                    basis=_orthonormalize(stacked), parent=bundle))
            return
        for option in per_block[idx]:
            _recurse(idx + 1, chosen + [option])

    _recurse(0, [])
    # deduplicate by projector
    unique = []
    for s in results:
        proj = s.basis @ s.basis.conj().T
        if not any(
            t.basis.shape[1] == s.basis.shape[1]
            and np.allclose(t.basis @ t.basis.conj().T, proj, atol=1e-9)
            for t in unique
        ):
            unique.append(s)
    return unique, complete, notes


def restrict(bundle, sub):
    """Monodromies restricted to an invariant subspace, as a FlatBundle."""
    basis = sub.basis
    if not _is_invariant(bundle, basis):
        raise NotInvariant("subspace is not monodromy invariant")
    mats = [np.linalg.lstsq(basis, rho @ basis, rcond=None)[0]
            for rho in bundle.monodromies]
    return make_flat_bundle(mats)


def quotient(bundle, sub):
    """Induced monodromies on E / S."""
    basis = sub.basis
    if not _is_invariant(bundle, basis):
        raise NotInvariant("subspace is not monodromy invariant")
    r, s = bundle.rank, basis.shape[1]
    # complete to a full basis; quotient block of the triangular form
    q, _ = np.linalg.qr(
        np.hstack([basis, np.eye(r, dtype=complex)]))
    T = np.hstack([basis, q[:, s:r]])
    mats = []
    for rho in bundle.monodromies:
        full = np.linalg.solve(T, rho @ T)
        mats.append(full[s:, s:])
    return make_flat_bundle(mats)


def sum_sub_quotient(bundle, sub):
    """(restricted bundle, quotient bundle) for an invariant subspace."""
    return restrict(bundle, sub), quotient(bundle, sub)


def direct_sum(b1, b2):
    """Block-diagonal direct sum of two flat bundles over the same torus."""
    mats = []
    for m1, m2 in zip(b1.monodromies, b2.monodromies):
        r1, r2 = m1.shape[0], m2.shape[0]
        out = np.zeros((r1 + r2, r1 + r2), dtype=complex)
        out[:r1, :r1] = m1
        out[r1:, r1:] = m2
        mats.append(out)
    return make_flat_bundle(mats)
