"""Decision procedures for slope stability and the pair stability conditions.

Slopes are quadrature outputs, so all strict inequalities are evaluated with
a tolerance: equality within SLOPE_TOL counts as a violation of strictness.
Negative verdicts are witness-backed and therefore decisive even when the
invariant-subspace enumeration is incomplete; positive verdicts require a
complete enumeration, otherwise the verdict is "undecidable" (soundness over
completeness).
"""

from dataclasses import dataclass, field

import numpy as np

from .bundle_metrics import identity_metric, slope
from .errors import RankTooLarge
from .flat_bundles import (
    FlatSubbundle,
    invariant_subbundle_list,
    minimal_invariant_subbundle,
    quotient,
    restrict,
)

SLOPE_TOL = 1e-9

STABLE = "stable"
POLYSTABLE_NOT_STABLE = "polystable_not_stable"
UNSTABLE = "unstable"
UNDECIDABLE = "undecidable"


@dataclass
class StabilityVerdict:
    verdict: str
    witnesses: list = field(default_factory=list)  # (subbundle, slope) pairs
    complete: bool = True
    notes: list = field(default_factory=list)

    @property
    def is_stable(self):
        return self.verdict == STABLE

    @property
    def is_polystable(self):
        return self.verdict in (STABLE, POLYSTABLE_NOT_STABLE)


def _slope_of(bundle, torus, sub=None):
    if sub is None:
        return slope(bundle, torus, identity_metric(bundle, torus))
    restricted = restrict(bundle, sub)
    return slope(restricted, torus, identity_metric(restricted, torus))


def _quotient_slope(bundle, torus, sub):
    q = quotient(bundle, sub)
    return slope(q, torus, identity_metric(q, torus))


def _joint_diagonalizable(bundle, tol=1e-10):
    """Commuting matrices are simultaneously diagonalizable iff each is."""
    for rho in bundle.monodromies:
        eigvals, vecs = np.linalg.eig(rho)
        if np.linalg.matrix_rank(vecs, tol=1e-10) < bundle.rank:
            return False
        recon = vecs @ np.diag(eigvals) @ np.linalg.inv(vecs)
        if np.abs(recon - rho).max() > tol * max(1.0, np.abs(rho).max()):
            return False
    return True


def is_stable_flat(bundle, torus):
    """Strict slope inequality over every proper nonzero flat subbundle."""
    if bundle.rank > 3:
        raise RankTooLarge("stability check limited to rank <= 3")
    if bundle.rank == 1:
        return StabilityVerdict(verdict=STABLE)  # no proper subbundles
    mu_total = _slope_of(bundle, torus)
    subs, complete, notes = invariant_subbundle_list(bundle)
    witnesses = []
    for sub in subs:
        mu = _slope_of(bundle, torus, sub)
        if mu >= mu_total - SLOPE_TOL:
            witnesses.append((sub, mu))
    if witnesses:
        verdict = (POLYSTABLE_NOT_STABLE if _joint_diagonalizable(bundle)
                   else UNSTABLE)
        return StabilityVerdict(verdict=verdict, witnesses=witnesses,
                                complete=complete, notes=notes)
    if not complete:
        return StabilityVerdict(verdict=UNDECIDABLE, complete=False,
                                notes=notes)
    return StabilityVerdict(verdict=STABLE, complete=True, notes=notes)


def is_polystable_flat(bundle, torus):
    """Direct sum of equal-slope stable pieces.

    On a torus all slopes vanish, so commuting monodromies split into stable
    (line) summands exactly when they are simultaneously diagonalizable.
    """
    if bundle.rank > 3:
        raise RankTooLarge("polystability check limited to rank <= 3")
    stable = is_stable_flat(bundle, torus)
    if stable.verdict == STABLE:
        return stable
    if _joint_diagonalizable(bundle):
        return StabilityVerdict(verdict=POLYSTABLE_NOT_STABLE,
                                witnesses=stable.witnesses,
                                complete=stable.complete, notes=stable.notes)
    return StabilityVerdict(verdict=UNSTABLE, witnesses=stable.witnesses,
                            complete=stable.complete, notes=stable.notes)


def _phi_containing_subspaces(pair):
    """Proper invariant subspaces containing phi, plus completeness data.

    The span of phi itself is always included (the monodromies fix phi, so
    it is an invariant line).
    """
    bundle = pair.bundle
    phi = pair.phi.vector
    subs, complete, notes = invariant_subbundle_list(bundle)
    minimal = minimal_invariant_subbundle(bundle, phi)
    chosen = [minimal]
    for sub in subs:
        proj = sub.basis @ sub.basis.conj().T
        if np.linalg.norm(proj @ phi - phi) < 1e-9 * np.linalg.norm(phi):
            chosen.append(sub)
    # deduplicate by projector
    unique = []
    for s in chosen:
        p = s.basis @ s.basis.conj().T
        if not any(t.basis.shape[1] == s.basis.shape[1] and np.allclose(
                t.basis @ t.basis.conj().T, p, atol=1e-9) for t in unique):
            unique.append(s)
    return unique, complete, notes


def is_tau_stable(pair, tau, torus):
    """Pair stability at parameter tau.

    Condition (i): mu(E') < tau for every flat subbundle of positive rank,
    including E itself.  Condition (ii): mu(E / E') > tau for every proper
    flat subbundle containing the image of phi.
    """
    bundle = pair.bundle
    if bundle.rank > 3:
        raise RankTooLarge("pair stability check limited to rank <= 3")
    tau = float(tau)
    witnesses = []
    subs, complete, notes = invariant_subbundle_list(bundle)

    mu_total = _slope_of(bundle, torus)
    if mu_total >= tau - SLOPE_TOL:  # condition (i) applied to E' = E
        witnesses.append((FlatSubbundle(
            basis=np.eye(bundle.rank, dtype=complex), parent=bundle),
            mu_total))
    for sub in subs:
        mu = _slope_of(bundle, torus, sub)
        if mu >= tau - SLOPE_TOL:
            witnesses.append((sub, mu))

    phi_subs, phi_complete, phi_notes = _phi_containing_subspaces(pair)
    notes = notes + [n for n in phi_notes if n not in notes]
    for sub in phi_subs:
        if sub.rank >= bundle.rank:
            continue
        mu_q = _quotient_slope(bundle, torus, sub)
        if mu_q <= tau + SLOPE_TOL:  # condition (ii) violated
            witnesses.append((sub, mu_q))

    if witnesses:
        return StabilityVerdict(verdict=UNSTABLE, witnesses=witnesses,
                                complete=complete and phi_complete,
                                notes=notes)
    if not (complete and phi_complete):
        return StabilityVerdict(verdict=UNDECIDABLE, complete=False,
                                notes=notes)
    return StabilityVerdict(verdict=STABLE, complete=True, notes=notes)


def is_tau_polystable(pair, tau, torus):
    """tau-stable, or a split E' (+) E'' with (E', phi) tau-stable and E''
    polystable of slope tau / n.

    On a torus every flat subbundle has slope zero, so a nonzero tau / n
    kills the split branch decisively; the checks below still evaluate the
    slopes numerically rather than assuming the vanishing theorem.
    """
    from .flat_bundles import make_flat_pair

    bundle = pair.bundle
    if bundle.rank > 3:
        raise RankTooLarge("pair polystability check limited to rank <= 3")
    tau = float(tau)
    stable = is_tau_stable(pair, tau, torus)
    if stable.verdict == STABLE:
        return stable
    notes = list(stable.notes)

    target = tau / torus.n
    phi_subs, _, _ = _phi_containing_subspaces(pair)
    subs, complete, _ = invariant_subbundle_list(bundle)
    for sub in phi_subs:
        if sub.rank >= bundle.rank:
            continue
        # complement candidates among the enumerated invariant subspaces
        for comp in subs:
            if comp.rank != bundle.rank - sub.rank:
                continue
            stacked = np.hstack([sub.basis, comp.basis])
            if np.linalg.matrix_rank(stacked, tol=1e-9) < bundle.rank:
                continue
            mu_comp = _slope_of(bundle, torus, comp)
            if abs(mu_comp - target) > SLOPE_TOL:
                continue
            comp_bundle = restrict(bundle, comp)
            if not is_polystable_flat(comp_bundle, torus).is_polystable:
                continue
            sub_bundle = restrict(bundle, sub)
            phi_in_sub = np.linalg.lstsq(sub.basis, pair.phi.vector,
                                         rcond=None)[0]
            sub_pair = make_flat_pair(
                [m for m in sub_bundle.monodromies], phi_in_sub)
            if is_tau_stable(sub_pair, tau, torus).verdict == STABLE:
                return StabilityVerdict(
                    verdict=POLYSTABLE_NOT_STABLE,
                    witnesses=[(sub, _slope_of(bundle, torus, sub)),
                               (comp, mu_comp)],
                    complete=complete, notes=notes)
    # no decomposition worked; decisive when the failures are slope-based
    return StabilityVerdict(verdict=UNSTABLE, witnesses=stable.witnesses,
                            complete=complete, notes=notes)
