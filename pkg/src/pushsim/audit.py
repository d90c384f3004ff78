"""Independent linear-system audit of the push-based protocols.

The simulator moves mass with running sums and timestamp filtering. This
module rebuilds the same run as a sequence of column-stochastic matrices on
an augmented state and checks the two against each other, identity by
identity.

Augmented state layout (size n + (L_d + 1) * m):

- entries 0..n-1: real node values;
- L_d blocks of m entries: in-transit mass at levels 1..L_d (a message
  accepted with effective delay l enters level l and slides one level per
  slot; level 1 pours into the destination);
- final block of m entries: per-arc excess mass (shares whose message was
  lost, superseded, stale, or suppressed by an arc mask).

Per slot, a waking node keeps one share of its value and emits one share per
out-arc. The share of an accepted send enters the transit chain together
with the arc's whole accumulated excess (the running-sum protocol delivers
everything owed on the arc, not just the newest share); the share of any
other send joins the excess. The resulting matrix has column sums exactly 1,
so total mass is preserved, and the weight state (started at one per real
node) evolves under the same matrices.

Effective delay of a send = (receiver's first wake at or after arrival) -
(send slot); per (arc, processing slot) only the newest send is accepted,
and the first accepted timestamp must strictly exceed the initial timestamp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import mpmath
import numpy as np
import scipy.sparse as sp

from .errors import (ConfigurationError, InconsistentScheduleError,
                     VerificationError)
from .faultnet import ScheduleRealization, classify_deliveries
from .graph import Topology, arc_label

CONTRACTION_DPS = 80


# ---------------------------------------------------------------------------
# Delivery indicators.

@dataclass
class DeliveryIndicators:
    """Per-slot acceptance structure derived from a realized schedule.

    tau[k, a, l-1] is True when the send on arc a at slot k is accepted and
    will be processed with effective delay l. At most one level per (k, a).
    """

    wake: np.ndarray   # (K, n) bool
    tau: np.ndarray    # (K, m, L_d) bool

    @property
    def accepted_level(self) -> np.ndarray:
        """(K, m) int: effective delay of the accepted send, 0 if none."""
        K, m, l_d = self.tau.shape
        levels = np.arange(1, l_d + 1, dtype=np.int64)
        return (self.tau * levels[None, None, :]).sum(axis=2)


def build_delivery_indicators(schedule: ScheduleRealization,
                              init_timestamp: int) -> DeliveryIndicators:
    K = schedule.horizon
    topo, bounds = schedule.topology, schedule.bounds
    l_d = bounds.max_effective_delay
    tau = np.zeros((K, topo.m, l_d), dtype=bool)
    for a, deliveries in enumerate(classify_deliveries(schedule,
                                                       init_timestamp)):
        for send, proc in zip(deliveries.send_slots,
                              deliveries.processing_slots):
            tau[send, a, (proc - send) - 1] = True
    return DeliveryIndicators(schedule.wake[:K].copy(), tau)


# ---------------------------------------------------------------------------
# Augmented system and per-slot matrices.

@dataclass(frozen=True)
class AugmentedLayout:
    topology: Topology
    max_effective_delay: int

    @property
    def size(self) -> int:
        n, m = self.topology.n, self.topology.m
        return n + (self.max_effective_delay + 1) * m

    def transit_index(self, arc: int, level: int) -> int:
        if not 1 <= level <= self.max_effective_delay:
            raise ConfigurationError(f"transit level {level} out of range")
        return self.topology.n + (level - 1) * self.topology.m + arc

    def excess_index(self, arc: int) -> int:
        n, m = self.topology.n, self.topology.m
        return n + self.max_effective_delay * m + arc

    def transit_block(self, level: int) -> slice:
        lo = self.transit_index(0, level)
        return slice(lo, lo + self.topology.m)

    @property
    def excess_block(self) -> slice:
        lo = self.excess_index(0)
        return slice(lo, lo + self.topology.m)


def build_mass_matrix(layout: AugmentedLayout, wake_k: np.ndarray,
                      tau_k: np.ndarray) -> sp.csc_matrix:
    """One slot's column-stochastic mass-flow matrix.

    wake_k is (n,) bool; tau_k is (m, L_d) bool with at most one level set
    per arc (two set levels violate the single-delivery structure and raise).
    """
    topo = layout.topology
    n, m = topo.n, topo.m
    l_d = layout.max_effective_delay
    if tau_k.shape != (m, l_d):
        raise ConfigurationError(f"tau slice shape {tau_k.shape} != "
                                 f"({m}, {l_d})")
    per_arc = tau_k.sum(axis=1)
    if np.any(per_arc > 1):
        a = int(np.argmax(per_arc > 1))
        raise InconsistentScheduleError(
            f"arc {arc_label(int(topo.src[a]), int(topo.dst[a]))}: "
            "two delivery levels in one slot")
    deg = topo.out_degree()
    rows, cols, vals = [], [], []

    def put(r: int, c: int, v: float) -> None:
        rows.append(r)
        cols.append(c)
        vals.append(v)

    level_of = (tau_k * np.arange(1, l_d + 1)[None, :]).sum(axis=1)
    for i in range(n):
        if not wake_k[i]:
            put(i, i, 1.0)
            continue
        share = 1.0 / (deg[i] + 1.0)
        put(i, i, share)
        for a in np.flatnonzero(topo.src == i):
            lvl = level_of[a]
            if lvl > 0:
                put(layout.transit_index(a, int(lvl)), i, share)
            else:
                put(layout.excess_index(a), i, share)
    for a in range(m):
        # transit chain: level 1 pours into the destination, upper levels
        # slide down; excess rides into the accepted level or stays put.
        put(topo.dst[a], layout.transit_index(a, 1), 1.0)
        for lvl in range(2, l_d + 1):
            put(layout.transit_index(a, lvl - 1),
                layout.transit_index(a, lvl), 1.0)
        lvl = level_of[a]
        if lvl > 0:
            put(layout.transit_index(a, int(lvl)),
                layout.excess_index(a), 1.0)
        else:
            put(layout.excess_index(a), layout.excess_index(a), 1.0)
    size = layout.size
    return sp.csc_matrix((vals, (rows, cols)), shape=(size, size))


def step_augmented(matrix: sp.csc_matrix, chi: np.ndarray,
                   psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Advance one slot: both the mass vectors and the weight vector."""
    stacked = np.hstack([chi, psi[:, None]])
    out = matrix @ stacked
    return np.ascontiguousarray(out[:, :-1]), np.ascontiguousarray(out[:, -1])


@dataclass
class AuditTrace:
    """Augmented-state trajectory computed independently of the simulator."""

    layout: AugmentedLayout
    indicators: DeliveryIndicators
    chi: np.ndarray    # (K+1, size, d)
    psi: np.ndarray    # (K+1, size)
    matrices: list     # K csc matrices


def run_linear_audit(schedule: ScheduleRealization, x0: np.ndarray,
                     init_timestamp: int,
                     applied: np.ndarray | None = None) -> AuditTrace:
    """Evolve the augmented system along one realized schedule.

    applied, if given, is the (K, n, d) array of value injections actually
    applied by the simulator at wake slots (perturbations or optimizer
    moves); they are added to real coordinates before each slot's flow.
    """
    topo, bounds = schedule.topology, schedule.bounds
    K = schedule.horizon
    x0 = np.asarray(x0, dtype=float)
    n, dim = x0.shape
    layout = AugmentedLayout(topo, bounds.max_effective_delay)
    ind = build_delivery_indicators(schedule, init_timestamp)
    size = layout.size
    chi = np.zeros((K + 1, size, dim))
    psi = np.zeros((K + 1, size))
    chi[0, :n] = x0
    psi[0, :n] = 1.0
    mats = []
    for k in range(K):
        mat = build_mass_matrix(layout, ind.wake[k], ind.tau[k])
        mats.append(mat)
        cur = chi[k].copy()
        if applied is not None:
            cur[:n] += applied[k]
        chi[k + 1], psi[k + 1] = step_augmented(mat, cur, psi[k])
    return AuditTrace(layout, ind, chi, psi, mats)


# ---------------------------------------------------------------------------
# Cross-validation report.

@dataclass
class IdentityCheck:
    name: str
    max_residual: float
    first_bad_slot: int | None = None

    def line(self) -> str:
        status = "ok" if self.first_bad_slot is None \
            else f"slot {self.first_bad_slot}"
        return f"{self.name}  max_residual={self.max_residual:.3e}  {status}"


@dataclass
class AuditReport:
    checks: list[IdentityCheck] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.first_bad_slot is None for c in self.checks)

    def lines(self) -> list[str]:
        return [c.line() for c in self.checks]

    def to_text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def raise_on_failure(self) -> None:
        for c in self.checks:
            if c.first_bad_slot is not None:
                raise VerificationError(
                    f"identity '{c.name}' fails first at slot "
                    f"{c.first_bad_slot} (max residual {c.max_residual:.3e})",
                )


def _check(name: str, residual: np.ndarray, tol: float) -> IdentityCheck:
    """residual has slot as leading axis; reduce the rest."""
    flat = residual.reshape(residual.shape[0], -1)
    if flat.shape[1] == 0:
        return IdentityCheck(name, 0.0, None)
    per_slot = np.max(np.abs(flat), axis=1)
    worst = float(per_slot.max(initial=0.0))
    bad = np.flatnonzero(per_slot > tol)
    return IdentityCheck(name, worst, int(bad[0]) if bad.size else None)


def cross_validate(trace, audit: AuditTrace, x0: np.ndarray,
                   applied: np.ndarray | None = None,
                   tol: float | None = None) -> AuditReport:
    """Assert every identity linking the simulator trace to the audit chain.

    trace is an engine Trace (or the reference simulator's run record, which
    has the same fields). Raises VerificationError on the first identity
    whose residual exceeds the tolerance; the full report is still built.
    """
    topo = audit.layout.topology
    n, m = topo.n, topo.m
    x0 = np.asarray(x0, dtype=float)
    scale = 1.0 + float(np.abs(x0).sum())
    if tol is None:
        tol = 1e-9 * scale
    K = audit.chi.shape[0] - 1
    layout = audit.layout
    report = AuditReport()

    # (i), (ii): real coordinates of the augmented state match the simulator.
    report.checks.append(_check("chi-real-equals-x",
                                audit.chi[:, :n, :] - trace.x, tol))
    report.checks.append(_check("psi-real-equals-y",
                                audit.psi[:, :n] - trace.y, tol))

    # (iii): per arc, the receiver's absorbed-mass increment at slot k is
    # exactly the level-1 transit mass at slot k.
    lvl1 = audit.chi[:K, layout.transit_block(1), :]
    rho_inc = trace.rho_x[1:] - trace.rho_x[:-1]
    report.checks.append(_check("rho-increment-equals-level1",
                                rho_inc - lvl1, tol))
    lvl1_y = audit.psi[:K, layout.transit_block(1)]
    rho_y_inc = trace.rho_y[1:] - trace.rho_y[:-1]
    report.checks.append(_check("rho-y-increment-equals-level1",
                                rho_y_inc - lvl1_y, tol))

    # (iv): sent mass splits exactly into absorbed + in-transit + excess.
    transit_sum = np.zeros_like(audit.chi[:, layout.excess_block, :])
    for lvl in range(1, layout.max_effective_delay + 1):
        transit_sum += audit.chi[:, layout.transit_block(lvl), :]
    lhs = audit.chi[:, layout.excess_block, :] + transit_sum + trace.rho_x
    phi_src = trace.phi_x[:, topo.src, :]
    report.checks.append(_check("excess-plus-transit-plus-absorbed",
                                lhs - phi_src, tol))

    # Sum preservation: total mass equals initial mass plus injections.
    total = audit.chi.sum(axis=1)                      # (K+1, d)
    injected = np.zeros_like(total)
    if applied is not None:
        injected[1:] = np.cumsum(applied.sum(axis=1), axis=0)
    expect = x0.sum(axis=0)[None, :] + injected
    report.checks.append(_check("mass-conservation", total - expect, tol))
    report.checks.append(_check("weight-conservation",
                                audit.psi.sum(axis=1)[:, None] - float(n),
                                1e-9))

    # Weight bounds: real entries strictly positive, all entries in [0, n].
    psi_real = audit.psi[:, :n]
    report.checks.append(_check("weight-real-positive",
                                np.where(psi_real > 0.0, 0.0, 1.0), 0.5))
    report.checks.append(_check("weight-range",
                                np.maximum(np.maximum(-audit.psi, 0.0),
                                           np.maximum(audit.psi - n, 0.0)),
                                1e-9))

    # Zero weight forces zero mass (exact: zeros only ever combine linearly).
    zero_psi = audit.psi == 0.0
    masked = np.where(zero_psi[:, :, None], audit.chi, 0.0)
    report.checks.append(_check("mass-zero-on-zero-weight", masked, 0.0))

    # Matrix structure: column sums, entry lower bound, real diagonals.
    entry_floor = 1.0 / (topo.out_degree().max(initial=0) + 1.0)
    col_res, entry_res, diag_res = 0.0, 0.0, 0.0
    col_bad = entry_bad = diag_bad = None
    for k, mat in enumerate(audit.matrices):
        sums = np.asarray(mat.sum(axis=0)).ravel()
        r = float(np.abs(sums - 1.0).max())
        col_res = max(col_res, r)
        if r > 1e-15 and col_bad is None:
            col_bad = k
        data = mat.data[mat.data != 0.0]
        short = float(np.maximum(entry_floor - data, 0.0).max(initial=0.0))
        entry_res = max(entry_res, short)
        if short > 1e-15 and entry_bad is None:
            entry_bad = k
        diag = mat.diagonal()[:n]
        if np.any(diag <= 0.0):
            diag_res = 1.0
            if diag_bad is None:
                diag_bad = k
    report.checks.append(IdentityCheck("matrix-column-sums", col_res,
                                       col_bad))
    report.checks.append(IdentityCheck("matrix-entry-floor", entry_res,
                                       entry_bad))
    report.checks.append(IdentityCheck("matrix-real-diagonal-positive",
                                       diag_res, diag_bad))

    # Delivery-indicator exclusions and empty-above-level structure.
    report.checks.append(_check("single-delivery-level",
                                np.maximum(
                                    audit.indicators.tau.sum(axis=2) - 1, 0
                                ).astype(float)[:, :, None], 0.5))
    excl, excl_bad = _exclusion_windows(audit.indicators)
    report.checks.append(IdentityCheck("delivery-exclusion-windows",
                                       excl, excl_bad))
    above = _levels_above_accepted(audit)
    report.checks.append(_check("no-transit-above-accepted-level",
                                above, 0.0))

    # Excess recursion against simulator running sums.
    phi_inc = phi_src[1:] - phi_src[:-1]               # (K, m, d)
    accepted = audit.indicators.tau.any(axis=2)        # (K, m)
    u = audit.chi[:, layout.excess_block, :]
    u_expect = np.where(accepted[:, :, None], 0.0, u[:-1] + phi_inc)
    report.checks.append(_check("excess-recursion", u[1:] - u_expect, tol))

    return report


def _exclusion_windows(ind: DeliveryIndicators) -> tuple[float, int | None]:
    """No two accepted sends on one arc may share a processing slot, and
    processing order must follow send order. Returns (violations, slot)."""
    K, m, l_d = ind.tau.shape
    bad = None
    count = 0
    for a in range(m):
        sends, levels = np.nonzero(ind.tau[:, a, :])
        proc = sends + levels + 1
        if np.any(np.diff(proc) <= 0):
            i = int(np.flatnonzero(np.diff(proc) <= 0)[0])
            count += 1
            bad = int(sends[i + 1]) if bad is None else min(bad,
                                                            int(sends[i + 1]))
    return float(count), bad


def _levels_above_accepted(audit: AuditTrace) -> np.ndarray:
    """Transit mass strictly above an accepted send's level, per slot."""
    layout = audit.layout
    K = audit.chi.shape[0] - 1
    l_d = layout.max_effective_delay
    out = np.zeros((K, 1))
    level = audit.indicators.accepted_level                 # (K, m)
    for k in range(K):
        arcs = np.flatnonzero(level[k])
        worst = 0.0
        for a in arcs:
            for lvl in range(int(level[k, a]) + 1, l_d + 1):
                idx = layout.transit_index(int(a), lvl)
                worst = max(worst, float(np.abs(audit.chi[k, idx]).max()))
        out[k, 0] = worst
    return out


# ---------------------------------------------------------------------------
# Contraction constants and envelopes.

@dataclass(frozen=True)
class ContractionBound:
    """Worst-case geometric-decay constants for a given network size.

    alpha/lam/delta are arbitrary-precision values; the vacuous flag is set
    when lam rounds to 1.0 in double precision, in which case the envelope
    carries no information at float scale.
    """

    n: int
    max_receipt_gap: int
    alpha: mpmath.mpf
    lam: mpmath.mpf
    delta: mpmath.mpf
    vacuous: bool


def contraction_bound(n: int, max_receipt_gap: int) -> ContractionBound:
    if n < 2 or max_receipt_gap < 2:
        raise ConfigurationError(
            "contraction constants need n >= 2 and receipt gap >= 2")
    with mpmath.workdps(CONTRACTION_DPS):
        alpha = mpmath.mpf(1) / mpmath.mpf(n) ** (n * max_receipt_gap)
        na6 = n * alpha ** 6
        delta = 1 / (1 - na6)
        lam = (1 - na6) ** (mpmath.mpf(1) / (2 * n * max_receipt_gap))
        vacuous = float(lam) >= 1.0
        return ContractionBound(n, max_receipt_gap, alpha, lam, delta,
                                vacuous)


def envelope_check(z: np.ndarray, x0: np.ndarray,
                   bound: ContractionBound) -> tuple[bool, int | None]:
    """Per-slot check of |z_i(k) - mean(x0)| <= delta * lam^k * l1(x0).

    z is (K+1, n, d); the comparison runs per coordinate in extended
    precision. Returns (ok, first failing slot).
    """
    if bound.vacuous:
        raise ConfigurationError("envelope check needs a non-vacuous bound")
    x0 = np.asarray(x0, dtype=float)
    mean = x0.mean(axis=0)
    err = np.abs(z - mean[None, None, :]).max(axis=1)    # (K+1, d)
    l1 = np.abs(x0).sum(axis=0)                          # (d,)
    with mpmath.workdps(CONTRACTION_DPS):
        factor = bound.delta
        for k in range(err.shape[0]):
            for c in range(err.shape[1]):
                env = factor * mpmath.mpf(float(l1[c]))
                if mpmath.mpf(float(err[k, c])) > env:
                    return False, k
            factor *= bound.lam
    return True, None


def tracking_bound_series(bound: ContractionBound, x0: np.ndarray,
                          applied: np.ndarray) -> np.ndarray:
    """Perturbation-tracking ceiling per slot and coordinate.

    bound(k+1) = delta * lam^k * l1(x0) + sum_{t=1..k} delta * lam^(k-t)
    * l1(applied(t)); returned as a float array of shape (K+1, d) with
    entry 0 = delta * l1(x0).
    """
    x0 = np.asarray(x0, dtype=float)
    K, n, dim = applied.shape
    l1_x0 = np.abs(x0).sum(axis=0)
    l1_delta = np.abs(applied).sum(axis=1)               # (K, d)
    out = np.empty((K + 1, dim))
    with mpmath.workdps(CONTRACTION_DPS):
        for c in range(dim):
            acc = mpmath.mpf(0)
            base = mpmath.mpf(float(l1_x0[c]))
            out[0, c] = float(bound.delta * base)
            for k in range(K):
                # advance one slot: decay previous terms, add slot-k term
                acc = acc * bound.lam + mpmath.mpf(float(l1_delta[k, c]))
                out[k + 1, c] = float(bound.delta *
                                      (bound.lam ** (k + 1) * base + acc))
    return out


def window_positivity_check(audit: AuditTrace,
                            max_receipt_gap: int) -> tuple[bool, int | None]:
    """Products over every window of n * L_s consecutive slots must have
    strictly positive first n rows. Intended for small instances."""
    n = audit.layout.topology.n
    window = n * max_receipt_gap
    K = len(audit.matrices)
    if K < window:
        raise ConfigurationError(
            f"audit span {K} shorter than one window ({window})")
    dense = [m.toarray() for m in audit.matrices]
    for start in range(K - window + 1):
        prod = dense[start]
        for k in range(start + 1, start + window):
            prod = dense[k] @ prod
        if not np.all(prod[:n, :] > 0.0):
            return False, start
    return True, None


# ---------------------------------------------------------------------------
# One-call verification: simulate, rebuild, cross-check.

def verify_run(topology: Topology, bounds, x0: np.ndarray, horizon: int,
               master_seed: int, run: int = 0, init_timestamp: int = 0,
               perturbation=None, mask: np.ndarray | None = None,
               check_windows: bool = False) -> AuditReport:
    """Simulate one run, rebuild it as the augmented linear system, and
    return the identity report (raising on any failure)."""
    from .engine import run_protocol
    from .faultnet import realize_schedule

    x0 = np.asarray(x0, dtype=float)
    result = run_protocol(topology, bounds, x0, horizon, master_seed,
                          runs=(run,), init_timestamp=init_timestamp,
                          perturbation=perturbation, mask=mask,
                          record_trace=True)
    trace = result.trace
    schedule = realize_schedule(topology, bounds, horizon, master_seed,
                                run, mask=mask)
    applied = trace.applied if perturbation is not None else None
    audit = run_linear_audit(schedule, x0, init_timestamp, applied=applied)
    report = cross_validate(trace, audit, x0, applied=applied)
    if check_windows:
        ok, start = window_positivity_check(audit, bounds.max_receipt_gap)
        report.checks.append(IdentityCheck(
            "window-product-positivity", 0.0 if ok else 1.0,
            None if ok else start))
    report.raise_on_failure()
    return report


# ---------------------------------------------------------------------------
# Optimizer diagnostic: the "as if it stepped every slot" average.

@dataclass
class WbarSeries:
    wbar: np.ndarray          # (K+1, d)
    deviation: np.ndarray     # (K+1, n) distance of each estimate from wbar


def wbar_diagnostic(trace, objective, ledger,
                    aug_mean: np.ndarray) -> WbarSeries:
    """Average of per-node values with pending compensated steps removed.

    For real nodes, w_i(k) = x_i(k) - (sum of step sizes for the slots slept
    through so far, excluding slot k) * exact local gradient at the current
    estimate; virtual mass enters unchanged. The average tracks a
    centralized gradient recursion, and every estimate converges to it.
    """
    K1, n, dim = trace.x.shape
    wbar = np.empty((K1, dim))
    dev = np.empty((K1, n))
    prefix = ledger.prefix
    for k in range(K1):
        grads = objective.batch_local_gradients(trace.z[k][None])[0]
        pending = prefix[k] - prefix[trace.kappa[k] + 1]     # (n,)
        w_real = trace.x[k] - pending[:, None] * grads
        virtual = aug_mean[k] * n - trace.x[k].sum(axis=0)
        wbar[k] = (w_real.sum(axis=0) + virtual) / n
        dev[k] = np.linalg.norm(trace.z[k] - wbar[k][None, :], axis=1)
    return WbarSeries(wbar, dev)
