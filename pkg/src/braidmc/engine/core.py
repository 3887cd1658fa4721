import logging
from dataclasses import dataclass, field

import numpy as np

from ..worldlines import HEAD, TAIL, check_invariants

__all__ = (
    "UPDATE_KINDS",
    "UpdateStats",
    "sweep",
    "sweep_length",
    "update",
    "log_ratio_open",
    "log_ratio_close",
    "log_ratio_move",
    "log_ratio_insert",
    "log_ratio_delete",
)

logger = logging.getLogger("braidmc.engine")

UPDATE_KINDS = ("open", "close", "move", "insert", "delete")

# selection probability of each move inside the worm sector
P_WORM_MOVE = 0.25


@dataclass
class UpdateStats:
    """Proposed/accepted counters per update kind, plus the accumulated log-weight change."""

    proposed: dict = field(default_factory=lambda: {k: 0 for k in UPDATE_KINDS})
    accepted: dict = field(default_factory=lambda: {k: 0 for k in UPDATE_KINDS})
    log_weight_change: float = 0.0

    def record(self, kind, accepted, dlog=0.0):
        self.proposed[kind] += 1
        if accepted:
            self.accepted[kind] += 1
            self.log_weight_change += dlog

    def merge(self, other):
        out = UpdateStats()
        for k in UPDATE_KINDS:
            out.proposed[k] = self.proposed[k] + other.proposed[k]
            out.accepted[k] = self.accepted[k] + other.accepted[k]
        out.log_weight_change = self.log_weight_change + other.log_weight_change
        return out

    def acceptance(self):
        return {
            k: (self.accepted[k] / self.proposed[k] if self.proposed[k] else 0.0)
            for k in UPDATE_KINDS
        }

    def to_dict(self):
        return {"proposed": dict(self.proposed), "accepted": dict(self.accepted)}


# ------------------------------------------------------------------ gaps


def _back_gap(config, site, u, skip=()):
    """Backward distance from ``u`` to the nearest event on ``site`` not tagged in ``skip``."""
    best = 1.0
    for t, tag in zip(config.times[site], config.tags[site]):
        if tag in skip:
            continue
        d = (u - t) % 1.0
        if 0 < d < best:
            best = d
    return best


def _fwd_gap(config, site, u, skip=()):
    best = 1.0
    for t, tag in zip(config.times[site], config.tags[site]):
        if tag in skip:
            continue
        d = (t - u) % 1.0
        if 0 < d < best:
            best = d
    return best


def _flip_action(config, model, table, site, start, length, occupied):
    """beta * integral of the diagonal-energy change when ``site`` flips on an arc."""
    F = config.field(table, site, start, length)
    sign = -1.0 if occupied else 1.0
    return config.beta * sign * (model.V * F - model.mu * length)


def _hop_action(config, model, table, emptying, filling, start, length):
    """beta * integral of V (F_filling - F_emptying) over an arc where a particle changes site."""
    pair = (emptying, filling)
    F_out = config.field(table, emptying, start, length, exclude=pair)
    F_in = config.field(table, filling, start, length, exclude=pair)
    return config.beta * model.V * (F_in - F_out)


def _log_t(model):
    return np.log(model.t) if model.t > 0 else -np.inf


# --------------------------------------------------------------- log ratios


def _open_window(config, site, u_tail, forward):
    if forward:
        return config.forward_distance(site, u_tail)
    return config.backward_distance(site, u_tail)


def log_ratio_open(config, model, table, site, u_tail, u_head, forward=True):
    """Log acceptance ratio for opening a worm on ``site``.

    A forward worm flips [u_tail, u_head) with ``u_head`` inside the window up to
    the next event; a backward worm flips [u_head, u_tail) with ``u_head`` inside
    the window back to the previous event.

    returns:
        (tuple): (log ratio, action change)
    """
    window = _open_window(config, site, u_tail, forward)
    start, stop = (u_tail, u_head) if forward else (u_head, u_tail)
    length = (stop - start) % 1.0
    occupied = config.occupation_at(site, start)
    dS = _flip_action(config, model, table, site, start, length, occupied)
    log_r = np.log(model.worm_fugacity) - dS + np.log(window) + np.log(P_WORM_MOVE)
    return log_r, dS


def log_ratio_close(config, model, table, forward=True):
    """Log acceptance ratio for closing the worm. Requires ``config.can_close(forward)``."""
    site, u_tail = config.worm[TAIL]
    _, u_head = config.worm[HEAD]
    start, stop = (u_tail, u_head) if forward else (u_head, u_tail)
    length = (stop - start) % 1.0
    occupied = config.occupation_at(site, start)
    dS = _flip_action(config, model, table, site, start, length, occupied)
    if forward:
        window = _fwd_gap(config, site, u_tail, skip=(TAIL, HEAD))
    else:
        window = _back_gap(config, site, u_tail, skip=(TAIL, HEAD))
    log_r = -np.log(model.worm_fugacity) - dS - np.log(window) - np.log(P_WORM_MOVE)
    return log_r, dS


def _move_geometry(config, end, u_new):
    """(forward, start, length) of the arc swept by moving ``end`` to ``u_new`` within its gap."""
    site, u_old = config.worm[end]
    prev, _ = config.gap(site, u_old)
    v_old = (u_old - prev) % 1.0
    v_new = (u_new - prev) % 1.0
    if v_new > v_old:
        return True, u_old, v_new - v_old
    return False, u_new, v_old - v_new


def log_ratio_move(config, model, table, end, u_new):
    """Log acceptance ratio for moving a worm end to ``u_new`` inside its gap."""
    site, u_old = config.worm[end]
    forward, start, length = _move_geometry(config, end, u_new)
    occupied = (
        config.occupation_at(site, u_old)
        if forward
        else config.occupation_before(site, u_old)
    )
    dS = _flip_action(config, model, table, site, start, length, occupied)
    return -dS, dS


def insert_window(config, end, slot, later):
    """Length of the time window for a kink across ``slot`` next to ``end``, or 0 if blocked.

    A later kink needs the neighbor occupied as the end's site is just before the
    end, an earlier kink needs it in the opposite state.
    """
    a, u_end = config.worm[end]
    b = config.lattice.other_end(slot, a)
    if config.has_event_time(b, u_end):
        return 0.0
    wanted = config.end_type(end) if later else 1 - config.end_type(end)
    if config.occupation_before(b, u_end) != wanted:
        return 0.0
    gap = _fwd_gap if later else _back_gap
    return min(gap(config, a, u_end, skip=(end,)), gap(config, b, u_end))


def _kink_arc(u_end, u_kink, later):
    if later:
        return u_end, (u_kink - u_end) % 1.0
    return u_kink, (u_end - u_kink) % 1.0


def _arc_hop(config, model, table, a, b, start, length, a_occupied):
    if a_occupied:
        return _hop_action(config, model, table, a, b, start, length)
    return _hop_action(config, model, table, b, a, start, length)


def _kink_log_measure(config, model, site, window):
    return (
        _log_t(model)
        + np.log(config.beta)
        + np.log(config.lattice.coordination(site))
        + np.log(window)
    )


def log_ratio_insert(config, model, table, end, slot, u_kink, later):
    """Log acceptance ratio for inserting a kink at ``u_kink`` that carries ``end`` across ``slot``."""
    a, u_end = config.worm[end]
    b = config.lattice.other_end(slot, a)
    window = insert_window(config, end, slot, later)
    start, length = _kink_arc(u_end, u_kink, later)
    a_occupied = (
        config.occupation_at(a, u_end) if later else config.occupation_before(a, u_end)
    )
    dS = _arc_hop(config, model, table, a, b, start, length, a_occupied)
    log_r = _kink_log_measure(config, model, a, window) - dS
    return log_r, dS


def log_ratio_delete(config, model, table, end, later):
    """Log acceptance ratio for deleting the kink next to ``end``. Requires a deletable kink."""
    kid, a = config.deletable_kink(end, later)
    b, u_end = config.worm[end]
    start, length = _kink_arc(u_end, config.kinks[kid].time, later)
    gap = _fwd_gap if later else _back_gap
    window = min(
        gap(config, a, u_end, skip=(kid,)),
        gap(config, b, u_end, skip=(kid, end)),
    )
    b_occupied = (
        config.occupation_at(b, u_end) if later else config.occupation_before(b, u_end)
    )
    dS = _arc_hop(config, model, table, b, a, start, length, b_occupied)
    log_r = -_kink_log_measure(config, model, a, window) - dS
    return log_r, dS


# ------------------------------------------------------------------ updates


def _accept(rng, log_r):
    if log_r >= 0:
        return True
    if not np.isfinite(log_r):
        return False
    return rng.random() < np.exp(log_r)


def _free_time(config, u):
    # continuous draws never collide in practice; a collision is treated as a rejection
    return not any(config.has_event_time(s, u) for s in range(config.n_sites))


def update(config, model, table, rng, stats):
    """Perform one elementary worm update.

    Without a worm the only move is opening one, forward or backward in time
    with equal probability. With a worm, close, move, insert and delete are
    chosen with equal probability; one of the two ends and, for kinks, the
    side of the end the kink goes on are picked at random.

    returns:
        (bool): Whether the proposal was accepted
    """
    if config.worm is None:
        site = int(rng.integers(config.n_sites))
        forward = bool(rng.integers(2))
        u_tail = rng.random()
        offset = _open_window(config, site, u_tail, forward) * rng.random()
        u_head = (u_tail + offset) % 1.0 if forward else (u_tail - offset) % 1.0
        if u_head == u_tail or not _free_time(config, u_tail) or not _free_time(config, u_head):
            stats.record("open", False)
            return False
        log_r, dS = log_ratio_open(config, model, table, site, u_tail, u_head, forward)
        ok = _accept(rng, log_r)
        if ok:
            config.open_worm(site, u_tail, u_head, forward)
        stats.record("open", ok, -dS)
        return ok

    choice = int(rng.integers(4))
    if choice == 0:
        forward = bool(rng.integers(2))
        if not config.can_close(forward):
            stats.record("close", False)
            return False
        log_r, dS = log_ratio_close(config, model, table, forward)
        ok = _accept(rng, log_r)
        if ok:
            config.close_worm(forward)
        stats.record("close", ok, -dS)
        return ok

    end = TAIL if rng.integers(2) == 0 else HEAD
    site, u_old = config.worm[end]

    if choice == 1:
        prev, nxt = config.gap(site, u_old)
        span = (nxt - prev) % 1.0 or 1.0
        u_new = (prev + span * rng.random()) % 1.0
        if u_new == prev or not _free_time(config, u_new):
            stats.record("move", False)
            return False
        forward, _, _ = _move_geometry(config, end, u_new)
        log_r, dS = log_ratio_move(config, model, table, end, u_new)
        ok = _accept(rng, log_r)
        if ok:
            config.move_end(end, u_new, forward)
        stats.record("move", ok, -dS)
        return ok

    later = bool(rng.integers(2))
    if choice == 2:
        bonds = config.lattice.site_bonds[site]
        slot = bonds[int(rng.integers(len(bonds)))]
        window = insert_window(config, end, slot, later)
        if window <= 0 or model.t <= 0:
            stats.record("insert", False)
            return False
        offset = window * rng.random()
        u_kink = (u_old + offset) % 1.0 if later else (u_old - offset) % 1.0
        if u_kink == u_old or not _free_time(config, u_kink):
            stats.record("insert", False)
            return False
        log_r, dS = log_ratio_insert(config, model, table, end, slot, u_kink, later)
        ok = _accept(rng, log_r)
        if ok:
            config.insert_kink_at_end(end, slot, u_kink, later)
        stats.record("insert", ok, _log_t(model) - dS)
        return ok

    if config.deletable_kink(end, later) is None:
        stats.record("delete", False)
        return False
    log_r, dS = log_ratio_delete(config, model, table, end, later)
    ok = _accept(rng, log_r)
    if ok:
        config.delete_kink_at_end(end, later)
    stats.record("delete", ok, -_log_t(model) - dS)
    return ok


def sweep_length(config, model, mean_kinks=None):
    """Number of elementary updates in one sweep: site count times (1 + kinks per site).

    ``mean_kinks`` is a measured average kink count; without it beta t kinks per
    site are assumed. A chain fixes the length once, so sweep ends do not depend
    on the current configuration.
    """
    if mean_kinks is None:
        per_site = np.ceil(config.beta * model.t) if model.t > 0 else 0.0
    else:
        per_site = np.ceil(mean_kinks / config.n_sites)
    return int(config.n_sites * (1 + per_site))


def sweep(config, model, table, rng, stats=None, debug_checks=False, n_updates=None):
    """Apply one sweep of elementary worm updates.

    args:
        config (Configuration): Configuration, closed or with a worm
        model (ModelSpec): Model
        table (InteractionTable): Interaction pairs
        rng (numpy.random.Generator): Random stream
        stats (UpdateStats): Counters to update. Default creates new ones.
        debug_checks (bool): Verify worldline invariants after every accepted update
        n_updates (int): Number of updates. Default is :func:`sweep_length`.

    returns:
        (UpdateStats): Counters
    """
    if stats is None:
        stats = UpdateStats()
    if n_updates is None:
        n_updates = sweep_length(config, model)
    for _ in range(n_updates):
        accepted = update(config, model, table, rng, stats)
        if debug_checks and accepted:
            check_invariants(config)
    return stats
