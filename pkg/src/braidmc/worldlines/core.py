import copy
import json
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..lattice import energy_delta_hop, diagonal_energy
from ..universal import (
    HardCoreViolation,
    WormPresentError,
    counts_to_str,
    str_to_counts,
)

__all__ = (
    "TAIL",
    "HEAD",
    "Kink",
    "CycleVector",
    "Configuration",
    "occupation",
    "fock_state",
    "log_weight",
    "permutation_cycles",
    "shift_time",
    "check_invariants",
    "time_averaged_diagonal_energy",
)

# event tags other than kink ids (which are >= 0)
TAIL = -1
HEAD = -2


@dataclass(frozen=True)
class Kink:
    """A hop src -> dst across bond slot ``slot`` at ``time`` (a fraction of beta)."""

    time: float
    slot: int
    src: int
    dst: int


@dataclass(frozen=True)
class CycleVector:
    """Permutation-cycle counts (n_1, ..., n_N); n_l cycles wind l times around imaginary time.

    examples:
        .. code-block:: python

            >>> q = CycleVector((1, 1, 0))
            >>> q.N, str(q)
            (3, '1-1-0')

    """

    counts: Tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValueError("cycle counts must be >= 0. got {}".format(counts))
        object.__setattr__(self, "counts", counts)

    @property
    def N(self):
        return sum(l * n for l, n in enumerate(self.counts, start=1))

    @property
    def longest(self):
        """Length of the longest cycle present, 0 when empty."""
        for l in range(len(self.counts), 0, -1):
            if self.counts[l - 1] > 0:
                return l
        return 0

    @classmethod
    def trivial(cls, N):
        return cls((N,) + (0,) * (N - 1))

    @classmethod
    def from_string(cls, string):
        return cls(str_to_counts(string))

    def __str__(self):
        return counts_to_str(self.counts)

    def __lt__(self, other):
        return self.counts < other.counts


class Configuration:
    """Continuous imaginary-time worldlines of hard-core bosons.

    Times are stored as fractions of beta in [0, 1). Every event on a site (a kink
    endpoint or a worm end) toggles that site's occupation, so the occupation at
    ``u`` is ``fock0[site]`` xor the parity of events at times <= ``u``.

    args:
        lattice (Lattice): Lattice the worldlines live on
        fock0 (array-like): Occupations at imaginary time 0
        beta (float): Inverse temperature

    """

    def __init__(self, lattice, fock0, beta):
        fock0 = np.array(fock0, dtype=np.int8)
        if fock0.shape != (lattice.n_sites,):
            raise ValueError(
                "fock0 must have length {}. got shape {}".format(
                    lattice.n_sites, fock0.shape
                )
            )
        if np.any((fock0 != 0) & (fock0 != 1)):
            raise HardCoreViolation("occupations must be 0 or 1")
        if beta <= 0:
            raise ValueError("beta must be > 0. got {}".format(beta))
        self.lattice = lattice
        self.beta = float(beta)
        self.fock0 = fock0
        self.times = [[] for _ in range(lattice.n_sites)]
        self.tags = [[] for _ in range(lattice.n_sites)]
        self.kinks = {}
        self.worm = None
        self._next_id = 0

    def __repr__(self):
        return "Configuration(sites={}, N0={}, kinks={}, worm={})".format(
            self.n_sites, int(self.fock0.sum()), self.n_kinks, self.worm
        )

    @property
    def n_sites(self):
        return self.lattice.n_sites

    @property
    def n_kinks(self):
        return len(self.kinks)

    @property
    def has_worm(self):
        return self.worm is not None

    @property
    def n_particles(self):
        """Particle number at imaginary time 0."""
        return int(self.fock0.sum())

    def copy(self):
        return copy.deepcopy(self)

    # ------------------------------------------------------------------ queries

    def occupation_at(self, site, u):
        """Occupation of ``site`` at fraction ``u`` of beta (events at ``u`` have taken effect)."""
        return int(self.fock0[site]) ^ (bisect_right(self.times[site], u) & 1)

    def occupation_before(self, site, u):
        """Occupation of ``site`` just before ``u``."""
        return int(self.fock0[site]) ^ (bisect_left(self.times[site], u) & 1)

    def fock_at(self, u):
        return np.array(
            [self.occupation_at(s, u) for s in range(self.n_sites)], dtype=np.int8
        )

    def index_of(self, site, u):
        times = self.times[site]
        idx = bisect_left(times, u)
        if idx == len(times) or times[idx] != u:
            raise KeyError("no event on site {} at {}".format(site, u))
        return idx

    def gap(self, site, u):
        """Times of the events before and after the event at ``u`` on ``site`` (cyclic).

        returns:
            (tuple): (prev, next). Both equal ``u`` when it is the only event on the site.
        """
        times = self.times[site]
        idx = self.index_of(site, u)
        return times[idx - 1], times[(idx + 1) % len(times)]

    def forward_distance(self, site, u):
        """Distance from ``u`` to the next event strictly after it on ``site``; 1 if there is none."""
        times = self.times[site]
        if not times:
            return 1.0
        idx = bisect_right(times, u)
        nxt = times[idx % len(times)]
        d = (nxt - u) % 1.0
        return d if d > 0 else 1.0

    def backward_distance(self, site, u):
        """Distance from ``u`` back to the previous event strictly before it on ``site``; 1 if none."""
        times = self.times[site]
        if not times:
            return 1.0
        idx = bisect_left(times, u)
        prv = times[idx - 1]
        d = (u - prv) % 1.0
        return d if d > 0 else 1.0

    def next_event(self, site, u):
        """(time, tag) of the event following the event at ``u`` on ``site``."""
        idx = self.index_of(site, u)
        nxt = (idx + 1) % len(self.times[site])
        return self.times[site][nxt], self.tags[site][nxt]

    def prev_event(self, site, u):
        idx = self.index_of(site, u)
        return self.times[site][idx - 1], self.tags[site][idx - 1]

    def has_event_time(self, site, u):
        times = self.times[site]
        idx = bisect_left(times, u)
        return idx < len(times) and times[idx] == u

    def occupied_time(self, site, start, length):
        """Time (fraction of beta) that ``site`` is occupied within the arc [start, start + length)."""
        if length <= 0:
            return 0.0
        end = start + length
        if end <= 1.0:
            return self._integral(site, end) - self._integral(site, start)
        return (
            self._integral(site, 1.0)
            - self._integral(site, start)
            + self._integral(site, end - 1.0)
        )

    def _integral(self, site, u):
        occ = int(self.fock0[site])
        last = 0.0
        total = 0.0
        for time in self.times[site]:
            if time > u:
                break
            if occ:
                total += time - last
            occ ^= 1
            last = time
        if occ:
            total += u - last
        return total

    def field(self, table, site, start, length, exclude=()):
        """Time integral over an arc of sum_j c_site,j n_j, skipping partners in ``exclude``."""
        js, cs = table.partners[site]
        total = 0.0
        for j, c in zip(js, cs):
            if j in exclude:
                continue
            total += c * self.occupied_time(int(j), start, length)
        return total

    # ---------------------------------------------------------------- mutation

    def _add_event(self, site, u, tag):
        times = self.times[site]
        idx = bisect_left(times, u)
        if idx < len(times) and times[idx] == u:
            raise ValueError("simultaneous events on site {} at {}".format(site, u))
        times.insert(idx, u)
        self.tags[site].insert(idx, tag)

    def _remove_event(self, site, u):
        idx = self.index_of(site, u)
        self.times[site].pop(idx)
        return self.tags[site].pop(idx)

    def _flip_arc_seam(self, site, start, end):
        # flipping the forward arc [start, end) changes the state at 0 when the arc wraps
        if end < start:
            self.fock0[site] ^= 1

    def add_kink(self, time, src, dst, slot=None):
        """Insert a hop src -> dst at ``time`` (fraction of beta) into a closed configuration.

        Occupancy is not checked here; call :func:`check_invariants` once all
        kinks are in place.

        args:
            time (float): Kink time in [0, 1)
            src (int): Occupied site the particle leaves
            dst (int): Empty neighbor the particle enters
            slot (int): Bond slot. Default is the first slot joining src and dst.

        returns:
            (int): Kink id
        """
        if not 0 <= time < 1:
            raise ValueError("kink time must be in [0, 1). got {}".format(time))
        if slot is None:
            slots = [
                b
                for b in self.lattice.site_bonds[src]
                if self.lattice.other_end(b, src) == dst
            ]
            if not slots:
                raise ValueError("({}, {}) is not a hop bond".format(src, dst))
            slot = slots[0]
        elif self.lattice.other_end(slot, src) != dst:
            raise ValueError("slot {} does not join {} and {}".format(slot, src, dst))
        return self._new_kink(time, slot, src, dst)

    def _new_kink(self, time, slot, src, dst):
        kid = self._next_id
        self._add_event(src, time, kid)
        try:
            self._add_event(dst, time, kid)
        except ValueError:
            self._remove_event(src, time)
            raise
        self.kinks[kid] = Kink(float(time), int(slot), int(src), int(dst))
        self._next_id += 1
        return kid

    def _drop_kink(self, kid):
        kink = self.kinks.pop(kid)
        self._remove_event(kink.src, kink.time)
        self._remove_event(kink.dst, kink.time)
        return kink

    @staticmethod
    def _worm_arc(u_tail, u_head, forward):
        return (u_tail, u_head) if forward else (u_head, u_tail)

    def open_worm(self, site, u_tail, u_head, forward=True):
        """Cut the worldline of ``site`` and mark both ends.

        A forward worm flips the arc [u_tail, u_head), a backward one the arc [u_head, u_tail).
        """
        if self.worm is not None:
            raise ValueError("worm already present")
        self._add_event(site, u_tail, TAIL)
        self._add_event(site, u_head, HEAD)
        self._flip_arc_seam(site, *self._worm_arc(u_tail, u_head, forward))
        self.worm = {TAIL: (site, u_tail), HEAD: (site, u_head)}

    def close_worm(self, forward=True):
        """Inverse of :meth:`open_worm` with the same orientation."""
        (site, u_tail), (_, u_head) = self.worm[TAIL], self.worm[HEAD]
        self._remove_event(site, u_tail)
        self._remove_event(site, u_head)
        self._flip_arc_seam(site, *self._worm_arc(u_tail, u_head, forward))
        self.worm = None

    def can_close(self, forward=True):
        """True when both ends share a site and the head is the event right after
        (``forward``) or right before the tail."""
        if self.worm is None:
            return False
        (s_tail, u_tail), (s_head, _) = self.worm[TAIL], self.worm[HEAD]
        if s_tail != s_head:
            return False
        if forward:
            return self.next_event(s_tail, u_tail)[1] == HEAD
        return self.prev_event(s_tail, u_tail)[1] == HEAD

    def end_type(self, end):
        """1 if the end's site is occupied just before the end (a worldline stops there), else 0."""
        site, u = self.worm[end]
        return self.occupation_before(site, u)

    def move_end(self, end, u_new, forward):
        """Move a worm end along its site; the arc it sweeps flips."""
        site, u_old = self.worm[end]
        self._remove_event(site, u_old)
        self._add_event(site, u_new, end)
        if forward:
            self._flip_arc_seam(site, u_old, u_new)
        else:
            self._flip_arc_seam(site, u_new, u_old)
        self.worm[end] = (site, u_new)

    @staticmethod
    def _kink_arc(u_end, u_kink, later):
        return (u_end, u_kink) if later else (u_kink, u_end)

    def insert_kink_at_end(self, end, slot, u_kink, later):
        """Move a worm end from site a across bond ``slot`` to site b by inserting a kink.

        The kink sits at ``u_kink``, after the end when ``later`` is set and before
        it otherwise. Both a and b flip on the arc between end and kink. A later kink
        needs b occupied as a is just before the end; an earlier kink needs the
        opposite. The window must have been validated by the caller.

        returns:
            (int): Id of the new kink
        """
        a, u_end = self.worm[end]
        b = self.lattice.other_end(slot, a)
        if self.end_type(end):
            src, dst = a, b
        else:
            src, dst = b, a
        start, stop = self._kink_arc(u_end, u_kink, later)
        self._remove_event(a, u_end)
        self._add_event(b, u_end, end)
        self._flip_arc_seam(a, start, stop)
        self._flip_arc_seam(b, start, stop)
        self.worm[end] = (b, u_end)
        return self._new_kink(u_kink, slot, src, dst)

    def deletable_kink(self, end, later):
        """Kink that :meth:`delete_kink_at_end` would remove, or None.

        The event next to the end on its site b (after it when ``later`` is set,
        before it otherwise) must be a kink, and the kink's other site a must have
        no events between the end and the kink.

        returns:
            (tuple): (kink id, site a) or None
        """
        b, u_end = self.worm[end]
        if later:
            time, tag = self.next_event(b, u_end)
        else:
            time, tag = self.prev_event(b, u_end)
        if tag < 0:
            return None
        kink = self.kinks[tag]
        a = kink.src if kink.dst == b else kink.dst
        if self.has_event_time(a, u_end):
            return None
        if later:
            clear = self.forward_distance(a, u_end) >= (time - u_end) % 1.0
        else:
            clear = self.backward_distance(a, u_end) >= (u_end - time) % 1.0
        if not clear:
            return None
        return tag, a

    def delete_kink_at_end(self, end, later):
        """Inverse of :meth:`insert_kink_at_end`. Call :meth:`deletable_kink` first."""
        found = self.deletable_kink(end, later)
        if found is None:
            raise ValueError("no deletable kink next to the worm end")
        kid, a = found
        b, u_end = self.worm[end]
        kink = self._drop_kink(kid)
        start, stop = self._kink_arc(u_end, kink.time, later)
        self._remove_event(b, u_end)
        self._add_event(a, u_end, end)
        self._flip_arc_seam(a, start, stop)
        self._flip_arc_seam(b, start, stop)
        self.worm[end] = (a, u_end)
        return kink

    def to_dict(self):
        return {
            "beta": self.beta,
            "fock0": self.fock0.tolist(),
            "kinks": [
                {"id": kid, "time": k.time, "slot": k.slot, "src": k.src, "dst": k.dst}
                for kid, k in sorted(self.kinks.items())
            ],
            "worm": None
            if self.worm is None
            else {
                "tail": list(self.worm[TAIL]),
                "head": list(self.worm[HEAD]),
            },
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _require_closed(config):
    if config.has_worm:
        raise WormPresentError("operation requires a closed (worm-free) configuration")


def _unit_time(config, tau):
    if not 0 <= tau < config.beta:
        raise ValueError("tau must be in [0, beta={}). got {}".format(config.beta, tau))
    return tau / config.beta


def occupation(config, site, tau):
    """Occupation of ``site`` at imaginary time ``tau`` in [0, beta).

    Events at ``tau`` have already taken effect.
    """
    return config.occupation_at(site, _unit_time(config, tau))


def fock_state(config, tau):
    """Fock state at imaginary time ``tau``. Raises WormPresentError when a worm is present."""
    _require_closed(config)
    return config.fock_at(_unit_time(config, tau))


def _sorted_kinks(config):
    return sorted(config.kinks.values(), key=lambda k: k.time)


def _diagonal_action(config, table, V, mu):
    """Integral over unit imaginary time of the diagonal energy."""
    fock = config.fock0.astype(np.int64)
    energy = diagonal_energy(fock, table, V, mu)
    last = 0.0
    action = 0.0
    for kink in _sorted_kinks(config):
        action += energy * (kink.time - last)
        energy += energy_delta_hop(fock, kink.src, kink.dst, table, V)
        fock[kink.src] = 0
        fock[kink.dst] = 1
        last = kink.time
    return action + energy * (1.0 - last)


def log_weight(config, model, table):
    """Log of the path-integral weight n log t - integral of the diagonal energy over [0, beta).

    args:
        config (Configuration): Closed configuration
        model (ModelSpec): Model (t, V, mu are used)
        table (InteractionTable): Interaction pairs

    returns:
        (float): log weight
    """
    _require_closed(config)
    if model.t <= 0:
        raise ValueError("log_weight requires t > 0. got {}".format(model.t))
    action = _diagonal_action(config, table, model.V, model.mu)
    return config.n_kinks * np.log(model.t) - config.beta * action


def time_averaged_diagonal_energy(config, table, V):
    """Imaginary-time average of V * sum c_ij n_i n_j (no chemical-potential term)."""
    _require_closed(config)
    return _diagonal_action(config, table, V, 0.0)


def permutation_cycles(config):
    """Glue worldlines at beta to 0 and count the permutation cycles.

    returns:
        (CycleVector): Counts (n_1, ..., n_N)

    examples:
        .. code-block:: python

            >>> permutation_cycles(kink_free_config)  # 3 particles
            CycleVector(counts=(3, 0, 0))

    """
    _require_closed(config)
    occupied = np.flatnonzero(config.fock0)
    N = len(occupied)
    if N == 0:
        return CycleVector(())
    owner = {int(site): label for label, site in enumerate(occupied)}
    for kink in _sorted_kinks(config):
        if kink.src not in owner or kink.dst in owner:
            raise HardCoreViolation(
                "kink {}->{} at {} breaks hard-core occupancy".format(
                    kink.src, kink.dst, kink.time
                )
            )
        owner[kink.dst] = owner.pop(kink.src)

    # label that starts on the final site of each label
    start_label = {int(site): label for label, site in enumerate(occupied)}
    successor = np.empty(N, dtype=int)
    for site, label in owner.items():
        if site not in start_label:
            raise HardCoreViolation("worldlines are not periodic in imaginary time")
        successor[label] = start_label[site]

    counts = [0] * N
    seen = np.zeros(N, dtype=bool)
    for label in range(N):
        if seen[label]:
            continue
        length = 0
        current = label
        while not seen[current]:
            seen[current] = True
            current = successor[current]
            length += 1
        counts[length - 1] += 1
    return CycleVector(tuple(counts))


def shift_time(config, delta):
    """Return a copy whose imaginary-time origin is moved to ``delta`` in [0, beta)."""
    u = _unit_time(config, delta)
    shifted = Configuration(config.lattice, config.fock_at(u), config.beta)
    for kink in _sorted_kinks(config):
        shifted._new_kink((kink.time - u) % 1.0, kink.slot, kink.src, kink.dst)
    if config.worm is not None:
        shifted.worm = {}
        for end, (site, t) in config.worm.items():
            t_new = (t - u) % 1.0
            shifted._add_event(site, t_new, end)
            shifted.worm[end] = (site, t_new)
    return shifted


def check_invariants(config):
    """Verify time ordering, hard-core occupancy, periodicity and worm bookkeeping.

    raises:
        HardCoreViolation: On an occupancy or periodicity violation
        ValueError: On broken event bookkeeping
    """
    lattice = config.lattice
    n_events = 0
    for site in range(config.n_sites):
        times = config.times[site]
        if len(times) != len(config.tags[site]):
            raise ValueError("site {}: times and tags out of step".format(site))
        if any(not 0 <= t < 1 for t in times):
            raise ValueError("site {}: event time outside [0, 1)".format(site))
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("site {}: event times not strictly increasing".format(site))
        if len(times) % 2:
            raise HardCoreViolation("site {}: worldline not periodic in time".format(site))
        n_events += len(times)

    worm_events = 0 if config.worm is None else 2
    if n_events != 2 * config.n_kinks + worm_events:
        raise ValueError("event count does not match kinks and worm ends")

    kink_times = set()
    for kid, kink in config.kinks.items():
        if kink.time in kink_times:
            raise ValueError("two kinks share time {}".format(kink.time))
        kink_times.add(kink.time)
        if kink.src == kink.dst or lattice.other_end(kink.slot, kink.src) != kink.dst:
            raise ValueError("kink {} does not follow its bond slot".format(kid))
        for site in (kink.src, kink.dst):
            idx = config.index_of(site, kink.time)
            if config.tags[site][idx] != kid:
                raise ValueError("kink {} missing from site {}".format(kid, site))
        if config.occupation_before(kink.src, kink.time) != 1:
            raise HardCoreViolation("kink {}: source empty before the hop".format(kid))
        if config.occupation_before(kink.dst, kink.time) != 0:
            raise HardCoreViolation("kink {}: destination occupied before the hop".format(kid))

    if config.worm is not None:
        for end, (site, u) in config.worm.items():
            idx = config.index_of(site, u)
            if config.tags[site][idx] != end:
                raise ValueError("worm end {} missing from site {}".format(end, site))
