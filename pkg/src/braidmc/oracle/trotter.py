import itertools
import logging
from dataclasses import dataclass, field
from math import comb, factorial
from typing import Dict, Tuple

import numpy as np
import scipy.linalg

from ..lattice import build_interactions, diagonal_energy
from ..universal import DimensionTooLarge, ExtrapolationUnstable
from ..worldlines import CycleVector

__all__ = (
    "MAX_LABELED_DIMENSION",
    "EXTRAPOLATION_TOLERANCE",
    "TrotterResult",
    "labeled_placements",
    "labeled_hamiltonian",
    "cycle_distribution",
    "trotter_cycles",
)

logger = logging.getLogger("braidmc.oracle")

# dense D x D propagators: 2048**2 doubles is 32 MB per matrix
MAX_LABELED_DIMENSION = 2048
EXTRAPOLATION_TOLERANCE = 1e-4


@dataclass(frozen=True)
class TrotterResult:
    """Cycle-length distributions of the labeled-particle oracle.

    ``per_dtau`` maps each effective time step to a distribution, ``extrapolated``
    is the dtau -> 0 limit from a quadratic fit in dtau**2 and ``exact`` comes
    from the matrix exponential of the full labeled Hamiltonian.
    """

    classes: Tuple[CycleVector, ...]
    per_dtau: Dict[float, Dict[CycleVector, float]]
    extrapolated: Dict[CycleVector, float]
    exact: Dict[CycleVector, float]
    residual: float
    dimension: int = 0
    slices: Dict[float, int] = field(default_factory=dict)

    def to_dict(self):
        def _dist(d):
            return {str(q): float(p) for q, p in sorted(d.items(), key=lambda kv: kv[0].counts)}

        return {
            "dimension": self.dimension,
            "residual": self.residual,
            "per_dtau": {str(dt): _dist(d) for dt, d in self.per_dtau.items()},
            "extrapolated": _dist(self.extrapolated),
            "exact": _dist(self.exact),
        }


def labeled_placements(M, N):
    """All injective placements of N labeled particles on M sites, as tuples (site of label 0, ...)."""
    return list(itertools.permutations(range(M), N))


def labeled_hamiltonian(lattice, table, model, placements):
    """Diagonal energies and hopping matrix of distinguishable hard-core particles.

    returns:
        (tuple): (E, H1) with ``E`` the diagonal energies and ``H1`` the dense hopping part (-t per bond slot)
    """
    index = {p: k for k, p in enumerate(placements)}
    D = len(placements)
    M = lattice.n_sites
    E = np.empty(D)
    H1 = np.zeros((D, D))
    for k, placement in enumerate(placements):
        occupations = np.zeros(M, dtype=np.int8)
        occupations[list(placement)] = 1
        E[k] = diagonal_energy(occupations, table, model.V)
        where = {site: label for label, site in enumerate(placement)}
        for i, j in lattice.bonds:
            for src, dst in ((int(i), int(j)), (int(j), int(i))):
                if src in where and dst not in where:
                    moved = list(placement)
                    moved[where[src]] = dst
                    H1[index[tuple(moved)], k] -= model.t
    return E, H1


def _cycle_type(perm):
    N = len(perm)
    counts = [0] * N
    seen = [False] * N
    for start in range(N):
        if seen[start]:
            continue
        length = 0
        current = start
        while not seen[current]:
            seen[current] = True
            current = perm[current]
            length += 1
        counts[length - 1] += 1
    return CycleVector(tuple(counts))


def cycle_distribution(propagator, placements, N):
    """Cycle-type probabilities of the closed trace sum_sigma sum_x <sigma x|P|x>.

    args:
        propagator (numpy.ndarray): Imaginary-time propagator on the labeled placements
        placements (list): Placements matching the propagator's basis
        N (int): Particle number

    returns:
        (dict): CycleVector -> probability
    """
    index = {p: k for k, p in enumerate(placements)}
    totals = {}
    for sigma in itertools.permutations(range(N)):
        q = _cycle_type(sigma)
        # final placement where label l sits on the start site of label sigma(l)
        targets = [index[tuple(p[sigma[l]] for l in range(N))] for p in placements]
        amplitude = float(propagator[targets, np.arange(len(placements))].sum())
        totals[q] = totals.get(q, 0.0) + amplitude
    Z = sum(totals.values())
    return {q: v / Z for q, v in totals.items()}


def trotter_cycles(lattice, model, N, beta, dtau_list, table=None, tolerance=EXTRAPOLATION_TOLERANCE):
    """Exact permutation-cycle statistics of small systems from a Trotterized labeled-particle propagator.

    For each time step the propagator ``(A exp(-dtau H1) A)**n`` with
    ``A = exp(-dtau E / 2)`` and ``n = beta / dtau`` slices is closed with all
    label permutations; the results are extrapolated to dtau -> 0 with a
    quadratic polynomial in dtau**2.

    args:
        lattice (Lattice): Lattice
        model (ModelSpec): Model (t, V and kind are used)
        N (int): Particle number
        beta (float): Inverse temperature
        dtau_list (list): At least three time steps; each is rounded so beta / dtau is an integer
        table (InteractionTable): Interaction pairs. Default builds them from ``model``.
        tolerance (float): Largest accepted gap between linear and quadratic extrapolations

    returns:
        (TrotterResult): Distributions per dtau, extrapolated and exact
    """
    if len(dtau_list) < 3:
        raise ValueError("need at least 3 dtau values, got {}".format(len(dtau_list)))
    M = lattice.n_sites
    dimension = factorial(N) * comb(M, N)
    if dimension > MAX_LABELED_DIMENSION:
        raise DimensionTooLarge(
            "labeled dimension {} exceeds {}".format(dimension, MAX_LABELED_DIMENSION)
        )
    if table is None:
        table = build_interactions(lattice, model.kind, model.cutoff)

    placements = labeled_placements(M, N)
    E, H1 = labeled_hamiltonian(lattice, table, model, placements)
    E0 = E.min()

    per_dtau = {}
    slices = {}
    for dtau in sorted(dtau_list, reverse=True):
        n = max(1, int(round(beta / dtau)))
        step = beta / n
        if step in per_dtau:
            continue
        half = np.exp(-0.5 * step * (E - E0))
        T = half[:, None] * scipy.linalg.expm(-step * H1) * half[None, :]
        P = np.linalg.matrix_power(T, n)
        per_dtau[step] = cycle_distribution(P, placements, N)
        slices[step] = n
        logger.debug("trotter_cycles: dtau=%g, slices=%d", step, n)

    if len(per_dtau) < 3:
        raise ValueError("dtau values collapse to fewer than 3 distinct slice counts")

    exact = cycle_distribution(
        scipy.linalg.expm(-beta * (np.diag(E - E0) + H1)), placements, N
    )

    classes = sorted(
        set().union(*[d.keys() for d in per_dtau.values()], exact.keys()), key=lambda q: q.counts
    )
    steps = np.array(sorted(per_dtau))
    x = steps ** 2
    extrapolated = {}
    residual = 0.0
    for q in classes:
        y = np.array([per_dtau[s].get(q, 0.0) for s in steps])
        quad = np.polyfit(x, y, 2)[-1]
        lin = np.polyfit(x, y, 1)[-1]
        extrapolated[q] = float(quad)
        residual = max(residual, abs(quad - lin))
    if residual > tolerance:
        raise ExtrapolationUnstable(
            "extrapolation residual {:.3g} exceeds {:.3g}; use smaller dtau".format(residual, tolerance)
        )
    return TrotterResult(
        classes=tuple(classes),
        per_dtau=per_dtau,
        extrapolated=extrapolated,
        exact=exact,
        residual=float(residual),
        dimension=dimension,
        slices=slices,
    )
