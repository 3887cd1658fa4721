import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Tuple

import numpy as np

from ..universal import HardCoreViolation, parse_fraction

__all__ = (
    "MODEL_KINDS",
    "ModelSpec",
    "InteractionTable",
    "build_interactions",
    "interaction_partners",
    "diagonal_energy",
    "energy_delta_hop",
)

# model kind -> lattice kind it is defined on
MODEL_KINDS = {
    "nn_square": "square",
    "dipolar_square": "square",
    "hexagon_kagome": "kagome",
    "nn_kagome": "kagome",
    "nn_chain": "chain",
}


@dataclass(frozen=True)
class ModelSpec:
    """Hard-core boson model parameters. Energies in units of the hopping scale chosen by the user.

    args:
        kind (str): Interaction model, one of ``MODEL_KINDS``
        t (float): Hopping amplitude. t = 0 is accepted as the classical limit.
        V (float): Interaction strength
        mu (float): Chemical potential, a sampling control only
        filling (Fraction): N / site count, 0 < filling < 1
        beta (float): Inverse temperature
        cutoff (float): Dipolar cutoff distance (inclusive)
        worm_fugacity (float): Constant weight of the worm sector

    """

    kind: str
    t: float
    V: float
    mu: float = 0.0
    filling: Fraction = Fraction(1, 2)
    beta: float = 18.0
    cutoff: float = 4.0
    worm_fugacity: float = 1.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(
                "model kind '{}' not supported. Allowed kinds are {}".format(
                    self.kind, tuple(MODEL_KINDS)
                )
            )
        object.__setattr__(self, "filling", parse_fraction(self.filling))
        if self.t < 0:
            raise ValueError("t must be >= 0. got {}".format(self.t))
        if not 0 < self.filling < 1:
            raise ValueError("filling must be in (0, 1). got {}".format(self.filling))
        if self.beta <= 0:
            raise ValueError("beta must be > 0. got {}".format(self.beta))
        if self.worm_fugacity <= 0:
            raise ValueError(
                "worm_fugacity must be > 0. got {}".format(self.worm_fugacity)
            )
        if self.cutoff <= 0:
            raise ValueError("cutoff must be > 0. got {}".format(self.cutoff))

    def target_N(self, n_sites):
        """Particle number filling * n_sites. Raises ValueError if not an integer."""
        N = self.filling * n_sites
        if N.denominator != 1:
            raise ValueError(
                "filling {} is incommensurate with {} sites".format(self.filling, n_sites)
            )
        return int(N)

    def with_mu(self, mu):
        return replace(self, mu=float(mu))

    def to_dict(self):
        return {
            "kind": self.kind,
            "t": float(self.t),
            "V": float(self.V),
            "mu": float(self.mu),
            "filling": str(self.filling),
            "beta": float(self.beta),
            "cutoff": float(self.cutoff),
            "worm_fugacity": float(self.worm_fugacity),
        }


@dataclass(frozen=True)
class InteractionTable:
    """Unordered site pairs with coefficients c_ij > 0, in units of V."""

    pairs: np.ndarray
    coeffs: np.ndarray
    model_kind: str
    n_sites: int
    partners: Tuple[Tuple[np.ndarray, np.ndarray], ...] = field(default=(), repr=False)

    def __post_init__(self):
        if np.any(self.coeffs <= 0):
            raise ValueError("interaction coefficients must be > 0")
        partners = [([], []) for _ in range(self.n_sites)]
        for (i, j), c in zip(self.pairs, self.coeffs):
            partners[i][0].append(j)
            partners[i][1].append(c)
            partners[j][0].append(i)
            partners[j][1].append(c)
        object.__setattr__(
            self,
            "partners",
            tuple(
                (np.array(js, dtype=int), np.array(cs, dtype=float))
                for js, cs in partners
            ),
        )

    def __len__(self):
        return len(self.pairs)

    def coefficient(self, i, j):
        js, cs = self.partners[i]
        mask = js == j
        return float(cs[mask].sum())

    def to_dict(self):
        return {
            "model_kind": self.model_kind,
            "n_sites": int(self.n_sites),
            "pairs": [
                [int(i), int(j), float(c)] for (i, j), c in zip(self.pairs, self.coeffs)
            ],
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _merge(raw_pairs):
    """Sum coefficients of repeated unordered pairs, keeping first-seen order."""
    merged = {}
    for i, j, c in raw_pairs:
        key = (min(i, j), max(i, j))
        merged[key] = merged.get(key, 0.0) + c
    pairs = np.array(list(merged.keys()), dtype=int).reshape(-1, 2)
    coeffs = np.array(list(merged.values()), dtype=float)
    return pairs, coeffs


def build_interactions(lattice, model_kind, cutoff=4.0):
    """Build the diagonal interaction table of a model on a lattice.

    args:
        lattice (Lattice): Lattice
        model_kind (str): One of 'nn_square', 'dipolar_square', 'hexagon_kagome', 'nn_kagome', 'nn_chain'
        cutoff (float): Dipolar cutoff (inclusive), at most half the shortest lattice extent

    returns:
        (InteractionTable): Pair table. Nearest-neighbor tables are built per bond slot, so a pair joined by two slots has c = 2.

    examples:
        .. code-block:: python

            >>> lat = build_lattice(LatticeSpec('square', 12))
            >>> table = build_interactions(lat, 'dipolar_square', cutoff=4)
            >>> table.coefficient(0, 2)
            0.125

    """
    if model_kind not in MODEL_KINDS:
        raise ValueError(
            "model kind '{}' not supported. Allowed kinds are {}".format(
                model_kind, tuple(MODEL_KINDS)
            )
        )
    if MODEL_KINDS[model_kind] != lattice.spec.kind:
        raise ValueError(
            "model '{}' requires a {} lattice, got {}".format(
                model_kind, MODEL_KINDS[model_kind], lattice.spec.kind
            )
        )

    if model_kind in ("nn_square", "nn_kagome", "nn_chain"):
        raw = [(int(i), int(j), 1.0) for i, j in lattice.bonds]
    elif model_kind == "hexagon_kagome":
        raw = []
        for hexagon in lattice.hexagons:
            for a in range(6):
                for b in range(a + 1, 6):
                    raw.append((hexagon[a], hexagon[b], 1.0))
    else:
        raw = _dipolar_pairs(lattice, cutoff)

    pairs, coeffs = _merge(raw)
    return InteractionTable(
        pairs=pairs, coeffs=coeffs, model_kind=model_kind, n_sites=lattice.n_sites
    )


def _dipolar_pairs(lattice, cutoff):
    spec = lattice.spec
    half = min(spec.Lx, spec.rows) / 2
    if cutoff > half:
        raise ValueError(
            "dipolar cutoff {} exceeds half the lattice extent ({}); minimal image is ambiguous".format(
                cutoff, half
            )
        )
    M = lattice.n_sites
    i, j = np.triu_indices(M, k=1)
    d = lattice.coords[j] - lattice.coords[i]
    extent = np.array([spec.Lx, spec.rows], dtype=float)
    d -= extent * np.round(d / extent)
    r = np.hypot(d[:, 0], d[:, 1])
    # tolerance keeps pairs sitting exactly on the cutoff
    keep = (r > 0) & (r <= cutoff + 1e-9)
    return [(int(a), int(b), float(rr ** -3)) for a, b, rr in zip(i[keep], j[keep], r[keep])]


def interaction_partners(table, site):
    """Return ``(partners, coefficients)`` arrays of ``site``."""
    return table.partners[site]


def _validate_fock(fock, n_sites):
    fock = np.asarray(fock)
    if fock.shape != (n_sites,):
        raise ValueError(
            "fock state must have length {}. got shape {}".format(n_sites, fock.shape)
        )
    if np.any((fock != 0) & (fock != 1)):
        raise HardCoreViolation("occupations must be 0 or 1")
    return fock.astype(np.int64)


def diagonal_energy(fock, table, V, mu=0.0, N=None):
    """Diagonal energy V * sum c_ij n_i n_j - mu * N of a Fock state.

    args:
        fock (array-like): Occupations, 0 or 1 per site
        table (InteractionTable): Interaction pairs
        V (float): Interaction strength
        mu (float): Chemical potential
        N (int): Particle number. Default is the number of occupied sites.

    returns:
        (float): Energy
    """
    fock = _validate_fock(fock, table.n_sites)
    if N is None:
        N = int(fock.sum())
    if len(table) == 0:
        pair_sum = 0.0
    else:
        occupied = fock[table.pairs[:, 0]] * fock[table.pairs[:, 1]]
        pair_sum = float(np.dot(table.coeffs, occupied))
    return V * pair_sum - mu * N


def local_field(fock, table, site, exclude=()):
    """sum_j c_site,j n_j over partners j of ``site`` not in ``exclude``."""
    js, cs = table.partners[site]
    if len(js) == 0:
        return 0.0
    mask = np.ones(len(js), dtype=bool)
    for e in exclude:
        mask &= js != e
    return float(np.dot(cs[mask], np.asarray(fock)[js[mask]]))


def energy_delta_hop(fock, i, j, table, V, mu=0.0):
    """Change in diagonal energy when the particle on i hops to the empty site j.

    Only the partners of i and j are touched; mu cancels at fixed N.

    args:
        fock (array-like): Occupations before the hop
        i (int): Source site (occupied)
        j (int): Destination site (empty)
        table (InteractionTable): Interaction pairs
        V (float): Interaction strength
        mu (float): Chemical potential

    returns:
        (float): E(after) - E(before)
    """
    fock = np.asarray(fock)
    if i == j:
        raise ValueError("source and destination must differ")
    if fock[i] != 1 or fock[j] != 0:
        raise HardCoreViolation(
            "hop {}->{} needs n_i=1 and n_j=0, got n_i={} and n_j={}".format(
                i, j, fock[i], fock[j]
            )
        )
    F_i = local_field(fock, table, i, exclude=(i, j))
    F_j = local_field(fock, table, j, exclude=(i, j))
    return V * (F_j - F_i)
