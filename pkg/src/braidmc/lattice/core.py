import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..universal import DuplicateBondWarning

__all__ = ("LATTICE_KINDS", "LatticeSpec", "Lattice", "build_lattice", "neighbors")

LATTICE_KINDS = ("square", "kagome", "chain")

_SQRT3 = np.sqrt(3.0)

# kagome: Bravais vectors and basis (A, B, C), nearest-neighbor distance 1
_KAGOME_A1 = np.array([2.0, 0.0])
_KAGOME_A2 = np.array([1.0, _SQRT3])
_KAGOME_BASIS = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, _SQRT3 / 2]])


@dataclass(frozen=True)
class LatticeSpec:
    """Periodic lattice geometry.

    args:
        kind (str): 'square', 'kagome' or 'chain'
        L (int): Linear size, in sites (square, chain) or unit cells (kagome)
        Ly (int): Number of rows for a rectangular square lattice. Default is L.

    """

    kind: str
    L: int
    Ly: Optional[int] = None

    def __post_init__(self):
        if self.kind not in LATTICE_KINDS:
            raise ValueError(
                "lattice kind '{}' not supported. Allowed kinds are {}".format(
                    self.kind, LATTICE_KINDS
                )
            )
        if int(self.L) != self.L or self.L < 2:
            raise ValueError("L must be an integer >= 2. got {}".format(self.L))
        if self.Ly is not None:
            if self.kind != "square":
                raise ValueError("Ly is only supported for square lattices")
            if int(self.Ly) != self.Ly or self.Ly < 2:
                raise ValueError("Ly must be an integer >= 2. got {}".format(self.Ly))

    @property
    def periodic(self):
        return True

    @property
    def Lx(self):
        return int(self.L)

    @property
    def rows(self):
        if self.kind == "square" and self.Ly is not None:
            return int(self.Ly)
        if self.kind == "chain":
            return 1
        return int(self.L)

    @property
    def n_sites(self):
        if self.kind == "square":
            return self.Lx * self.rows
        if self.kind == "kagome":
            return 3 * self.L * self.L
        return self.Lx

    def to_dict(self):
        return {"kind": self.kind, "L": int(self.L), "Ly": self.Ly}

    def label(self):
        """Short label used in file names. *i.e.* 'square4', 'square2x4', 'kagome6'"""
        if self.kind == "square" and self.Ly is not None and self.Ly != self.L:
            return "square{}x{}".format(self.L, self.Ly)
        return "{}{}".format(self.kind, self.L)


@dataclass(frozen=True)
class Lattice:
    """Sites, hop-bond slots and (kagome) hexagons of a periodic lattice.

    Bond slots are unordered site pairs; a pair that appears twice because a
    direction has length 2 is kept as two slots and listed in ``duplicate_pairs``.
    """

    spec: LatticeSpec
    coords: np.ndarray
    bonds: np.ndarray
    hexagons: Tuple[Tuple[int, ...], ...] = ()
    duplicate_pairs: Tuple[Tuple[int, int], ...] = ()
    site_bonds: Tuple[Tuple[int, ...], ...] = field(default=(), repr=False)

    @property
    def n_sites(self):
        return len(self.coords)

    @property
    def n_bonds(self):
        return len(self.bonds)

    def coordination(self, site):
        return len(self.site_bonds[site])

    def other_end(self, bond, site):
        """Site at the other end of bond slot ``bond`` seen from ``site``."""
        i, j = self.bonds[bond]
        if i == site:
            return int(j)
        if j == site:
            return int(i)
        raise ValueError("site {} is not on bond {}".format(site, (int(i), int(j))))

    def is_bond(self, i, j):
        for b in self.site_bonds[i]:
            if self.other_end(b, i) == j:
                return True
        return False

    def minimal_image(self, i, j):
        """Minimal-image displacement between sites i and j on the torus."""
        d = self.coords[j] - self.coords[i]
        best = d
        for n1 in (-1, 0, 1):
            for n2 in (-1, 0, 1):
                candidate = d + n1 * self._periods[0] + n2 * self._periods[1]
                if np.hypot(*candidate) < np.hypot(*best) - 1e-12:
                    best = candidate
        return best

    @property
    def _periods(self):
        return _periods(self.spec)

    def distance(self, i, j):
        return float(np.hypot(*self.minimal_image(i, j)))

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "coords": self.coords.tolist(),
            "bonds": self.bonds.tolist(),
            "hexagons": [list(h) for h in self.hexagons],
            "duplicate_pairs": [list(p) for p in self.duplicate_pairs],
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _periods(spec):
    """The two vectors spanning the torus (the second is zero for a chain)."""
    if spec.kind == "square":
        return np.array([[spec.Lx, 0.0], [0.0, spec.rows]])
    if spec.kind == "chain":
        return np.array([[spec.Lx, 0.0], [0.0, 0.0]])
    return np.array([spec.L * _KAGOME_A1, spec.L * _KAGOME_A2])


def build_lattice(spec):
    """Build a periodic lattice.

    args:
        spec (LatticeSpec): Geometry

    returns:
        (Lattice): Lattice with deterministic site indexing (row-major cells, basis A, B, C within a kagome cell)

    examples:
        .. code-block:: python

            >>> lat = build_lattice(LatticeSpec('square', 4))
            >>> lat.n_sites, lat.n_bonds
            (16, 32)
            >>> lat = build_lattice(LatticeSpec('kagome', 2))
            >>> lat.n_sites, lat.n_bonds, len(lat.hexagons)
            (12, 24, 4)

    """
    if spec.kind == "square":
        coords, bonds, hexagons = _square(spec.Lx, spec.rows)
    elif spec.kind == "kagome":
        coords, bonds, hexagons = _kagome(spec.L)
    else:
        coords, bonds, hexagons = _chain(spec.Lx)

    bonds = np.array(bonds, dtype=int).reshape(-1, 2)
    site_bonds = [[] for _ in range(len(coords))]
    for b, (i, j) in enumerate(bonds):
        site_bonds[i].append(b)
        site_bonds[j].append(b)

    seen = set()
    duplicates = []
    for i, j in bonds:
        key = (min(i, j), max(i, j))
        if key in seen and key not in duplicates:
            duplicates.append(key)
        seen.add(key)
    if duplicates:
        warnings.warn(
            "lattice {} has {} site pairs joined by two bond slots (wrap-around of a length-2 direction)".format(
                spec.label(), len(duplicates)
            ),
            DuplicateBondWarning,
        )

    return Lattice(
        spec=spec,
        coords=np.array(coords, dtype=float),
        bonds=bonds,
        hexagons=tuple(tuple(int(s) for s in h) for h in hexagons),
        duplicate_pairs=tuple((int(i), int(j)) for i, j in duplicates),
        site_bonds=tuple(tuple(b) for b in site_bonds),
    )


def neighbors(lattice, site):
    """Return the (bond slot, neighbor site) pairs incident on ``site``.

    args:
        lattice (Lattice): Lattice
        site (int): Site index

    returns:
        (list): [(bond, neighbor), ...], duplicated neighbors appear once per slot
    """
    return [(b, lattice.other_end(b, site)) for b in lattice.site_bonds[site]]


def _square(Lx, Ly):
    def index(x, y):
        return (y % Ly) * Lx + (x % Lx)

    coords = [(x, y) for y in range(Ly) for x in range(Lx)]
    bonds = []
    for y in range(Ly):
        for x in range(Lx):
            bonds.append((index(x, y), index(x + 1, y)))
            bonds.append((index(x, y), index(x, y + 1)))
    return coords, bonds, []


def _chain(L):
    coords = [(x, 0) for x in range(L)]
    if L == 2:
        return coords, [(0, 1)], []
    return coords, [(x, (x + 1) % L) for x in range(L)], []


def _kagome(L):
    def index(x, y, s):
        return 3 * ((y % L) * L + (x % L)) + s

    A, B, C = 0, 1, 2
    coords = []
    for y in range(L):
        for x in range(L):
            origin = x * _KAGOME_A1 + y * _KAGOME_A2
            for s in range(3):
                coords.append(tuple(origin + _KAGOME_BASIS[s]))

    bonds = []
    hexagons = []
    for y in range(L):
        for x in range(L):
            # up triangle
            bonds.append((index(x, y, A), index(x, y, B)))
            bonds.append((index(x, y, A), index(x, y, C)))
            bonds.append((index(x, y, B), index(x, y, C)))
            # down triangle B(x,y) - A(x+1,y) - C(x+1,y-1)
            bonds.append((index(x, y, B), index(x + 1, y, A)))
            bonds.append((index(x, y, C), index(x, y + 1, A)))
            bonds.append((index(x, y, B), index(x + 1, y - 1, C)))
            hexagons.append(
                (
                    index(x, y, B),
                    index(x + 1, y, A),
                    index(x + 1, y, C),
                    index(x, y + 1, B),
                    index(x, y + 1, A),
                    index(x, y, C),
                )
            )
    return coords, bonds, hexagons
