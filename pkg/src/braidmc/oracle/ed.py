import itertools
import logging
import warnings
from dataclasses import dataclass, field
from math import comb
from typing import Dict, Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from ..lattice import build_interactions, diagonal_energy
from ..universal import BasisTooLarge

__all__ = (
    "MAX_GROUND_BASIS",
    "MAX_FULL_BASIS",
    "FockBasis",
    "SpectralData",
    "fock_basis",
    "hamiltonian",
    "ed_solve",
    "thermal_diag",
    "thermal_energy",
)

logger = logging.getLogger("braidmc.oracle")

MAX_GROUND_BASIS = 200_000
MAX_FULL_BASIS = 4_000
# below this size the ground state is found densely
_DENSE_GROUND = 64


@dataclass(frozen=True)
class FockBasis:
    """All occupation vectors of M sites with N particles in lexicographic order.

    ``masks[k]`` encodes state k with site 0 as the most significant bit, so
    integer order is lexicographic order of the vectors.
    """

    M: int
    N: int
    states: np.ndarray
    masks: np.ndarray
    index: Dict[int, int] = field(repr=False, default_factory=dict)

    def __len__(self):
        return len(self.states)

    def mask_of(self, occupations):
        mask = 0
        for n in occupations:
            mask = (mask << 1) | int(n)
        return mask

    def index_of(self, occupations):
        return self.index[self.mask_of(occupations)]


def fock_basis(M, N):
    """Fixed-N Fock basis.

    args:
        M (int): Number of sites
        N (int): Number of particles

    returns:
        (FockBasis): ``comb(M, N)`` states

    examples:
        .. code-block:: python

            >>> fock_basis(3, 2).states.tolist()
            [[0, 1, 1], [1, 0, 1], [1, 1, 0]]

    """
    if not 0 <= N <= M:
        raise ValueError("need 0 <= N <= M. got N={}, M={}".format(N, M))
    states = []
    for occupied in itertools.combinations(range(M), N):
        state = np.zeros(M, dtype=np.int8)
        state[list(occupied)] = 1
        states.append(state)
    states.sort(key=tuple)
    states = np.array(states, dtype=np.int8).reshape(-1, M)
    masks = np.array([int("".join(map(str, s)), 2) if M else 0 for s in states], dtype=object)
    index = {int(m): k for k, m in enumerate(masks)}
    return FockBasis(M=M, N=N, states=states, masks=masks, index=index)


@dataclass(frozen=True)
class SpectralData:
    """Eigenpairs of the fixed-N Hamiltonian.

    ``ground`` is normalized with non-negative sum; ``vectors`` is set in full mode only.
    """

    basis: FockBasis
    eigenvalues: np.ndarray
    ground: np.ndarray
    mode: str
    vectors: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def ground_energy(self):
        return float(self.eigenvalues[0])

    def is_positive(self, tol=0.0):
        """True when every ground-state coefficient exceeds ``tol``."""
        return bool(np.all(self.ground > tol))

    def to_dict(self):
        return {
            "mode": self.mode,
            "basis_size": len(self.basis),
            "eigenvalues": [float(e) for e in self.eigenvalues],
            "ground": [float(c) for c in self.ground],
        }


def hamiltonian(lattice, table, model, basis):
    """Sparse H = -t sum_slots (a_i^dag a_j + h.c.) + V sum c_ij n_i n_j on a fixed-N basis.

    Each bond slot contributes its own hopping term, so a site pair joined by
    two slots hops with amplitude 2t. The chemical potential is omitted.
    """
    K = len(basis)
    diag = np.array([diagonal_energy(s, table, model.V) for s in basis.states])
    rows, cols, vals = [], [], []
    M = basis.M
    for k, (state, mask) in enumerate(zip(basis.states, basis.masks)):
        for i, j in lattice.bonds:
            if state[i] == state[j]:
                continue
            flipped = int(mask) ^ (1 << (M - 1 - int(i))) ^ (1 << (M - 1 - int(j)))
            rows.append(basis.index[flipped])
            cols.append(k)
            vals.append(-model.t)
    H = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(K, K)).tocsr()
    return H + scipy.sparse.diags(diag)


def ed_solve(lattice, model, N, mode="ground", table=None):
    """Exact diagonalization in the N-particle sector.

    args:
        lattice (Lattice): Lattice
        model (ModelSpec): Model (t, V and kind are used)
        N (int): Particle number
        mode (str): 'ground' (iterative, lowest state only) or 'full' (dense, all states)
        table (InteractionTable): Interaction pairs. Default builds them from ``model``.

    returns:
        (SpectralData): Eigenvalues ascending, ground vector with positive-sum sign convention
    """
    if mode not in ("ground", "full"):
        raise ValueError("mode must be 'ground' or 'full'. got '{}'".format(mode))
    K = comb(lattice.n_sites, N)
    limit = MAX_GROUND_BASIS if mode == "ground" else MAX_FULL_BASIS
    if K > limit:
        raise BasisTooLarge(
            "basis size {} exceeds the {} mode limit of {}".format(K, mode, limit)
        )
    if table is None:
        table = build_interactions(lattice, model.kind, model.cutoff)
    basis = fock_basis(lattice.n_sites, N)
    H = hamiltonian(lattice, table, model, basis)
    logger.debug("ed_solve: %s mode, basis size %d", mode, K)

    vectors = None
    if mode == "full" or K <= _DENSE_GROUND:
        eigenvalues, vecs = scipy.linalg.eigh(H.toarray())
        ground = vecs[:, 0]
        if mode == "full":
            vectors = vecs
        else:
            eigenvalues = eigenvalues[:1]
    else:
        eigenvalues, vecs = scipy.sparse.linalg.eigsh(H, k=1, which="SA", tol=1e-10)
        ground = vecs[:, 0]

    ground = ground / np.linalg.norm(ground)
    if ground.sum() < 0:
        ground = -ground
    spectral = SpectralData(
        basis=basis, eigenvalues=np.asarray(eigenvalues), ground=ground, mode=mode, vectors=vectors
    )
    if model.t > 0 and not spectral.is_positive():
        warnings.warn(
            "ground state has {} non-positive coefficients".format(int(np.sum(ground <= 0))),
            UserWarning,
        )
    return spectral


def _require_full(spectral):
    if spectral.mode != "full":
        raise ValueError("thermal averages need mode='full', got '{}'".format(spectral.mode))


def _boltzmann(spectral, beta):
    E = spectral.eigenvalues
    w = np.exp(-beta * (E - E[0]))
    return w / w.sum()


def thermal_diag(spectral, beta):
    """p(alpha) = <alpha| exp(-beta H) |alpha> / Z over the fixed-N basis.

    args:
        spectral (SpectralData): Full-mode result
        beta (float): Inverse temperature

    returns:
        (numpy.ndarray): Probabilities aligned with ``spectral.basis.states``
    """
    _require_full(spectral)
    w = _boltzmann(spectral, beta)
    return (np.abs(spectral.vectors) ** 2) @ w


def thermal_energy(spectral, beta):
    """<H> at inverse temperature ``beta`` in the fixed-N sector."""
    _require_full(spectral)
    return float(spectral.eigenvalues @ _boltzmann(spectral, beta))
