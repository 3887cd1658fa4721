import numpy as np
import pytest

from braidmc.lattice import (
    LatticeSpec,
    ModelSpec,
    build_interactions,
    build_lattice,
    diagonal_energy,
    energy_delta_hop,
    neighbors,
)
from braidmc.universal import DuplicateBondWarning, HardCoreViolation


def test_square_counts(square4):
    assert square4.n_sites == 16
    assert square4.n_bonds == 32
    assert all(square4.coordination(s) == 4 for s in range(16))
    assert square4.duplicate_pairs == ()


def test_square_indexing(square4):
    # site = y * L + x
    assert square4.is_bond(0, 1)
    assert square4.is_bond(0, 4)
    assert square4.is_bond(0, 3)
    assert square4.is_bond(0, 12)
    assert not square4.is_bond(0, 5)


def test_kagome_counts():
    lattice = build_lattice(LatticeSpec("kagome", 2))
    assert lattice.n_sites == 12
    assert lattice.n_bonds == 24
    assert len(lattice.hexagons) == 4
    assert all(lattice.coordination(s) == 4 for s in range(12))
    membership = np.zeros(12, dtype=int)
    for hexagon in lattice.hexagons:
        assert len(set(hexagon)) == 6
        membership[list(hexagon)] += 1
    assert (membership == 2).all()


def test_square_L2_warns_and_keeps_slots():
    with pytest.warns(DuplicateBondWarning):
        lattice = build_lattice(LatticeSpec("square", 2))
    assert lattice.n_bonds == 8
    assert (0, 1) in lattice.duplicate_pairs
    assert len(neighbors(lattice, 0)) == 4


def test_chain_bonds():
    assert build_lattice(LatticeSpec("chain", 2)).n_bonds == 1
    assert build_lattice(LatticeSpec("chain", 5)).n_bonds == 5


def test_lattice_spec_errors():
    with pytest.raises(ValueError):
        LatticeSpec("triangular", 4)
    with pytest.raises(ValueError):
        LatticeSpec("square", 1)
    with pytest.raises(ValueError):
        LatticeSpec("kagome", 4, Ly=2)


def test_labels():
    assert LatticeSpec("square", 4).label() == "square4"
    assert LatticeSpec("square", 4, Ly=2).label() == "square4x2"
    assert LatticeSpec("kagome", 6).label() == "kagome6"


def test_nn_square_table(square4):
    table = build_interactions(square4, "nn_square")
    assert len(table) == 32
    assert np.all(table.coeffs == 1.0)


def test_duplicate_slots_count_twice(square2):
    table = build_interactions(square2, "nn_square")
    assert table.coefficient(0, 1) == 2.0


def test_dipolar_coefficients():
    lattice = build_lattice(LatticeSpec("square", 12))
    table = build_interactions(lattice, "dipolar_square", cutoff=4)
    assert table.coefficient(0, 1) == pytest.approx(1.0)
    assert table.coefficient(0, 2) == pytest.approx(0.125)
    assert table.coefficient(0, 13) == pytest.approx(2 ** -1.5)
    # minimal image: x = 11 is one step away
    assert table.coefficient(0, 11) == pytest.approx(1.0)
    # r = 4 sits on the cutoff and is kept
    assert table.coefficient(0, 4) == pytest.approx(1 / 64)
    assert table.coefficient(0, 5) == 0.0


def test_dipolar_cutoff_too_large():
    lattice = build_lattice(LatticeSpec("square", 8))
    with pytest.raises(ValueError):
        build_interactions(lattice, "dipolar_square", cutoff=5)


def test_model_lattice_mismatch(square4):
    with pytest.raises(ValueError):
        build_interactions(square4, "hexagon_kagome")


def test_checkerboard_has_no_nn_energy(square4):
    table = build_interactions(square4, "nn_square")
    x, y = np.meshgrid(np.arange(4), np.arange(4))
    fock = ((x + y) % 2).ravel()
    assert diagonal_energy(fock, table, V=20.0) == 0.0
    assert diagonal_energy(fock, table, V=20.0, mu=40.0) == -320.0


def test_full_hexagon_energy():
    lattice = build_lattice(LatticeSpec("kagome", 3))
    table = build_interactions(lattice, "hexagon_kagome")
    fock = np.zeros(lattice.n_sites, dtype=int)
    fock[list(lattice.hexagons[0])] = 1
    assert diagonal_energy(fock, table, V=2.0) == pytest.approx(30.0)


def test_energy_delta_hop_matches_difference():
    lattice = build_lattice(LatticeSpec("chain", 4))
    table = build_interactions(lattice, "nn_chain")
    before = np.array([1, 0, 1, 0])
    after = np.array([0, 1, 1, 0])
    delta = energy_delta_hop(before, 0, 1, table, V=3.0)
    assert delta == pytest.approx(3.0)
    assert delta == pytest.approx(
        diagonal_energy(after, table, 3.0) - diagonal_energy(before, table, 3.0)
    )


def test_energy_delta_hop_errors():
    lattice = build_lattice(LatticeSpec("chain", 4))
    table = build_interactions(lattice, "nn_chain")
    with pytest.raises(HardCoreViolation):
        energy_delta_hop([1, 0, 1, 0], 1, 2, table, V=1.0)
    with pytest.raises(ValueError):
        energy_delta_hop([1, 0, 1, 0], 0, 0, table, V=1.0)
    with pytest.raises(HardCoreViolation):
        diagonal_energy([2, 0, 1, 0], table, V=1.0)


def test_model_spec():
    model = ModelSpec("dipolar_square", t=1, V=60, filling="1/3")
    assert model.target_N(36) == 12
    with pytest.raises(ValueError):
        model.target_N(16)
    with pytest.raises(ValueError):
        ModelSpec("nn_square", t=-1, V=1)
    with pytest.raises(ValueError):
        ModelSpec("nn_square", t=1, V=1, filling=1)
    assert ModelSpec("nn_square", t=0, V=1).t == 0
    assert model.with_mu(2.5).mu == 2.5
