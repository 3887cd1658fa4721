import numpy as np
import pytest

from braidmc.engine import (
    RunParams,
    UpdateStats,
    estimate_energy,
    log_ratio_close,
    log_ratio_delete,
    log_ratio_insert,
    log_ratio_move,
    log_ratio_open,
    replica_seeds,
    run,
    sweep,
    sweep_length,
    worker_count,
)
from braidmc.engine.core import insert_window
from braidmc.lattice import LatticeSpec, ModelSpec, build_interactions, build_lattice
from braidmc.analysis import binned_error
from braidmc.oracle import ed_solve, thermal_diag, thermal_energy, trotter_cycles
from braidmc.universal import TooFewSamples
from braidmc.worldlines import HEAD, TAIL, Configuration, CycleVector, check_invariants, log_weight


@pytest.fixture
def ring4():
    lattice = build_lattice(LatticeSpec("chain", 4))
    model = ModelSpec("nn_chain", t=1.0, V=1.0, mu=1.0, filling="1/2", beta=2.0)
    return lattice, model, build_interactions(lattice, "nn_chain")


def _slot(lattice, a, b):
    return next(s for s in lattice.site_bonds[a] if lattice.other_end(s, a) == b)


def test_open_close_ratios_are_inverse(ring4):
    lattice, model, table = ring4
    config = Configuration(lattice, [1, 0, 1, 0], model.beta)
    config.add_kink(0.7, 2, 3)
    forward, _ = log_ratio_open(config, model, table, 0, 0.2, 0.4)
    config.open_worm(0, 0.2, 0.4)
    assert config.can_close()
    backward, _ = log_ratio_close(config, model, table)
    assert forward + backward == pytest.approx(0.0, abs=1e-12)


def test_insert_delete_ratios_are_inverse(ring4):
    lattice, model, table = ring4
    config = Configuration(lattice, [1, 0, 1, 0], model.beta)
    config.open_worm(0, 0.2, 0.4)
    # the tail stops a worldline and the neighbor is empty, so the kink goes before it in time
    assert config.end_type(TAIL) == 1
    slot = _slot(lattice, 0, 1)
    assert insert_window(config, TAIL, slot, later=False) == pytest.approx(0.8)
    assert insert_window(config, TAIL, slot, later=True) == 0.0
    forward, _ = log_ratio_insert(config, model, table, TAIL, slot, 0.1, False)
    config.insert_kink_at_end(TAIL, slot, 0.1, False)
    check_invariants(config)
    assert config.worm[TAIL] == (1, 0.2)
    assert config.deletable_kink(TAIL, True) is None
    backward, _ = log_ratio_delete(config, model, table, TAIL, False)
    assert forward + backward == pytest.approx(0.0, abs=1e-12)
    config.delete_kink_at_end(TAIL, False)
    assert config.n_kinks == 0
    assert config.worm[TAIL] == (0, 0.2)


def test_move_ratio_is_antisymmetric(ring4):
    lattice, model, table = ring4
    config = Configuration(lattice, [1, 0, 1, 0], model.beta)
    config.add_kink(0.5, 2, 1)
    config.open_worm(0, 0.2, 0.4)
    forward, _ = log_ratio_move(config, model, table, HEAD, 0.6)
    config.move_end(HEAD, 0.6, True)
    backward, _ = log_ratio_move(config, model, table, HEAD, 0.4)
    assert forward + backward == pytest.approx(0.0, abs=1e-12)


def test_sweeps_keep_invariants(ring4, rng):
    lattice, model, table = ring4
    config = Configuration(lattice, [1, 0, 1, 0], model.beta)
    stats = UpdateStats()
    for _ in range(200):
        sweep(config, model, table, rng, stats, debug_checks=True)
    assert sum(stats.proposed.values()) > 0
    assert sum(stats.accepted.values()) > 0


def test_update_stats_merge():
    a, b = UpdateStats(), UpdateStats()
    a.record("open", True, 0.5)
    b.record("open", False)
    b.record("insert", True, -1.0)
    merged = a.merge(b)
    assert merged.proposed["open"] == 2
    assert merged.accepted["open"] == 1
    assert merged.accepted["insert"] == 1
    assert merged.log_weight_change == pytest.approx(-0.5)
    assert a.proposed["open"] == 1


def test_run_params_checks():
    model = ModelSpec("nn_square", t=1, V=1)
    with pytest.raises(ValueError):
        RunParams(model, LatticeSpec("kagome", 2))
    with pytest.raises(ValueError):
        RunParams(model, LatticeSpec("square", 4), measure_interval=0)
    with pytest.raises(ValueError):
        RunParams(model, LatticeSpec("square", 4), target_samples=-1)


def test_classical_limit_has_no_kinks():
    model = ModelSpec("nn_chain", t=0.0, V=1.0, mu=1.0, filling="1/2", beta=2.0)
    params = RunParams(model, LatticeSpec("chain", 4), thermalization_sweeps=20, target_samples=100, seed=5)
    stream = run(params)
    assert len(stream) == 100
    assert all(s.n_kinks == 0 for s in stream)
    assert all(s.cycles == CycleVector.trivial(2) for s in stream)
    assert stream.stats.accepted["insert"] == 0


def test_snapshots_have_target_N_and_consistent_fields(ring4):
    _, model, _ = ring4
    params = RunParams(
        model, LatticeSpec("chain", 4), thermalization_sweeps=50, target_samples=200, seed=2, debug_checks=True
    )
    stream = run(params)
    frame = stream.to_frame()
    assert len(frame) == 200
    assert (frame["N"] == 2).all()
    assert (frame["fock0"].str.count("1") == 2).all()
    assert frame["sweep"].is_monotonic_increasing
    assert set(frame["q"]) <= {"2-0", "0-1"}


def test_run_is_deterministic(ring4):
    _, model, _ = ring4
    params = RunParams(model, LatticeSpec("chain", 4), thermalization_sweeps=20, target_samples=50, seed=9)
    assert run(params).snapshots == run(params).snapshots


def test_resume_continues_the_chain(ring4):
    _, model, _ = ring4
    lattice = LatticeSpec("chain", 4)
    full = run(RunParams(model, lattice, thermalization_sweeps=20, target_samples=40, seed=4))
    first = run(RunParams(model, lattice, thermalization_sweeps=20, target_samples=20, seed=4))
    second = run(RunParams(model, lattice, thermalization_sweeps=20, target_samples=20, seed=4), resume=first.state)
    assert first.snapshots + second.snapshots == full.snapshots


def test_replica_seeds_differ():
    a, b = replica_seeds(7, 2)
    assert a.generate_state(4).tolist() != b.generate_state(4).tolist()
    assert replica_seeds(7, 2)[1].generate_state(4).tolist() == b.generate_state(4).tolist()


def test_worker_count(monkeypatch):
    monkeypatch.delenv("BRAIDMC_THREADS", raising=False)
    assert worker_count(3, workers=8) == 3
    monkeypatch.setenv("BRAIDMC_THREADS", "2")
    assert worker_count(4, workers=8) == 2
    monkeypatch.setenv("BRAIDMC_THREADS", "many")
    with pytest.raises(ValueError):
        worker_count(4)


def test_estimate_energy_needs_samples(ring4):
    _, model, _ = ring4
    stream = run(RunParams(model, LatticeSpec("chain", 4), thermalization_sweeps=5, target_samples=10))
    with pytest.raises(TooFewSamples):
        estimate_energy(stream)


def test_dimer_sites_equally_occupied():
    model = ModelSpec("nn_chain", t=1.0, V=0.0, mu=0.0, filling="1/2", beta=2.0)
    stream = run(RunParams(model, LatticeSpec("chain", 2), thermalization_sweeps=100, target_samples=2000, seed=11))
    frame = stream.to_frame()
    assert abs((frame["fock0"] == "10").mean() - 0.5) < 0.1


@pytest.mark.slow
def test_dimer_energy_matches_exact():
    model = ModelSpec("nn_chain", t=1.0, V=0.0, mu=0.0, filling="1/2", beta=2.0)
    stream = run(RunParams(model, LatticeSpec("chain", 2), thermalization_sweeps=500, target_samples=20000, seed=1))
    energy, error = estimate_energy(stream)
    assert energy == pytest.approx(-np.tanh(2.0), abs=5 * error + 0.01)


@pytest.mark.slow
def test_ring_energy_matches_exact(ring4):
    lattice, model, table = ring4
    exact = thermal_energy(ed_solve(lattice, model, 2, mode="full", table=table), model.beta)
    stream = run(RunParams(model, LatticeSpec("chain", 4), thermalization_sweeps=500, target_samples=20000, seed=3))
    energy, error = estimate_energy(stream)
    assert energy == pytest.approx(exact, abs=5 * error + 0.02)


def test_backward_worm_closes_on_the_earlier_arc(ring4):
    lattice, model, table = ring4
    config = Configuration(lattice, [1, 0, 1, 0], model.beta)
    config.add_kink(0.6, 0, 1)
    config.add_kink(0.8, 1, 0)
    check_invariants(config)
    forward, _ = log_ratio_open(config, model, table, 1, 0.4, 0.2, False)
    config.open_worm(1, 0.4, 0.2, False)
    # site 1 is filled on [0.2, 0.4), so the head starts a worldline
    assert config.occupation_at(1, 0.3) == 1
    assert config.end_type(HEAD) == 0
    assert config.can_close(False)
    assert not config.can_close(True)
    backward, _ = log_ratio_close(config, model, table, False)
    assert forward + backward == pytest.approx(0.0, abs=1e-12)
    config.close_worm(False)
    assert config.occupation_at(1, 0.3) == 0
    assert config.n_particles == 2


def test_later_kink_cuts_the_neighbor_worldline(ring4):
    lattice, model, table = ring4
    config = Configuration(lattice, [1, 1, 0, 0], model.beta)
    config.open_worm(0, 0.2, 0.4)
    slot = _slot(lattice, 0, 1)
    # an occupied neighbor only admits a kink after the stopping tail
    assert insert_window(config, TAIL, slot, later=False) == 0.0
    assert insert_window(config, TAIL, slot, later=True) == pytest.approx(0.2)
    forward, _ = log_ratio_insert(config, model, table, TAIL, slot, 0.3, True)
    kid = config.insert_kink_at_end(TAIL, slot, 0.3, True)
    check_invariants(config)
    assert config.worm[TAIL] == (1, 0.2)
    assert config.end_type(TAIL) == 1
    assert (config.kinks[kid].src, config.kinks[kid].dst) == (0, 1)
    assert config.occupation_at(0, 0.25) == 1
    assert config.occupation_at(1, 0.25) == 0
    assert config.deletable_kink(TAIL, True) == (kid, 0)
    backward, _ = log_ratio_delete(config, model, table, TAIL, True)
    assert forward + backward == pytest.approx(0.0, abs=1e-12)
    config.delete_kink_at_end(TAIL, True)
    check_invariants(config)
    assert config.worm[TAIL] == (0, 0.2)
    assert config.occupation_at(1, 0.25) == 1


def _fingerprint(config):
    kinks = sorted((k.time, k.slot, k.src, k.dst) for k in config.kinks.values())
    worm = None if config.worm is None else (config.worm[TAIL], config.worm[HEAD])
    return config.fock0.tolist(), [list(t) for t in config.times], kinks, worm


def _inverse_pairs(config, model, table, rng):
    """Log ratios of one random proposal and of its inverse, applied to a copy."""
    pairs = []
    if config.worm is None:
        site = int(rng.integers(config.n_sites))
        forward = bool(rng.integers(2))
        u_tail = rng.random()
        window = config.forward_distance(site, u_tail) if forward else config.backward_distance(site, u_tail)
        offset = window * rng.uniform(0.01, 0.99)
        u_head = (u_tail + offset) % 1.0 if forward else (u_tail - offset) % 1.0
        there, _ = log_ratio_open(config, model, table, site, u_tail, u_head, forward)
        other = config.copy()
        other.open_worm(site, u_tail, u_head, forward)
        assert other.can_close(forward)
        back, _ = log_ratio_close(other, model, table, forward)
        other.close_worm(forward)
        pairs.append((there, back, _fingerprint(other)))
        return pairs

    for forward in (True, False):
        if config.can_close(forward):
            (site, u_tail), (_, u_head) = config.worm[TAIL], config.worm[HEAD]
            there, _ = log_ratio_close(config, model, table, forward)
            other = config.copy()
            other.close_worm(forward)
            back, _ = log_ratio_open(other, model, table, site, u_tail, u_head, forward)
            other.open_worm(site, u_tail, u_head, forward)
            pairs.append((there, back, _fingerprint(other)))

    for end in (TAIL, HEAD):
        site, u_old = config.worm[end]
        prev, nxt = config.gap(site, u_old)
        span = (nxt - prev) % 1.0 or 1.0
        u_new = (prev + span * rng.uniform(0.01, 0.99)) % 1.0
        forward_move = (u_new - prev) % 1.0 > (u_old - prev) % 1.0
        there, _ = log_ratio_move(config, model, table, end, u_new)
        other = config.copy()
        other.move_end(end, u_new, forward_move)
        back, _ = log_ratio_move(other, model, table, end, u_old)
        other.move_end(end, u_old, not forward_move)
        pairs.append((there, back, _fingerprint(other)))

        for later in (True, False):
            for slot in config.lattice.site_bonds[site]:
                window = insert_window(config, end, slot, later)
                if window <= 0:
                    continue
                offset = window * rng.uniform(0.01, 0.99)
                u_kink = (u_old + offset) % 1.0 if later else (u_old - offset) % 1.0
                there, _ = log_ratio_insert(config, model, table, end, slot, u_kink, later)
                other = config.copy()
                other.insert_kink_at_end(end, slot, u_kink, later)
                check_invariants(other)
                back, _ = log_ratio_delete(other, model, table, end, later)
                other.delete_kink_at_end(end, later)
                pairs.append((there, back, _fingerprint(other)))

            found = config.deletable_kink(end, later)
            if found is not None:
                kink = config.kinks[found[0]]
                there, _ = log_ratio_delete(config, model, table, end, later)
                other = config.copy()
                other.delete_kink_at_end(end, later)
                check_invariants(other)
                assert insert_window(other, end, kink.slot, later) > 0
                back, _ = log_ratio_insert(other, model, table, end, kink.slot, kink.time, later)
                other.insert_kink_at_end(end, kink.slot, kink.time, later)
                pairs.append((there, back, _fingerprint(other)))
    return pairs


def _audit_moves(kind, spec, iterations, seed):
    lattice = build_lattice(spec)
    model = ModelSpec(kind, t=1.0, V=1.3, mu=0.7, filling="1/2", beta=3.0, cutoff=2.0)
    table = build_interactions(lattice, kind, model.cutoff)
    rng = np.random.Generator(np.random.PCG64(seed))
    config = Configuration(lattice, rng.permutation([1, 0] * (lattice.n_sites // 2)), model.beta)
    checked = 0
    for _ in range(iterations):
        sweep(config, model, table, rng, n_updates=7)
        before = _fingerprint(config)
        for there, back, after in _inverse_pairs(config, model, table, rng):
            assert there + back == pytest.approx(0.0, abs=1e-10)
            assert after[0] == before[0]
            assert after[1] == before[1]
            assert after[3] == before[3]
            assert [k[1:] for k in after[2]] == [k[1:] for k in before[2]]
            checked += 1
    return checked


@pytest.mark.parametrize(
    "kind, spec",
    [
        ("nn_chain", LatticeSpec("chain", 6)),
        ("nn_square", LatticeSpec("square", 4)),
        ("dipolar_square", LatticeSpec("square", 4)),
    ],
)
def test_every_move_is_undone_by_its_inverse(kind, spec):
    assert _audit_moves(kind, spec, 300, 2024) >= 300


@pytest.mark.slow
@pytest.mark.parametrize(
    "kind, spec",
    [("dipolar_square", LatticeSpec("square", 4)), ("nn_kagome", LatticeSpec("kagome", 4))],
)
def test_move_pairs_balance_on_many_random_states(kind, spec):
    assert _audit_moves(kind, spec, 20000, 99) > 40000


def test_ring_samples_exchange_cycles():
    model = ModelSpec("nn_chain", t=1.0, V=0.0, mu=1.0, filling="2/3", beta=1.0)
    stream = run(RunParams(model, LatticeSpec("chain", 3), thermalization_sweeps=200, target_samples=3000, seed=8))
    frame = stream.to_frame()
    assert set(frame["q"]) == {"2-0", "0-1"}
    assert (frame["q"] == "0-1").mean() > 0.05


def test_sweep_length(ring4, rng):
    lattice, model, table = ring4
    config = Configuration(lattice, [1, 0, 1, 0], model.beta)
    assert sweep_length(config, model) == 4 * (1 + 2)
    stats = sweep(config, model, table, rng)
    assert sum(stats.proposed.values()) == 12
    assert sweep_length(config, model) == 12
    assert sweep_length(config, model, mean_kinks=5.0) == 12
    assert sweep_length(config, model, mean_kinks=0.0) == 4


def test_resumed_chain_tracks_the_log_weight(ring4):
    _, model, _ = ring4
    lattice = LatticeSpec("chain", 4)
    first = run(RunParams(model, lattice, thermalization_sweeps=20, target_samples=20, seed=4))
    assert first.state.tracked_log_weight is None
    params = RunParams(model, lattice, thermalization_sweeps=20, target_samples=20, seed=4, debug_checks=True)
    second = run(params, resume=first.state)
    assert len(second) == 20
    assert second.state.tracked_log_weight is not None


def test_measurements_fall_on_interval_multiples(ring4):
    _, model, _ = ring4
    params = RunParams(
        model, LatticeSpec("chain", 4), thermalization_sweeps=10, target_samples=30, measure_interval=3, seed=6
    )
    stream = run(params)
    assert (stream.to_frame()["sweep"] % 3 == 0).all()
    # fixed after thermalization from the mean kink count
    assert stream.state.sweep_updates >= 4
    assert stream.state.sweep_updates % 4 == 0


def test_energy_is_merged_over_replicas(ring4):
    _, model, _ = ring4
    lattice = LatticeSpec("chain", 4)
    streams = [
        run(RunParams(model, lattice, thermalization_sweeps=20, target_samples=2000, seed=s), replica=r)
        for r, s in enumerate((1, 2))
    ]
    beta = model.beta
    means = [
        np.mean([s.energy for s in st.snapshots]) - np.mean([s.n_kinks for s in st.snapshots]) / beta
        for st in streams
    ]
    energy, error = estimate_energy(streams)
    assert min(means) - 1e-12 <= energy <= max(means) + 1e-12
    assert error > 0
    single, _ = estimate_energy(streams[0])
    assert single == pytest.approx(means[0])


@pytest.mark.slow
def test_tracked_log_weight_does_not_drift():
    lattice = build_lattice(LatticeSpec("square", 4))
    model = ModelSpec("nn_square", t=1.0, V=2.0, mu=4.0, filling="1/2", beta=4.0)
    table = build_interactions(lattice, "nn_square")
    rng = np.random.Generator(np.random.PCG64(77))
    config = Configuration(lattice, [1, 0, 1, 0, 0, 1, 0, 1] * 2, model.beta)
    tracked = log_weight(config, model, table)
    stats = UpdateStats()
    checks = 0
    for _ in range(1000):
        before = stats.log_weight_change
        sweep(config, model, table, rng, stats, n_updates=1000)
        tracked += stats.log_weight_change - before
        if config.worm is None:
            exact = log_weight(config, model, table)
            assert tracked == pytest.approx(exact, rel=1e-9, abs=1e-9)
            checks += 1
    assert checks > 10
    assert stats.accepted["insert"] > 0


def _indicator_ok(hits, exact):
    est = binned_error(np.asarray(hits, dtype=float))
    return abs(est.mean - exact) < 4 * est.stderr + 0.01


@pytest.mark.slow
@pytest.mark.parametrize(
    "model",
    [
        ModelSpec("nn_chain", t=1.0, V=1.0, mu=1.0, filling="1/2", beta=2.0),
        ModelSpec("nn_chain", t=1.0, V=3.0, mu=3.0, filling="1/2", beta=2.0),
    ],
)
def test_ring_samples_match_exact_distributions(model):
    lattice = build_lattice(LatticeSpec("chain", 4))
    table = build_interactions(lattice, "nn_chain")
    spectral = ed_solve(lattice, model, 2, mode="full", table=table)
    diag = thermal_diag(spectral, model.beta)
    cycles = trotter_cycles(lattice, model, 2, model.beta, [0.1, 0.075, 0.05], table=table).exact
    params = RunParams(model, LatticeSpec("chain", 4), thermalization_sweeps=1000, target_samples=40000, seed=21)
    frame = run(params).to_frame()
    for state, p in zip(spectral.basis.states, diag):
        key = "".join(str(int(n)) for n in state)
        assert _indicator_ok(frame["fock0"] == key, p), key
    assert cycles[CycleVector((0, 1))] > 0.1
    for q, p in cycles.items():
        assert _indicator_ok(frame["q"] == str(q), p), str(q)


@pytest.mark.slow
def test_three_ring_exchange_probability():
    lattice = build_lattice(LatticeSpec("chain", 3))
    model = ModelSpec("nn_chain", t=1.0, V=0.0, mu=1.0, filling="2/3", beta=1.0)
    exact = trotter_cycles(lattice, model, 2, model.beta, [0.1, 0.075, 0.05]).exact
    params = RunParams(model, LatticeSpec("chain", 3), thermalization_sweeps=1000, target_samples=40000, seed=5)
    frame = run(params).to_frame()
    assert _indicator_ok(frame["q"] == "0-1", exact[CycleVector((0, 1))])
