import concurrent.futures
import json
import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from ..analysis.statistics import jackknife, merge_replicas
from ..lattice import MODEL_KINDS, LatticeSpec, ModelSpec, build_interactions, build_lattice
from ..topology import f_pc
from ..universal import NonMonotoneWarning, StalledSampler, TooFewSamples, TooShort
from ..worldlines import (
    Configuration,
    CycleVector,
    log_weight,
    permutation_cycles,
    time_averaged_diagonal_energy,
)
from .core import UpdateStats, sweep, sweep_length

__all__ = (
    "RunParams",
    "Snapshot",
    "ChainState",
    "SampleStream",
    "run",
    "run_replicas",
    "replica_seeds",
    "worker_count",
    "pilot_densities",
    "tune_mu",
    "estimate_energy",
)

logger = logging.getLogger("braidmc.engine")

DRIFT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class RunParams:
    """Everything a single Monte Carlo chain needs.

    args:
        model (ModelSpec): Model
        lattice (LatticeSpec): Lattice geometry
        thermalization_sweeps (int): Sweeps discarded before measuring
        target_samples (int): Number of fixed-N snapshots to collect
        measure_interval (int): Snapshots are taken at sweeps that are multiples of this
        seed (int): Root seed
        stall_sweeps (int): Sweeps without a valid snapshot before giving up
        debug_checks (bool): Check worldline invariants and log-weight drift
        log_interval (int): Snapshots per structured progress line

    """

    model: ModelSpec
    lattice: LatticeSpec
    thermalization_sweeps: int = 1000
    target_samples: int = 10000
    measure_interval: int = 1
    seed: int = 0
    stall_sweeps: int = 10000
    debug_checks: bool = False
    log_interval: int = 1000

    def __post_init__(self):
        if self.target_samples < 0:
            raise ValueError("target_samples must be >= 0. got {}".format(self.target_samples))
        if self.thermalization_sweeps < 0:
            raise ValueError(
                "thermalization_sweeps must be >= 0. got {}".format(self.thermalization_sweeps)
            )
        if self.measure_interval < 1:
            raise ValueError("measure_interval must be >= 1. got {}".format(self.measure_interval))
        if self.stall_sweeps < 1:
            raise ValueError("stall_sweeps must be >= 1. got {}".format(self.stall_sweeps))
        if MODEL_KINDS[self.model.kind] != self.lattice.kind:
            raise ValueError(
                "model '{}' needs a {} lattice, got '{}'".format(
                    self.model.kind, MODEL_KINDS[self.model.kind], self.lattice.kind
                )
            )

    @property
    def target_N(self):
        return self.model.target_N(self.lattice.n_sites)

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "lattice": self.lattice.to_dict(),
            "thermalization_sweeps": self.thermalization_sweeps,
            "target_samples": self.target_samples,
            "measure_interval": self.measure_interval,
            "seed": self.seed,
            "stall_sweeps": self.stall_sweeps,
        }


@dataclass(frozen=True)
class Snapshot:
    """Measurement on a closed configuration at the target particle number."""

    replica: int
    sweep: int
    cycles: CycleVector
    fock0: str
    energy: float
    n_kinks: int
    N: int

    @property
    def f_pc(self):
        return float(f_pc(self.cycles, self.N))

    @property
    def occupations(self):
        return np.array([int(c) for c in self.fock0], dtype=np.int8)


@dataclass
class ChainState:
    """Resumable state of one chain."""

    config: Configuration
    rng_state: dict
    sweeps: int = 0
    thermalized: bool = False
    tracked_log_weight: Optional[float] = None
    sweep_updates: Optional[int] = None


@dataclass
class SampleStream:
    params: RunParams
    replica: int
    snapshots: List[Snapshot]
    stats: UpdateStats
    state: ChainState = field(repr=False, default=None)

    def __len__(self):
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)

    @property
    def cycles(self):
        return [s.cycles for s in self.snapshots]

    def to_frame(self):
        """One row per snapshot."""
        return pd.DataFrame(
            {
                "replica": [s.replica for s in self.snapshots],
                "sweep": [s.sweep for s in self.snapshots],
                "q": [str(s.cycles) for s in self.snapshots],
                "N": [s.N for s in self.snapshots],
                "n_kinks": [s.n_kinks for s in self.snapshots],
                "energy_diag": [s.energy for s in self.snapshots],
                "f_pc": [s.f_pc for s in self.snapshots],
                "fock0": [s.fock0 for s in self.snapshots],
            },
            columns=["replica", "sweep", "q", "N", "n_kinks", "energy_diag", "f_pc", "fock0"],
        )


def _initial_config(lattice, N, beta, rng):
    fock0 = np.zeros(lattice.n_sites, dtype=np.int8)
    fock0[rng.choice(lattice.n_sites, N, replace=False)] = 1
    return Configuration(lattice, fock0, beta)


def _build(params):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lattice = build_lattice(params.lattice)
    table = build_interactions(lattice, params.model.kind, params.model.cutoff)
    return lattice, table


def _snapshot(config, table, model, replica, sweeps):
    return Snapshot(
        replica=replica,
        sweep=sweeps,
        cycles=permutation_cycles(config),
        fock0="".join(str(int(n)) for n in config.fock0),
        energy=time_averaged_diagonal_energy(config, table, model.V),
        n_kinks=config.n_kinks,
        N=config.n_particles,
    )


def _check_drift(config, model, table, tracked):
    if tracked is None or model.t <= 0:
        return
    exact = log_weight(config, model, table)
    if abs(exact - tracked) > DRIFT_TOLERANCE * max(1.0, abs(exact)):
        raise RuntimeError(
            "log-weight drift: tracked {} vs recomputed {}".format(tracked, exact)
        )


def run(params, replica=0, seed_seq=None, resume=None):
    """Run one worm-algorithm chain and collect fixed-N snapshots.

    Snapshots are taken at the ends of sweeps whose count is a multiple of
    ``params.measure_interval``, when the worm is absent and the particle number
    equals filling * site count. With ``params.debug_checks`` the log-weight
    tracked through the updates is compared with a recomputation at every
    snapshot; a resumed chain starts tracking at its first closed sweep end.

    args:
        params (RunParams): Run parameters
        replica (int): Replica index recorded in every snapshot
        seed_seq (numpy.random.SeedSequence): Seed. Default is ``SeedSequence(params.seed)``.
        resume (ChainState): Continue this chain instead of starting a new one

    returns:
        (SampleStream): ``params.target_samples`` snapshots

    examples:
        .. code-block:: python

            >>> model = ModelSpec('nn_chain', t=1, V=0, filling='1/2', beta=10)
            >>> stream = run(RunParams(model, LatticeSpec('chain', 2), target_samples=1000))
            >>> len(stream)
            1000

    """
    lattice, table = _build(params)
    model = params.model
    N = params.target_N

    rng = np.random.Generator(np.random.PCG64(seed_seq if seed_seq is not None else params.seed))
    if resume is not None:
        state = resume
        rng.bit_generator.state = state.rng_state
        state.tracked_log_weight = None
        if params.debug_checks and state.config.worm is None and model.t > 0:
            state.tracked_log_weight = log_weight(state.config, model, table)
    else:
        config = _initial_config(lattice, N, model.beta, rng)
        tracked = log_weight(config, model, table) if params.debug_checks and model.t > 0 else None
        state = ChainState(config=config, rng_state=None, tracked_log_weight=tracked)
    config = state.config
    stats = UpdateStats()

    def _sweep():
        before = stats.log_weight_change
        sweep(
            config, model, table, rng, stats, debug_checks=params.debug_checks, n_updates=state.sweep_updates
        )
        state.sweeps += 1
        if state.tracked_log_weight is not None:
            state.tracked_log_weight += stats.log_weight_change - before

    if not state.thermalized:
        kinks = 0
        for _ in range(params.thermalization_sweeps):
            _sweep()
            kinks += config.n_kinks
        state.thermalized = True
        if params.thermalization_sweeps:
            state.sweep_updates = sweep_length(config, model, kinks / params.thermalization_sweeps)
        logger.debug(
            json.dumps(
                {
                    "replica": replica,
                    "event": "thermalized",
                    "sweeps": state.sweeps,
                    "sweep_updates": state.sweep_updates,
                    "accept": stats.acceptance(),
                }
            )
        )

    snapshots = []
    since_valid = 0
    while len(snapshots) < params.target_samples:
        _sweep()
        since_valid += 1
        if params.debug_checks and config.worm is None and model.t > 0:
            if state.tracked_log_weight is None:
                state.tracked_log_weight = log_weight(config, model, table)
            else:
                _check_drift(config, model, table, state.tracked_log_weight)
        if (
            state.sweeps % params.measure_interval == 0
            and config.worm is None
            and config.n_particles == N
        ):
            snapshots.append(_snapshot(config, table, model, replica, state.sweeps))
            since_valid = 0
            if len(snapshots) % params.log_interval == 0:
                recent = snapshots[-params.log_interval :]
                logger.info(
                    json.dumps(
                        {
                            "replica": replica,
                            "sweeps": state.sweeps,
                            "samples": len(snapshots),
                            "accept": stats.acceptance(),
                            "mean_kinks": float(np.mean([s.n_kinks for s in recent])),
                            "N": config.n_particles,
                        }
                    )
                )
        if since_valid >= params.stall_sweeps:
            raise StalledSampler(
                "replica {}: no closed configuration with N={} in {} sweeps (mu={})".format(
                    replica, N, since_valid, model.mu
                )
            )

    state.rng_state = rng.bit_generator.state
    return SampleStream(params=params, replica=replica, snapshots=snapshots, stats=stats, state=state)


def replica_seeds(seed, replicas):
    """Independent seed sequences for ``replicas`` chains: ``SeedSequence(seed).spawn(replicas)``."""
    return np.random.SeedSequence(seed).spawn(replicas)


def worker_count(replicas, workers=None):
    """Number of worker processes, capped by ``BRAIDMC_THREADS`` when set."""
    if workers is None:
        workers = os.cpu_count() or 1
    cap = os.environ.get("BRAIDMC_THREADS")
    if cap:
        try:
            workers = min(workers, int(cap))
        except ValueError:
            raise ValueError("BRAIDMC_THREADS must be an integer. got '{}'".format(cap))
    return max(1, min(workers, replicas))


def _run_replica(args):
    params, replica, seed_seq, resume = args
    return run(params, replica=replica, seed_seq=seed_seq, resume=resume)


def run_replicas(params, replicas=1, workers=None, resume=None):
    """Run independent chains, in parallel processes when more than one worker is available.

    Results come back in replica order, so they do not depend on scheduling.

    args:
        params (RunParams): Run parameters shared by all replicas
        replicas (int): Number of chains
        workers (int): Worker processes. Default is the CPU count.
        resume (list): ChainState per replica to continue from

    returns:
        (list): SampleStream per replica
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1. got {}".format(replicas))
    if resume is not None and len(resume) != replicas:
        raise ValueError("expected {} resume states, got {}".format(replicas, len(resume)))
    seeds = replica_seeds(params.seed, replicas)
    jobs = [
        (params, r, seeds[r], None if resume is None else resume[r]) for r in range(replicas)
    ]
    n_workers = worker_count(replicas, workers)
    if n_workers == 1:
        return [_run_replica(job) for job in jobs]
    with concurrent.futures.ProcessPoolExecutor(max_workers=n_workers) as executor:
        return list(executor.map(_run_replica, jobs))


def _mu_bound(lattice, table, model):
    z = max(lattice.coordination(s) for s in range(lattice.n_sites))
    field = max((cs.sum() for _, cs in table.partners), default=0.0)
    return 2 * z * model.t + abs(model.V) * field + 1.0


def pilot_densities(params, mu, sweeps, seed=None):
    """Particle numbers of closed configurations at the end of each sweep of a short pilot chain."""
    lattice, table = _build(params)
    model = params.model.with_mu(mu)
    rng = np.random.Generator(np.random.PCG64(params.seed if seed is None else seed))
    config = _initial_config(lattice, params.target_N, model.beta, rng)
    for _ in range(sweeps // 4):
        sweep(config, model, table, rng)
    out = []
    for _ in range(sweeps):
        sweep(config, model, table, rng)
        if config.worm is None:
            out.append(config.n_particles)
    return np.array(out, dtype=int)


def tune_mu(params, target_N=None, pilot_sweeps=2000, iterations=10):
    """Bisect the chemical potential on <N>(mu) using short pilot runs.

    Among the evaluated values the one whose pilot visits ``target_N`` most often
    is returned.

    args:
        params (RunParams): Run parameters (model.mu is ignored)
        target_N (int): Particle number. Default is filling * site count.
        pilot_sweeps (int): Sweeps per pilot run
        iterations (int): Bisection steps

    returns:
        (float): mu
    """
    lattice, table = _build(params)
    if target_N is None:
        target_N = params.target_N
    bound = _mu_bound(lattice, table, params.model)
    lo, hi = -bound, bound
    seeds = np.random.SeedSequence(params.seed).spawn(iterations)

    evaluated = []
    for i in range(iterations):
        mid = 0.5 * (lo + hi)
        Ns = pilot_densities(params, mid, pilot_sweeps, seed=seeds[i])
        if len(Ns) == 0:
            raise StalledSampler("pilot run at mu={} never closed the worm".format(mid))
        mean = Ns.mean()
        sem = Ns.std() / np.sqrt(len(Ns)) if len(Ns) > 1 else 0.0
        freq = float(np.mean(Ns == target_N))
        evaluated.append((mid, mean, sem, freq))
        logger.info(
            json.dumps({"event": "tune_mu", "mu": mid, "mean_N": float(mean), "frequency": freq})
        )
        if mean < target_N:
            lo = mid
        else:
            hi = mid

    ordered = sorted(evaluated)
    for (mu_a, n_a, s_a, _), (mu_b, n_b, s_b, _) in zip(ordered, ordered[1:]):
        if n_b < n_a - 3 * np.hypot(s_a, s_b) - 1e-12:
            warnings.warn(
                "<N> decreases from {:.3f} to {:.3f} between mu={:.4f} and mu={:.4f}".format(
                    n_a, n_b, mu_a, mu_b
                ),
                NonMonotoneWarning,
            )
            break

    best = max(evaluated, key=lambda e: (e[3], -abs(e[1] - target_N)))
    return float(best[0])


def estimate_energy(stream, min_samples=100):
    """Energy estimate <E_diag> - <n_kinks>/beta with a jackknife error.

    Each replica is jackknifed on its own and the estimates are combined with
    :func:`merge_replicas`. Replicas too short for binning are left out.

    args:
        stream (SampleStream or list): One stream or the streams of several replicas
        min_samples (int): Minimum number of snapshots over all replicas

    returns:
        (tuple): (mean, error) in the energy units of the model
    """
    streams = [stream] if isinstance(stream, SampleStream) else list(stream)
    if not streams:
        raise TooFewSamples("no streams")
    beta = streams[0].params.model.beta
    total = sum(len(st) for st in streams)
    if total < min_samples:
        raise TooFewSamples(
            "energy estimate needs >= {} snapshots, got {}".format(min_samples, total)
        )
    parts = []
    for st in streams:
        data = np.array([(s.energy, s.n_kinks) for s in st.snapshots], dtype=float)
        try:
            parts.append(jackknife(data, lambda x: x[:, 0].mean() - x[:, 1].mean() / beta))
        except TooShort as exc:
            logger.warning("replica %d left out of the energy estimate: %s", st.replica, exc)
    if not parts:
        raise TooFewSamples("no replica is long enough for a jackknife estimate")
    est = merge_replicas(parts)
    return est.mean, est.stderr
