import argparse
import json
import logging
import os
import sys
import time
import warnings
from contextlib import contextmanager
from math import comb, factorial

import numpy as np
import pandas as pd

from .._version import __version__
from ..analysis import (
    Estimate,
    binned_error,
    cycles_from_frame,
    fpc_table,
    load_samples,
    load_scan,
    merge_replicas,
)
from ..engine import ChainState, UpdateStats, estimate_energy, run_replicas, tune_mu
from ..lattice import build_interactions, build_lattice
from ..measurement import build_cb_states, build_str_states, info_content, optimal_tree
from ..oracle import MAX_LABELED_DIMENSION, ed_solve, thermal_diag, thermal_energy, trotter_cycles
from ..presets import install, list_presets
from ..scan import n_param_scan
from ..topology import accumulate, spectrum_report, top_invariants, wilson_halfwidth
from ..universal import (
    BasisTooLarge,
    ConfigError,
    DimensionTooLarge,
    ExtrapolationUnstable,
    Infeasible,
    MetadataMismatch,
    StalledSampler,
    TooFewSamples,
    TooShort,
    energy_to_str,
    fraction_to_str,
    log2_to_str,
)
from ..worldlines import load_checkpoint, save_checkpoint
from .config import RunConfig, field_of, load_config, parse_value

__all__ = (
    "EXIT_OK",
    "EXIT_ORACLE",
    "EXIT_CONFIG",
    "EXIT_STALLED",
    "EXIT_TOO_LARGE",
    "Z_LIMIT",
    "build_parser",
    "main",
    "execute_run",
    "replica_estimate",
    "spectrum_from_frame",
    "oracle_compare",
)

logger = logging.getLogger("braidmc.cli")

EXIT_OK = 0
EXIT_ORACLE = 1
EXIT_CONFIG = 2
EXIT_STALLED = 3
EXIT_TOO_LARGE = 4

# oracle comparisons fail above this |z|
Z_LIMIT = 4.0
DEFAULT_DTAUS = (0.1, 0.075, 0.05)

_LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


@contextmanager
def _log_to(directory):
    handler = logging.FileHandler(os.path.join(directory, "run.log"), mode="a")
    handler.setFormatter(logging.Formatter(_LOG_FORMAT))
    root = logging.getLogger("braidmc")
    root.addHandler(handler)
    try:
        yield handler
    finally:
        root.removeHandler(handler)
        handler.close()


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# ------------------------------------------------------------------ runs


def replica_estimate(df, values):
    """Binning analysis of a per-snapshot series done per replica and merged; None if every replica is too short."""
    values = np.asarray(values, dtype=float)
    replicas = df["replica"].values
    estimates = []
    for replica in np.unique(replicas):
        part = values[replicas == replica]
        try:
            estimates.append(binned_error(part))
        except TooShort:
            logger.debug("replica %d with %d snapshots left out of the binning analysis", replica, len(part))
    return merge_replicas(estimates) if estimates else None


def spectrum_from_frame(df, N=None):
    """Spectrum and f_PC estimate of a snapshot table.

    Errors use n_eff / n of the f_PC series, from a binning analysis per
    replica merged over replicas.

    args:
        df (pandas.DataFrame): Snapshot table as written to ``samples.csv``
        N (int): Particle number. Default is taken from the table.

    returns:
        (tuple): (Spectrum, Estimate of mean f_PC)
    """
    fpc = replica_estimate(df, df["f_pc"].values)
    if fpc is not None:
        fraction = min(1.0, fpc.n_eff / fpc.n) if fpc.n else 1.0
    else:
        values = df["f_pc"].values
        fpc = Estimate(
            mean=float(np.mean(values)), stderr=float("nan"), tau_int=0.5, n_eff=len(values), n=len(values)
        )
        fraction = 1.0
    spectrum = accumulate(cycles_from_frame(df), N=N, n_eff_fraction=max(fraction, 1e-12))
    return spectrum, fpc


def spectrum_metadata(config, N, mu):
    """Labels written next to every spectrum: model, lattice, N, V/t and beta t."""
    return {
        "model": config.model_kind,
        "lattice": config.lattice_spec().label(),
        "L": config.L,
        "N": N,
        "filling": config.filling,
        "V/t": config.V / config.t if config.t > 0 else None,
        "beta*t": config.beta * config.t,
        "mu": mu,
    }


def write_spectrum(directory, spectrum, metadata, threshold):
    with open(os.path.join(directory, "spectrum.csv"), "w", newline="") as f:
        f.write(spectrum_report(spectrum, threshold))
    with open(os.path.join(directory, "spectrum.json"), "w") as f:
        f.write(spectrum.to_json(metadata, indent=2))
        f.write("\n")


def load_resume(path, config):
    """ChainStates and mu of a checkpoint written by a previous run of the same model."""
    params = config.run_params()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lattice = build_lattice(params.lattice)
    header, configs = load_checkpoint(path, lattice)
    if len(configs) != config.replicas:
        raise ConfigError(
            "checkpoint holds {} replicas, run.replicas is {}".format(len(configs), config.replicas)
        )
    model = dict(header["model"])
    mu = model.pop("mu")
    expected = params.model.to_dict()
    expected.pop("mu")
    if model != expected:
        raise ConfigError("checkpoint was written for a different model: {}".format(header["model"]))
    states = [
        ChainState(
            config=c, rng_state=rng_state, sweeps=sweeps, thermalized=True, sweep_updates=updates
        )
        for c, rng_state, sweeps, updates in zip(
            configs,
            header["rng_states"],
            header["sweeps"],
            header.get("sweep_updates", [None] * len(configs)),
        )
    ]
    return states, mu


def _simulate(config, directory, resume=None):
    os.makedirs(directory, exist_ok=True)
    states = None
    if resume is not None:
        states, mu = load_resume(resume, config)
        logger.info("resuming %d replicas from %s at mu=%g", len(states), resume, mu)
    elif config.mu == "auto":
        mu = tune_mu(config.run_params(), pilot_sweeps=config.pilot_sweeps)
        logger.info("tuned mu=%g", mu)
    else:
        mu = config.mu
    params = config.run_params(mu)
    N = params.target_N
    streams = run_replicas(params, replicas=config.replicas, resume=states)

    frame = pd.concat([s.to_frame() for s in streams], ignore_index=True)
    frame.to_csv(
        os.path.join(directory, "samples.csv"), index=False, float_format="%.17g", lineterminator="\n"
    )
    header = {
        "model": params.model.to_dict(),
        "config_hash": config.config_hash(),
        "rng_states": [s.state.rng_state for s in streams],
        "sweeps": [s.state.sweeps for s in streams],
        "sweep_updates": [s.state.sweep_updates for s in streams],
    }
    save_checkpoint(os.path.join(directory, "samples.bin"), [s.state.config for s in streams], header)

    df = load_samples(directory)
    spectrum, fpc = (None, None)
    if len(df):
        spectrum, fpc = spectrum_from_frame(df, N)
        write_spectrum(directory, spectrum, spectrum_metadata(config, N, mu), config.threshold)
    else:
        logger.warning("no snapshots collected; spectrum files not written")
    return streams, params, mu, df, spectrum, fpc


def execute_run(config, directory, resume=None):
    """Run a configuration and write its artifacts into ``directory``.

    Files: ``manifest.json``, ``samples.csv``, ``spectrum.csv``, ``spectrum.json``,
    ``samples.bin`` (checkpoint of every replica) and ``run.log``.

    args:
        config (RunConfig): Checked configuration
        directory (str): Output directory, created if needed
        resume (str): Checkpoint to continue from

    returns:
        (dict): Summary (N, mu, samples, fpc, fpc_err, energy, energy_err, top_invariant)
    """
    os.makedirs(directory, exist_ok=True)
    with _log_to(directory):
        logger.info("braidmc %s: %s", __version__, json.dumps(config.to_dict(), sort_keys=True))
        streams, params, mu, df, spectrum, fpc = _simulate(config, directory, resume)
        try:
            energy, energy_err = estimate_energy(streams)
        except TooFewSamples as e:
            logger.info("energy not estimated: %s", e)
            energy, energy_err = None, None
        stats = UpdateStats()
        for s in streams:
            stats = stats.merge(s.stats)
        summary = {
            "N": params.target_N,
            "mu": float(mu),
            "samples": int(len(df)),
            "fpc": None if fpc is None else fpc.mean,
            "fpc_err": None if fpc is None else fpc.stderr,
            "energy": energy,
            "energy_err": energy_err,
            "top_invariant": None if spectrum is None else str(top_invariants(spectrum, 1)[0].q),
        }
        manifest = {
            "version": __version__,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "config": config.to_dict(),
            "config_hash": config.config_hash(),
            "seed": config.seed,
            "mu": float(mu),
            "N": params.target_N,
            "replicas": config.replicas,
            "resumed_from": resume,
            "acceptance": stats.acceptance(),
            "summary": summary,
            "files": sorted(set(os.listdir(directory)) | {"manifest.json"}),
        }
        _write_json(os.path.join(directory, "manifest.json"), manifest)
    return summary


# ------------------------------------------------------------------ oracle comparison


def _frequency_error(df, hits, binomial):
    """Error of an observed frequency: the binomial value or, when larger, the binning error of the indicator series."""
    est = replica_estimate(df, hits)
    if est is None or not np.isfinite(est.stderr):
        return float(binomial)
    return float(max(binomial, est.stderr))


def _z(observed, expected, sigma):
    if sigma <= 0:
        return 0.0 if observed == expected else float("inf")
    return float((observed - expected) / sigma)


def oracle_compare(config, directory, dtaus=DEFAULT_DTAUS):
    """Compare a Monte Carlo run with exact diagonalization and the Trotter oracle.

    args:
        config (RunConfig): Small system
        directory (str): Output directory of the run and ``report.json``
        dtaus (tuple): Time steps of the Trotter oracle

    returns:
        (dict): Report with energy, diagonal-distribution and cycle-distribution z-scores and ``passed``
    """
    params = config.run_params()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lattice = build_lattice(params.lattice)
    table = build_interactions(lattice, config.model_kind, config.cutoff)
    model = params.model
    N = params.target_N
    # size limits are checked before any sampling
    spectral = ed_solve(lattice, model, N, mode="full", table=table)

    os.makedirs(directory, exist_ok=True)
    with _log_to(directory):
        streams, params, mu, df, spectrum, _ = _simulate(config, directory)
        n = len(df)
        if n == 0:
            raise TooFewSamples("oracle comparison needs snapshots; run.target_samples is 0")
        n_eff = n * spectrum.n_eff_fraction

        mc_energy, mc_err = estimate_energy(streams)
        ed_energy = thermal_energy(spectral, model.beta)
        energy = {
            "pimc": mc_energy,
            "pimc_err": mc_err,
            "ed": ed_energy,
            "z": _z(mc_energy, ed_energy, mc_err),
        }

        probabilities = thermal_diag(spectral, model.beta)
        fock0 = df["fock0"].values
        states = []
        chi2 = 0.0
        for occupations, p in zip(spectral.basis.states, probabilities):
            if p <= 0.01:
                continue
            key = "".join(str(int(x)) for x in occupations)
            hits = fock0 == key
            p_hat = float(hits.mean())
            sigma = _frequency_error(df, hits, np.sqrt(p * (1 - p) / n))
            chi2 += ((p_hat - p) / sigma) ** 2
            states.append({"state": key, "ed": float(p), "pimc": p_hat, "z": _z(p_hat, p, sigma)})
        diagonal = {"chi2": float(chi2), "dof": max(len(states) - 1, 0), "states": states}

        cycles = {"skipped": None, "classes": []}
        dimension = factorial(N) * comb(lattice.n_sites, N)
        if N < 2:
            cycles["skipped"] = "fewer than two particles"
        elif dimension > MAX_LABELED_DIMENSION:
            cycles["skipped"] = "labeled dimension {} exceeds {}".format(dimension, MAX_LABELED_DIMENSION)
        else:
            try:
                result = trotter_cycles(lattice, model, N, model.beta, dtaus, table=table)
            except ExtrapolationUnstable as e:
                cycles["skipped"] = str(e)
            else:
                cycles["residual"] = result.residual
                labels = df["q"].values
                for q in result.classes:
                    p_ref = result.extrapolated[q]
                    p_hat = spectrum.probability(q)
                    binomial = wilson_halfwidth(min(max(p_ref, 0.0), 1.0), n)
                    sigma = float(np.hypot(_frequency_error(df, labels == str(q), binomial), result.residual))
                    cycles["classes"].append(
                        {
                            "q": str(q),
                            "trotter": p_ref,
                            "exact": result.exact.get(q, 0.0),
                            "pimc": p_hat,
                            "z": _z(p_hat, p_ref, sigma),
                        }
                    )

        zs = [energy["z"]] + [s["z"] for s in states] + [c["z"] for c in cycles["classes"]]
        report = {
            "version": __version__,
            "config": config.to_dict(),
            "N": N,
            "mu": float(mu),
            "samples": n,
            "n_eff": n_eff,
            "ground_state_positive": spectral.is_positive(),
            "energy": energy,
            "diagonal": diagonal,
            "cycles": cycles,
            "max_abs_z": float(max(abs(z) for z in zs)),
            "passed": bool(all(abs(z) <= Z_LIMIT for z in zs)),
        }
        _write_json(os.path.join(directory, "report.json"), report)
        logger.info("oracle comparison: max |z| = %.3g", report["max_abs_z"])
    return report


# ------------------------------------------------------------------ commands


def cmd_run(args):
    config = load_config(args.config)
    directory = args.output or config.directory
    summary = execute_run(config, directory, resume=args.resume)
    print("wrote {}".format(directory))
    print("N = {}, mu = {:.6g}, samples = {}".format(summary["N"], summary["mu"], summary["samples"]))
    if summary["energy"] is not None:
        print("energy = {}".format(energy_to_str(summary["energy"], summary["energy_err"])))
    if summary["fpc"] is not None:
        print("f_pc = {:.6g} +- {:.2g}".format(summary["fpc"], summary["fpc_err"]))
        print("top invariant = {}".format(summary["top_invariant"]))
    return EXIT_OK


def cmd_analyze(args):
    directory = args.run_dir
    if os.path.exists(os.path.join(directory, "meta_data.csv")):
        df = load_scan(directory)
        print(df.to_string(index=False))
        if {"L", "V", "fpc"} <= set(df.columns):
            print()
            print(fpc_table(df).to_string())
        return EXIT_OK

    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ConfigError("'{}' holds neither manifest.json nor meta_data.csv".format(directory))
    with open(manifest_path) as f:
        manifest = json.load(f)
    config = RunConfig.from_dict(manifest["config"])
    threshold = config.threshold if args.threshold is None else args.threshold
    df = load_samples(directory)
    spectrum, fpc = spectrum_from_frame(df, manifest["N"])
    write_spectrum(directory, spectrum, spectrum_metadata(config, manifest["N"], manifest["mu"]), threshold)
    sys.stdout.write(spectrum_report(spectrum, threshold))
    print("f_pc = {:.6g} +- {:.2g}".format(fpc.mean, fpc.stderr))
    return EXIT_OK


def cmd_oracle_compare(args):
    config = load_config(args.config)
    directory = args.output or config.directory
    dtaus = DEFAULT_DTAUS if args.dtau is None else tuple(args.dtau)
    report = oracle_compare(config, directory, dtaus)
    print(
        "energy: pimc = {}, ed = {:.6g}, z = {:.2f}".format(
            energy_to_str(report["energy"]["pimc"], report["energy"]["pimc_err"]),
            report["energy"]["ed"],
            report["energy"]["z"],
        )
    )
    print("diagonal: chi2 = {:.3g} ({} dof)".format(report["diagonal"]["chi2"], report["diagonal"]["dof"]))
    if report["cycles"]["skipped"]:
        print("cycles: skipped ({})".format(report["cycles"]["skipped"]))
    for c in report["cycles"]["classes"]:
        print("cycles {}: pimc = {:.4f}, trotter = {:.4f}, z = {:.2f}".format(c["q"], c["pimc"], c["trotter"], c["z"]))
    print("max |z| = {:.2f}: {}".format(report["max_abs_z"], "passed" if report["passed"] else "FAILED"))
    return EXIT_OK if report["passed"] else EXIT_ORACLE


def cmd_strtree(args):
    builders = {"cb": build_cb_states, "str": build_str_states}
    state_set = builders[args.phase](args.L)
    tree, depth = optimal_tree(state_set)
    tree.validate()
    print("expected_measurements = {}".format(fraction_to_str(depth)))
    print("info = {} ({:.4f} bits)".format(log2_to_str(state_set.k), info_content(state_set)))
    print(tree.to_text())
    directory = args.output or os.getcwd()
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, "tree_{}_L{}.json".format(args.phase, args.L))
    with open(path, "w") as f:
        f.write(tree.to_json(indent=2))
        f.write("\n")
    print("wrote {}".format(path))
    return EXIT_OK


def cmd_presets(args):
    if args.action == "list":
        for name in list_presets():
            print(name)
        return EXIT_OK
    if not args.name:
        raise ConfigError("presets copy needs a preset name")
    try:
        print("Creating {}".format(install(args.name, args.output)))
    except ValueError as e:
        raise ConfigError(str(e))
    return EXIT_OK


def _parse_scan_params(items):
    kw_scan_params = {}
    order = []
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or not values:
            raise ConfigError("--param expects KEY=V1,V2,... got '{}'".format(item))
        key = key.strip()
        name = field_of(key)
        kw_scan_params[key] = [parse_value(name, v) for v in values.split(",")]
        order.append(key)
    if len(set(order)) != len(order):
        raise ConfigError("each --param key may be given once")
    return kw_scan_params, order


def cmd_scan(args):
    config = load_config(args.config)
    kw_scan_params, order = _parse_scan_params(args.param)
    path = args.output or config.directory
    df = n_param_scan(config, kw_scan_params, order, execute_run, path=path, ntrials=args.ntrials)
    print(df.to_string(index=False))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="braidmc",
        description="Worldline Monte Carlo for hard-core bosons with permutation-cycle topological spectra",
    )
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command")
    sub.required = True

    p = sub.add_parser("run", help="run a simulation from a TOML configuration")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="output directory (default: output.directory)")
    p.add_argument("--resume", help="checkpoint (samples.bin) to continue from")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="recompute spectrum files of a run or summarize a scan")
    p.add_argument("run_dir")
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("oracle-compare", help="compare a small run with exact results")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.add_argument("--dtau", type=float, action="append", help="Trotter time step (repeat, at least 3)")
    p.set_defaults(func=cmd_oracle_compare)

    p = sub.add_parser("strtree", help="optimal site-measurement tree for the CB or STR states")
    p.add_argument("L", type=int)
    p.add_argument("--phase", choices=("cb", "str"), default="str")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_strtree)

    p = sub.add_parser("presets", help="list or copy shipped run configurations")
    p.add_argument("action", choices=("list", "copy"))
    p.add_argument("name", nargs="?")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("scan", help="run a parameter grid, e.g. --param L=4,6 --param V=10,20")
    p.add_argument("config")
    p.add_argument("--param", action="append", required=True)
    p.add_argument("--ntrials", type=int, default=1)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_scan)
    return parser


def main(argv=None):
    """Entry point of the ``braidmc`` command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK

    root = logging.getLogger("braidmc")
    root.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(_LOG_FORMAT))
    root.addHandler(handler)
    try:
        return args.func(args)
    except StalledSampler as e:
        print("braidmc: stalled: {}".format(e), file=sys.stderr)
        return EXIT_STALLED
    except (BasisTooLarge, DimensionTooLarge) as e:
        print("braidmc: too large: {}".format(e), file=sys.stderr)
        return EXIT_TOO_LARGE
    except (ConfigError, Infeasible, MetadataMismatch, ValueError, FileNotFoundError) as e:
        print("braidmc: error: {}".format(e), file=sys.stderr)
        return EXIT_CONFIG
    finally:
        root.removeHandler(handler)
