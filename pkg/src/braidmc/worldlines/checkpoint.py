import hashlib
import io
import json
import pickle
import warnings

import numpy as np

from ..lattice import LatticeSpec, build_lattice
from .core import Configuration, Kink

__all__ = ("save_checkpoint", "load_checkpoint", "spec_hash")

_MAGIC = b"BRAIDMC-CHECKPOINT-1\n"
_HEADER_END = b"########"
_SECTION = b"##|##|##|##"


def spec_hash(lattice_spec):
    """sha256 of the lattice spec, stored in checkpoint headers."""
    payload = json.dumps(lattice_spec.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def _config_to_record(config):
    kinks = sorted(config.kinks.items())
    return {
        "beta": config.beta,
        "fock0": config.fock0.copy(),
        "times": [np.array(t, dtype=np.float64) for t in config.times],
        "tags": [np.array(t, dtype=np.int64) for t in config.tags],
        "kinks": np.array(
            [(kid, k.slot, k.src, k.dst) for kid, k in kinks], dtype=np.int64
        ).reshape(-1, 4),
        "worm": None if config.worm is None else dict(config.worm),
        "next_id": config._next_id,
    }


def _record_to_config(record, lattice):
    config = Configuration(lattice, record["fock0"], record["beta"])
    config.times = [list(map(float, t)) for t in record["times"]]
    config.tags = [list(map(int, t)) for t in record["tags"]]
    kink_times = {}
    for site in range(lattice.n_sites):
        for u, tag in zip(config.times[site], config.tags[site]):
            if tag >= 0:
                kink_times[tag] = u
    for kid, slot, src, dst in record["kinks"]:
        config.kinks[int(kid)] = Kink(kink_times[int(kid)], int(slot), int(src), int(dst))
    config.worm = None if record["worm"] is None else dict(record["worm"])
    config._next_id = int(record["next_id"])
    return config


def save_checkpoint(path, configs, header):
    """Write worldline configurations of one or more replicas to ``path``.

    Layout: magic line, pickled JSON header, ``########``, then one pickled
    record per replica (fock0, per-site event times and tags, kink table, worm)
    each preceded by ``##|##|##|##``.

    args:
        path (str): Output file
        configs (list): Configurations, one per replica
        header (dict): JSON-serializable metadata (lattice spec, model, RNG states, counters)

    """
    if len(configs) == 0:
        raise ValueError("no configurations to save")
    header = dict(header)
    header.setdefault("lattice", configs[0].lattice.spec.to_dict())
    header.setdefault("lattice_hash", spec_hash(configs[0].lattice.spec))
    header["replicas"] = len(configs)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(pickle.dumps(json.dumps(header, sort_keys=True)))
        f.write(_HEADER_END)
        for config in configs:
            f.write(_SECTION)
            f.write(pickle.dumps(_config_to_record(config)))


def load_checkpoint(path, lattice=None):
    """Read a checkpoint written by :func:`save_checkpoint`.

    args:
        path (str): Checkpoint file
        lattice (Lattice): Lattice to attach. Default rebuilds it from the header.

    returns:
        (tuple): (header dict, list of Configuration)
    """
    with open(path, "rb") as f:
        stream = io.BytesIO(f.read())

    if stream.read(len(_MAGIC)) != _MAGIC:
        raise ValueError("'{}' is not a braidmc checkpoint".format(path))
    header = json.loads(pickle.load(stream))
    if stream.read(len(_HEADER_END)) != _HEADER_END:
        raise ValueError("corrupt checkpoint header in '{}'".format(path))

    if lattice is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lattice = build_lattice(LatticeSpec(**header["lattice"]))
    elif spec_hash(lattice.spec) != header["lattice_hash"]:
        raise ValueError("checkpoint was written for a different lattice")

    configs = []
    for _ in range(header["replicas"]):
        if stream.read(len(_SECTION)) != _SECTION:
            raise ValueError("corrupt replica section in '{}'".format(path))
        configs.append(_record_to_config(pickle.load(stream), lattice))
    return header, configs
