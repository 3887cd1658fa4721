import itertools
import logging
import os

import numpy as np
import pandas as pd

__all__ = ("get_save_name", "point_name", "n_param_scan", "append_meta_data")

logger = logging.getLogger("braidmc.scan")


def get_save_name(name, path):
    """Returns a unique directory name correctly indexed by trial number.

    args:
        name (str): Base name of the trial
        path (str): Save location

    returns:
        save_name (str): ``name_<index>`` with index one above the largest existing one

    examples:
        .. code-block:: python

            >>> os.listdir('./scan/')
            ['square4_V20_0', 'meta_data.csv']
            >>> get_save_name('square4_V20', './scan/')
            'square4_V20_1'

    """
    existing = os.listdir(path) if os.path.isdir(path) else []
    indices = []
    for entry in existing:
        base, _, index = entry.rpartition("_")
        if base == name and index.isdigit():
            indices.append(int(index))
    save_name = "{}_{}".format(name, max(indices) + 1 if indices else 0)
    if save_name in set(existing):
        raise ValueError("error in get_save_name, did not generate a unique name")
    return save_name


def point_name(config):
    """Base name of a scan point. *i.e.* 'square4_nn_square_V20'"""
    return "{}_{}_V{:g}".format(config.lattice_spec().label(), config.model_kind, config.V)


def append_meta_data(path, row):
    """Add one row to ``meta_data.csv`` in ``path``; the columns must match the existing index."""
    filename = os.path.join(path, "meta_data.csv")
    new = pd.DataFrame(row, index=[0])
    if os.path.exists(filename):
        existing = pd.read_csv(filename)
        if set(new.columns) != set(existing.columns):
            raise ValueError(
                "the columns of meta_data do not match the existing columns of the index in this path ({}). "
                "Please scan the same kind of runs, or move to a new path".format(path)
            )
        out = pd.concat([existing, new[existing.columns]], ignore_index=True)
    else:
        out = new
    out.to_csv(filename, index=False)
    return out


def n_param_scan(base_config, kw_scan_params, scan_param_order, run_function, path=None, ntrials=1):
    """Run one simulation per grid point and index the results.

    Every point is written into its own sub-directory of ``path`` (named by
    :func:`get_save_name`) and gets a row in ``path/meta_data.csv`` holding the
    scanned values and the summary returned by ``run_function``.

    args:
        base_config (RunConfig): Configuration shared by all points
        kw_scan_params (dict): Values to scan per key, *i.e.* ``{'L': [4, 6], 'V': [10, 20]}``
        scan_param_order (array-like): Order of scan parameters, outermost first
        run_function (callable): ``run_function(config, directory) -> dict`` of summary values
        path (str): Scan directory. Default is ``base_config.directory``.
        ntrials (int): Independent runs per point; trial i uses seed ``base seed + i``

    returns:
        (pandas.DataFrame): The scan index

    examples:
        .. code-block:: python

            >>> n_param_scan(config, {'L': [4, 6], 'V': [10, 20]}, ['L', 'V'], execute_run)

    """
    if set(scan_param_order) != set(kw_scan_params.keys()):
        raise KeyError("kw_scan_params do not have the same keys as scan_param_order")
    for key, values in kw_scan_params.items():
        if isinstance(values, str) or not hasattr(values, "__getitem__"):
            raise TypeError("kw_scan_param: {} must be array-like of params. it is not.".format(key))
    if ntrials < 1:
        raise ValueError("ntrials must be >= 1. got {}".format(ntrials))

    path = base_config.directory if path is None else path
    os.makedirs(path, exist_ok=True)

    # check every point before running any
    points = []
    for values in itertools.product(*(kw_scan_params[key] for key in scan_param_order)):
        current = dict(zip(scan_param_order, values))
        points.append((current, base_config.replace(**current).checks()))

    total_scans = int(np.prod([len(v) for v in kw_scan_params.values()]) * ntrials)
    iteration = 0
    index = None
    for current, config in points:
        for trial in range(ntrials):
            iteration += 1
            logger.info("Scan {} of {}. {}".format(iteration, total_scans, current))
            trial_config = config.replace(seed=config.seed + trial) if trial else config
            save_name = get_save_name(point_name(trial_config), path)
            summary = run_function(trial_config, os.path.join(path, save_name))
            row = trial_config.to_flat_dict()
            row.update({"trial": trial, "directory": save_name})
            row.update(summary)
            index = append_meta_data(path, row)
    return index
