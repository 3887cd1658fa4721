import os
import warnings

import pandas as pd

from ..worldlines import CycleVector

__all__ = ("load_samples", "load_scan", "fpc_table", "cycles_from_frame")


def load_samples(path):
    """Load the snapshot table of a run directory.

    args:
        path (str): Run directory containing ``samples.csv``, or the csv file itself

    returns:
        (pandas.DataFrame): One row per snapshot, ``q`` and ``fock0`` kept as strings
    """
    if os.path.isdir(path):
        path = os.path.join(path, "samples.csv")
    return pd.read_csv(path, dtype={"q": str, "fock0": str}, float_precision="round_trip")


def cycles_from_frame(df):
    """CycleVectors of the ``q`` column of a snapshot table."""
    return [CycleVector.from_string(q) for q in df["q"].values]


def load_scan(path):
    """
    Load the index of a parameter scan. Path must contain ``meta_data.csv``.

    args:
        path (str): Scan directory

    returns:
        (pandas.DataFrame): One row per scan point
    """
    filename = os.path.join(path, "meta_data.csv")
    try:
        df = pd.read_csv(filename)
    except FileNotFoundError:
        raise FileNotFoundError(
            "no file named 'meta_data.csv' exists in path '{}'. Is this a scan directory?".format(path)
        )
    missing = [d for d in df.get("directory", []) if not os.path.isdir(os.path.join(path, str(d)))]
    if missing:
        warnings.warn("scan index lists missing run directories: {}".format(missing), UserWarning)
    return df


def fpc_table(df, index="L", columns="V", values="fpc"):
    """Pivot a scan index into a table of mean f_PC (rows ``index``, columns ``columns``).

    examples:
        .. code-block:: python

            >>> fpc_table(load_scan('./scan/'))
            V        10.0   20.0
            L
            4       0.21   0.05
            6       0.22   0.05

    """
    for column in (index, columns, values):
        if column not in df.columns:
            raise ValueError("column '{}' not in scan index. columns are {}".format(column, list(df.columns)))
    return df.pivot_table(index=index, columns=columns, values=values, aggfunc="mean")
