from collections import Counter
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import reduce
from typing import Tuple

import numpy as np

from ..universal import MetadataMismatch, TooShort

__all__ = (
    "MIN_BINS",
    "Series",
    "Estimate",
    "binned_error",
    "jackknife",
    "merge_replicas",
    "check_metadata",
)

# fewest bins any error estimate is based on
MIN_BINS = 16
# relative change between successive bin sizes regarded as a plateau
PLATEAU = 0.05


@dataclass(frozen=True)
class Series:
    """A Monte Carlo time series, optionally already binned."""

    values: np.ndarray
    bin_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.bin_size < 1:
            raise ValueError("bin_size must be >= 1. got {}".format(self.bin_size))

    def __len__(self):
        return len(self.values)

    def binned(self, size):
        """Means of consecutive blocks of ``size`` values; a trailing partial block is dropped."""
        n_bins = len(self.values) // size
        data = self.values[: n_bins * size]
        return Series(data.reshape(n_bins, size, *data.shape[1:]).mean(axis=1), self.bin_size * size)


@dataclass(frozen=True)
class Estimate:
    """Mean with a correlation-aware standard error.

    ``n_eff = n / (2 tau_int)``; ``curve`` holds (bin size, error) pairs of the binning analysis.
    """

    mean: float
    stderr: float
    tau_int: float
    n_eff: float
    n: int = 0
    bin_size: int = 1
    curve: Tuple[Tuple[int, float], ...] = field(default=(), repr=False)

    @classmethod
    def empty(cls):
        return cls(mean=0.0, stderr=0.0, tau_int=0.5, n_eff=0.0, n=0)


def _sem(values):
    return float(np.std(values, ddof=1, axis=0) / np.sqrt(len(values)))


def binned_error(series):
    """Binning analysis of a correlated series.

    The bin size doubles until the error changes by less than 5% or fewer than
    16 bins would remain.

    args:
        series (array-like or Series): At least 16 values

    returns:
        (Estimate): Plateau error, ``tau_int = (stderr / naive)**2 / 2`` (at least 0.5) and ``n_eff``

    examples:
        .. code-block:: python

            >>> est = binned_error(np.ones(100))
            >>> est.stderr, est.tau_int
            (0.0, 0.5)

    """
    if not isinstance(series, Series):
        series = Series(series)
    values = series.values
    n = len(values)
    if n < MIN_BINS:
        raise TooShort("binning needs >= {} values, got {}".format(MIN_BINS, n))

    naive = _sem(values)
    curve = [(1, naive)]
    size = 1
    error = naive
    while n // (2 * size) >= MIN_BINS:
        previous = error
        size *= 2
        error = _sem(series.binned(size).values)
        curve.append((size, error))
        if previous == 0 or abs(error - previous) < PLATEAU * previous:
            break

    if naive > 0:
        tau = max(0.5, 0.5 * (error / naive) ** 2)
    else:
        tau = 0.5
    return Estimate(
        mean=float(values.mean()),
        stderr=float(error),
        tau_int=float(tau),
        n_eff=n / (2 * tau),
        n=n,
        bin_size=size,
        curve=tuple(curve),
    )


def jackknife(series, estimator, bin_size=None):
    """Leave-one-bin-out jackknife.

    The bin size defaults to the plateau bin size of :func:`binned_error` (the
    largest over columns for 2D data), so for ``estimator=np.mean`` the result
    equals :func:`binned_error`.

    args:
        series (array-like): Samples, shape (n,) or (n, k)
        estimator (callable): Maps a sample array of the same layout to a float
        bin_size (int): Override the bin size

    returns:
        (Estimate): ``estimator`` on all samples with its jackknife error
    """
    data = np.asarray(series.values if isinstance(series, Series) else series, dtype=float)
    n = len(data)
    if n < MIN_BINS:
        raise TooShort("jackknife needs >= {} values, got {}".format(MIN_BINS, n))

    if data.ndim == 1:
        binning = [binned_error(data)]
    else:
        binning = [binned_error(data[:, k]) for k in range(data.shape[1])]
    if bin_size is None:
        bin_size = max(b.bin_size for b in binning)
    n_bins = n // bin_size
    if n_bins < MIN_BINS:
        raise TooShort("jackknife needs >= {} bins, got {}".format(MIN_BINS, n_bins))

    trimmed = data[: n_bins * bin_size]
    leave_out = np.empty(n_bins)
    for i in range(n_bins):
        keep = np.ones(len(trimmed), dtype=bool)
        keep[i * bin_size : (i + 1) * bin_size] = False
        leave_out[i] = estimator(trimmed[keep])
    error = np.sqrt((n_bins - 1) / n_bins * np.sum((leave_out - leave_out.mean()) ** 2))

    tau = max(b.tau_int for b in binning)
    return Estimate(
        mean=float(estimator(data)),
        stderr=float(error),
        tau_int=tau,
        n_eff=n / (2 * tau),
        n=n,
        bin_size=bin_size,
    )


def check_metadata(metadata, ignore=("replica", "seed")):
    """Raise MetadataMismatch unless all metadata dicts agree outside ``ignore``."""
    stripped = [{k: v for k, v in m.items() if k not in ignore} for m in metadata]
    for i, m in enumerate(stripped[1:], start=1):
        if m != stripped[0]:
            keys = sorted(
                k for k in set(m) | set(stripped[0]) if m.get(k) != stripped[0].get(k)
            )
            raise MetadataMismatch(
                "replica {} differs from replica 0 in {}".format(i, keys)
            )


def _merge_estimates(parts):
    parts = [p for p in parts if p.n_eff > 0]
    if not parts:
        return Estimate.empty()
    W = sum(p.n_eff for p in parts)
    mean = sum(p.n_eff * p.mean for p in parts) / W
    stderr = np.sqrt(sum((p.n_eff / W) ** 2 * p.stderr ** 2 for p in parts))
    n = sum(p.n for p in parts)
    return Estimate(
        mean=float(mean),
        stderr=float(stderr),
        tau_int=float(n / (2 * W)) if n else 0.5,
        n_eff=float(W),
        n=n,
    )


def merge_replicas(parts, metadata=None):
    """Merge per-replica partial results.

    Histograms (mappings) are added, Estimates are combined with weights
    ``n_eff``, and objects with a ``merge`` method (such as spectra) are folded
    with it. Empty partials are the identity.

    args:
        parts (list): Partial results of one kind
        metadata (list): Optional metadata dict per part; they must agree

    returns:
        Merged result of the same kind
    """
    parts = list(parts)
    if metadata is not None:
        if len(metadata) != len(parts):
            raise ValueError("need one metadata dict per part")
        check_metadata(metadata)
    if not parts:
        raise ValueError("nothing to merge")
    if all(isinstance(p, Estimate) for p in parts):
        return _merge_estimates(parts)
    if all(isinstance(p, Mapping) for p in parts):
        return reduce(lambda a, b: a + Counter(b), parts, Counter())
    if all(hasattr(p, "merge") for p in parts):
        return reduce(lambda a, b: a.merge(b), parts)
    raise TypeError("cannot merge parts of types {}".format({type(p).__name__ for p in parts}))
