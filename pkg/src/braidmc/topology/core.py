import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Tuple

import numpy as np
import pandas as pd

from ..universal import EmptyStream
from ..worldlines import CycleVector

__all__ = (
    "PFraction",
    "SpectrumEntry",
    "Spectrum",
    "validate_cycles",
    "p_of",
    "avg_cycle_length",
    "f_pc",
    "accumulate",
    "spectrum_report",
    "mean_fpc",
    "top_invariants",
    "wilson_halfwidth",
    "REPORT_COLUMNS",
)

REPORT_COLUMNS = ("q", "avg_lambda", "prob", "err", "count")


def _as_cycles(q):
    return q if isinstance(q, CycleVector) else CycleVector(tuple(q))


def validate_cycles(q, N):
    """Return ``q`` as a CycleVector after checking sum_l l * n_l == N."""
    q = _as_cycles(q)
    if q.N != N:
        raise ValueError(
            "cycle vector {} holds {} particles, expected N={}".format(str(q), q.N, N)
        )
    return q


@dataclass(frozen=True)
class PFraction:
    """Fraction of particles in cycles of each length.

    ``p[l-1] = n_l * l / N`` for l = 1..N and ``p_prime`` is the same for l = 2..N.
    """

    p: Tuple[Fraction, ...]

    @property
    def p_prime(self):
        return self.p[1:]

    def as_floats(self):
        return np.array([float(x) for x in self.p])


def p_of(q, N):
    """Fractions of worldlines in cycles of each length.

    args:
        q (CycleVector): Cycle counts
        N (int): Particle number

    returns:
        (PFraction): Exact fractions

    examples:
        .. code-block:: python

            >>> p_of(CycleVector((1, 1, 0)), 3).p
            (Fraction(1, 3), Fraction(2, 3), Fraction(0, 1))

    """
    q = validate_cycles(q, N)
    counts = list(q.counts) + [0] * (N - len(q.counts))
    return PFraction(tuple(Fraction(n * l, N) for l, n in enumerate(counts[:N], start=1)))


def avg_cycle_length(q, N):
    """p' . (2, ..., N): average length of cycles longer than one."""
    pf = p_of(q, N)
    return sum((l * x for l, x in enumerate(pf.p_prime, start=2)), Fraction(0))


def f_pc(q, N):
    """Fraction of particles in cycles longer than one, 1 - n_1 / N."""
    q = validate_cycles(q, N)
    n1 = q.counts[0] if q.counts else 0
    return Fraction(N - n1, N) if N else Fraction(0)


def wilson_halfwidth(p, n, z=1.0):
    """Half width of the Wilson score interval for proportion ``p`` at sample size ``n``."""
    if n <= 0:
        return 0.0
    denom = 1 + z ** 2 / n
    return float(z * np.sqrt(p * (1 - p) / n + z ** 2 / (4 * n ** 2)) / denom)


@dataclass(frozen=True)
class SpectrumEntry:
    q: CycleVector
    count: int
    prob: float
    err: float
    avg_lambda: Fraction


@dataclass
class Spectrum:
    """Empirical distribution over cycle vectors.

    Counts are the mergeable part; probabilities and errors are derived. Errors
    are Wilson half widths at the effective sample size ``total * n_eff_fraction``.
    """

    counts: Counter = field(default_factory=Counter)
    N: int = 0
    n_eff_fraction: float = 1.0
    fpc_sum: Fraction = field(default=Fraction(0))

    @property
    def total_samples(self):
        return sum(self.counts.values())

    @property
    def n_eff(self):
        return self.total_samples * self.n_eff_fraction

    def __len__(self):
        return len(self.counts)

    def entries(self):
        """Entries sorted by average cycle length, ties broken lexicographically on q."""
        total = self.total_samples
        out = []
        for q, count in self.counts.items():
            prob = count / total
            out.append(
                SpectrumEntry(
                    q=q,
                    count=count,
                    prob=prob,
                    err=wilson_halfwidth(prob, self.n_eff),
                    avg_lambda=avg_cycle_length(q, self.N),
                )
            )
        return sorted(out, key=lambda e: (e.avg_lambda, e.q.counts))

    def probability(self, q):
        q = _as_cycles(q)
        total = self.total_samples
        return self.counts.get(q, 0) / total if total else 0.0

    def merge(self, other):
        """Combine two spectra of the same particle number (commutative, associative)."""
        if self.total_samples == 0:
            return Spectrum(Counter(other.counts), other.N, other.n_eff_fraction, other.fpc_sum)
        if other.total_samples == 0:
            return Spectrum(Counter(self.counts), self.N, self.n_eff_fraction, self.fpc_sum)
        if self.N != other.N:
            raise ValueError("cannot merge spectra with N={} and N={}".format(self.N, other.N))
        n_a, n_b = self.total_samples, other.total_samples
        fraction = (n_a * self.n_eff_fraction + n_b * other.n_eff_fraction) / (n_a + n_b)
        return Spectrum(self.counts + other.counts, self.N, fraction, self.fpc_sum + other.fpc_sum)

    def to_frame(self):
        """DataFrame with columns q, avg_lambda, prob, err, count and p_1 ... p_N in percent."""
        rows = []
        for e in self.entries():
            row = {
                "q": str(e.q),
                "avg_lambda": float(e.avg_lambda),
                "prob": e.prob,
                "err": e.err,
                "count": e.count,
            }
            for l, x in enumerate(p_of(e.q, self.N).p, start=1):
                row["p{}".format(l)] = 100 * float(x)
            rows.append(row)
        columns = list(REPORT_COLUMNS) + ["p{}".format(l) for l in range(1, self.N + 1)]
        return pd.DataFrame(rows, columns=columns)

    def to_dict(self, metadata=None):
        return {
            "metadata": dict(metadata or {}),
            "N": self.N,
            "total_samples": self.total_samples,
            "n_eff": self.n_eff,
            "mean_fpc": float(mean_fpc(self)) if self.total_samples else None,
            "entries": [
                {
                    "q": str(e.q),
                    "avg_lambda": float(e.avg_lambda),
                    "prob": e.prob,
                    "err": e.err,
                    "count": e.count,
                }
                for e in self.entries()
            ],
        }

    def to_json(self, metadata=None, **kwargs):
        return json.dumps(self.to_dict(metadata), **kwargs)


def accumulate(stream, N=None, n_eff_fraction=1.0):
    """Histogram a stream of cycle vectors into a Spectrum.

    args:
        stream (iterable): CycleVectors (or count tuples)
        N (int): Particle number. Default is taken from the first element.
        n_eff_fraction (float): n_eff / n of the series, used for the errors

    returns:
        (Spectrum): Spectrum

    examples:
        .. code-block:: python

            >>> s = accumulate([CycleVector((3, 0, 0))] * 2 + [CycleVector((1, 1, 0))])
            >>> s.probability((3, 0, 0))
            0.6666666666666666

    """
    counts = Counter()
    fpc_sum = Fraction(0)
    for q in stream:
        q = _as_cycles(q)
        if N is None:
            N = q.N
        q = validate_cycles(q, N)
        counts[q] += 1
        fpc_sum += f_pc(q, N)
    if not counts:
        raise EmptyStream("no cycle vectors to accumulate")
    if not 0 < n_eff_fraction <= 1:
        raise ValueError("n_eff_fraction must be in (0, 1]. got {}".format(n_eff_fraction))
    return Spectrum(counts=counts, N=N, n_eff_fraction=float(n_eff_fraction), fpc_sum=fpc_sum)


def mean_fpc(spectrum):
    """sum_q p(q) f_pc(q); equals the stream average of f_pc."""
    total = spectrum.total_samples
    return sum(
        (Fraction(c, total) * f_pc(q, spectrum.N) for q, c in spectrum.counts.items()),
        Fraction(0),
    )


def top_invariants(spectrum, k=5):
    """The ``k`` most probable entries, most probable first (ties by q)."""
    entries = sorted(spectrum.entries(), key=lambda e: (-e.count, e.q.counts))
    return entries[:k]


def spectrum_report(spectrum, threshold=0.01):
    """CSV text of the entries with probability above ``threshold``.

    Columns: q, avg_lambda, prob, err, count followed by p_1 ... p_N in percent.
    With threshold 0 every entry is listed.

    args:
        spectrum (Spectrum): Spectrum
        threshold (float): Minimum probability (exclusive, except 0 keeps all)

    returns:
        (str): CSV text with a header line
    """
    df = spectrum.to_frame()
    if threshold > 0:
        df = df[df["prob"] > threshold]
    return df.to_csv(index=False, float_format="%.10g", lineterminator="\n")
