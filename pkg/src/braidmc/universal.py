from fractions import Fraction

import numpy as np

__all__ = (
    "ConfigError",
    "WormPresentError",
    "HardCoreViolation",
    "StalledSampler",
    "TooFewSamples",
    "EmptyStream",
    "TooShort",
    "MetadataMismatch",
    "BasisTooLarge",
    "DimensionTooLarge",
    "ExtrapolationUnstable",
    "Infeasible",
    "DuplicateBondWarning",
    "NonMonotoneWarning",
    "counts_to_str",
    "str_to_counts",
    "parse_fraction",
    "fraction_to_str",
    "log2_to_str",
    "energy_to_str",
)


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


class WormPresentError(ValueError):
    """Operation is only defined on closed (worm-free) configurations."""


class HardCoreViolation(ValueError):
    """An occupation outside {0, 1} or a hop into an occupied site."""


class StalledSampler(RuntimeError):
    """No valid fixed-N snapshot for too many sweeps."""


class TooFewSamples(ValueError):
    pass


class EmptyStream(ValueError):
    pass


class TooShort(ValueError):
    """Series too short for an error estimate."""


class MetadataMismatch(ValueError):
    pass


class BasisTooLarge(ValueError):
    pass


class DimensionTooLarge(ValueError):
    pass


class ExtrapolationUnstable(RuntimeError):
    pass


class Infeasible(ValueError):
    """Two states cannot be told apart by any single-site measurement."""


class DuplicateBondWarning(UserWarning):
    pass


class NonMonotoneWarning(UserWarning):
    pass


def counts_to_str(counts):
    """Convert a tuple of cycle counts to its dash-separated form. *i.e.* (1, 1, 0) -> '1-1-0'

    args:
        counts (tuple): Cycle counts (n_1, ..., n_N)

    returns:
        (str): Dash-separated counts
    """
    return "-".join(str(int(c)) for c in counts)


def str_to_counts(string):
    """Inverse of :func:`counts_to_str`. *i.e.* '0-0-1' -> (0, 0, 1)

    args:
        string (str): Dash-separated counts

    returns:
        (tuple): Cycle counts
    """
    string = str(string).strip()
    if string == "":
        return tuple()
    try:
        out = tuple(int(x) for x in string.split("-"))
    except ValueError:
        raise ValueError("unable to interpret '{}' as dash-separated counts".format(string))
    if any(c < 0 for c in out):
        raise ValueError("counts must be non-negative. got {}".format(string))
    return out


def parse_fraction(value):
    """Return a ``Fraction`` from '1/2', 0.5, '0.5' or Fraction(1, 2).

    args:
        value (str or float or int or Fraction): Value to interpret

    returns:
        (Fraction): Exact value (floats are limited to denominators <= 1000)
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, (float, np.floating)):
        return Fraction(float(value)).limit_denominator(1000)
    try:
        return Fraction(str(value).strip()).limit_denominator(1000)
    except (ValueError, ZeroDivisionError):
        raise ValueError("unable to interpret '{}' as a fraction".format(value))


def fraction_to_str(frac):
    """'8/3' for Fraction(8, 3), '1' for Fraction(1)."""
    frac = Fraction(frac)
    if frac.denominator == 1:
        return str(frac.numerator)
    return "{}/{}".format(frac.numerator, frac.denominator)


def log2_to_str(k):
    """Information content of k equally likely states. *i.e.* 6 -> 'log2(6)', 4 -> '2'"""
    k = int(k)
    if k > 0 and k & (k - 1) == 0:
        return str(k.bit_length() - 1)
    return "log2({})".format(k)


def energy_to_str(value, error=None, unit="t"):
    """Format an energy in units of the hopping. *i.e.* (-1.0012, 0.0031) -> '-1.0012(31) t'"""
    if error is None or not np.isfinite(error) or error <= 0:
        return "{:.6g} {}".format(value, unit)
    digits = max(0, 1 - int(np.floor(np.log10(error))))
    scaled = int(round(error * 10 ** digits))
    return "{:.{d}f}({}) {}".format(value, scaled, unit, d=digits)
