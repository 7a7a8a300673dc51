from fractions import Fraction
from math import inf, log
from numbers import Rational

from scipy.special import expit


def parse_fraction(value):
    """
    Parse a number given as int, float, decimal string or fraction string ("7/10")
    into an exact Fraction. Floats go through their shortest repr so 0.7 becomes 7/10.
    """
    if isinstance(value, bool):
        raise ValueError(f"not a number: {value!r}")

    if isinstance(value, Rational):
        return Fraction(value)

    if isinstance(value, float):
        return Fraction(repr(value))

    if isinstance(value, str):
        return Fraction(value.strip())

    raise ValueError(f"not a number: {value!r}")


def logit(p):
    """Log-odds of p, with the closed-interval ends mapped to -inf/+inf."""
    p = float(p)

    if p <= 0:
        return -inf

    if p >= 1:
        return inf

    return log(p / (1 - p))


logistic = expit
"""Inverse of `logit` (vectorized)."""
