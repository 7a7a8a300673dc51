"""
Probability mass functions on a uniform log-likelihood-ratio grid.

A `GridPMF` holds masses for the values step * (offset + k), k = 0..len-1. Lattice
signal models (every LLR an integer multiple of one step) are represented exactly;
other models are first rounded onto a fine grid. Two ways of bounding the support are
offered: saturation (mass beyond +/- clip piles up on the edge bins) for filters and
value functions, and trimming (negligible tail mass is dropped, never renormalized) for
the one-sided derivations, where dropping mass can only lower an expected belief.
"""

from dataclasses import dataclass
from math import ceil, floor

import numpy as np
from scipy.signal import fftconvolve

from cool_off_solver.errors import ResolutionError
from cool_off_solver.util.numbers import logistic

DEFAULT_GRID_STEP = 1e-3
"""Grid step in log-odds for models whose LLRs share no common step."""

DEFAULT_CLIP = 40.0
"""Saturation bound on accumulated log-odds evidence."""

TRIM_MASS = 1e-16
"""Tail mass dropped on each side when trimming."""

_FFT_THRESHOLD = 512


@dataclass(frozen=True)
class GridPMF:
    """Masses on the values step * (offset + arange(len(probs)))."""

    step: float
    offset: int
    probs: np.ndarray

    @classmethod
    def point(cls, step, value=0.0):
        """Unit mass at the grid point nearest to value."""
        return cls(step, int(round(value / step)), np.ones(1))

    @property
    def values(self):
        return self.step * (self.offset + np.arange(self.probs.size))

    @property
    def mass(self):
        return float(self.probs.sum())

    def mean(self):
        return float(np.dot(self.values, self.probs) / self.probs.sum())

    def expectation(self, function):
        """Sum of mass times function(value); mass is not renormalized."""
        return float(np.dot(self.probs, function(self.values)))

    def normalized(self):
        total = self.probs.sum()

        if total <= 0:
            raise ValueError("cannot normalize a PMF with zero mass")

        return GridPMF(self.step, self.offset, self.probs / total)

    def shifted(self, units):
        """Translate by an integer number of grid steps."""
        return GridPMF(self.step, self.offset + int(units), self.probs)

    def convolve(self, other, clip=None, trim=False):
        """Distribution of the sum of two independent variables on the same grid."""
        if not np.isclose(self.step, other.step, rtol=1e-12, atol=0):
            raise ValueError("cannot convolve PMFs on different grids")

        if min(self.probs.size, other.probs.size) > _FFT_THRESHOLD:
            probs = np.clip(fftconvolve(self.probs, other.probs), 0.0, None)
        else:
            probs = np.convolve(self.probs, other.probs)

        result = GridPMF(self.step, self.offset + other.offset, probs)

        if clip is not None:
            result = result.saturated(clip)

        if trim:
            result = result.trimmed()

        return result

    def saturated(self, clip):
        """Fold mass beyond +/- clip onto the edge bins."""
        bound = int(ceil(clip / self.step))
        low_index = -bound - self.offset
        high_index = bound - self.offset
        probs = self.probs

        if low_index <= 0 and high_index >= probs.size - 1:
            return self

        low_index = max(low_index, 0)
        high_index = min(high_index, probs.size - 1)

        if low_index > high_index:
            # everything lies beyond one edge
            edge = bound if self.offset > 0 else -bound

            return GridPMF(self.step, edge, np.array([probs.sum()]))

        folded = probs[low_index : high_index + 1].copy()
        folded[0] += probs[:low_index].sum()
        folded[-1] += probs[high_index + 1 :].sum()

        return GridPMF(self.step, self.offset + low_index, folded)

    def trimmed(self, tail=TRIM_MASS):
        """Drop at most `tail` mass from each end."""
        cumulative = np.cumsum(self.probs)
        total = cumulative[-1]
        start = int(np.searchsorted(cumulative, tail, side="right"))
        stop = int(np.searchsorted(cumulative, total - tail, side="left")) + 1
        start = min(start, self.probs.size - 1)
        stop = max(stop, start + 1)

        return GridPMF(self.step, self.offset + start, self.probs[start:stop].copy())

    def split(self, cut, tol=1e-9):
        """
        Partition at a cut value: (mass of values >= cut, mass below), unnormalized.

        A value within tol of the cut counts as reaching it.
        """
        index = self.first_index_at_or_above(cut, tol)
        above = GridPMF(self.step, self.offset + index, self.probs[index:])
        below = GridPMF(self.step, self.offset, self.probs[:index])

        return above, below

    def first_index_at_or_above(self, cut, tol=1e-9):
        """Index of the first grid value >= cut - tol (len(probs) if none)."""
        if cut == -np.inf:
            return 0

        if cut == np.inf:
            return self.probs.size

        position = (cut - tol) / self.step - self.offset

        return int(min(max(ceil(position), 0), self.probs.size))

    def mass_at_or_above(self, cut, tol=1e-9):
        return float(self.probs[self.first_index_at_or_above(cut, tol) :].sum())


def signal_kernel(model, state, step, rounding="split"):
    """
    One-period LLR law of a signal model under a state, placed on a grid.

    rounding="split" divides each symbol's mass between the two neighbouring grid
    points so the mean is preserved; rounding="down" floors every LLR, which can only
    lower beliefs, and rounding="up" ceils it. On an exact lattice all three agree.
    """
    positions = model.llrs / step
    probs = model.probabilities(state)
    low = np.floor(positions + 1e-9).astype(int)
    fraction = positions - low

    if rounding == "up":
        low = np.ceil(positions - 1e-9).astype(int)
        fraction = np.zeros_like(fraction)
    elif rounding == "down" or np.all(np.abs(fraction) < 1e-9):
        fraction = np.zeros_like(fraction)
    elif rounding != "split":
        raise ValueError(f"unknown rounding mode: {rounding}")

    offset = int(low.min())
    size = int(low.max()) - offset + 2
    dense = np.zeros(size)
    np.add.at(dense, low - offset, probs * (1 - fraction))
    np.add.at(dense, low - offset + 1, probs * fraction)

    if dense[-1] == 0:
        dense = dense[:-1]

    return GridPMF(step, offset, dense)


def model_step(model, grid_step=DEFAULT_GRID_STEP):
    """The model's exact lattice step, or the fallback grid step."""
    return model.lattice_step() or grid_step


class KernelPowers:
    """
    Cached n-period LLR laws of one model and state, built by repeated one-period
    convolution from the largest cached power below the one requested.
    """

    def __init__(self, model, state, step, rounding="split", clip=None, trim=True):
        self.kernel = signal_kernel(model, state, step, rounding)
        self.clip = clip
        self.trim = trim
        self._powers = {0: GridPMF.point(step)}

    def __call__(self, n):
        if n < 0:
            raise ValueError("number of periods must be non-negative")

        if n in self._powers:
            return self._powers[n]

        start = max(k for k in self._powers if k <= n)
        pmf = self._powers[start]

        for _ in range(n - start):
            pmf = pmf.convolve(self.kernel, clip=self.clip, trim=self.trim)

        self._powers[n] = pmf

        if len(self._powers) > 256:
            # keep the largest powers; requests tend to grow
            for key in sorted(self._powers)[1:-128]:
                del self._powers[key]

        return pmf


def expected_belief(start_log_odds, pmf):
    """E[logistic(start + V)] for V ~ pmf; missing (trimmed) mass counts as belief 0."""
    return pmf.expectation(lambda values: logistic(start_log_odds + values))


def check_resolution(step, periods, exact, tol):
    """
    Raise ResolutionError when flooring every LLR to the grid could move a belief by more
    than tol after `periods` signals (belief moves at most 1/4 per unit of log-odds).
    """
    if exact:
        return

    bound = periods * step / 4

    if bound > tol:
        raise ResolutionError(
            f"grid step {step:g} cannot certify tolerance {tol:g} over {periods} periods "
            f"(rounding bound {bound:g}); use a finer grid step"
        )


def floor_units(value, step):
    return int(floor(value / step + 1e-9))
