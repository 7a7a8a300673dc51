"""
Finite-alphabet private signals.

Each period both players draw one symbol, independently across players and periods
given the state, from fH in state H and from fL in state L. Symbols travel as alphabet
indices; the per-symbol log-likelihood ratio log(fH/fL) is the unit of evidence.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from math import log

import numpy as np

from cool_off_solver.errors import ParameterError
from cool_off_solver.game import State
from cool_off_solver.util.numbers import parse_fraction

DEFAULT_TOLERANCE = Fraction(1, 10**9)
"""Tolerance on the probability rows summing to one."""

LATTICE_TOLERANCE = 1e-9
"""Relative tolerance when deciding that LLRs are integer multiples of one step."""

MAX_LATTICE_MULTIPLIER = 64
"""Largest denominator tried when searching a common LLR step."""


@dataclass(frozen=True)
class SignalModel:
    """An alphabet plus the two conditional signal distributions, kept as exact rows."""

    alphabet: tuple
    fH: tuple
    fL: tuple
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @classmethod
    def from_rows(cls, alphabet, fH, fL):
        """Build a model from rows given as numbers, decimal strings or "a/b" strings."""
        try:
            return cls(
                tuple(str(symbol) for symbol in alphabet),
                tuple(parse_fraction(value) for value in fH),
                tuple(parse_fraction(value) for value in fL),
            )
        except (ValueError, ZeroDivisionError) as e:
            raise ParameterError(f"invalid signal probability: {e}") from e

    @property
    def size(self):
        return len(self.alphabet)

    def row(self, state):
        """Exact probability row for a state."""
        return self.fH if State(state) is State.H else self.fL

    def probabilities(self, state):
        """Float probability row for a state."""
        key = ("probs", State(state))

        if key not in self._cache:
            self._cache[key] = np.array([float(p) for p in self.row(state)])

        return self._cache[key]

    @property
    def llrs(self):
        """Per-symbol log(fH/fL) as a float array."""
        if "llrs" not in self._cache:
            self.require_valid()
            self._cache["llrs"] = np.array(
                [log(h / l) for h, l in zip(self.fH, self.fL)], dtype=float
            )

        return self._cache["llrs"]

    def index_of(self, symbol):
        """Alphabet index of a symbol identifier or index."""
        if isinstance(symbol, (int, np.integer)) and not isinstance(symbol, bool):
            if 0 <= symbol < self.size:
                return int(symbol)
        elif str(symbol) in self.alphabet:
            return self.alphabet.index(str(symbol))

        raise ParameterError(f"unknown signal symbol: {symbol!r}")

    def require_valid(self, tol=DEFAULT_TOLERANCE):
        """Raise ParameterError listing violations unless the model is valid."""
        if "valid" not in self._cache:
            report = validate_model(self, tol)

            if not report.valid:
                raise ParameterError("invalid signal model: " + "; ".join(report.violations))

            self._cache["valid"] = True

    def lattice_step(self):
        """
        Common step s such that every LLR is an integer multiple of s, or None.

        With such a step, sums of LLRs stay on an exact lattice and belief distributions
        never need rounding.
        """
        if "lattice" not in self._cache:
            self._cache["lattice"] = _find_lattice_step(self.llrs)

        return self._cache["lattice"]

    def is_lattice(self):
        return self.lattice_step() is not None

    def is_symmetric(self):
        """True when fL is fH reversed (the textbook symmetric model)."""
        return tuple(reversed(self.fH)) == self.fL


def _find_lattice_step(llrs):
    nonzero = np.abs(llrs[np.abs(llrs) > 1e-15])

    if not nonzero.size:
        return None

    smallest = nonzero.min()

    for multiplier in range(1, MAX_LATTICE_MULTIPLIER + 1):
        step = smallest / multiplier
        units = llrs / step

        if np.all(np.abs(units - np.round(units)) <= LATTICE_TOLERANCE * np.maximum(1, np.abs(units))):
            return float(step)

    return None


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    violations: tuple = ()


def validate_model(model, tol=DEFAULT_TOLERANCE):
    """
    Check the model invariants: rows sum to one within tol, full support, and fH != fL.

    Never raises: every violated invariant is listed in the report.
    """
    violations = []
    tol = parse_fraction(tol)

    if not model.alphabet:
        violations.append("alphabet is empty")

    if len(set(model.alphabet)) != len(model.alphabet):
        violations.append("alphabet symbols are not distinct")

    for name in ("fH", "fL"):
        row = getattr(model, name)

        if len(row) != len(model.alphabet):
            violations.append(
                f"{name} has {len(row)} entries for {len(model.alphabet)} symbols"
            )
            continue

        if abs(sum(row) - 1) > tol:
            violations.append(f"{name} sums to {float(sum(row))}, not 1")

        if any(p <= 0 for p in row):
            violations.append(f"{name} violates full support (an entry is not positive)")

        if any(p > 1 for p in row):
            violations.append(f"{name} has an entry above 1")

    if model.fH == model.fL:
        violations.append("fH equals fL (signals are uninformative)")

    return ValidationReport(not violations, tuple(violations))


def sample_signal(model, state, rng):
    """Draw one symbol index from f_state with the caller's numpy Generator."""
    model.require_valid()

    return int(rng.choice(model.size, p=model.probabilities(state)))


def sample_signals(model, state, count, rng):
    """Draw `count` i.i.d. symbol indices from f_state."""
    model.require_valid()

    return rng.choice(model.size, size=count, p=model.probabilities(state))


def log_likelihood_ratio(model, symbol):
    """log(fH(x) / fL(x)) for one symbol."""
    return float(model.llrs[model.index_of(symbol)])


def worst_case_llr(model):
    """The smallest and largest per-symbol LLRs."""
    llrs = model.llrs

    return float(llrs.min()), float(llrs.max())


def expected_llr(model, state):
    """Mean per-period LLR drift under a state (positive under H, negative under L)."""
    return float(np.dot(model.probabilities(state), model.llrs))
