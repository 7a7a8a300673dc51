from math import comb, log

import numpy as np
import pytest

from cool_off_solver.errors import ResolutionError
from cool_off_solver.game import State
from cool_off_solver.lattice import (
    GridPMF,
    KernelPowers,
    check_resolution,
    expected_belief,
    model_step,
    signal_kernel,
)
from cool_off_solver.signals import SignalModel

STEP = log(7 / 3)


def test_point_mass():
    pmf = GridPMF.point(0.5, 1.0)

    assert pmf.offset == 2
    assert pmf.mass == 1.0
    assert pmf.mean() == pytest.approx(1.0)


def test_binary_kernel_is_exact_on_its_lattice(binary_model):
    kernel = signal_kernel(binary_model, State.H, STEP)

    np.testing.assert_allclose(kernel.values, [-STEP, 0.0, STEP])
    np.testing.assert_allclose(kernel.probs, [0.3, 0.0, 0.7])


def test_powers_are_binomial(binary_model):
    powers = KernelPowers(binary_model, State.H, STEP, trim=False)
    law = powers(4)
    expected = [comb(4, k) * 0.7**k * 0.3 ** (4 - k) for k in range(5)]

    np.testing.assert_allclose(law.probs[::2], expected)
    assert law.values[0] == pytest.approx(-4 * STEP)
    assert law.mass == pytest.approx(1.0)


def test_powers_cache_reuses_lower_powers(binary_model):
    powers = KernelPowers(binary_model, State.L, STEP)

    assert powers(3).mean() == pytest.approx(3 * (0.3 - 0.7) * STEP)
    assert powers(5).mean() == pytest.approx(5 * (0.3 - 0.7) * STEP)
    assert powers(0).mass == 1.0


def test_negative_power_rejected(binary_model):
    with pytest.raises(ValueError):
        KernelPowers(binary_model, State.H, STEP)(-1)


def test_split_rounding_preserves_the_mean():
    model = SignalModel.from_rows(["a", "b", "c"], ["1/2", "3/10", "1/5"], ["1/5", "1/2", "3/10"])
    kernel = signal_kernel(model, State.H, 0.01, rounding="split")
    exact = float(np.dot(model.probabilities(State.H), model.llrs))

    assert kernel.mean() == pytest.approx(exact, abs=1e-12)


def test_down_rounding_lowers_values():
    model = SignalModel.from_rows(["a", "b", "c"], ["1/2", "3/10", "1/5"], ["1/5", "1/2", "3/10"])
    down = signal_kernel(model, State.H, 0.01, rounding="down")
    split = signal_kernel(model, State.H, 0.01, rounding="split")

    assert down.mean() <= split.mean()


def test_saturation_folds_tails_onto_edges():
    pmf = GridPMF(1.0, -5, np.full(11, 1 / 11))
    folded = pmf.saturated(2.0)

    np.testing.assert_allclose(folded.values, [-2, -1, 0, 1, 2])
    assert folded.probs[0] == pytest.approx(4 / 11)
    assert folded.probs[-1] == pytest.approx(4 / 11)
    assert folded.mass == pytest.approx(1.0)


def test_saturation_when_all_mass_is_beyond_an_edge():
    folded = GridPMF(1.0, 10, np.array([0.5, 0.5])).saturated(3.0)

    assert folded.offset == 3
    assert folded.probs.tolist() == [1.0]


def test_trimming_drops_only_negligible_tails():
    probs = np.array([1e-20, 0.5, 0.5, 1e-20])
    trimmed = GridPMF(1.0, 0, probs).trimmed()

    assert trimmed.offset == 1
    assert trimmed.probs.size == 2


def test_split_counts_ties_as_reaching_the_cut():
    pmf = GridPMF(1.0, 0, np.array([0.25, 0.25, 0.5]))
    above, below = pmf.split(1.0)

    assert above.mass == pytest.approx(0.75)
    assert below.mass == pytest.approx(0.25)
    assert pmf.mass_at_or_above(np.inf) == 0.0
    assert pmf.mass_at_or_above(-np.inf) == 1.0


def test_convolution_rejects_mismatched_grids():
    with pytest.raises(ValueError):
        GridPMF.point(1.0).convolve(GridPMF.point(0.5))


def test_large_convolution_matches_direct():
    rng = np.random.default_rng(1)
    first = GridPMF(0.1, 0, rng.random(600))
    second = GridPMF(0.1, 3, rng.random(700))
    fast = first.convolve(second)

    np.testing.assert_allclose(fast.probs, np.convolve(first.probs, second.probs), atol=1e-9)
    assert fast.offset == 3


def test_expected_belief_from_prior(binary_model):
    law = KernelPowers(binary_model, State.H, STEP)(1)
    expected = 0.7 * 0.7 + 0.3 * 0.3

    assert expected_belief(0.0, law) == pytest.approx(expected)


def test_model_step(binary_model):
    incommensurable = SignalModel.from_rows(["a", "b", "c"], ["1/2", "3/10", "1/5"], ["1/5", "1/2", "3/10"])

    assert model_step(binary_model) == pytest.approx(STEP)
    assert model_step(incommensurable, 0.002) == 0.002


def test_resolution_check():
    check_resolution(0.1, 1000, exact=True, tol=1e-6)
    check_resolution(1e-3, 10, exact=False, tol=0.01)

    with pytest.raises(ResolutionError):
        check_resolution(1e-3, 1000, exact=False, tol=0.01)
