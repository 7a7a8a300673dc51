from fractions import Fraction
from pathlib import Path

import pytest

from cool_off_solver.config import (
    EXPERIMENTS,
    get_config,
    init_config,
    load_config,
    parse_config,
    with_overrides,
)
from cool_off_solver.errors import ConfigError
from cool_off_solver.game import State
from cool_off_solver.util.paths import get_config_file_path, get_template_file_path

MINIMAL = """\
game:
  c: 1/5
  delta: 9/10
  p0: 1/2
signals:
  alphabet: [g, b]
  fH: [7/10, 3/10]
  fL: [3/10, 7/10]
"""


def with_lines(*extra):
    return MINIMAL + "".join(line + "\n" for line in extra)


class TestParseConfig:
    def test_minimal_config(self):
        config = parse_config(MINIMAL)

        assert config.params.c == Fraction(1, 5)
        assert config.model.alphabet == ("g", "b")
        assert config.experiments == EXPERIMENTS
        assert config.seed == 0
        assert config.output_dir == Path("results")
        assert config.derivation.Delta is None
        assert config.simulation.force_state is None

    def test_section_values(self):
        config = parse_config(with_lines(
            "derivation:",
            "  Delta: 1/10",
            "  relax_first: true",
            "simulation:",
            "  episodes: 50",
            "  force_state: H",
            "solver:",
            "  grid_points: 401",
            "  initial_threshold: 0.3",
            "seed: 42",
        ))

        assert config.derivation.Delta == Fraction(1, 10)
        assert config.derivation.relax_first
        assert config.simulation.episodes == 50
        assert config.simulation.force_state is State.H
        assert config.solver.grid_points == 401
        assert config.initial_threshold == 0.3
        assert config.seed == 42

    def test_cost_outside_unit_interval(self):
        with pytest.raises(ConfigError) as error:
            parse_config(MINIMAL.replace("c: 1/5", "c: 1.2"))

        assert error.value.key == "game.c"
        assert (error.value.line, error.value.column) == (2, 6)
        assert "(0, 1)" in str(error.value)

    def test_bad_signal_row_is_named(self):
        with pytest.raises(ConfigError) as error:
            parse_config(MINIMAL.replace("fH: [7/10, 3/10]", "fH: [7/10, 2/10]"))

        assert error.value.key == "signals.fH"
        assert error.value.line == 7

    def test_missing_section(self):
        with pytest.raises(ConfigError, match="missing required setting 'game.c'"):
            parse_config("signals:\n  alphabet: [g, b]\n")

    def test_unknown_setting(self):
        with pytest.raises(ConfigError) as error:
            parse_config(MINIMAL.replace("  p0: 1/2", "  p0: 1/2\n  cost: 1"))

        assert error.value.key == "game.cost"
        assert error.value.line == 5

    def test_unknown_section(self):
        with pytest.raises(ConfigError) as error:
            parse_config(with_lines("plotting: true"))

        assert error.value.key == "plotting"

    def test_invalid_yaml(self):
        with pytest.raises(ConfigError) as error:
            parse_config("game: [1, 2\n")

        assert "invalid YAML" in str(error.value)
        assert error.value.line is not None

    def test_not_a_mapping(self):
        with pytest.raises(ConfigError):
            parse_config("- game\n")

    @pytest.mark.parametrize("seed", ["-1", str(2**64), "seven", "true"])
    def test_seed_must_be_unsigned_64_bit(self, seed):
        with pytest.raises(ConfigError) as error:
            parse_config(with_lines(f"seed: {seed}"))

        assert error.value.key == "seed"

    def test_largest_seed(self):
        assert parse_config(with_lines(f"seed: {2**64 - 1}")).seed == 2**64 - 1

    def test_empty_experiment_list(self):
        assert parse_config(with_lines("experiments:")).experiments == ()

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError) as error:
            parse_config(with_lines("experiments: [derive, plot]"))

        assert error.value.key == "experiments[1]"

    def test_epistemics_range(self):
        with pytest.raises(ConfigError) as error:
            parse_config(with_lines("epistemics:", "  t_min: 4", "  t_max: 2"))

        assert error.value.key == "epistemics.t_max"

    @pytest.mark.parametrize(
        "lines, key",
        [
            (("solver:", "  grid_points: 0"), "solver.grid_points"),
            (("solver:", "  symmetric: maybe"), "solver.symmetric"),
            (("simulation:", "  force_state: M"), "simulation.force_state"),
            (("derivation:", "  Delta: 0"), "derivation.Delta"),
            (("epistemics:", "  q: 3/2"), "epistemics.q"),
        ],
    )
    def test_invalid_values_are_located(self, lines, key):
        with pytest.raises(ConfigError) as error:
            parse_config(with_lines(*lines))

        assert error.value.key == key
        assert error.value.line == 10

    def test_resolved_mapping(self):
        config = parse_config(with_lines("seed: 3"))

        assert config.resolved["game"] == {"c": "1/5", "delta": "9/10", "p0": "1/2"}
        assert config.resolved["seed"] == 3
        assert config.resolved["solver"]["initial_threshold"] is None


class TestLoading:
    def test_template_is_valid(self):
        config = load_config(get_template_file_path())

        assert config.derivation.Delta == Fraction(1, 10)
        assert config.experiments == EXPERIMENTS

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.yml")

    def test_first_run_creates_the_default_config(self):
        config = init_config()

        assert get_config_file_path().exists()
        assert get_config() is config

    def test_explicit_path(self, tmp_path):
        path = tmp_path / "run.yml"
        path.write_text(MINIMAL, encoding="utf-8")

        assert init_config(path).path == path

    def test_overrides_reach_the_resolved_mapping(self, tmp_path):
        config = with_overrides(parse_config(MINIMAL), seed=9, output_dir=tmp_path / "out")

        assert config.seed == 9
        assert config.resolved["seed"] == 9
        assert config.resolved["output_dir"] == str(tmp_path / "out")
