from dataclasses import dataclass, field
from pathlib import Path
from shutil import copyfile

import yaml

from cool_off_solver.cooloff import DEFAULT_DELTA_STEP, DEFAULT_EPS_MAX, DEFAULT_EPS_STEP
from cool_off_solver.epistemics import DEFAULT_ATOM_BUDGET
from cool_off_solver.errors import ConfigError, CoolOffError
from cool_off_solver.game import GameParams, State
from cool_off_solver.lattice import DEFAULT_GRID_STEP
from cool_off_solver.signals import SignalModel, validate_model
from cool_off_solver.sim import DEFAULT_HORIZON, DEFAULT_WINDOW
from cool_off_solver.solver import SolverSettings
from cool_off_solver.util.numbers import parse_fraction
from cool_off_solver.util.paths import get_config_dir, get_config_file_path, get_template_file_path

EXPERIMENTS = ("derive", "solve", "simulate", "epistemics")

_SECTIONS = {
    "game": {"c", "delta", "p0"},
    "signals": {"alphabet", "fH", "fL"},
    "derivation": {"eps", "eps_step", "eps_max", "delta_grid_step", "Delta", "horizon", "relax_first", "grid_step"},
    "solver": {
        "horizon",
        "grid_points",
        "clip",
        "min_weight",
        "node_budget",
        "filter_step",
        "max_iters",
        "tol",
        "t_exact",
        "symmetric",
        "initial_threshold",
        "audit_histories",
    },
    "simulation": {"horizon", "episodes", "window", "force_state", "trace_episodes"},
    "epistemics": {"q", "t_min", "t_max", "eps", "atom_budget"},
    "experiments": None,
    "seed": None,
    "output_dir": None,
}
"""Known top-level keys and, for sections, their known members."""

_config = None
"""Active run configuration."""


@dataclass(frozen=True)
class DerivationSettings:
    eps: object = None
    eps_step: object = DEFAULT_EPS_STEP
    eps_max: object = DEFAULT_EPS_MAX
    delta_grid_step: object = DEFAULT_DELTA_STEP
    Delta: object = None
    horizon: int = 200
    relax_first: bool = False
    grid_step: float = DEFAULT_GRID_STEP


@dataclass(frozen=True)
class SimulationSettings:
    horizon: int = DEFAULT_HORIZON
    episodes: int = 10_000
    window: int = DEFAULT_WINDOW
    force_state: State = None
    trace_episodes: int = 0


@dataclass(frozen=True)
class EpistemicsSettings:
    q: object = parse_fraction("3/4")
    t_min: int = 1
    t_max: int = 6
    eps: object = None
    atom_budget: int = DEFAULT_ATOM_BUDGET


@dataclass
class RunConfig:
    params: GameParams
    model: SignalModel
    derivation: DerivationSettings
    solver: SolverSettings
    simulation: SimulationSettings
    epistemics: EpistemicsSettings
    experiments: tuple
    seed: int
    output_dir: Path
    initial_threshold: object = None
    path: Path = None
    resolved: dict = field(default_factory=dict, repr=False)

    def enabled(self, experiment):
        return experiment in self.experiments


class _Marks:
    """YAML positions (1-based line, column) per dotted key path."""

    def __init__(self, text):
        self._marks = {}

        try:
            root = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError:
            root = None

        if root is not None:
            self._walk(root, "")

    def _walk(self, node, prefix):
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                path = f"{prefix}.{key.value}" if prefix else str(key.value)
                self._marks[path] = (value.start_mark.line + 1, value.start_mark.column + 1)
                self._walk(value, path)
        elif isinstance(node, yaml.SequenceNode):
            for index, item in enumerate(node.value):
                path = f"{prefix}[{index}]"
                self._marks[path] = (item.start_mark.line + 1, item.start_mark.column + 1)
                self._walk(item, path)

    def error(self, key, message):
        line, column = self._marks.get(key, (None, None))

        return ConfigError(message, key=key, line=line, column=column)


class _Reader:
    def __init__(self, data, marks):
        self.data = data
        self.marks = marks

    def section(self, name):
        value = self.data.get(name)

        if value is None:
            return {}

        if not isinstance(value, dict):
            raise self.marks.error(name, "must be a mapping")

        unknown = sorted(set(value) - _SECTIONS[name])

        if unknown:
            raise self.marks.error(f"{name}.{unknown[0]}", f"unknown setting (known: {', '.join(sorted(_SECTIONS[name]))})")

        return value

    def value(self, section, key, parse, default=None, required=False):
        values = self.section(section)
        path = f"{section}.{key}"

        if values.get(key) is None:
            if required:
                raise self.marks.error(section if section in self.data else None, f"missing required setting '{path}'")

            return default

        try:
            return parse(values[key])
        except (CoolOffError, ValueError, TypeError, ZeroDivisionError) as e:
            raise self.marks.error(path, str(e)) from e


def _fraction(value):
    return parse_fraction(value)


def _positive_int(value):
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ValueError(f"must be a positive integer, got {value!r}")

    return value


def _non_negative_int(value):
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValueError(f"must be a non-negative integer, got {value!r}")

    return value


def _positive_float(value):
    number = float(parse_fraction(value))

    if number <= 0:
        raise ValueError(f"must be positive, got {value!r}")

    return number


def _flag(value):
    if not isinstance(value, bool):
        raise ValueError(f"must be true or false, got {value!r}")

    return value


def _unit_fraction(value):
    number = parse_fraction(value)

    if not 0 < number < 1:
        raise ValueError(f"must lie in (0, 1), got {value}")

    return number


def _slack(value):
    number = parse_fraction(value)

    if not 0 < number <= 1:
        raise ValueError(f"must lie in (0, 1], got {value}")

    return number


def _probability(value):
    number = float(parse_fraction(value))

    if not 0 <= number <= 1:
        raise ValueError(f"must lie in [0, 1], got {value}")

    return number


def _row(value):
    if not isinstance(value, list) or not value:
        raise ValueError("must be a non-empty list of probabilities")

    return [parse_fraction(item) for item in value]


def _alphabet(value):
    if not isinstance(value, list) or not value:
        raise ValueError("must be a non-empty list of symbols")

    return value


def _game(reader):
    values = {
        key: reader.value("game", key, _unit_fraction, required=True)
        for key in ("c", "delta", "p0")
    }

    return GameParams(values["c"], values["delta"], values["p0"])


def _signals(reader):
    alphabet = reader.value("signals", "alphabet", _alphabet, required=True)
    fH = reader.value("signals", "fH", _row, required=True)
    fL = reader.value("signals", "fL", _row, required=True)
    model = SignalModel.from_rows(alphabet, fH, fL)
    report = validate_model(model)

    if not report.valid:
        problem = report.violations[0]
        key = f"signals.{problem[:2]}" if problem[:2] in ("fH", "fL") else "signals"
        raise reader.marks.error(key, "; ".join(report.violations))

    return model


def _state(value):
    try:
        return State(str(value))
    except ValueError as e:
        raise ValueError(f"must be H, L or null, got {value!r}") from e


def _experiments(reader):
    value = reader.data.get("experiments", list(EXPERIMENTS))

    if value is None:
        value = []

    if not isinstance(value, list):
        raise reader.marks.error("experiments", "must be a list")

    for index, item in enumerate(value):
        if item not in EXPERIMENTS:
            raise reader.marks.error(f"experiments[{index}]", f"unknown experiment {item!r} (known: {', '.join(EXPERIMENTS)})")

    return tuple(value)


def _resolved(config):
    """Plain mapping of every resolved setting, for output headers."""

    def plain(value):
        if isinstance(value, (list, tuple)):
            return [plain(item) for item in value]

        if isinstance(value, State):
            return value.value

        if isinstance(value, (str, int, float, bool)) or value is None:
            return value

        return str(value)

    def section(settings):
        return {key: plain(value) for key, value in settings.__dict__.items()}

    return {
        "game": {key: str(getattr(config.params, key)) for key in ("c", "delta", "p0")},
        "signals": {
            "alphabet": list(config.model.alphabet),
            "fH": [str(value) for value in config.model.fH],
            "fL": [str(value) for value in config.model.fL],
        },
        "derivation": section(config.derivation),
        "solver": {**section(config.solver), "initial_threshold": plain(config.initial_threshold)},
        "simulation": section(config.simulation),
        "epistemics": section(config.epistemics),
        "experiments": list(config.experiments),
        "seed": config.seed,
        "output_dir": str(config.output_dir),
    }


def parse_config(text, path=None):
    """Parse and validate a YAML run configuration."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line, column = (mark.line + 1, mark.column + 1) if mark else (None, None)
        problem = getattr(e, "problem", None) or str(e)
        raise ConfigError(f"invalid YAML: {problem}", line=line, column=column) from e

    if data is None:
        data = {}

    if not isinstance(data, dict):
        raise ConfigError("the configuration must be a mapping of sections", line=1, column=1)

    marks = _Marks(text)

    for key in data:
        if key not in _SECTIONS:
            raise marks.error(str(key), f"unknown section (known: {', '.join(_SECTIONS)})")

    reader = _Reader(data, marks)
    params = _game(reader)
    model = _signals(reader)

    derivation = DerivationSettings(
        eps=reader.value("derivation", "eps", _unit_fraction),
        eps_step=reader.value("derivation", "eps_step", _unit_fraction, DEFAULT_EPS_STEP),
        eps_max=reader.value("derivation", "eps_max", _unit_fraction, DEFAULT_EPS_MAX),
        delta_grid_step=reader.value("derivation", "delta_grid_step", _unit_fraction, DEFAULT_DELTA_STEP),
        Delta=reader.value("derivation", "Delta", _slack),
        horizon=reader.value("derivation", "horizon", _positive_int, 200),
        relax_first=reader.value("derivation", "relax_first", _flag, False),
        grid_step=reader.value("derivation", "grid_step", _positive_float, DEFAULT_GRID_STEP),
    )

    defaults = SolverSettings()
    solver = SolverSettings(
        horizon=reader.value("solver", "horizon", _positive_int, defaults.horizon),
        grid_points=reader.value("solver", "grid_points", _positive_int, defaults.grid_points),
        clip=reader.value("solver", "clip", _positive_float, defaults.clip),
        min_weight=reader.value("solver", "min_weight", _positive_float, defaults.min_weight),
        node_budget=reader.value("solver", "node_budget", _positive_int, defaults.node_budget),
        filter_step=reader.value("solver", "filter_step", _positive_float, defaults.filter_step),
        t_exact=reader.value("solver", "t_exact", _non_negative_int, defaults.t_exact),
        max_iters=reader.value("solver", "max_iters", _positive_int, defaults.max_iters),
        tol=reader.value("solver", "tol", _positive_float, defaults.tol),
        symmetric=reader.value("solver", "symmetric", _flag, defaults.symmetric),
        audit_histories=reader.value("solver", "audit_histories", _non_negative_int, defaults.audit_histories),
    )

    simulation = SimulationSettings(
        horizon=reader.value("simulation", "horizon", _positive_int, DEFAULT_HORIZON),
        episodes=reader.value("simulation", "episodes", _positive_int, 10_000),
        window=reader.value("simulation", "window", _positive_int, DEFAULT_WINDOW),
        force_state=reader.value("simulation", "force_state", _state),
        trace_episodes=reader.value("simulation", "trace_episodes", _non_negative_int, 0),
    )

    epistemics = EpistemicsSettings(
        q=reader.value("epistemics", "q", _slack, parse_fraction("3/4")),
        t_min=reader.value("epistemics", "t_min", _positive_int, 1),
        t_max=reader.value("epistemics", "t_max", _positive_int, 6),
        eps=reader.value("epistemics", "eps", _unit_fraction),
        atom_budget=reader.value("epistemics", "atom_budget", _positive_int, DEFAULT_ATOM_BUDGET),
    )

    if epistemics.t_max < epistemics.t_min:
        raise marks.error("epistemics.t_max", "must not be below epistemics.t_min")

    seed = data.get("seed", 0)

    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise marks.error("seed", f"must be an unsigned 64-bit integer, got {seed!r}")

    config = RunConfig(
        params=params,
        model=model,
        derivation=derivation,
        solver=solver,
        simulation=simulation,
        epistemics=epistemics,
        experiments=_experiments(reader),
        seed=seed,
        output_dir=Path(str(data.get("output_dir") or "results")),
        initial_threshold=reader.value("solver", "initial_threshold", _probability),
        path=path,
    )
    config.resolved = _resolved(config)

    return config


def load_config(path):
    """Read and validate the run configuration at `path`."""
    path = Path(path)

    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from e

    return parse_config(text, path)


def _create_config(config_file_path):
    """Create a new configuration file from the template."""
    copyfile(get_template_file_path(), config_file_path)


def init_config(path=None):
    """
    Load the run configuration from `path`, or from the default config file (created
    from the packaged template on first use), and make it the active one.
    """
    global _config

    if path is None:
        config_dir = get_config_dir()

        if not config_dir.exists():
            config_dir.mkdir(parents=True, exist_ok=True)

        path = get_config_file_path()

        if not path.exists():
            _create_config(path)

    _config = load_config(path)

    return _config


def get_config():
    """Return the active run configuration."""
    if _config is None:
        raise ConfigError("configuration not initialized")

    return _config


def with_overrides(config, seed=None, output_dir=None):
    """The config with CLI overrides applied (and reflected in the resolved mapping)."""
    if seed is not None:
        config.seed = seed

    if output_dir is not None:
        config.output_dir = Path(output_dir)

    config.resolved = _resolved(config)

    return config
