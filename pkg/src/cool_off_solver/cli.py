import sys
from functools import wraps
from time import perf_counter

import click
import numpy
import scipy

from cool_off_solver import APP_DESCRIPTION, APP_NAME, __version__
from cool_off_solver.config import init_config, with_overrides
from cool_off_solver.cooloff import derive_cooloff_function, derive_eps_T0, derive_T1_delta_bar
from cool_off_solver.epistemics import (
    build_space,
    common_learning_curve,
    evident_event_check,
    individual_learning_time,
    spine_belief_monotonicity,
)
from cool_off_solver.errors import ConvergenceError, CoolOffError
from cool_off_solver.lock import acquire_output_lock, release_output_lock
from cool_off_solver.logger import init_logging, log_error, log_info, log_warning
from cool_off_solver.report import (
    read_policy,
    write_certificate,
    write_curve,
    write_derivation,
    write_efficiency,
    write_learning,
    write_metrics,
    write_policy,
    write_trace,
)
from cool_off_solver.sim import payoff_efficiency_check, payoff_lower_bounds, run_batch
from cool_off_solver.solver import ThresholdPolicy, iterate_equilibrium, verify_class_membership
from cool_off_solver.state import get_trace_episodes, get_workers, set_trace_episodes, set_workers
from cool_off_solver.util.datetime import format_time
from cool_off_solver.util.paths import (
    get_config_dir,
    get_config_file_path,
    get_log_dir,
    get_log_file_path,
    get_trace_file_path,
)

MEMBERSHIP_DEPTH = 4
"""Investment periods checked below the first one when certifying class membership."""

DERIVED_FILE = "derived.yml"
POLICY_FILES = ("policy-1.yml", "policy-2.yml")
CERTIFICATE_FILE = "certificate.yml"
METRICS_FILE = "metrics.csv"
EFFICIENCY_FILE = "efficiency.yml"
CURVE_FILE = "curve.csv"
LEARNING_FILE = "learning.yml"


def _validate_verbosity_flags(ctx, param, value):
    """Validate that quiet and verbose flags are not used together."""
    if value:
        other_param = "verbose" if param.name == "quiet" else "quiet"

        if ctx.params.get(other_param):
            raise click.UsageError(
                f"--{other_param} and --{param.name} are mutually exclusive"
            )

    return value


def _run_options(command):
    """Options shared by every run subcommand."""
    options = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(dir_okay=False),
            help="Run configuration (default: the user config file)",
        ),
        click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Override the configured seed"),
        click.option("--out", "output_dir", type=click.Path(file_okay=False), help="Override the output directory"),
        click.option("--workers", type=click.IntRange(min=1), help="Worker processes (default: all cores)"),
        click.option(
            "--trace-episodes",
            type=click.IntRange(min=0),
            help="Export per-period traces of the first K episodes",
        ),
        click.option(
            "--quiet",
            is_flag=True,
            help="Suppress all output except errors",
            callback=_validate_verbosity_flags,
        ),
        click.option(
            "--verbose",
            is_flag=True,
            help="Show detailed debug information",
            callback=_validate_verbosity_flags,
        ),
    ]

    for option in reversed(options):
        command = option(command)

    return command


def _command(name, needs_output=True):
    """
    Wrap a subcommand body: logging, config loading with CLI overrides, the experiment
    switch, the output lock and the mapping of application errors to exit codes.
    """

    def decorator(body):
        @wraps(body)
        def wrapper(config_path, seed, output_dir, workers, trace_episodes, quiet, verbose, **kwargs):
            init_logging(quiet=quiet, verbose=verbose)
            log_info(f"{APP_NAME} v{__version__}")

            try:
                config = with_overrides(init_config(config_path), seed=seed, output_dir=output_dir)

                if needs_output and not config.enabled(name):
                    log_info(f"Experiment '{name}' is not enabled in the configuration; nothing to do")
                    return

                set_workers(workers)
                set_trace_episodes(config.simulation.trace_episodes if trace_episodes is None else trace_episodes)

                lock = None

                if needs_output:
                    config.output_dir.mkdir(parents=True, exist_ok=True)
                    lock = acquire_output_lock(config.output_dir)

                started = perf_counter()

                try:
                    body(config, **kwargs)
                finally:
                    if lock is not None:
                        release_output_lock(lock)

                log_info(f"Finished __{name}__ in **{format_time(perf_counter() - started)}**")
            except CoolOffError as e:
                log_error(str(e))
                sys.exit(e.exit_code)
            except KeyboardInterrupt:
                log_warning(f"Command '{name}' interrupted by user")
                sys.exit(1)

        return wrapper

    return decorator


@click.group(invoke_without_command=True, help=APP_DESCRIPTION)
@click.option("--version", is_flag=True, help="Show program version and exit")
@click.option("--help", is_flag=True, help="Show this help message and exit")
@click.pass_context
def cli(ctx, version, help):
    """Entry point for the CLI application that handles global flags and subcommands."""
    if version:
        click.echo(f"{APP_NAME} v{__version__}")
        ctx.exit()
    elif help:
        click.echo(ctx.get_help())
        ctx.exit()
    elif ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


def _colorize_version(text):
    """Format text in bright cyan."""
    return click.style(text, fg="bright_cyan")


def _colorize_path(text):
    """Format text in bright magenta."""
    return click.style(text, fg="bright_magenta")


@cli.command("info")
def show_info():
    """Show system information and configuration paths."""
    try:
        init_config()
    except CoolOffError as e:
        click.echo(f"Config Error: {e}")

    click.echo(f"{APP_NAME} Version: {_colorize_version(__version__)}")
    click.echo(f"Python Version: {_colorize_version(sys.version.split()[0])}")
    click.echo(f"NumPy Version: {_colorize_version(numpy.__version__)}")
    click.echo(f"SciPy Version: {_colorize_version(scipy.__version__)}")
    click.echo(f"Config Directory: {_colorize_path(get_config_dir())}")
    click.echo(f"Config File: {_colorize_path(get_config_file_path())}")
    click.echo(f"Log Directory: {_colorize_path(get_log_dir())}")
    click.echo(f"Log File: {_colorize_path(get_log_file_path())}")


def _derive(config):
    settings = config.derivation
    derived = derive_eps_T0(config.params, settings.eps, settings.eps_step, settings.eps_max, settings.Delta)
    log_info(f"eps = **{derived.eps}**, T0 = **{derived.T0}**, p_bar = **{float(derived.p_bar):.6f}**")

    if settings.Delta is not None:
        derived = derive_T1_delta_bar(
            config.params, derived, config.model, settings.Delta, settings.delta_grid_step, settings.grid_step
        )

    scheme = derive_cooloff_function(
        config.params, derived, config.model, settings.horizon, settings.relax_first, settings.grid_step
    )

    return derived, scheme


def _solve(config, derived, scheme):
    threshold = derived.p_barf if config.initial_threshold is None else config.initial_threshold
    initial = ThresholdPolicy.constant(scheme, threshold)
    log_info(f"Solving from the constant threshold **{threshold:.6f}**")

    return iterate_equilibrium((initial, initial), config.params, derived, config.model, settings=config.solver)


def _profile(config, derived, scheme, policy_paths):
    """Policies from files, from an earlier solve in the output directory, or solved now."""
    paths = list(policy_paths)

    if not paths:
        stored = [config.output_dir / name for name in POLICY_FILES]

        if all(path.exists() for path in stored):
            paths = stored

    if paths:
        first = read_policy(paths[0])
        second = read_policy(paths[1]) if len(paths) > 1 else first
        log_info(f"Loaded policies from {', '.join(str(path) for path in paths)}")

        return first, second

    log_warning("No policy files given or found in the output directory; solving first")
    profile, report = _solve(config, derived, scheme)

    if not report.converged:
        log_warning("Using the last iterate of a non-converged best-response iteration")

    return profile


@cli.command("validate")
@_run_options
@_command("validate", needs_output=False)
def validate(config):
    """Check a run configuration and its signal model without running anything."""
    model = config.model
    log_info(f"Game: c = **{config.params.c}**, delta = **{config.params.delta}**, p0 = **{config.params.p0}**")
    log_info(
        f"Signals: {model.size} symbols, lattice LLRs: {model.is_lattice()}, symmetric: {model.is_symmetric()}",
        indent=1,
    )
    log_info(f"Enabled experiments: {', '.join(config.experiments) or 'none'}", indent=1)
    click.echo(f"{config.path or 'configuration'} is valid")


@cli.command("derive")
@_run_options
@_command("derive")
def derive(config):
    """
    Derive eps, T0, p_bar and the belief floor, then T1 and delta_bar when Delta is set,
    and tabulate the cool-off lengths T(s).
    """
    derived, scheme = _derive(config)
    violations = derived.check(config.params)
    bounds = None

    if derived.Delta is not None:
        bounds = payoff_lower_bounds(config.params, derived.eps, derived.Delta)

    for violation in violations:
        log_warning(f"Derived parameters violate {violation}", indent=1)

    write_derivation(
        config.output_dir / DERIVED_FILE, config.params, derived, scheme, violations, bounds, config.resolved
    )


@cli.command("solve")
@_run_options
@_command("solve")
def solve(config):
    """
    Compute an approximate threshold equilibrium by best-response iteration and write
    both policies with an equilibrium certificate.
    """
    derived, scheme = _derive(config)
    (first, second), report = _solve(config, derived, scheme)
    membership = [
        (1, verify_class_membership(first, config.model, derived, MEMBERSHIP_DEPTH, config.params, second,
                                    config.solver)),
        (2, verify_class_membership(second, config.model, derived, MEMBERSHIP_DEPTH, config.params, first,
                                    config.solver)),
    ]

    for player, policy in enumerate((first, second), start=1):
        write_policy(config.output_dir / POLICY_FILES[player - 1], policy, player, config.resolved)

    write_certificate(config.output_dir / CERTIFICATE_FILE, report, membership, config.params, config.resolved)

    if not report.converged:
        raise ConvergenceError(
            f"best-response iteration did not converge in {report.iterations} iterations: {report.oscillation}",
            report,
        )

    log_info(f"Converged after **{report.iterations}** iterations")


@cli.command("simulate")
@_run_options
@click.option(
    "--policy",
    "policy_paths",
    multiple=True,
    type=click.Path(exists=True, dir_okay=False),
    help="Policy file; give it twice for distinct players (default: the solved pair)",
)
@_command("simulate")
def simulate(config, policy_paths):
    """Play batches of episodes and write metrics, efficiency checks and traces."""
    if len(policy_paths) > 2:
        raise click.UsageError("--policy can be given at most twice")

    derived, scheme = _derive(config)
    profile = _profile(config, derived, scheme, policy_paths)
    settings = config.simulation
    metrics = run_batch(
        profile,
        config.params,
        config.model,
        settings.horizon,
        settings.episodes,
        config.seed,
        settings.force_state,
        settings.window,
        workers=get_workers(),
        trace_episodes=get_trace_episodes(),
        settings=config.solver,
    )

    for state, stats in metrics.per_state.items():
        log_info(
            f"{state.value}: (I, I) rate **{stats.invest_rate:.4f}**, (N, N) rate **{stats.idle_rate:.4f}**, "
            f"mean payoffs {stats.payoff_means[0]:.4f} / {stats.payoff_means[1]:.4f}",
            indent=1,
        )

    if metrics.floor_violations:
        log_warning(f"**{metrics.floor_violations}** investments below the belief floor")

    report = bounds = None

    if derived.Delta is not None:
        report = payoff_efficiency_check(metrics, config.params, derived.Delta)
        bounds = payoff_lower_bounds(config.params, derived.eps, derived.Delta)
        log_info(f"Payoff efficiency check passed: **{report.passed}**", indent=1)

    write_metrics(config.output_dir / METRICS_FILE, metrics, config.resolved)
    write_efficiency(config.output_dir / EFFICIENCY_FILE, metrics, report, bounds, config.resolved)

    for trace in metrics.traces:
        write_trace(get_trace_file_path(config.output_dir, trace.episode), trace, config.model, config.resolved)


@cli.command("epistemics")
@_run_options
@click.option(
    "--policy",
    "policy_paths",
    multiple=True,
    type=click.Path(exists=True, dir_okay=False),
    help="Policy file; give it twice for distinct players (default: the solved pair)",
)
@_command("epistemics")
def epistemics(config, policy_paths):
    """Compute the exact common-learning curve and the individual learning checks."""
    if len(policy_paths) > 2:
        raise click.UsageError("--policy can be given at most twice")

    derived, scheme = _derive(config)
    profile = _profile(config, derived, scheme, policy_paths)
    settings = config.epistemics
    t_range = range(settings.t_min, settings.t_max + 1)
    curve = common_learning_curve(profile, config.params, config.model, settings.q, t_range, settings.atom_budget)
    eps = derived.eps if settings.eps is None else settings.eps
    learning_time = individual_learning_time(profile, config.params, config.model, eps, t_range,
                                             settings.atom_budget)
    monotonicity = spine_belief_monotonicity(profile, config.params, config.model, settings.t_max,
                                             settings.atom_budget)
    evident = None

    if curve.points:
        last = curve.points[-1].t
        space = build_space(profile, config.params, config.model, last, settings.atom_budget)
        evident = evident_event_check(space, eps)

    for state in ("H", "L"):
        log_info(f"Common {settings.q}-belief of {state} first reaches q at t = **{curve.crossing(state)}**",
                 indent=1)

    write_curve(config.output_dir / CURVE_FILE, curve, config.resolved)
    write_learning(config.output_dir / LEARNING_FILE, curve, learning_time, monotonicity, evident,
                   config.resolved)
