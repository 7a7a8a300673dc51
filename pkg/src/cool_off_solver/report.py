"""
Result files. Every CSV and YAML output opens with a `#` comment header holding the
resolved configuration and seed, and contains nothing that depends on the machine,
the clock or the worker count.
"""

from enum import Enum
from fractions import Fraction
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from cool_off_solver import APP_NAME, __version__
from cool_off_solver.epistemics import CURVE_COLUMNS
from cool_off_solver.errors import ConfigError
from cool_off_solver.logger import log_info
from cool_off_solver.sim import METRIC_COLUMNS, TRACE_COLUMNS
from cool_off_solver.solver import ThresholdPolicy


def header(resolved, title):
    """The comment header: title line, then the resolved config as commented YAML."""
    body = yaml.safe_dump(_plain(resolved), sort_keys=True, default_flow_style=False, allow_unicode=True)
    lines = [f"# {APP_NAME} v{__version__}: {title}", "# resolved configuration:"]
    lines.extend(f"#   {line}" for line in body.splitlines())

    return "\n".join(lines) + "\n"


def _plain(value):
    """Plain YAML types for numpy scalars, fractions and enums, recursively."""
    if isinstance(value, dict):
        return {_plain(key): _plain(item) for key, item in value.items()}

    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]

    if isinstance(value, np.generic):
        return value.item()

    if isinstance(value, Enum):
        return value.value

    if isinstance(value, Fraction):
        return str(value)

    return value


def _prepare(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    return path


def write_csv(path, columns, rows, resolved, title):
    """Write rows under the comment header; floats are written by their repr."""
    path = _prepare(path)
    frame = pd.DataFrame(list(rows), columns=list(columns))

    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(header(resolved, title))
        frame.to_csv(handle, index=False, lineterminator="\n")

    log_info(f"Wrote {path}", indent=1)

    return path


def write_yaml(path, data, resolved, title):
    path = _prepare(path)

    with path.open("w", encoding="utf-8") as handle:
        handle.write(header(resolved, title))
        yaml.safe_dump(_plain(data), handle, sort_keys=False, default_flow_style=False, allow_unicode=True)

    log_info(f"Wrote {path}", indent=1)

    return path


def read_yaml(path):
    """Load a YAML output file; the comment header is ignored by the parser."""
    path = Path(path)

    try:
        return yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from e
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(
            f"{path} is not valid YAML",
            line=mark.line + 1 if mark else None,
            column=mark.column + 1 if mark else None,
        ) from e


def write_derivation(path, params, derived, scheme, checks, bounds, resolved):
    """The derived parameters as key: value lines plus the tabulated cool-off lengths."""
    data = {
        "game": {"c": str(params.c), "delta": str(params.delta), "p0": str(params.p0)},
        "derived": derived.to_dict(),
        "violations": list(checks),
        "payoff_lower_bounds": None if bounds is None else {state.value: value for state, value in bounds.items()},
        "scheme": scheme.to_dict(),
    }

    return write_yaml(path, data, resolved, "derived parameters")


def write_policy(path, policy, player, resolved):
    data = {"player": player, "policy": policy.to_dict()}

    return write_yaml(path, data, resolved, f"threshold policy of player {player}")


def read_policy(path):
    """Load a policy written by write_policy."""
    data = read_yaml(path)

    try:
        return ThresholdPolicy.from_dict(data["policy"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{path} does not hold a threshold policy ({e})", key="policy") from e


def write_certificate(path, report, membership, params, resolved):
    """Convergence, deviation audit, DP checks and class membership of a solved pair."""
    audit = report.audit
    data = {
        "convergence": report.summary(),
        "changes": [repr(float(change)) for change in report.changes],
        "ex_ante_values": [repr(float(value.ex_ante(params))) for value in report.values],
        "deviation_gains": {} if audit is None else {name: repr(float(gain)) for name, gain in sorted(audit.gains.items())},
        "dp_checks": [dp.summary() for dp in report.dp_reports],
        "class_membership": [
            {
                "player": player,
                "passed": record.passed,
                "checked": record.checked,
                "violations": record.violations,
            }
            for player, record in membership
        ],
    }

    return write_yaml(path, data, resolved, "equilibrium certificate")


def write_metrics(path, metrics, resolved):
    return write_csv(path, METRIC_COLUMNS, metrics.rows(), resolved, "batch metrics, one row per state")


def write_trace(path, trace, model, resolved):
    return write_csv(path, TRACE_COLUMNS, trace.rows(model), resolved, f"trace of episode {trace.episode}")


def write_efficiency(path, metrics, report, bounds, resolved):
    data = {
        "episodes": metrics.n_episodes,
        "horizon": metrics.horizon,
        "truncation_bound": repr(metrics.truncation_bound),
        "confidence": metrics.confidence,
        "ci_method": metrics.ci_method,
        "floor_violations": metrics.floor_violations,
        "cooloff_violations": metrics.cooloff_violations,
        "payoff_check": None if report is None else {
            "passed": report.passed,
            "vacuous": report.vacuous,
            "checks": [
                {
                    "state": check.state.value,
                    "player": check.player,
                    "mean": repr(check.mean),
                    "margin": repr(check.margin),
                    "bound": repr(check.bound),
                    "passed": check.passed,
                }
                for check in report.checks
            ],
        },
        "payoff_lower_bounds": None if bounds is None else {state.value: value for state, value in bounds.items()},
    }

    return write_yaml(path, data, resolved, "efficiency checks")


def write_curve(path, curve, resolved):
    return write_csv(path, CURVE_COLUMNS, (point.row() for point in curve.points), resolved,
                     f"common {curve.q}-belief of the state, per t and state")


def write_learning(path, curve, learning_time, monotonicity, evident, resolved):
    """Summary of the learning checks that accompany the curve."""
    data = {
        "q": str(curve.q),
        "truncated": curve.truncated,
        "crossing": {state: curve.crossing(state) for state in ("H", "L")},
        "individual_learning": None if learning_time is None else {
            "target": str(learning_time.target),
            "T_bar": learning_time.T_bar,
            "values": [[t, str(first), str(second)] for t, first, second in learning_time.values],
        },
        "spine_monotonicity": {
            "checked": len(monotonicity),
            "violations": [
                [record.history, record.player, str(record.before), str(record.after)]
                for record in monotonicity
                if not record.holds
            ],
        },
        "evident_events": None if evident is None else [
            {
                "history": record.history,
                "event_mass": str(record.event_mass),
                "common_mass": str(record.common_mass),
                "holds": record.holds,
            }
            for record in evident
        ],
    }

    return write_yaml(path, data, resolved, "learning checks")
