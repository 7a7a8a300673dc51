import os

_state = {"workers": None, "trace_episodes": 0}
"""Global run state for the application."""


def get_workers():
    """Return the worker pool size for Monte Carlo batches."""
    return _state["workers"] or os.cpu_count() or 1


def set_workers(workers):
    """Set the worker pool size; None restores the machine default."""
    if workers is not None and workers < 1:
        raise ValueError("workers must be at least 1")

    _state["workers"] = workers


def get_trace_episodes():
    """Return how many leading episodes of a batch are exported as traces."""
    return _state["trace_episodes"]


def set_trace_episodes(count):
    """Set how many leading episodes of a batch are exported as traces."""
    _state["trace_episodes"] = max(0, int(count))
