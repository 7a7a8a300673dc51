APP_NAME = "CoolOffSolver"
"""The name of the application."""

APP_DESCRIPTION = (
    "CoolOffSolver derives cool-off schemes, solves threshold equilibria and "
    "simulates the repeated investment game with private signals"
)
"""The description of the application."""

__version__ = "1.0.0"
"""The version of the application."""
