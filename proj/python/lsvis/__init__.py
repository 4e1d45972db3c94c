"""Python surface of the lsvis pipeline (thin wrapper over the C++ core)."""

from ._core import (  # noqa: F401
    fit_ab,
    generate_channels,
    generate_digits,
    generate_splash,
    project,
    run_experiment,
    silhouette_score,
)

__all__ = [
    "fit_ab",
    "generate_channels",
    "generate_digits",
    "generate_splash",
    "project",
    "run_experiment",
    "silhouette_score",
]
