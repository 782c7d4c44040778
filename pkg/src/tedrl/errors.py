"""Exception taxonomy shared across the package.

Every error carries a ``category`` used by the CLI to pick its exit code:
``config`` -> 2, ``numerical`` -> 3, ``io`` -> 4, anything else -> 1.
"""

from __future__ import annotations


class TedrlError(Exception):
    category = "generic"


class ConfigError(TedrlError):
    """Invalid configuration; message names the offending key path."""

    category = "config"


class InputShapeError(TedrlError):
    """An array argument has the wrong shape for the operation."""

    category = "config"


class NumericalError(TedrlError):
    """A NaN/Inf or other numerical failure was detected."""

    category = "numerical"


class ArtifactIOError(TedrlError):
    """Reading or writing a run artifact (CSV, checkpoint, plot) failed."""

    category = "io"


class EpisodeFinishedError(TedrlError):
    """step() was called on an episode that already reached its horizon."""


class InsufficientDiversityError(TedrlError):
    """The replay buffer cannot provide a batch spanning >= 2 episodes.

    Signals the caller to collect more data before running pair-classifier
    updates.
    """


class InsufficientEpisodeLengthError(TedrlError):
    """No valid same-episode non-adjacent timestep exists for an anchor."""


class DegenerateSplitError(TedrlError):
    """A probe training split is missing at least one class."""
