"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI: ConfigError -> 2, everything else -> 1.
"""


class CptubeError(Exception):
    """Base class for all package errors."""


class ConfigError(CptubeError):
    """Invalid or inconsistent configuration."""


class DataIntegrityError(CptubeError):
    """Non-finite or otherwise corrupt numeric input."""


class SequencingError(CptubeError):
    """Out-of-order step index or timestamp."""


class InsufficientHistoryError(CptubeError):
    """Score requested before the rolling window is full."""


class SimulationAbort(CptubeError):
    """Simulator state left its validity envelope (attitude blow-up)."""
