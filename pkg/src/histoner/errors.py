class HistonerError(Exception):
    """Base class for all toolkit errors."""


class DataError(HistonerError):
    """Input data is missing, unreadable or malformed."""


class ConfigError(HistonerError):
    """Invalid parameters or experiment configuration."""
