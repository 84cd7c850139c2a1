class FedloadError(Exception):
    """Base class for all package errors."""


class SchemaError(FedloadError):
    """Input file does not match the expected schema."""


class DomainError(FedloadError):
    """Operation called with arguments outside its domain."""


class ConfigError(FedloadError):
    """Experiment configuration failed to parse or validate."""


class DataError(FedloadError):
    """Data is missing or insufficient for the requested experiment."""
