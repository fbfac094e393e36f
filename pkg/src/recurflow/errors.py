"""Exception taxonomy shared by all modules."""


class RecurflowError(Exception):
    """Base class for all toolkit errors."""


class InputError(RecurflowError):
    """Caller passed inconsistent or out-of-domain arguments."""


class ConfigurationError(RecurflowError):
    """A configuration cannot honour its own accuracy/validity contract."""


class ModelError(RecurflowError):
    """A model object violates a structural assumption (e.g. injectivity)."""


class IntegrationError(RecurflowError):
    """Trajectory integration produced a non-finite or invalid state."""
