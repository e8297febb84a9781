"""Exception hierarchy shared by the library and the CLI.

Each family maps to one CLI exit code (see ``greenhop.cli``).
"""


class GreenhopError(Exception):
    category = "internal"


class ConfigError(GreenhopError):
    category = "config"


class InvalidInput(GreenhopError, ValueError):
    category = "data"


class FormatError(InvalidInput):
    """Malformed on-disk volume or manifest."""


class ModelError(GreenhopError):
    category = "model"


class LoadError(ModelError):
    """Model container failed version or checksum validation."""


class CapabilityError(ModelError):
    """A requested task needs a model section that is not present."""
