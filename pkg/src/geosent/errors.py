"""Exception hierarchy. ``exit_code`` is what the CLI returns for each class."""


class GeoSentError(Exception):
    exit_code = 1


class InputError(GeoSentError, OSError):
    """Unreadable or unparseable input file."""

    exit_code = 2


class FormatError(InputError, ValueError):
    pass


class ConfigError(GeoSentError, ValueError):
    exit_code = 3


class TaxonomyError(ConfigError):
    pass


class ShortageError(ConfigError):
    """Not enough members of a class to draw the requested sample."""

    def __init__(self, label, available, requested):
        super().__init__(
            f"class {label} has {available} members, {requested} requested"
        )
        self.label = label
        self.available = available
        self.requested = requested


class SplitError(ConfigError):
    pass


class ConflictError(ConfigError):
    pass


class ProviderError(GeoSentError):
    exit_code = 4

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class CacheMissError(ProviderError):
    def __init__(self, keys):
        keys = list(keys)
        shown = ", ".join(str(k) for k in keys[:5])
        more = f" (+{len(keys) - 5} more)" if len(keys) > 5 else ""
        super().__init__(f"offline cache miss for {len(keys)} key(s): {shown}{more}")
        self.keys = keys


class NumericError(GeoSentError, ArithmeticError):
    exit_code = 5


class ShapeError(GeoSentError, ValueError):
    pass


class EvaluationError(GeoSentError, ValueError):
    pass
