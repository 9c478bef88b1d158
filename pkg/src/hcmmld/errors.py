"""Exception types raised by the engine."""


class HCMMError(Exception):
    """Base class for all engine errors."""


class SchemaError(HCMMError, ValueError):
    """Malformed schema declaration."""


class DataError(HCMMError, ValueError):
    """Input data violating the declared schema.

    ``row`` is 1-based over data rows (the header is not counted).
    """

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class ConfigError(HCMMError, ValueError):
    """Invalid run, prior, truncation or study configuration."""


class SamplerError(HCMMError, RuntimeError):
    """Numerical failure inside a sampler update."""

    def __init__(self, message, component=None):
        self.component = component
        if component is not None:
            message = f"{message} (component {component})"
        super().__init__(message)


class DegenerateWeightsError(SamplerError):
    """Every candidate in a categorical draw had zero weight."""
