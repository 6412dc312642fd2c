"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class ContractViolation(RuntimeError):
    """A component broke a documented contract (bad indices, empty rater set, ...)."""


class BudgetError(ValueError):
    """A selection budget exceeds the number of available tokens."""


class DegenerateWeightsError(ValueError):
    """Time weights sum to (nearly) zero, so the normalized aggregate is undefined."""


class ConfigError(ValueError):
    """Invalid configuration file or value."""

    def __init__(self, message, *, field=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line
