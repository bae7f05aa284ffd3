"""Exception types shared across the package."""


class ActfError(Exception):
    """Base class for all package errors."""


class SchemaError(ActfError, ValueError):
    """A document does not conform to its schema.

    ``path`` is a dotted/indexed location such as ``intersections[0].phases.3``.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class ValidationError(ActfError, ValueError):
    """A structurally valid object breaks a semantic invariant."""

    def __init__(self, findings):
        if isinstance(findings, str):
            findings = [findings]
        self.findings = list(findings)
        super().__init__("; ".join(self.findings))


class InfeasibleDesignError(ActfError, ValueError):
    """No timing plan or experimental design satisfies the constraints."""


class RankDeficiencyError(ActfError, ValueError):
    """A model matrix is not of full column rank."""

    def __init__(self, message, dependent=()):
        self.dependent = tuple(dependent)
        super().__init__(message)


class ExperimentError(ActfError, RuntimeError):
    """The experiment as a whole could not be completed."""
