"""Exception types shared across the package.

The CLI maps these onto its exit codes, so keep the hierarchy flat.
"""


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class ConfigError(ValueError):
    """A run configuration failed validation.

    ``errors`` holds every problem found, each prefixed by its field path.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NumericalFailure(RuntimeError):
    """Integration produced a state that cannot be repaired."""


class PositivityError(NumericalFailure):
    """Density matrix lost positivity by more than the repair tolerance."""
