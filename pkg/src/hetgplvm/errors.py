"""Exception taxonomy shared across the package.

Three classes, mirrored by distinct CLI exit codes: bad user input or
malformed data (`InputError`), inconsistent run configuration
(`ConfigError`), and numerical failure such as an unfactorisable
covariance or a non-finite objective (`NumericalError`).
"""


class InputError(ValueError):
    """Invalid argument, malformed file, or out-of-support observation."""


class ConfigError(ValueError):
    """Run configuration that cannot be satisfied (e.g. inapplicable approach)."""


class NumericalError(RuntimeError):
    """Numerical failure: factorisation breakdown, non-finite value/gradient."""


class TrainingDiverged(NumericalError):
    """Optimisation hit a non-finite objective; carries the last good result."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
