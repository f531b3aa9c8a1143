"""Exception hierarchy.

Every error carries a dotted ``error_class`` string so the command line can
report a machine-readable failure class, and an ``exit_code`` matching the
CLI contract (2 config, 3 numeric/integration, 4 internal).
"""


class BilinsdeError(Exception):
    error_class = "internal"
    exit_code = 4


class StructuralError(BilinsdeError):
    """Model arrays have inconsistent shapes."""

    error_class = "model.structure"
    exit_code = 2


class DataError(BilinsdeError):
    """Non-finite or otherwise unusable numeric data."""

    error_class = "model.data"
    exit_code = 2


class PreconditionError(BilinsdeError):
    error_class = "precondition"
    exit_code = 2


class CapacityError(BilinsdeError):
    """A polynomial bracket would exceed the configured degree cap."""

    error_class = "brackets.capacity"
    exit_code = 3


class IntegrationError(BilinsdeError):
    """The time stepper produced a non-finite or runaway state."""

    error_class = "integration.blowup"
    exit_code = 3

    def __init__(self, message, step=None, path=None):
        super().__init__(message)
        self.step = step
        self.path = path


class NumericalError(BilinsdeError):
    error_class = "numeric.linalg"
    exit_code = 3


class SingularityError(NumericalError):
    """Malliavin matrix is not numerically invertible and no regularization was given."""

    error_class = "malliavin.singular"

    def __init__(self, message, lambda_min=None, lambda_max=None):
        super().__init__(message)
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max


class GridError(BilinsdeError):
    error_class = "grid.mismatch"
    exit_code = 3


class ObservableError(BilinsdeError):
    error_class = "observable.missing_derivative"
    exit_code = 3


class ConfigError(BilinsdeError):
    error_class = "config.semantic"
    exit_code = 2

    def __init__(self, message, field=None, line=None, column=None):
        super().__init__(message)
        self.field = field
        self.line = line
        self.column = column


class ConfigParseError(ConfigError):
    error_class = "config.parse"
