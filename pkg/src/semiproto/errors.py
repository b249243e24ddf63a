"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid shapes, config keys or infeasible episode requests."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class NumericError(ArithmeticError):
    """NaN or Inf produced where only finite values are allowed."""

    def __init__(self, message, op_id=None):
        super().__init__(message)
        self.op_id = op_id


class DatasetFormatError(IOError):
    """Malformed or corrupted dataset file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
