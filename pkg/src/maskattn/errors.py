"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(ValueError):
    """A mask row carries no mass, so the row cannot be normalized."""

    def __init__(self, row, message=None):
        self.row = row
        super().__init__(message or f"mask row {row} sums to zero; every row needs at least one positive entry")


class ContractError(RuntimeError):
    """An operation was called outside of its documented contract."""


class ConfigError(ValueError):
    """Invalid model, mask or experiment configuration."""


class CorruptionError(IOError):
    """A checkpoint on disk does not match its manifest."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, step, value):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")
