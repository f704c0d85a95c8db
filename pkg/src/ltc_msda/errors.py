"""Exception hierarchy shared across the package."""


class LtcError(Exception):
    """Base class for every error raised by ltc_msda."""

    _init_args: tuple = ()

    def __reduce__(self):
        # rebuild from the constructor arguments so errors survive worker processes
        return type(self), self._init_args or self.args


class ConfigError(LtcError, ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field, message):
        self.field = field
        self._init_args = (field, message)
        super().__init__(f"{field}: {message}")


class ShapeError(LtcError, ValueError):
    pass


class SizeError(LtcError, ValueError):
    pass


class LabelError(LtcError, ValueError):
    pass


class ProbabilityError(LtcError, ValueError):
    def __init__(self, row, message):
        self.row = row
        self._init_args = (row, message)
        super().__init__(f"row {row}: {message}")


class NumericError(LtcError, FloatingPointError):
    pass


class DivergenceError(NumericError):
    def __init__(self, term, value):
        self.term = term
        self._init_args = (term, value)
        super().__init__(f"non-finite loss term {term!r} = {value!r}")


class TraceError(LtcError, RuntimeError):
    pass


class ColdStartError(LtcError, RuntimeError):
    def __init__(self, missing):
        self.missing = list(missing)
        self._init_args = (self.missing,)
        pairs = ", ".join(f"(domain={m}, class={k})" for m, k in self.missing)
        super().__init__(f"uninitialized prototype slots: {pairs}")


class PartitionError(LtcError, ValueError):
    pass


class DegenerateGraphError(LtcError, ValueError):
    pass


class CheckpointFormatError(LtcError, IOError):
    pass


class DimensionError(LtcError, ValueError):
    pass
