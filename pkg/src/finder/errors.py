"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DataIntegrityError -> 3,
NumericDomainError / NumericFailure -> 4. Everything derives from FinderError
so library users can catch broadly.
"""


class FinderError(Exception):
    pass


class ConfigError(FinderError):
    """Invalid configuration value (model/train/synth/split configs)."""


class ContractError(FinderError):
    """A call violated an API precondition (shapes aside)."""


class ShapeMismatchError(ContractError):
    """Operand shapes are incompatible; message names both shapes."""

    def __init__(self, op: str, *shapes) -> None:
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, self.shapes))}")


class InputTooShortError(ShapeMismatchError):
    """Valid-mode convolution with kernel longer than the input."""

    def __init__(self, kernel: int, length: int) -> None:
        self.shapes = ((kernel,), (length,))
        ContractError.__init__(self, f"conv1d(valid): kernel size {kernel} exceeds input length {length}")


class NumericDomainError(FinderError):
    """An elementwise op left its domain (log/pow of a non-positive value)."""

    def __init__(self, op: str, index: int, value: float) -> None:
        self.op = op
        self.index = index
        self.value = value
        super().__init__(f"{op}: domain violation at flat index {index} (value {value!r})")


class DegenerateBatchError(ContractError):
    """Train-mode batchnorm with fewer than two elements per channel."""


class TapeError(ContractError):
    """Tape misuse: backward on a consumed tape, loss not recorded on it, etc."""


class DataIntegrityError(FinderError):
    """Feature banks / manifests / splits disagree with each other."""


class BankFormatError(DataIntegrityError):
    """A feature-bank file failed to parse (bad magic, version, checksum, truncation)."""


class CheckpointFormatError(FinderError):
    """A model checkpoint file failed to parse or is inconsistent."""


class NumericFailure(FinderError):
    """Training produced a non-finite loss; message names epoch and batch."""
