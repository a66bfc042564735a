"""Exception hierarchy shared across the package.

Every error carries a short machine-parsable ``category`` so the CLI can
emit stable ``ERROR:<category>:`` diagnostics.
"""


class SeisegError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"


class ShapeError(SeisegError, ValueError):
    """Tensor or image dimensions violate an operation's contract."""

    category = "shape"


class ConfigError(SeisegError, ValueError):
    """Invalid or inconsistent configuration values."""

    category = "config"


class ContractError(SeisegError, ValueError):
    """A documented precondition was violated by the caller."""

    category = "contract"


class SamplingError(SeisegError, ValueError):
    """An annotation budget cannot be satisfied by the available pixels."""

    category = "sampling"


class FormatError(SeisegError, ValueError):
    """A file on disk does not match its expected format."""

    category = "format"


class TrainingDiverged(SeisegError, RuntimeError):
    """Training loss became non-finite.

    Carries the offending iteration index and the last parameter state
    known to produce a finite loss.
    """

    category = "contract"

    def __init__(self, iteration, last_params=None):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.last_params = last_params
