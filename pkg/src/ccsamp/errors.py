"""Exception types shared across the package."""


class CcsAmpError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CcsAmpError):
    """A run configuration (JSON document or CLI flags) is malformed."""


class InconsistentLengths(CcsAmpError):
    """Section lengths do not add up to the declared payload/parity sizes."""


class DanglingEdge(CcsAmpError):
    """The parity graph references a section that cannot serve as a source."""


class LengthMismatch(CcsAmpError):
    """An input vector does not have the length required by the code layout."""


class ZeroMass(CcsAmpError):
    """A belief vector lost all probability mass (contradictory evidence)."""


class EmptyResult(CcsAmpError):
    """List decoding finished with no parity-consistent candidate paths."""


class BadDimensions(CcsAmpError):
    """Sensing operator dimensions are invalid."""


class NonFiniteState(CcsAmpError):
    """An iterative decoder state contains NaN or infinite entries."""


class NoBracket(CcsAmpError):
    """A search interval does not bracket the requested operating point."""
