"""Exception hierarchy shared by every layer of the runtime."""


class PgasError(Exception):
    """Base class for all runtime errors."""


# addressing
class OutOfSegment(PgasError, IndexError):
    pass


class InvalidLayout(PgasError, ValueError):
    pass


# wire
class WireError(PgasError, ValueError):
    pass


class TooManyArgs(WireError):
    pass


class PayloadMismatch(WireError):
    pass


class Truncated(WireError):
    pass


class BadVersion(WireError):
    pass


class MtuTooSmall(WireError):
    pass


class GapDetected(WireError):
    pass


class MixedSeq(WireError):
    pass


# memory
class OutOfBounds(PgasError, IndexError):
    pass


# core
class QueueFull(PgasError):
    pass


class BadCommand(PgasError, ValueError):
    pass


class UnknownOpcode(PgasError):
    pass


class ReplyToNonRequester(PgasError):
    pass


class ReservedOpcode(PgasError, ValueError):
    pass


class AlreadyRegistered(PgasError, ValueError):
    pass


# transport
class Unreachable(PgasError):
    pass


class LivelockGuard(PgasError, RuntimeError):
    """The event loop exceeded its configured event budget."""


class SimulationStalled(PgasError, RuntimeError):
    """The event queue drained while a waited-on handle was still pending."""


# api
class InvalidConfig(PgasError, ValueError):
    pass


class VariantViolation(PgasError, ValueError):
    pass


class NotInHandler(PgasError):
    pass


class DuplicateReply(PgasError):
    pass


class UnknownHandle(PgasError, KeyError):
    pass


# compute
class BadDims(PgasError, ValueError):
    pass


class NumericOverflow(PgasError, ArithmeticError):
    """A result does not fit the command's element type."""
