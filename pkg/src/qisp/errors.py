"""Exception taxonomy shared by all qisp modules."""


class QispError(Exception):
    """Base class for all qisp errors."""


class ParseError(QispError):
    """Configuration document could not be parsed."""


class ValidationError(QispError):
    """Configuration parsed but violates a structural invariant."""


class UnknownNode(QispError):
    """Node id not present in the topology."""


class NoPath(QispError):
    """No hub-to-node path exists (disconnected or the hub itself)."""


class UnknownChannel(QispError):
    """Channel index out of range for its switch bank."""


class UnknownUser(QispError):
    """User id outside 1..16 or not configured."""


class GroupViolation(QispError):
    """Detector channel routed to a user outside its 8-user group."""


class ChannelOccupied(QispError):
    """Channel already routed to a different user; release first."""


class MalformedRequest(QispError):
    """Reservation request fails basic well-formedness checks."""


class UnknownReservation(QispError):
    """Reservation id not found in the calendar."""


class AlreadyFinished(QispError):
    """Reservation is Completed/Cancelled/Rejected and cannot change."""


class FabricInconsistency(QispError):
    """Scheduler found a channel routed that it believed free; tick aborted."""


class InvalidChannelPair(QispError):
    """The two source channels are not a correlated pair."""


class UnsortedInput(QispError):
    """Event stream timestamps are not non-decreasing."""


class DegenerateBinning(QispError):
    """Histogram window smaller than one bin."""


class EmptyHistogram(QispError):
    """Histogram has no counts to analyze."""


class InsufficientData(QispError):
    """Too few populated bins (or no peak) to attempt a fit."""


class NonConvergence(QispError):
    """Fit iteration cap reached without meeting tolerance.

    Carries the best-effort fit (``.fit``) so callers can report partial
    parameters with converged=False.
    """

    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit
