"""Exception types shared across the testbed."""


class RrsbError(Exception):
    """Base class for all testbed errors."""


class PreconditionError(RrsbError, ValueError):
    """An argument violates an operation's precondition."""


class MalformedError(RrsbError, ValueError):
    """Bytes on the wire or on disk do not parse."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NoSamplesError(MalformedError):
    """A media fragment parse found no movie fragment box."""


class OrderingError(RrsbError):
    """Frames or access units were presented out of sequence order."""


class TransportError(RrsbError):
    """An ingest transport closed before all frames were moved."""

    def __init__(self, message, frames_completed):
        super().__init__(f"{message} after {frames_completed} frames")
        self.frames_completed = frames_completed


class InvalidSampleError(RrsbError, ValueError):
    """A clock sync sample is physically impossible."""


class SyncTimeoutError(RrsbError, TimeoutError):
    """Clock sync handshake received no replies."""


class ProtocolError(RrsbError):
    """A transport or application protocol rule was broken."""


class OversizeError(RrsbError, ValueError):
    """A datagram exceeds the maximum size the link accepts."""


class UnknownProfileError(RrsbError, KeyError):
    """No network profile is registered under the requested name."""


class RunError(RrsbError):
    """A delivery run failed; ``phase`` names the step that broke."""

    def __init__(self, phase, cause):
        super().__init__(f"run failed during {phase}: {cause}")
        self.phase = phase
        self.cause = cause


class InvalidRunError(RrsbError):
    """A run produced no usable latency samples."""
