class RSSDError(Exception):
    """Base class for every error raised by the simulator."""


# Flash array

class FlashError(RSSDError):
    pass


class BadAddress(FlashError):
    pass


class BadLength(FlashError):
    pass


class ProgramOnProgrammed(FlashError):
    """A page was programmed twice without an erase of its block in between."""


class ReadErased(FlashError):
    pass


# Translation layer

class OutOfRange(RSSDError):
    pass


class CapacityExhausted(RSSDError):
    """No free page can be produced without dropping retained data."""


class RetentionViolation(RSSDError):
    """An internal invariant of the retention design was broken."""


# Operation log

class NothingToSeal(RSSDError):
    pass


# Offload

class NothingToOffload(RSSDError):
    pass


class FrameError(RSSDError):
    pass


class FrameFormatError(FrameError):
    pass


class AuthenticationFailed(FrameError):
    pass


# Vault

class VaultError(RSSDError):
    pass


class VaultUnreachable(VaultError):
    pass


class VaultRejected(VaultError):
    def __init__(self, reason, detail=0):
        self.reason = reason
        self.detail = detail
        super().__init__(f"vault rejected segment: {reason} ({detail})")


class UnknownSegment(VaultError):
    pass


class BadIndex(VaultError):
    pass


class UnknownDetector(VaultError):
    pass


class TamperDetected(RSSDError):
    def __init__(self, seq, message=''):
        self.seq = seq
        super().__init__(message or f"tamper detected at seq {seq}")


class DigestMismatch(TamperDetected):
    pass


# Host side

class TraceParseError(RSSDError):
    def __init__(self, line, message=''):
        self.line = line
        super().__init__(f"trace line {line}: {message}" if message else f"trace line {line}")


class BindFailed(RSSDError):
    pass
