"""Exception hierarchy shared by every module.

Decoders raise only subclasses of :class:`SyncError`; anything else escaping a
decode path is a bug.
"""


class SyncError(Exception):
    """Base class for all toolkit errors."""


class DecodeError(SyncError, ValueError):
    """Bytes could not be interpreted as the expected structure."""


class MalformedBencode(DecodeError):
    pass


class TruncatedHeader(DecodeError):
    pass


class UnknownPacketType(DecodeError):
    pass


class UnsupportedVersion(DecodeError):
    def __init__(self, version, message=None):
        super().__init__(message or f"unsupported uTP version {version}")
        self.version = version


class BadMagic(DecodeError):
    pass


class WrongWidth(DecodeError):
    pass


class MalformedMessage(DecodeError):
    """Well-formed bencoding that does not match a message template."""


class MalformedPeerEntry(MalformedMessage):
    pass


class DialectMismatch(DecodeError):
    pass


class MissingMandatoryField(DecodeError):
    pass


class BadExpiry(DecodeError):
    pass


class BadAlphabet(DecodeError):
    pass


class BadFormat(DecodeError):
    """Capture file could not be parsed; ``where`` names the line or offset."""

    def __init__(self, message, where=None):
        super().__init__(f"{message} (at {where})" if where is not None else message)
        self.where = where


class EntropyUnavailable(SyncError):
    pass


class WrongKeyKind(SyncError, ValueError):
    pass


class ProtocolViolation(SyncError):
    pass


class NoRoute(SyncError):
    pass


class ChunkAbsent(SyncError, LookupError):
    pass


class AccessDenied(SyncError):
    pass


class ConfigInvalid(SyncError, ValueError):
    """Scenario or CLI configuration rejected; ``problems`` lists ``(field, reason)``."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [("", problems)]
        self.problems = list(problems)
        text = "; ".join(f"{f}: {r}" if f else r for f, r in self.problems)
        super().__init__(text)


class UnrecognisedInput(SyncError, ValueError):
    pass


class AllSourcesFailed(SyncError):
    def __init__(self, failures):
        self.failures = dict(failures)
        detail = ", ".join(f"{k}: {v}" for k, v in sorted(self.failures.items()))
        super().__init__(f"every discovery source failed ({detail})")


class ShareMismatch(SyncError, ValueError):
    pass


class ProviderUnavailable(SyncError):
    pass
