"""Error types shared across the platform.

Every domain error carries a stable ``code`` string so the HTTP layer and the
CLI can map it without string-matching messages.
"""


class TwinforgeError(Exception):
    """Base class for all domain errors."""

    code = "Error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class Unavailable(TwinforgeError):
    """A service component is crashed or shut down; the caller may retry."""

    code = "Unavailable"


# core model ----------------------------------------------------------------

class MalformedId(TwinforgeError):
    code = "MalformedId"


class EnvelopeInvalid(TwinforgeError):
    """Base for envelope validation failures; names the failing field."""

    field = ""


class BadTopic(EnvelopeInvalid):
    code = "BadTopic"
    field = "topic"


class BadPath(EnvelopeInvalid):
    code = "BadPath"
    field = "path"


class BadValue(EnvelopeInvalid):
    code = "BadValue"
    field = "value"


class PathNotApplicable(TwinforgeError):
    code = "PathNotApplicable"


class ManagedAttributeViolation(TwinforgeError):
    code = "ManagedAttributeViolation"


# registry ------------------------------------------------------------------

class DuplicateId(TwinforgeError):
    code = "DuplicateId"


class UnknownPolicy(TwinforgeError):
    code = "UnknownPolicy"


class NotFound(TwinforgeError):
    code = "NotFound"


class KindMismatch(TwinforgeError):
    code = "KindMismatch"


class TwinAlreadyHasParent(TwinforgeError):
    code = "TwinAlreadyHasParent"


class CycleCreated(TwinforgeError):
    code = "CycleCreated"


class NotAType(TwinforgeError):
    code = "NotAType"


class CascadeOnType(TwinforgeError):
    code = "CascadeOnType"


class Forbidden(TwinforgeError):
    code = "Forbidden"


# gateway -------------------------------------------------------------------

class UnknownTenant(TwinforgeError):
    code = "UnknownTenant"


class DuplicateDevice(TwinforgeError):
    code = "DuplicateDevice"


class AuthFailed(TwinforgeError):
    code = "AuthFailed"


class MappingFailed(TwinforgeError):
    code = "MappingFailed"


# watchdog / codec ----------------------------------------------------------

class UnknownTimeField(TwinforgeError):
    code = "UnknownTimeField"


class MissingLastValue(TwinforgeError):
    code = "MissingLastValue"


class UnknownFormat(TwinforgeError):
    code = "UnknownFormat"


# ml runtime ----------------------------------------------------------------

class DuplicateModel(TwinforgeError):
    code = "DuplicateModel"


class InvalidSchema(TwinforgeError):
    code = "InvalidSchema"


class DecodeError(TwinforgeError):
    code = "DecodeError"


# bridges -------------------------------------------------------------------

class IndexOutOfRange(TwinforgeError):
    code = "IndexOutOfRange"


class InvalidResult(TwinforgeError):
    code = "InvalidResult"


class ConfigError(TwinforgeError):
    code = "ConfigError"
