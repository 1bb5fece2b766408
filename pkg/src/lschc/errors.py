"""Exception hierarchy shared by every lschc module."""


class SchcError(Exception):
    """Base class for all lschc errors."""


class WidthMismatch(SchcError, ValueError):
    pass


# packet layer

class PacketError(SchcError):
    pass


class TruncatedHeader(PacketError):
    pass


class BadVersion(PacketError):
    pass


class LengthMismatch(PacketError):
    """Declared length field disagrees with the octets actually present."""


class InconsistentChain(PacketError):
    pass


class FieldAbsent(PacketError, KeyError):
    pass


class PositionOutOfRange(PacketError, IndexError):
    pass


# contexts, documents and the registry

class ContextError(SchcError):
    pass


class SegmentOverflow(ContextError, ValueError):
    pass


class ContextInvalid(ContextError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations) or "invalid context")


class MalformedDocument(ContextError):
    pass


class UnsupportedVersion(ContextError):
    pass


class ValidationFailed(ContextInvalid):
    pass


class RegistryError(ContextError):
    pass


class RegistryFull(RegistryError):
    pass


class TooManyRules(RegistryError):
    pass


class UnknownLongId(RegistryError, KeyError):
    pass


class UnknownDevice(RegistryError, KeyError):
    pass


class UnknownShortId(RegistryError, KeyError):
    pass


# compression engine

class EngineError(SchcError):
    pass


class UnknownRuleId(EngineError):
    pass


class ResidueUnderflow(EngineError):
    pass


class MissingDeviceIid(EngineError):
    pass


# metrics

class InvalidParams(SchcError, ValueError):
    pass


class InvalidDuty(SchcError, ValueError):
    pass


class EmptyInput(SchcError, ValueError):
    pass
