"""Exception hierarchy shared by every craci component."""


class CraciError(Exception):
    """Base class for all kit errors."""


# backbone
class InvalidTopic(CraciError, ValueError):
    pass


class InvalidPattern(CraciError, ValueError):
    pass


class MissingIdentity(CraciError):
    """Publish attempted without a (valid) identity token."""


class UnknownSubscription(CraciError, KeyError):
    pass


class ClockRegression(CraciError, ValueError):
    pass


# edge gateway
class UnmappedRegister(CraciError, KeyError):
    pass


class GatewayOffline(CraciError):
    pass


class UnknownGateway(CraciError, KeyError):
    pass


# semantic context
class CyclicStructure(CraciError, ValueError):
    pass


class DuplicateProperty(CraciError, ValueError):
    pass


class ModelFormatError(CraciError, ValueError):
    pass


# twin hub
class DuplicateTypeVersion(CraciError, ValueError):
    pass


class UnknownType(CraciError, KeyError):
    pass


class DuplicateInstance(CraciError, ValueError):
    pass


class UnknownInstance(CraciError, KeyError):
    pass


class UnknownVersion(CraciError, KeyError):
    pass


class AccessDenied(CraciError, PermissionError):
    pass


# observability / lifecycle
class MalformedSpan(CraciError, ValueError):
    pass


class UnknownTrace(CraciError, KeyError):
    pass


class VersionRegression(CraciError, ValueError):
    pass


# orchestration
class TerminalInstance(CraciError):
    pass


class InsufficientHistory(CraciError, ValueError):
    pass


class ServiceNotPlaced(CraciError):
    pass


class PlanAborted(CraciError):
    pass


class IllegalTransition(CraciError):
    pass


class ActivePlanExists(CraciError):
    pass


# harness / cli
class InvalidPlacement(CraciError, ValueError):
    pass


class ConfigError(CraciError, ValueError):
    pass
