"""Exception types shared across the package."""


class SketchVOSError(Exception):
    pass


class ShapeError(SketchVOSError):
    pass


class NumericalDomainError(SketchVOSError):
    pass


class ConfigError(SketchVOSError):
    pass


class IntegrityError(SketchVOSError):
    pass


class StateError(SketchVOSError):
    pass


class SamplingError(SketchVOSError):
    pass


class EmptyReferenceError(SketchVOSError):
    pass


class CheckInvalidError(SketchVOSError):
    pass


class DivergenceError(SketchVOSError):
    pass
