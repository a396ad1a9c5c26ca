"""Exception hierarchy shared by every m3dnet module."""


class M3DError(Exception):
    """Base class for domain errors (the CLI maps these to exit code 1)."""


class ConfigError(M3DError, ValueError):
    """Invalid or inconsistent configuration, raised at build/startup time."""


class InvalidInputError(M3DError, ValueError):
    """A tensor or value violates an operation's precondition."""


class NonFiniteError(M3DError, FloatingPointError):
    """A network output or loss became NaN/inf."""


class FrozenParameterError(M3DError):
    """A frozen parameter was handed to an optimizer."""


class ManifestError(M3DError):
    pass


class ImageDecodeError(M3DError):
    pass


class CheckpointError(M3DError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointKindError(CheckpointError):
    """Checkpoint belongs to a different training phase than requested."""


class CheckpointShapeError(CheckpointError):
    pass


class UndefinedAUCError(M3DError, ValueError):
    """AUC requested for scores that contain only one class."""


class ModuleContractError(M3DError):
    """Wraps an error raised inside one stage of the assembled detector."""

    def __init__(self, module: str, cause: Exception):
        super().__init__(f"[{module}] {cause}")
        self.module = module
        self.cause = cause
