"""Error taxonomy shared by every sgplab app."""


class ToolkitError(Exception):
    """Base class for all sgplab errors"""


class InvalidArgumentError(ToolkitError, ValueError):
    """Bad shape, kernel, label or configuration value"""


class DepthExceededError(ToolkitError):
    """Requested pyramid depth is larger than the image supports"""

    def __init__(self, requested, feasible, shape, dimension):
        self.requested = requested
        self.feasible = feasible
        self.shape = tuple(shape)
        self.dimension = dimension
        super().__init__(
            f"pyramid depth m={requested} exceeds feasible_depth = {feasible} "
            f"for input shape {self.shape}: limited by {dimension}"
        )


class UnsupportedArchitectureError(ToolkitError):
    """Architecture id is unknown or lacks a feature the caller needs"""


class ModelFormatError(ToolkitError):
    """Weight container could not be read"""


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class IdxFormatError(ToolkitError):
    """IDX file could not be parsed"""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class BadMagicError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class TruncatedIdxError(IdxFormatError):
    pass


class ArchiveFormatError(ToolkitError):
    """Adversarial example archive is missing files or inconsistent"""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")
