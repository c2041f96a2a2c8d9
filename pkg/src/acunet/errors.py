"""Exception hierarchy shared by all acunet modules."""


class AcunetError(Exception):
    """Base class for every error raised deliberately by this package."""


class DimensionError(AcunetError, ValueError):
    """An array or tensor has the wrong rank or size along some axis."""


class ContractError(AcunetError, RuntimeError):
    """An API was called outside its documented precondition."""


class ConfigError(AcunetError, ValueError):
    pass


class LoadError(AcunetError, ValueError):
    """A dataset directory or one of its files could not be parsed."""


class MissingFileError(LoadError, FileNotFoundError):
    pass


class CheckpointError(AcunetError, ValueError):
    pass


class TrainingError(AcunetError, RuntimeError):
    pass
