from typing import Any
from typing import Optional


class DmpctError(Exception):
    """Базовая ошибка проекта."""


class VolumeFormatError(DmpctError):
    """Файл DMPV/DMPL/DMPW не соответствует формату."""


class BadMagicError(VolumeFormatError):
    pass


class UnsupportedVersionError(VolumeFormatError):
    pass


class TruncatedPayloadError(VolumeFormatError):
    pass


class LabelRangeError(VolumeFormatError):
    pass


class DimsOverflowError(VolumeFormatError):
    pass


class SliceIndexError(DmpctError, IndexError):
    pass


class ReconstructionError(DmpctError):
    pass


class ShapeMismatchError(DmpctError, ValueError):
    pass


class EmptyTrainingSetError(DmpctError):
    pass


class ClassCountMismatchError(DmpctError):
    pass


class FusionError(DmpctError):
    pass


class PhantomGenerationError(DmpctError):
    pass


class SignificanceError(DmpctError, ValueError):
    pass


class CheckpointError(DmpctError):
    pass


class TrainingDivergedError(DmpctError):
    """Градиент или функция потерь перестали быть конечными."""

    def __init__(self, step: int, loss: float, run_log: Optional[Any] = None) -> None:
        super().__init__(f"non-finite gradient at step {step}, loss={loss}")
        self.step = step
        self.loss = loss
        self.run_log = run_log


class ConfigError(DmpctError):
    """Ошибка конфигурации с номером строки."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line
