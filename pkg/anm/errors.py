"""Иерархия исключений библиотеки и CLI.

Каждое исключение несёт код завершения, который возвращает CLI.
"""

from typing import Sequence


class AnmError(Exception):
    """Базовый класс всех ошибок пакета."""

    exit_code: int = 1


class ValidationError(AnmError):
    """Неверные аргументы, значения конфигурации или содержимое файлов."""

    exit_code = 2


class ShapeError(ValidationError):
    """Операция получила операнды несовместимых форм."""

    def __init__(self, kind: str, shapes: Sequence[tuple[int, ...]], detail: str = "") -> None:
        self.kind = kind
        self.shapes = tuple(tuple(s) for s in shapes)
        text = f"shape mismatch in {kind}: {', '.join(str(s) for s in self.shapes)}"
        if detail:
            text += f" ({detail})"
        super().__init__(text)


class UnboundInputError(ValidationError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"input {name!r} is not bound")


class NotScalarError(ValidationError):
    def __init__(self, shape: tuple[int, ...]) -> None:
        self.shape = shape
        super().__init__(f"loss must be a scalar, got shape {shape}")


class ArtifactFormatError(ValidationError):
    """Бинарный артефакт не удалось декодировать."""


class ChecksumError(ArtifactFormatError):
    def __init__(self, path: str, expected: int, actual: int) -> None:
        self.path = path
        super().__init__(
            f"{path}: CRC32 mismatch (stored {expected:#010x}, computed {actual:#010x})"
        )


class TruncatedFileError(ArtifactFormatError):
    def __init__(self, path: str, expected: int, actual: int) -> None:
        self.path = path
        self.expected = expected
        self.actual = actual
        super().__init__(f"{path}: truncated, expected {expected} bytes, got {actual}")


class FormatVersionError(ArtifactFormatError):
    def __init__(self, path: str, version: int, supported: int) -> None:
        self.path = path
        self.version = version
        super().__init__(
            f"{path}: format version {version} is newer than supported version {supported}"
        )


class MissingArtifactError(AnmError):
    exit_code = 3

    def __init__(self, path: str) -> None:
        self.path = path
        super().__init__(f"missing artifact: {path}")


class NumericalError(AnmError):
    """Нечисловые значения или неудачная факторизация."""

    exit_code = 4


class NotPositiveDefiniteError(NumericalError):
    def __init__(self, pivot: int, value: float) -> None:
        self.pivot = pivot
        self.value = value
        super().__init__(f"matrix is not positive definite: pivot {pivot} is {value!r}")
