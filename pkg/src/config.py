import dataclasses
import hashlib
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any
from typing import Callable
from typing import Optional

from dotenv import load_dotenv
from dotenv.parser import parse_stream

from src.exceptions import ConfigError
from src.logger import get_logger
from src.volume import DEFAULT_WINDOWS
from src.volume import WindowSpec

load_dotenv()
logger = get_logger(__name__)

MODES = ("fcn", "spsl", "dmpct", "dmpct-confident")
MAX_SEED = 2**64


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "dmpct"
    T: int = 2
    num_classes: int = 4
    windows: tuple[tuple[float, float], ...] = tuple((w.lo, w.hi) for w in DEFAULT_WINDOWS)
    learning_rate: float = 0.1
    momentum: float = 0.9
    teacher_iters: int = 300
    student_iters: int = 0
    batch_slices: int = 8
    batch_pixels: int = 512
    hidden_units: int = 0
    pooling_radii: tuple[int, ...] = (1, 2, 4)
    include_coords: bool = True
    warm_start: bool = False
    top_n: int = 256
    seed: int = 0
    workers: int = 1
    provenance: bool = True
    labeled: int = 4
    unlabeled: int = 16
    test: int = 10
    dims: int = 48
    noise_sigma: float = 10.0
    hu_offset: float = 0.0
    size_scale: float = 1.0
    organs: tuple[int, ...] = ()
    data_dir: str = ""
    out_dir: str = "runs"

    @property
    def student_budget(self) -> int:
        """Число итераций ученика: явное значение или удвоенный бюджет учителя."""
        return self.student_iters or 2 * self.teacher_iters

    def window_specs(self) -> list[WindowSpec]:
        return [WindowSpec(lo, hi) for lo, hi in self.windows]

    def evaluated_organs(self) -> list[int]:
        return list(self.organs) if self.organs else list(range(1, self.num_classes + 1))


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_windows(text: str) -> tuple[tuple[float, float], ...]:
    windows = []
    for part in text.split(","):
        if not part.strip():
            continue
        lo, hi = part.split(":")
        windows.append((float(lo), float(hi)))
    return tuple(windows)


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{lo!r}:{hi!r}" for lo, hi in value)
        return ",".join(str(item) for item in value)
    return str(value)


_PARSERS: dict[str, Callable[[str], Any]] = {
    "windows": _parse_windows,
    "pooling_radii": _parse_int_tuple,
    "organs": _parse_int_tuple,
}
_TYPE_PARSERS: dict[Any, Callable[[str], Any]] = {int: int, float: float, bool: _parse_bool, str: str}


def _field_parser(field: dataclasses.Field) -> Callable[[str], Any]:
    if field.name in _PARSERS:
        return _PARSERS[field.name]
    return _TYPE_PARSERS[field.type]


def validate_config(config: ExperimentConfig, lines: Optional[dict[str, int]] = None) -> ExperimentConfig:
    """
    Проверяет ограничения конфигурации.

    :param config: конфигурация эксперимента
    :param lines: номера строк ключей в исходном файле (для сообщений об ошибках)
    :return: та же конфигурация, если ограничения выполнены
    """
    lines = lines or {}

    def fail(key: str, message: str) -> None:
        logger.error(f"Ошибка конфигурации в ключе {key}: {message}")
        raise ConfigError(lines.get(key, 0), f"{key}: {message}")

    if config.mode not in MODES:
        fail("mode", f"expected one of {', '.join(MODES)}, got {config.mode!r}")
    if config.T < 1:
        fail("T", "must be >= 1")
    if not 1 <= config.num_classes <= 255:
        fail("num_classes", "must be in 1..255")
    if not config.windows:
        fail("windows", "at least one window is required")
    for lo, hi in config.windows:
        if not hi - lo > 0:
            fail("windows", f"window [{lo}, {hi}] must satisfy lo < hi")
    if not config.learning_rate > 0:
        fail("learning_rate", "must be > 0")
    if not 0 <= config.momentum < 1:
        fail("momentum", "must be in [0, 1)")
    for key in ("teacher_iters", "student_iters", "batch_pixels", "hidden_units", "unlabeled", "test"):
        if getattr(config, key) < 0:
            fail(key, "must be >= 0")
    for key in ("batch_slices", "top_n", "workers", "labeled", "dims"):
        if getattr(config, key) < 1:
            fail(key, "must be >= 1")
    if any(radius < 1 for radius in config.pooling_radii):
        fail("pooling_radii", "radii must be >= 1")
    if not 0 <= config.seed < MAX_SEED:
        fail("seed", "must fit in an unsigned 64-bit integer")
    if config.noise_sigma < 0:
        fail("noise_sigma", "must be >= 0")
    if not config.size_scale > 0:
        fail("size_scale", "must be > 0")
    if any(not 1 <= organ <= config.num_classes for organ in config.organs):
        fail("organs", f"organ ids must be in 1..{config.num_classes}")
    return config


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """
    Разбирает конфигурацию из строк вида key=value (комментарии через #).

    :param text: содержимое файла конфигурации
    :param base: значения для ключей, которых нет в файле (по умолчанию ExperimentConfig())
    :return: проверенная конфигурация с подставленными значениями по умолчанию
    """
    fields = {field.name: field for field in dataclasses.fields(ExperimentConfig)}
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for binding in parse_stream(io.StringIO(text)):
        line = binding.original.line
        if binding.error:
            logger.error(f"Ошибка разбора строки {line}: {binding.original.string.strip()}")
            raise ConfigError(line, f"malformed line {binding.original.string.strip()!r}")
        if binding.key is None:
            continue
        if binding.key not in fields:
            logger.error(f"Неизвестный ключ {binding.key} в строке {line}")
            raise ConfigError(line, f"unknown key {binding.key!r}")
        if binding.value is None:
            raise ConfigError(line, f"missing value for {binding.key!r}")
        try:
            values[binding.key] = _field_parser(fields[binding.key])(binding.value)
        except ValueError as ex:
            logger.error(f"Ошибка типа в строке {line}: {ex}")
            raise ConfigError(line, f"{binding.key}: {ex}") from ex
        lines[binding.key] = line
    config = dataclasses.replace(base or ExperimentConfig(), **values)
    logger.info(f"получена конфигурация: {config}")
    return validate_config(config, lines)


def echo_config(config: ExperimentConfig) -> str:
    """
    Текстовое представление конфигурации; parse_config(echo_config(c)) == c.

    :param config: конфигурация эксперимента
    :return: строки key=value для всех ключей
    """
    return "".join(f"{field.name}={_render(getattr(config, field.name))}\n" for field in dataclasses.fields(config))


def load_config(path: Optional[str], base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """
    Читает конфигурацию из файла; без пути возвращает значения по умолчанию.

    :param path: путь к файлу key=value или None
    :return: конфигурация эксперимента
    """
    if not path:
        return base or ExperimentConfig()
    logger.info(f"чтение конфигурации из {path}")
    return parse_config(Path(path).read_text(encoding="utf-8"), base)


def override_config(config: ExperimentConfig, **overrides: Any) -> ExperimentConfig:
    """Подставляет непустые значения (флаги CLI, окружение) и повторяет проверку."""
    changes = {key: value for key, value in overrides.items() if value is not None}
    return validate_config(dataclasses.replace(config, **changes))


def env_workers() -> Optional[int]:
    value = os.getenv("DMPCT_WORKERS")
    return int(value) if value else None


def derive_seed(master_seed: int, *tags: object) -> int:
    """
    Производный seed компонента: BLAKE2b от главного seed и тегов.

    :param master_seed: главный seed эксперимента
    :param tags: теги компонента, например ("train", 1, "axial")
    :return: 64-битный seed
    """
    payload = f"{master_seed}/" + "/".join(str(tag) for tag in tags)
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def resolve_config(path: Optional[str] = None, **overrides: Any) -> ExperimentConfig:
    """
    Итоговая конфигурация: флаги CLI важнее файла, файл важнее окружения, окружение важнее умолчаний.

    :param path: путь к файлу конфигурации или None
    :param overrides: значения флагов CLI (None: флаг не задан)
    :return: проверенная конфигурация
    """
    base = override_config(ExperimentConfig(), workers=env_workers())
    return override_config(load_config(path, base), **overrides)
