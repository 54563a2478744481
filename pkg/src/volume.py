import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from typing import Union

import numpy as np

from src.exceptions import BadMagicError
from src.exceptions import DimsOverflowError
from src.exceptions import LabelRangeError
from src.exceptions import ShapeMismatchError
from src.exceptions import SliceIndexError
from src.exceptions import TruncatedPayloadError
from src.exceptions import UnsupportedVersionError
from src.exceptions import VolumeFormatError
from src.logger import get_logger
from src.planar import Plane
from src.planar import extract_slice
from src.planar import plane_extent

logger = get_logger(__name__)

VOLUME_MAGIC = b"DMPV"
MASK_MAGIC = b"DMPL"
FORMAT_VERSION = 1
VOLUME_HEADER = struct.Struct("<4sH3I3f")
MASK_HEADER = struct.Struct("<4sH3IH")
MAX_VOXELS = 2**31 - 1

PathLike = Union[str, Path]


@dataclass(frozen=True)
class WindowSpec:
    """Окно Хаунсфилда [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.hi - self.lo > 0:
            raise ValueError(f"window [{self.lo}, {self.hi}] must satisfy lo < hi")


DEFAULT_WINDOWS = (WindowSpec(-125.0, 275.0), WindowSpec(-160.0, 240.0), WindowSpec(-1000.0, 1000.0))


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Volume:
    """
    Трёхмерное поле интенсивностей (HU) формы (W, H, D), индексация [x, y, z].

    Данные неизменяемы после создания; хранятся как float32.
    """

    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        voxels = np.array(self.voxels, dtype=np.float32, copy=True)
        if voxels.ndim != 3 or min(voxels.shape) < 1:
            raise ShapeMismatchError(f"volume must be a non-empty 3D array, got shape {voxels.shape}")
        if not np.all(np.isfinite(voxels)):
            raise ValueError("volume intensities must be finite")
        spacing = tuple(float(np.float32(value)) for value in self.spacing)
        if len(spacing) != 3:
            raise ShapeMismatchError(f"spacing must have 3 components, got {len(spacing)}")
        object.__setattr__(self, "voxels", _readonly(voxels))
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        width, height, depth = self.voxels.shape
        return width, height, depth

    @property
    def array(self) -> np.ndarray:
        return self.voxels

    def equals(self, other: "Volume") -> bool:
        """Побитовое сравнение вокселей и метаданных."""
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.voxels.tobytes() == other.voxels.tobytes()
        )


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Маска органов 0..K формы (W, H, D); 0 означает фон."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        raw = np.asarray(self.labels)
        if raw.ndim != 3 or min(raw.shape) < 1:
            raise ShapeMismatchError(f"label mask must be a non-empty 3D array, got shape {raw.shape}")
        if raw.size and (raw.min() < 0 or raw.max() > self.num_classes):
            raise LabelRangeError(f"label values must be in 0..{self.num_classes}, got max {raw.max()}")
        object.__setattr__(self, "labels", _readonly(np.array(raw, dtype=np.uint8, copy=True)))

    @property
    def dims(self) -> tuple[int, int, int]:
        width, height, depth = self.labels.shape
        return width, height, depth

    @property
    def array(self) -> np.ndarray:
        return self.labels

    def equals(self, other: "LabelMask") -> bool:
        return (
            self.num_classes == other.num_classes
            and self.dims == other.dims
            and self.labels.tobytes() == other.labels.tobytes()
        )


@dataclass(frozen=True, eq=False)
class ChannelizedSlice:
    """Двумерный срез с каналами окон, значения в [0, 1]; channels имеет форму (C, rows, cols)."""

    channels: np.ndarray
    plane: Plane = Plane.AXIAL
    index: int = 0

    @property
    def width(self) -> int:
        return int(self.channels.shape[1])

    @property
    def height(self) -> int:
        return int(self.channels.shape[2])

    @property
    def shape(self) -> tuple[int, int]:
        return self.width, self.height


def window_rescale(raw_value: float, window: WindowSpec) -> float:
    """
    Обрезает значение по окну и линейно переводит lo -> 0.0, hi -> 1.0.

    :param raw_value: интенсивность в HU
    :param window: окно Хаунсфилда
    :return: значение в [0, 1]
    """
    clamped = min(max(float(raw_value), window.lo), window.hi)
    return (clamped - window.lo) / (window.hi - window.lo)


def window_array(values: np.ndarray, window: WindowSpec) -> np.ndarray:
    """Векторная версия window_rescale (float64)."""
    clamped = np.clip(np.asarray(values, dtype=np.float64), window.lo, window.hi)
    return (clamped - window.lo) / (window.hi - window.lo)


def channelize_volume(volume: Volume, windows: Sequence[WindowSpec] = DEFAULT_WINDOWS) -> np.ndarray:
    """
    Применяет все окна ко всему объёму.

    :param volume: объём HU
    :param windows: список окон (по одному каналу на окно)
    :return: массив float32 формы (C, W, H, D)
    """
    if not windows:
        raise ValueError("at least one window is required")
    return np.stack([window_array(volume.voxels, window) for window in windows]).astype(np.float32)


def channelize(
    volume: Volume, windows: Sequence[WindowSpec], plane: Plane, index: int
) -> ChannelizedSlice:
    """
    Вырезает срез index вдоль плоскости plane и переводит его в каналы окон.

    :param volume: объём HU
    :param windows: непустой список окон
    :param plane: плоскость среза
    :param index: номер среза вдоль нормали плоскости
    :return: срез с каналами
    """
    if not windows:
        raise ValueError("at least one window is required")
    extent = plane_extent(volume.dims, plane)
    if not 0 <= index < extent:
        logger.error(f"Ошибка индекса среза: {plane.name} {index} вне [0, {extent})")
        raise SliceIndexError(f"{plane.name.lower()} slice index {index} out of range [0, {extent})")
    raw = extract_slice(volume.voxels, plane, index)
    channels = np.stack([window_array(raw, window) for window in windows]).astype(np.float32)
    return ChannelizedSlice(channels=channels, plane=plane, index=index)


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as ex:
        logger.error(f"Ошибка чтения файла {path}: {ex}")
        raise


def _check_dims(width: int, height: int, depth: int, path: PathLike) -> int:
    count = width * height * depth
    if min(width, height, depth) < 1 or count > MAX_VOXELS:
        logger.error(f"Ошибка размеров в файле {path}: {width}x{height}x{depth}")
        raise DimsOverflowError(f"{path}: invalid dims {width}x{height}x{depth}")
    return count


def _check_header(magic: bytes, expected: bytes, version: int, path: PathLike) -> None:
    if magic != expected:
        logger.error(f"Ошибка сигнатуры файла {path}: {magic!r}")
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {expected!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")


def save_volume(volume: Volume, path: PathLike) -> None:
    """
    Записывает объём в формате DMPV (little-endian, x меняется быстрее всего).

    :param volume: объём
    :param path: путь к файлу
    """
    width, height, depth = volume.dims
    header = VOLUME_HEADER.pack(VOLUME_MAGIC, FORMAT_VERSION, width, height, depth, *volume.spacing)
    payload = volume.voxels.astype("<f4").tobytes(order="F")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + payload)
    logger.info(f"объём {width}x{height}x{depth} сохранён в {path}")


def load_volume(path: PathLike) -> Volume:
    """
    Читает объём из файла DMPV.

    :param path: путь к файлу
    :return: объём
    """
    data = _read_bytes(path)
    if len(data) < VOLUME_HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated ({len(data)} bytes)")
    magic, version, width, height, depth, sx, sy, sz = VOLUME_HEADER.unpack_from(data)
    _check_header(magic, VOLUME_MAGIC, version, path)
    count = _check_dims(width, height, depth, path)
    payload = data[VOLUME_HEADER.size :]
    if len(payload) < 4 * count:
        logger.error(f"Ошибка: усечённые данные в {path}")
        raise TruncatedPayloadError(f"{path}: expected {4 * count} payload bytes, got {len(payload)}")
    if len(payload) > 4 * count:
        raise VolumeFormatError(f"{path}: {len(payload) - 4 * count} trailing bytes")
    voxels = np.frombuffer(payload, dtype="<f4").reshape((width, height, depth), order="F")
    try:
        volume = Volume(voxels=voxels, spacing=(sx, sy, sz))
    except ValueError as ex:
        logger.error(f"Ошибка данных объёма {path}: {ex}")
        raise VolumeFormatError(f"{path}: {ex}") from ex
    logger.info(f"объём {width}x{height}x{depth} прочитан из {path}")
    return volume


def save_mask(mask: LabelMask, path: PathLike) -> None:
    """
    Записывает маску в формате DMPL.

    :param mask: маска органов
    :param path: путь к файлу
    """
    width, height, depth = mask.dims
    header = MASK_HEADER.pack(MASK_MAGIC, FORMAT_VERSION, width, height, depth, mask.num_classes)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + mask.labels.tobytes(order="F"))
    logger.info(f"маска {width}x{height}x{depth} (K={mask.num_classes}) сохранена в {path}")


def load_mask(path: PathLike) -> LabelMask:
    """
    Читает маску из файла DMPL, проверяя диапазон меток.

    :param path: путь к файлу
    :return: маска органов
    """
    data = _read_bytes(path)
    if len(data) < MASK_HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated ({len(data)} bytes)")
    magic, version, width, height, depth, num_classes = MASK_HEADER.unpack_from(data)
    _check_header(magic, MASK_MAGIC, version, path)
    count = _check_dims(width, height, depth, path)
    payload = data[MASK_HEADER.size :]
    if len(payload) < count:
        logger.error(f"Ошибка: усечённые данные в {path}")
        raise TruncatedPayloadError(f"{path}: expected {count} payload bytes, got {len(payload)}")
    if len(payload) > count:
        raise VolumeFormatError(f"{path}: {len(payload) - count} trailing bytes")
    labels = np.frombuffer(payload, dtype=np.uint8).reshape((width, height, depth), order="F")
    if labels.max() > num_classes:
        logger.error(f"Ошибка диапазона меток в {path}: {labels.max()} > {num_classes}")
        raise LabelRangeError(f"{path}: label {labels.max()} exceeds K={num_classes}")
    logger.info(f"маска {width}x{height}x{depth} прочитана из {path}")
    return LabelMask(labels=labels, num_classes=num_classes)
