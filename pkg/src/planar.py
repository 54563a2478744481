from dataclasses import dataclass
from enum import IntEnum
from typing import Any
from typing import Sequence

import numpy as np

from src.exceptions import ReconstructionError
from src.logger import get_logger

logger = get_logger(__name__)


class Plane(IntEnum):
    """
    Плоскости среза. Значение равно оси нормали (x, y, z) и задаёт приоритет:
    сагиттальная < корональная < аксиальная.
    """

    SAGITTAL = 0
    CORONAL = 1
    AXIAL = 2

    @property
    def tag(self) -> str:
        return self.name.lower()

    @classmethod
    def from_tag(cls, tag: str) -> "Plane":
        return cls[tag.upper()]


PLANES = (Plane.SAGITTAL, Plane.CORONAL, Plane.AXIAL)


@dataclass(frozen=True, eq=False)
class SliceStack:
    """Стопка двумерных срезов вдоль одной плоскости; каждый срез является отдельной копией."""

    plane: Plane
    slices: tuple[np.ndarray, ...]

    @property
    def count(self) -> int:
        return len(self.slices)

    @property
    def slice_shape(self) -> tuple[int, ...]:
        return tuple(self.slices[0].shape) if self.slices else ()

    def __len__(self) -> int:
        return len(self.slices)

    def __getitem__(self, index: int) -> np.ndarray:
        return self.slices[index]


def plane_extent(dims: Sequence[int], plane: Plane) -> int:
    """Число срезов вдоль нормали плоскости."""
    return int(dims[plane.value])


def slice_shape(dims: Sequence[int], plane: Plane) -> tuple[int, int]:
    """
    Размеры среза: аксиальный (W, H), корональный (W, D), сагиттальный (H, D).

    :param dims: размеры объёма (W, H, D)
    :param plane: плоскость
    :return: (rows, cols) среза
    """
    rows, cols = [int(size) for axis, size in enumerate(dims) if axis != plane.value]
    return rows, cols


def _as_array(field: Any) -> np.ndarray:
    return field.array if hasattr(field, "array") else np.asarray(field)


def extract_slice(array: np.ndarray, plane: Plane, index: int) -> np.ndarray:
    """
    Копия среза index вдоль плоскости; ведущие оси (например, каналы) сохраняются.

    :param array: массив формы (..., W, H, D)
    :param plane: плоскость
    :param index: номер среза
    :return: массив формы (..., rows, cols)
    """
    axis = array.ndim - 3 + plane.value
    return np.take(array, index, axis=axis)


def slice_field(field: Any, plane: Plane) -> SliceStack:
    """
    Разрезает объём или маску на стопку срезов вдоль плоскости.

    :param field: Volume, LabelMask или массив (..., W, H, D)
    :param plane: плоскость
    :return: стопка срезов (копии, исходные данные не меняются)
    """
    array = _as_array(field)
    extent = array.shape[array.ndim - 3 + plane.value]
    return SliceStack(plane=plane, slices=tuple(extract_slice(array, plane, index) for index in range(extent)))


def stack_slices(stack: SliceStack, target_dims: Sequence[int]) -> np.ndarray:
    """
    Собирает трёхмерное поле из стопки срезов.

    :param stack: стопка срезов одной плоскости
    :param target_dims: ожидаемые размеры (W, H, D)
    :return: массив (..., W, H, D); stack_slices(slice_field(X, p), dims(X)) совпадает с X побитово
    """
    plane = stack.plane
    expected_count = plane_extent(target_dims, plane)
    expected_shape = slice_shape(target_dims, plane)
    if stack.count != expected_count:
        logger.error(f"Ошибка сборки {plane.tag}: {stack.count} срезов вместо {expected_count}")
        raise ReconstructionError(
            f"{plane.tag} stack has {stack.count} slices, expected {expected_count} for dims {tuple(target_dims)}"
        )
    for index, item in enumerate(stack.slices):
        if tuple(item.shape[-2:]) != expected_shape:
            logger.error(f"Ошибка сборки {plane.tag}: срез {index} формы {item.shape}")
            raise ReconstructionError(
                f"{plane.tag} slice {index} has shape {tuple(item.shape[-2:])}, expected {expected_shape} "
                f"for dims {tuple(target_dims)}"
            )
    leading = stack.slices[0].ndim - 2
    return np.stack(stack.slices, axis=leading + plane.value)
