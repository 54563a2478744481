from dataclasses import dataclass
from multiprocessing.pool import ThreadPool
from typing import Mapping
from typing import Optional
from typing import Sequence

import numpy as np

from src.backbone import Segmenter
from src.exceptions import FusionError
from src.exceptions import ShapeMismatchError
from src.logger import get_logger
from src.planar import PLANES
from src.planar import Plane
from src.planar import SliceStack
from src.planar import extract_slice
from src.planar import plane_extent
from src.planar import stack_slices
from src.volume import ChannelizedSlice
from src.volume import LabelMask
from src.volume import Volume
from src.volume import WindowSpec
from src.volume import channelize_volume

logger = get_logger(__name__)

# Байт происхождения: ветвь * 4 + плоскость. При согласии указывается согласная плоскость с наивысшим приоритетом.
AGREEMENT = 0
FALLBACK = 4
PROVENANCE_CLASSES = FALLBACK + len(PLANES) - 1


@dataclass(frozen=True, eq=False)
class PlanePrediction:
    """Жёсткие метки и уверенность одной плоскости, собранные обратно в объём (W, H, D)."""

    plane: Plane
    label_field: np.ndarray
    confidence_field: np.ndarray


@dataclass(frozen=True, eq=False)
class FusedMask:
    labels: LabelMask
    provenance: Optional[np.ndarray] = None

    def branch_counts(self) -> dict[str, int]:
        return branch_counts(self.provenance) if self.provenance is not None else {}

    def provenance_mask(self) -> LabelMask:
        if self.provenance is None:
            raise FusionError("provenance was not recorded")
        return LabelMask(labels=self.provenance, num_classes=PROVENANCE_CLASSES)


def fuse_voxel(labels: Sequence[int], confidences: Sequence[float]) -> tuple[int, int]:
    """
    Решение для одного вокселя: если две плоскости согласны, берётся их метка,
    иначе метка плоскости с максимальной уверенностью (при равенстве S > C > A).

    :param labels: (y_S, y_C, y_A)
    :param confidences: (c_S, c_C, c_A)
    :return: (метка, код происхождения)
    """
    y_s, y_c, y_a = (int(label) for label in labels)
    if y_s == y_c or y_s == y_a:
        return y_s, AGREEMENT + Plane.SAGITTAL
    if y_c == y_a:
        return y_c, AGREEMENT + Plane.CORONAL
    winner = 0
    for index in (1, 2):
        if confidences[index] > confidences[winner]:
            winner = index
    return (y_s, y_c, y_a)[winner], FALLBACK + winner


def fuse_arrays(labels: np.ndarray, confidences: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Векторная версия fuse_voxel по первой оси (плоскости в порядке S, C, A).

    :param labels: массив (3, ...) меток
    :param confidences: массив (3, ...) уверенностей
    :return: (метки uint8, коды происхождения uint8)
    """
    y_s, y_c, y_a = labels[0], labels[1], labels[2]
    agree_s = (y_s == y_c) | (y_s == y_a)
    agree_c = ~agree_s & (y_c == y_a)
    winner = np.argmax(confidences, axis=0)
    fallback = np.take_along_axis(labels, winner[np.newaxis], axis=0)[0]
    fused = np.where(agree_s, y_s, np.where(agree_c, y_c, fallback)).astype(np.uint8)
    provenance = np.where(
        agree_s, AGREEMENT + Plane.SAGITTAL, np.where(agree_c, AGREEMENT + Plane.CORONAL, FALLBACK + winner)
    ).astype(np.uint8)
    return fused, provenance


def branch_counts(provenance: np.ndarray) -> dict[str, int]:
    """Число вокселей по ветвям правила слияния."""
    counts = np.bincount(provenance.reshape(-1), minlength=PROVENANCE_CLASSES + 1)
    agreement = int(counts[AGREEMENT : AGREEMENT + len(PLANES)].sum())
    result = {"agreement": agreement, "fallback": int(counts.sum()) - agreement}
    for plane in PLANES:
        result[f"fallback_{plane.tag}"] = int(counts[FALLBACK + plane])
    return result


def _ordered(predictions: Sequence[PlanePrediction]) -> list[PlanePrediction]:
    by_plane = {prediction.plane: prediction for prediction in predictions}
    if len(predictions) != len(PLANES) or set(by_plane) != set(PLANES):
        raise FusionError(f"expected one prediction per plane, got {[p.plane.tag for p in predictions]}")
    reference = by_plane[Plane.SAGITTAL].label_field.shape
    for plane in PLANES:
        prediction = by_plane[plane]
        if prediction.label_field.shape != reference or prediction.confidence_field.shape != reference:
            logger.error(f"Ошибка размеров прогноза плоскости {plane.tag}: {prediction.label_field.shape}")
            raise ShapeMismatchError(
                f"{plane.tag} prediction has dims {prediction.label_field.shape}, expected {reference}"
            )
    return [by_plane[plane] for plane in PLANES]


def fuse_volume(
    predictions: Sequence[PlanePrediction], num_classes: int, provenance: bool = True, workers: int = 1
) -> FusedMask:
    """
    Слияние трёх плоскостных прогнозов по всем вокселям.

    Объём делится на блоки по оси x для workers потоков; результат не зависит от разбиения.

    :param predictions: по одному прогнозу на плоскость
    :param num_classes: число органов K
    :param provenance: сохранять ли коды происхождения
    :param workers: число потоков
    :return: итоговая маска
    """
    ordered = _ordered(predictions)
    labels = np.stack([prediction.label_field for prediction in ordered])
    confidences = np.stack([prediction.confidence_field for prediction in ordered])
    chunks = np.array_split(np.arange(labels.shape[1]), max(1, min(workers, labels.shape[1])))
    if workers > 1:
        with ThreadPool(workers) as pool:
            parts = pool.map(lambda rows: fuse_arrays(labels[:, rows], confidences[:, rows]), chunks)
    else:
        parts = [fuse_arrays(labels[:, rows], confidences[:, rows]) for rows in chunks]
    fused = np.concatenate([part[0] for part in parts], axis=0)
    codes = np.concatenate([part[1] for part in parts], axis=0)
    counts = branch_counts(codes)
    logger.info(f"слияние плоскостей: {counts}")
    return FusedMask(labels=LabelMask(labels=fused, num_classes=num_classes), provenance=codes if provenance else None)


def predict_plane(model: Segmenter, channels: np.ndarray, plane: Plane) -> PlanePrediction:
    """
    Прогноз одной плоскости по всем срезам с последующей сборкой в объём.

    :param model: модель плоскости
    :param channels: результат channelize_volume, форма (C, W, H, D)
    :param plane: плоскость
    :return: прогноз плоскости
    """
    dims = channels.shape[1:]
    labels, confidences = [], []
    for index in range(plane_extent(dims, plane)):
        slice_ = ChannelizedSlice(channels=extract_slice(channels, plane, index), plane=plane, index=index)
        label_slice, confidence_slice = model.predict_hard(slice_)
        labels.append(np.asarray(label_slice, dtype=np.uint8))
        confidences.append(np.asarray(confidence_slice, dtype=np.float32))
    return PlanePrediction(
        plane=plane,
        label_field=stack_slices(SliceStack(plane, tuple(labels)), dims),
        confidence_field=stack_slices(SliceStack(plane, tuple(confidences)), dims),
    )


def predict_volume(
    models: Mapping[Plane, Segmenter],
    volume: Volume,
    windows: Sequence[WindowSpec],
    provenance: bool = True,
    workers: int = 1,
) -> tuple[FusedMask, list[PlanePrediction]]:
    """
    Многоплоскостной вывод: окна -> срезы каждой плоскости -> сборка -> слияние.

    :param models: модели сагиттальной, корональной и аксиальной плоскостей
    :param volume: объём HU
    :param windows: окна Хаунсфилда
    :param provenance: сохранять ли коды происхождения
    :param workers: число потоков для слияния
    :return: (итоговая маска, прогнозы плоскостей)
    """
    channels = channelize_volume(volume, windows)
    return predict_channels(models, channels, provenance=provenance, workers=workers)


def predict_channels(
    models: Mapping[Plane, Segmenter], channels: np.ndarray, provenance: bool = True, workers: int = 1
) -> tuple[FusedMask, list[PlanePrediction]]:
    """То же, что predict_volume, для объёма, уже переведённого в каналы (C, W, H, D)."""
    predictions = [predict_plane(models[plane], channels, plane) for plane in PLANES]
    num_classes = models[Plane.SAGITTAL].num_classes
    fused = fuse_volume(predictions, num_classes, provenance=provenance, workers=workers)
    return fused, predictions
