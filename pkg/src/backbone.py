"""
Эталонный двумерный сегментатор для одной плоскости.

Попиксельный softmax-классификатор над признаками локальных окрестностей
(значения окон в пикселе, средние по квадратам радиусов r, нормированные координаты),
опционально со скрытым слоем tanh. Обучается мини-батчевым SGD по кросс-энтропии
с аналитическим градиентом.
"""

import struct
from dataclasses import dataclass
from dataclasses import replace
from pathlib import Path
from typing import Any
from typing import Callable
from typing import Optional
from typing import Protocol
from typing import Sequence
from typing import Union

import numpy as np
from scipy.ndimage import uniform_filter

from src.exceptions import BadMagicError
from src.exceptions import EmptyTrainingSetError
from src.exceptions import LabelRangeError
from src.exceptions import ShapeMismatchError
from src.exceptions import TrainingDivergedError
from src.exceptions import TruncatedPayloadError
from src.exceptions import UnsupportedVersionError
from src.logger import get_logger
from src.planar import Plane
from src.volume import ChannelizedSlice

logger = get_logger(__name__)

PROB_EPSILON = 1e-12
INIT_SCALE = 0.05
STATE_MAGIC = b"DMPW"
STATE_VERSION = 1
NO_PLANE = 255

Sample = tuple[ChannelizedSlice, np.ndarray]
Params = dict[str, np.ndarray]
FeatureBatch = Sequence[tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class PatchFeatureSpec:
    channels: int = 3
    pooling_radii: tuple[int, ...] = (1, 2, 4)
    include_coords: bool = True

    @property
    def feature_dim(self) -> int:
        return self.channels * (1 + len(self.pooling_radii)) + 2 * int(self.include_coords)

    @classmethod
    def from_config(cls, config: Any) -> "PatchFeatureSpec":
        return cls(
            channels=len(config.windows),
            pooling_radii=tuple(config.pooling_radii),
            include_coords=bool(config.include_coords),
        )


@dataclass(frozen=True, eq=False)
class ProbMap:
    """Вероятности классов для каждого пикселя среза, форма (rows, cols, K + 1)."""

    probs: np.ndarray

    @property
    def width(self) -> int:
        return int(self.probs.shape[0])

    @property
    def height(self) -> int:
        return int(self.probs.shape[1])


class Segmenter(Protocol):
    """Интерфейс модели одной плоскости: всё, что нужно конвейеру слияния и совместного обучения."""

    @property
    def num_classes(self) -> int: ...

    def forward(self, slice_: ChannelizedSlice) -> ProbMap: ...

    def predict_hard(self, slice_: ChannelizedSlice) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True, eq=False)
class SegmenterState:
    """
    Параметры эталонного сегментатора (θ).

    weights: (K + 1) x (hidden_units или feature_dim); при скрытом слое hidden_weights имеет форму
    hidden_units x feature_dim. Параметры хранятся как float32.
    """

    weights: np.ndarray
    bias: np.ndarray
    feature_spec: PatchFeatureSpec
    rng_seed: int = 0
    step_count: int = 0
    hidden_weights: Optional[np.ndarray] = None
    hidden_bias: Optional[np.ndarray] = None
    plane: Optional[Plane] = None
    loss_history: tuple[float, ...] = ()
    velocity: Optional[Params] = None

    @property
    def num_classes(self) -> int:
        return int(self.weights.shape[0]) - 1

    @property
    def hidden_units(self) -> int:
        return 0 if self.hidden_weights is None else int(self.hidden_weights.shape[0])

    def parameters(self) -> Params:
        """Копии параметров во float64."""
        params = {"weights": self.weights.astype(np.float64), "bias": self.bias.astype(np.float64)}
        if self.hidden_weights is not None and self.hidden_bias is not None:
            params["hidden_weights"] = self.hidden_weights.astype(np.float64)
            params["hidden_bias"] = self.hidden_bias.astype(np.float64)
        return params

    def with_parameters(self, params: Params, **changes: Any) -> "SegmenterState":
        return replace(
            self,
            weights=params["weights"].astype(np.float32),
            bias=params["bias"].astype(np.float32),
            hidden_weights=params["hidden_weights"].astype(np.float32) if "hidden_weights" in params else None,
            hidden_bias=params["hidden_bias"].astype(np.float32) if "hidden_bias" in params else None,
            **changes,
        )

    def equals(self, other: "SegmenterState") -> bool:
        """Побитовое сравнение параметров и метаданных (история потерь и момент не учитываются)."""
        mine, theirs = self.parameters(), other.parameters()
        return (
            self.feature_spec == other.feature_spec
            and self.rng_seed == other.rng_seed
            and self.step_count == other.step_count
            and self.plane == other.plane
            and mine.keys() == theirs.keys()
            and all(mine[key].tobytes() == theirs[key].tobytes() for key in mine)
        )

    def forward(self, slice_: ChannelizedSlice) -> ProbMap:
        return forward(self, slice_)

    def predict_hard(self, slice_: ChannelizedSlice) -> tuple[np.ndarray, np.ndarray]:
        return predict_hard(self, slice_)


def init_state(
    num_classes: int,
    spec: PatchFeatureSpec,
    seed: int = 0,
    hidden_units: int = 0,
    plane: Optional[Plane] = None,
) -> SegmenterState:
    """
    Начальное состояние: нули для линейной модели, равномерное ±0.05 (по seed) для модели со скрытым слоем.

    :param num_classes: число органов K (без фона)
    :param spec: описание признаков
    :param seed: seed инициализации
    :param hidden_units: ширина скрытого слоя, при 0 модель линейная
    :param plane: плоскость модели
    :return: состояние сегментатора
    """
    classes = num_classes + 1
    if hidden_units == 0:
        return SegmenterState(
            weights=np.zeros((classes, spec.feature_dim), dtype=np.float32),
            bias=np.zeros(classes, dtype=np.float32),
            feature_spec=spec,
            rng_seed=seed,
            plane=plane,
        )
    rng = np.random.default_rng(seed)
    hidden_weights = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(hidden_units, spec.feature_dim))
    weights = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(classes, hidden_units))
    return SegmenterState(
        weights=weights.astype(np.float32),
        bias=np.zeros(classes, dtype=np.float32),
        feature_spec=spec,
        rng_seed=seed,
        plane=plane,
        hidden_weights=hidden_weights.astype(np.float32),
        hidden_bias=np.zeros(hidden_units, dtype=np.float32),
    )


def feature_map(slice_: ChannelizedSlice, spec: PatchFeatureSpec) -> np.ndarray:
    """
    Признаки всех пикселей среза.

    :param slice_: срез с каналами окон
    :param spec: описание признаков
    :return: массив float64 формы (rows, cols, feature_dim)
    """
    channels = slice_.channels.astype(np.float64)
    if channels.shape[0] != spec.channels:
        raise ShapeMismatchError(f"slice has {channels.shape[0]} channels, feature spec expects {spec.channels}")
    rows, cols = channels.shape[1:]
    parts = [channels]
    for radius in spec.pooling_radii:
        size = 2 * radius + 1
        parts.append(uniform_filter(channels, size=(1, size, size), mode="nearest"))
    if spec.include_coords:
        row_grid, col_grid = np.meshgrid(np.arange(rows) / rows, np.arange(cols) / cols, indexing="ij")
        parts.append(np.stack([row_grid, col_grid]))
    return np.moveaxis(np.concatenate(parts, axis=0), 0, -1)


def featurize(slice_: ChannelizedSlice, spec: PatchFeatureSpec, pixel: tuple[int, int]) -> np.ndarray:
    """
    Признаки одного пикселя; окрестности дополняются повтором краевых значений.

    :param slice_: срез с каналами окон
    :param spec: описание признаков
    :param pixel: (row, col) в пределах среза
    :return: вектор длины feature_dim
    """
    row, col = pixel
    channels = slice_.channels.astype(np.float64)
    rows, cols = channels.shape[1:]
    features = list(channels[:, row, col])
    for radius in spec.pooling_radii:
        row_index = np.clip(np.arange(row - radius, row + radius + 1), 0, rows - 1)
        col_index = np.clip(np.arange(col - radius, col + radius + 1), 0, cols - 1)
        patch = channels[:, row_index][:, :, col_index]
        features.extend(patch.mean(axis=(1, 2)))
    if spec.include_coords:
        features.extend([row / rows, col / cols])
    return np.asarray(features, dtype=np.float64)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _logits(params: Params, features: np.ndarray) -> tuple[np.ndarray, Optional[np.ndarray]]:
    if "hidden_weights" in params:
        hidden = np.tanh(features @ params["hidden_weights"].T + params["hidden_bias"])
        return hidden @ params["weights"].T + params["bias"], hidden
    return features @ params["weights"].T + params["bias"], None


def objective(params: Params, batch: FeatureBatch) -> tuple[float, Params]:
    """
    Средняя по батчу кросс-энтропия и её аналитический градиент (float64).

    Потери элемента батча равны среднему по его пикселям; градиент по логитам пикселя i
    равен (p_i - onehot(y_i)) / n_pixels, затем усредняется по батчу.

    :param params: параметры модели
    :param batch: пары (признаки (n, F), метки (n,))
    :return: (потери, градиенты с теми же ключами, что и params)
    """
    grads = {key: np.zeros_like(value, dtype=np.float64) for key, value in params.items()}
    total = 0.0
    batch_size = len(batch)
    for features, labels in batch:
        count = labels.shape[0]
        logits, hidden = _logits(params, features)
        probs = _softmax(logits)
        picked = probs[np.arange(count), labels]
        total += float(-np.log(np.maximum(picked, PROB_EPSILON)).mean())
        dlogits = probs.copy()
        dlogits[np.arange(count), labels] -= 1.0
        dlogits /= count * batch_size
        grads["bias"] += dlogits.sum(axis=0)
        if hidden is None:
            grads["weights"] += dlogits.T @ features
        else:
            grads["weights"] += dlogits.T @ hidden
            dpre = (dlogits @ params["weights"]) * (1.0 - hidden**2)
            grads["hidden_weights"] += dpre.T @ features
            grads["hidden_bias"] += dpre.sum(axis=0)
    return total / batch_size, grads


def _check_labels(state: SegmenterState, slice_: ChannelizedSlice, label_slice: np.ndarray) -> np.ndarray:
    labels = np.asarray(label_slice)
    if labels.shape != slice_.shape:
        logger.error(f"Ошибка размеров: срез {slice_.shape}, метки {labels.shape}")
        raise ShapeMismatchError(f"label slice shape {labels.shape} does not match slice shape {slice_.shape}")
    if labels.size and labels.max() > state.num_classes:
        raise LabelRangeError(f"label {labels.max()} exceeds K={state.num_classes}")
    return labels.astype(np.int64)


def _slice_batch(state: SegmenterState, samples: Sequence[Sample]) -> list[tuple[np.ndarray, np.ndarray]]:
    batch = []
    for slice_, label_slice in samples:
        labels = _check_labels(state, slice_, label_slice)
        features = feature_map(slice_, state.feature_spec).reshape(-1, state.feature_spec.feature_dim)
        batch.append((features, labels.reshape(-1)))
    return batch


def forward(state: SegmenterState, slice_: ChannelizedSlice) -> ProbMap:
    """
    Попиксельный softmax(W · признаки + b).

    :param state: состояние сегментатора
    :param slice_: срез с каналами окон
    :return: карта вероятностей, сумма по классам равна 1
    """
    features = feature_map(slice_, state.feature_spec)
    logits, _ = _logits(state.parameters(), features)
    return ProbMap(probs=_softmax(logits))


def loss(state: SegmenterState, slice_: ChannelizedSlice, label_slice: np.ndarray) -> float:
    """
    Кросс-энтропия среза: -(1 / (W·H)) Σ_i log p_{i, y_i}, вероятности ограничены снизу 1e-12.

    :param state: состояние сегментатора
    :param slice_: срез с каналами окон
    :param label_slice: метки пикселей 0..K той же формы
    :return: неотрицательное значение потерь
    """
    value, _ = objective(state.parameters(), _slice_batch(state, [(slice_, label_slice)]))
    return value


def _apply_update(
    state: SegmenterState, grads: Params, value: float, learning_rate: float, momentum: float
) -> SegmenterState:
    step = state.step_count + 1
    if not np.isfinite(value) or not all(np.all(np.isfinite(grad)) for grad in grads.values()):
        logger.error(f"Ошибка обучения: неконечный градиент на шаге {step}, потери {value}")
        raise TrainingDivergedError(step, value)
    params = state.parameters()
    velocity = state.velocity or {key: np.zeros_like(grad) for key, grad in grads.items()}
    velocity = {key: momentum * velocity[key] + grads[key] for key in grads}
    updated = {key: params[key] - learning_rate * velocity[key] for key in params}
    return state.with_parameters(updated, step_count=step, velocity=velocity)


def sgd_step(
    state: SegmenterState, mini_batch: Sequence[Sample], learning_rate: float, momentum: float = 0.0
) -> SegmenterState:
    """
    Один шаг SGD по средней кросс-энтропии мини-батча срезов.

    :param state: текущее состояние
    :param mini_batch: пары (срез, метки)
    :param learning_rate: шаг обучения (> 0; 0 оставляет параметры без изменений)
    :param momentum: коэффициент момента (0: обычный SGD)
    :return: новое состояние
    """
    if learning_rate < 0:
        raise ValueError("learning_rate must be >= 0")
    value, grads = objective(state.parameters(), _slice_batch(state, mini_batch))
    return _apply_update(state, grads, value, learning_rate, momentum)


def _pixel_batch(
    state: SegmenterState, samples: Sequence[Sample], indices: np.ndarray, batch_pixels: int, rng: np.random.Generator
) -> list[tuple[np.ndarray, np.ndarray]]:
    batch = []
    for index in indices:
        slice_, label_slice = samples[int(index)]
        features = feature_map(slice_, state.feature_spec).reshape(-1, state.feature_spec.feature_dim)
        labels = np.asarray(label_slice, dtype=np.int64).reshape(-1)
        if 0 < batch_pixels < labels.shape[0]:
            chosen = rng.choice(labels.shape[0], size=batch_pixels, replace=False)
            features, labels = features[chosen], labels[chosen]
        batch.append((features, labels))
    return batch


def train(
    samples: Sequence[Sample],
    config: Any,
    seed: int,
    iterations: int,
    plane: Optional[Plane] = None,
    init: Optional[SegmenterState] = None,
) -> SegmenterState:
    """
    Обучает сегментатор одной плоскости: перемешивание срезов и выбор пикселей по seed.

    :param samples: обучающие пары (срез, метки) одной плоскости
    :param config: ExperimentConfig (learning_rate, momentum, batch_slices, batch_pixels, hidden_units, ...)
    :param seed: seed обучения
    :param iterations: число шагов SGD (0: вернуть начальное состояние)
    :param plane: плоскость модели
    :param init: состояние для тёплого старта
    :return: обученное состояние; при одинаковых seed, config и данных результат побитово совпадает
    """
    if not samples:
        logger.error("Ошибка обучения: пустой обучающий набор")
        raise EmptyTrainingSetError(f"no training slices for plane {plane.tag if plane is not None else '-'}")
    spec = PatchFeatureSpec.from_config(config)
    if init is not None:
        state = replace(init, rng_seed=seed, plane=plane, loss_history=(), velocity=None)
    else:
        state = init_state(config.num_classes, spec, seed=seed, hidden_units=config.hidden_units, plane=plane)
    for slice_, label_slice in samples:
        _check_labels(state, slice_, label_slice)
    logger.info(f"обучение {plane.tag if plane is not None else '-'}: {len(samples)} срезов, {iterations} шагов")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    cursor = 0
    history = []
    for _ in range(iterations):
        if cursor + config.batch_slices > len(order):
            order = rng.permutation(len(samples))
            cursor = 0
        indices = order[cursor : cursor + config.batch_slices]
        cursor += config.batch_slices
        batch = _pixel_batch(state, samples, indices, config.batch_pixels, rng)
        value, grads = objective(state.parameters(), batch)
        state = _apply_update(state, grads, value, config.learning_rate, config.momentum)
        history.append(value)
    if history:
        logger.info(f"обучение завершено: потери {history[0]:.4f} -> {history[-1]:.4f}")
    return replace(state, loss_history=tuple(history), velocity=None)


def predict_hard(state: SegmenterState, slice_: ChannelizedSlice) -> tuple[np.ndarray, np.ndarray]:
    """
    Жёсткая оценка: argmax по классам (при равенстве берётся меньший индекс) и максимальная вероятность.

    :param state: состояние сегментатора
    :param slice_: срез с каналами окон
    :return: (метки uint8, уверенность float32) формы среза
    """
    return hard_from_probs(forward(state, slice_).probs)


def hard_from_probs(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels = np.argmax(probs, axis=-1).astype(np.uint8)
    confidence = np.max(probs, axis=-1).astype(np.float32)
    return labels, confidence


Trainer = Callable[[Sequence[Sample], Any, int, int, Optional[Plane], Optional[Any]], Segmenter]


def _plane_code(plane: Optional[Plane]) -> int:
    return NO_PLANE if plane is None else int(plane)


def save_state(state: SegmenterState, path: Union[str, Path]) -> None:
    """
    Сохраняет состояние в формате DMPW (little-endian, веса float32 построчно).

    :param state: состояние сегментатора
    :param path: путь к файлу
    """
    spec = state.feature_spec
    plane_code = _plane_code(state.plane)
    header = struct.pack("<4sHBHB", STATE_MAGIC, STATE_VERSION, plane_code, state.num_classes, spec.channels)
    header += struct.pack(f"<B{len(spec.pooling_radii)}B", len(spec.pooling_radii), *spec.pooling_radii)
    header += struct.pack("<BHQQ", int(spec.include_coords), state.hidden_units, state.rng_seed, state.step_count)
    arrays = [state.weights, state.bias]
    if state.hidden_weights is not None and state.hidden_bias is not None:
        arrays += [state.hidden_weights, state.hidden_bias]
    payload = b"".join(np.ascontiguousarray(array, dtype="<f4").tobytes() for array in arrays)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + payload)
    logger.info(f"состояние модели сохранено в {path}")


class _Reader:
    def __init__(self, data: bytes, path: Union[str, Path]) -> None:
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise TruncatedPayloadError(f"{self.path}: truncated at byte {self.offset}")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def array(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape))
        if self.offset + 4 * count > len(self.data):
            raise TruncatedPayloadError(f"{self.path}: truncated at byte {self.offset}")
        values = np.frombuffer(self.data, dtype="<f4", count=count, offset=self.offset)
        self.offset += 4 * count
        return values.reshape(shape).astype(np.float32)


def load_state(path: Union[str, Path]) -> SegmenterState:
    """
    Читает состояние из файла DMPW.

    :param path: путь к файлу
    :return: состояние сегментатора
    """
    try:
        reader = _Reader(Path(path).read_bytes(), path)
    except OSError as ex:
        logger.error(f"Ошибка чтения модели {path}: {ex}")
        raise
    magic, version, plane_code, num_classes, channels = reader.take("<4sHBHB")
    if magic != STATE_MAGIC:
        logger.error(f"Ошибка сигнатуры модели {path}: {magic!r}")
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {STATE_MAGIC!r}")
    if version != STATE_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    (radius_count,) = reader.take("<B")
    radii = reader.take(f"<{radius_count}B")
    include_coords, hidden_units, rng_seed, step_count = reader.take("<BHQQ")
    spec = PatchFeatureSpec(channels=channels, pooling_radii=tuple(radii), include_coords=bool(include_coords))
    classes = num_classes + 1
    weights = reader.array((classes, hidden_units or spec.feature_dim))
    bias = reader.array((classes,))
    hidden_weights = hidden_bias = None
    if hidden_units:
        hidden_weights = reader.array((hidden_units, spec.feature_dim))
        hidden_bias = reader.array((hidden_units,))
    if reader.offset != len(reader.data):
        raise TruncatedPayloadError(f"{path}: {len(reader.data) - reader.offset} trailing bytes")
    logger.info(f"состояние модели прочитано из {path}")
    return SegmenterState(
        weights=weights,
        bias=bias,
        feature_spec=spec,
        rng_seed=rng_seed,
        step_count=step_count,
        hidden_weights=hidden_weights,
        hidden_bias=hidden_bias,
        plane=None if plane_code == NO_PLANE else Plane(plane_code),
    )
