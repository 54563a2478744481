import json
import time
from collections.abc import Mapping
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from multiprocessing.pool import ThreadPool
from pathlib import Path
from typing import Any
from typing import Callable
from typing import Iterator
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import TypeVar
from typing import Union

import numpy as np

from src.backbone import PROB_EPSILON
from src.backbone import ProbMap
from src.backbone import Sample
from src.backbone import Segmenter
from src.backbone import SegmenterState
from src.backbone import Trainer
from src.backbone import hard_from_probs
from src.backbone import load_state
from src.backbone import save_state
from src.backbone import train
from src.config import ExperimentConfig
from src.config import derive_seed
from src.exceptions import CheckpointError
from src.exceptions import ClassCountMismatchError
from src.exceptions import EmptyTrainingSetError
from src.exceptions import ShapeMismatchError
from src.exceptions import TrainingDivergedError
from src.fusion import FusedMask
from src.fusion import PlanePrediction
from src.fusion import fuse_volume
from src.fusion import predict_channels
from src.fusion import predict_plane
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
from src.volume import channelize_volume
from src.volume import save_mask

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")
LabeledPair = tuple[np.ndarray, np.ndarray]


@dataclass
class Dataset:
    """Размеченные S_L, неразмеченные S_U и тестовые объёмы."""

    labeled: list[tuple[Volume, LabelMask]]
    unlabeled: list[Volume]
    test: list[tuple[Volume, LabelMask]] = field(default_factory=list)
    labeled_ids: list[str] = field(default_factory=list)
    unlabeled_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)
    hidden_masks: list[LabelMask] = field(default_factory=list)
    seeds: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.labeled_ids = self.labeled_ids or [f"labeled_{i:03d}" for i in range(len(self.labeled))]
        self.unlabeled_ids = self.unlabeled_ids or [f"unlabeled_{i:03d}" for i in range(len(self.unlabeled))]
        self.test_ids = self.test_ids or [f"test_{i:03d}" for i in range(len(self.test))]
        classes = {mask.num_classes for _, mask in self.labeled + self.test}
        if len(classes) > 1:
            logger.error(f"Ошибка: разное число классов в масках {sorted(classes)}")
            raise ClassCountMismatchError(f"masks disagree on K: {sorted(classes)}")
        for volume, mask in self.labeled + self.test:
            if volume.dims != mask.dims:
                raise ShapeMismatchError(f"mask dims {mask.dims} do not match volume dims {volume.dims}")

    @property
    def num_classes(self) -> int:
        masks = [mask for _, mask in self.labeled + self.test]
        return masks[0].num_classes if masks else 0


@dataclass(frozen=True, eq=False)
class PlaneModelBundle(Mapping):
    """Три независимо обученные модели M^S, M^C, M^A."""

    models: dict[Plane, Segmenter]

    def __post_init__(self) -> None:
        missing = [plane.tag for plane in PLANES if plane not in self.models]
        if missing:
            raise CheckpointError(f"bundle is missing planes: {', '.join(missing)}")
        classes = {self.models[plane].num_classes for plane in PLANES}
        if len(classes) != 1:
            raise ClassCountMismatchError(f"plane models disagree on K: {sorted(classes)}")

    def __getitem__(self, plane: Plane) -> Segmenter:
        return self.models[plane]

    def __iter__(self) -> Iterator[Plane]:
        return iter(PLANES)

    def __len__(self) -> int:
        return len(PLANES)

    @property
    def num_classes(self) -> int:
        return self.models[Plane.SAGITTAL].num_classes


@dataclass
class RunEvent:
    index: int
    round: int
    plane: Optional[str]
    action: str
    loss_first: Optional[float] = None
    loss_last: Optional[float] = None
    loss_min: Optional[float] = None
    steps: int = 0
    detail: dict = field(default_factory=dict)
    wall_time: float = 0.0


@dataclass
class RunLog:
    """Журнал запуска: события только добавляются, порядок повторяет алгоритм."""

    events: list[RunEvent] = field(default_factory=list)

    def append(
        self,
        round_: int,
        plane: Optional[Plane],
        action: str,
        losses: Sequence[float] = (),
        steps: int = 0,
        detail: Optional[dict] = None,
        wall_time: float = 0.0,
    ) -> RunEvent:
        event = RunEvent(
            index=len(self.events),
            round=round_,
            plane=plane.tag if plane is not None else None,
            action=action,
            loss_first=float(losses[0]) if len(losses) else None,
            loss_last=float(losses[-1]) if len(losses) else None,
            loss_min=float(min(losses)) if len(losses) else None,
            steps=steps,
            detail=detail or {},
            wall_time=wall_time,
        )
        self.events.append(event)
        logger.info(f"событие: раунд {round_}, {event.plane or '-'}, {action}")
        return event

    def count(self, action: str, plane: Optional[Plane] = None) -> int:
        return sum(
            1 for event in self.events if event.action == action and (plane is None or event.plane == plane.tag)
        )

    def to_json_lines(self) -> str:
        return "".join(json.dumps(asdict(event), ensure_ascii=False) + "\n" for event in self.events)

    def write(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json_lines(), encoding="utf-8")


class SliceSelection(NamedTuple):
    indices: list[int]
    truncated: bool


class _Checkpointer:
    """Запись контрольных точек: round_<t>/model_<plane>.dmpw, round_<t>/pseudo/<case>.dmpl, final/."""

    def __init__(self, out_dir: Optional[Union[str, Path]]) -> None:
        self.out_dir = Path(out_dir) if out_dir else None

    def models(self, directory: str, bundle: PlaneModelBundle) -> None:
        if self.out_dir is not None:
            save_bundle(bundle, self.out_dir / directory)

    def pseudo(self, round_: int, case_id: str, fused: FusedMask, plane: Optional[Plane] = None) -> None:
        if self.out_dir is None:
            return
        suffix = f"_{plane.tag}" if plane is not None else ""
        pseudo_dir = self.out_dir / f"round_{round_}" / "pseudo"
        save_mask(fused.labels, pseudo_dir / f"{case_id}{suffix}.dmpl")
        if fused.provenance is not None:
            save_mask(fused.provenance_mask(), pseudo_dir / f"{case_id}.prov.dmpl")

    def run_log(self, run_log: RunLog) -> None:
        if self.out_dir is not None:
            run_log.write(self.out_dir / "runlog.json-lines")


def save_bundle(bundle: PlaneModelBundle, directory: Union[str, Path]) -> None:
    """
    Сохраняет три модели как model_<plane>.dmpw.

    :param bundle: модели плоскостей
    :param directory: каталог
    """
    for plane in PLANES:
        model = bundle[plane]
        if not isinstance(model, SegmenterState):
            raise CheckpointError(f"{plane.tag} model of type {type(model).__name__} cannot be saved")
        save_state(model, Path(directory) / f"model_{plane.tag}.dmpw")


def load_bundle(directory: Union[str, Path]) -> PlaneModelBundle:
    """
    Загружает три модели из каталога.

    :param directory: каталог с model_<plane>.dmpw
    :return: модели плоскостей
    """
    models = {}
    for plane in PLANES:
        path = Path(directory) / f"model_{plane.tag}.dmpw"
        if not path.is_file():
            logger.error(f"Ошибка: нет файла модели {path}")
            raise CheckpointError(f"missing model file {path}")
        models[plane] = load_state(path)
    return PlaneModelBundle(models)


def _map(func: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    if workers > 1 and len(items) > 1:
        with ThreadPool(min(workers, len(items))) as pool:
            return pool.map(func, items)
    return [func(item) for item in items]


def plane_samples(pairs: Sequence[LabeledPair], plane: Plane) -> list[Sample]:
    """
    Двумерная обучающая выборка одной плоскости из пар (каналы (C, W, H, D), метки (W, H, D)).

    :param pairs: объёмы в каналах и их маски
    :param plane: плоскость
    :return: пары (срез, метки среза)
    """
    samples = []
    for channels, labels in pairs:
        for index in range(plane_extent(labels.shape, plane)):
            slice_ = ChannelizedSlice(channels=extract_slice(channels, plane, index), plane=plane, index=index)
            samples.append((slice_, extract_slice(labels, plane, index)))
    return samples


def _train_planes(
    samples: dict[Plane, list[Sample]],
    config: ExperimentConfig,
    trainer: Trainer,
    round_: int,
    iterations: int,
    run_log: RunLog,
    previous: Optional[PlaneModelBundle] = None,
    workers: int = 1,
) -> PlaneModelBundle:
    def job(plane: Plane) -> tuple[Segmenter, float]:
        seed = derive_seed(config.seed, "train", round_, plane.tag)
        init = previous[plane] if (config.warm_start and previous is not None) else None
        start = time.perf_counter()
        model = trainer(samples[plane], config, seed, iterations, plane, init)
        return model, time.perf_counter() - start

    results = _map(job, list(PLANES), workers)
    for plane, (model, elapsed) in zip(PLANES, results):
        history = getattr(model, "loss_history", ())
        detail = {"slices": len(samples[plane])}
        run_log.append(round_, plane, "train", history, steps=iterations, detail=detail, wall_time=elapsed)
    return PlaneModelBundle({plane: model for plane, (model, _) in zip(PLANES, results)})


def _channelize_all(volumes: Sequence[Volume], config: ExperimentConfig, workers: int) -> list[np.ndarray]:
    windows = config.window_specs()
    return _map(lambda volume: channelize_volume(volume, windows), list(volumes), workers)


def _labeled_pairs(dataset: Dataset, config: ExperimentConfig, workers: int) -> list[LabeledPair]:
    if not dataset.labeled:
        logger.error("Ошибка: пустой размеченный набор")
        raise EmptyTrainingSetError("labeled set S_L is empty")
    if dataset.num_classes != config.num_classes:
        raise ClassCountMismatchError(f"dataset has K={dataset.num_classes}, config has K={config.num_classes}")
    channels = _channelize_all([volume for volume, _ in dataset.labeled], config, workers)
    return [(item, mask.labels) for item, (_, mask) in zip(channels, dataset.labeled)]


def _workers(config: ExperimentConfig, workers: Optional[int]) -> int:
    return workers if workers is not None else config.workers


def train_teacher(
    dataset: Dataset,
    config: ExperimentConfig,
    trainer: Trainer = train,
    run_log: Optional[RunLog] = None,
    workers: Optional[int] = None,
) -> PlaneModelBundle:
    """
    Модель-учитель: три модели плоскостей, обученные только на S_L.

    :param dataset: набор данных
    :param config: конфигурация эксперимента
    :param trainer: функция обучения модели одной плоскости
    :param run_log: журнал запуска
    :param workers: число потоков
    :return: модели плоскостей
    """
    workers = _workers(config, workers)
    run_log = run_log if run_log is not None else RunLog()
    pairs = _labeled_pairs(dataset, config, workers)
    samples = {plane: plane_samples(pairs, plane) for plane in PLANES}
    return _train_planes(samples, config, trainer, 1, config.teacher_iters, run_log, workers=workers)


def _pseudo_label_channels(
    bundle: PlaneModelBundle, channels: Sequence[np.ndarray], config: ExperimentConfig, workers: int
) -> list[FusedMask]:
    return _map(lambda item: predict_channels(bundle, item, provenance=config.provenance)[0], list(channels), workers)


def generate_pseudo_labels(
    bundle: PlaneModelBundle,
    unlabeled: Sequence[Volume],
    config: ExperimentConfig,
    workers: Optional[int] = None,
) -> list[tuple[Volume, LabelMask]]:
    """
    Псевдо-разметка S_U многоплоскостным слиянием.

    :param bundle: обученные модели плоскостей
    :param unlabeled: неразмеченные объёмы
    :param config: конфигурация эксперимента
    :param workers: число потоков
    :return: пары (объём, псевдо-маска)
    """
    workers = _workers(config, workers)
    channels = _channelize_all(unlabeled, config, workers)
    fused = _pseudo_label_channels(bundle, channels, config, workers)
    logger.info(f"получены псевдо-метки для {len(fused)} объёмов")
    return [(volume, mask.labels) for volume, mask in zip(unlabeled, fused)]


def _fuse_event(run_log: RunLog, round_: int, fused: Sequence[FusedMask], elapsed: float) -> None:
    totals: dict[str, int] = {}
    for mask in fused:
        for key, value in mask.branch_counts().items():
            totals[key] = totals.get(key, 0) + value
    voxels = sum(totals.get(key, 0) for key in ("agreement", "fallback"))
    detail: dict[str, Any] = dict(totals)
    if voxels:
        detail["agreement_ratio"] = totals["agreement"] / voxels
    run_log.append(round_, None, "fuse", detail=detail, wall_time=elapsed)


def _check_run(dataset: Dataset, config: ExperimentConfig) -> None:
    if config.T < 1:
        raise ValueError("T must be >= 1")
    if not dataset.unlabeled:
        logger.warning("неразмеченный набор пуст: совместное обучение сводится к обучению учителя")


def _run_fused_loop(
    dataset: Dataset,
    config: ExperimentConfig,
    trainer: Trainer,
    checkpoint_dir: Optional[Union[str, Path]],
    workers: Optional[int],
    confident: bool,
) -> tuple[PlaneModelBundle, RunLog]:
    _check_run(dataset, config)
    workers = _workers(config, workers)
    run_log = RunLog()
    checkpoints = _Checkpointer(checkpoint_dir)
    labeled = _labeled_pairs(dataset, config, workers)
    unlabeled = _channelize_all(dataset.unlabeled, config, workers)
    samples = {plane: plane_samples(labeled, plane) for plane in PLANES}
    bundle: Optional[PlaneModelBundle] = None
    try:
        for round_ in range(1, config.T + 1):
            iterations = config.teacher_iters if round_ == 1 else config.student_budget
            bundle = _train_planes(samples, config, trainer, round_, iterations, run_log, bundle, workers)
            checkpoints.models(f"round_{round_}", bundle)
            start = time.perf_counter()
            if confident:
                fused, scores = _confident_pseudo_labels(bundle, unlabeled, config, workers)
            else:
                fused = _pseudo_label_channels(bundle, unlabeled, config, workers)
            elapsed = time.perf_counter() - start
            run_log.append(round_, None, "pseudo-label", detail={"volumes": len(fused)}, wall_time=elapsed)
            _fuse_event(run_log, round_, fused, elapsed)
            for case_id, mask in zip(dataset.unlabeled_ids, fused):
                checkpoints.pseudo(round_, case_id, mask)
            pseudo_pairs = [(item, mask.labels.labels) for item, mask in zip(unlabeled, fused)]
            if confident:
                samples = _confident_samples(labeled, pseudo_pairs, scores, config, run_log, round_)
            else:
                samples = {plane: plane_samples(labeled + pseudo_pairs, plane) for plane in PLANES}
        final_round = config.T + 1
        bundle = _train_planes(samples, config, trainer, final_round, config.student_budget, run_log, bundle, workers)
    except TrainingDivergedError as ex:
        logger.error(f"Ошибка обучения: {ex}")
        ex.run_log = run_log
        checkpoints.run_log(run_log)
        raise
    checkpoints.models(f"round_{final_round}", bundle)
    checkpoints.models("final", bundle)
    checkpoints.run_log(run_log)
    return bundle, run_log


def run_dmpct(
    dataset: Dataset,
    config: ExperimentConfig,
    trainer: Trainer = train,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    workers: Optional[int] = None,
) -> tuple[PlaneModelBundle, RunLog]:
    """
    Многоплоскостное совместное обучение: учитель -> псевдо-метки слиянием -> ученик, T раз,
    затем последнее обучение на итоговом S. Ученики каждый раунд обучаются заново (warm_start=false).

    :param dataset: набор данных
    :param config: конфигурация эксперимента (T, бюджеты итераций, seed)
    :param trainer: функция обучения модели одной плоскости
    :param checkpoint_dir: каталог контрольных точек (None: не сохранять)
    :param workers: число потоков
    :return: (модели T-го ученика, журнал запуска)
    """
    return _run_fused_loop(dataset, config, trainer, checkpoint_dir, workers, confident=False)


def run_supervised(
    dataset: Dataset,
    config: ExperimentConfig,
    trainer: Trainer = train,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    workers: Optional[int] = None,
) -> tuple[PlaneModelBundle, RunLog]:
    """Полностью контролируемое обучение (только учитель); вывод всё равно через слияние плоскостей."""
    run_log = RunLog()
    bundle = train_teacher(dataset, config, trainer, run_log, workers)
    checkpoints = _Checkpointer(checkpoint_dir)
    checkpoints.models("round_1", bundle)
    checkpoints.models("final", bundle)
    checkpoints.run_log(run_log)
    return bundle, run_log


def run_spsl(
    dataset: Dataset,
    config: ExperimentConfig,
    trainer: Trainer = train,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    workers: Optional[int] = None,
) -> tuple[PlaneModelBundle, RunLog]:
    """
    Самообучение каждой плоскости отдельно: псевдо-метки плоскости V берутся только из её собственных
    прогнозов, без слияния во время обучения. Итоговый вывод сливает три модели.

    :param dataset: набор данных
    :param config: конфигурация эксперимента
    :param trainer: функция обучения модели одной плоскости
    :param checkpoint_dir: каталог контрольных точек
    :param workers: число потоков
    :return: (модели плоскостей, журнал запуска)
    """
    _check_run(dataset, config)
    workers = _workers(config, workers)
    run_log = RunLog()
    checkpoints = _Checkpointer(checkpoint_dir)
    labeled = _labeled_pairs(dataset, config, workers)
    unlabeled = _channelize_all(dataset.unlabeled, config, workers)
    samples = {plane: plane_samples(labeled, plane) for plane in PLANES}
    bundle: Optional[PlaneModelBundle] = None
    try:
        for round_ in range(1, config.T + 1):
            iterations = config.teacher_iters if round_ == 1 else config.student_budget
            bundle = _train_planes(samples, config, trainer, round_, iterations, run_log, bundle, workers)
            checkpoints.models(f"round_{round_}", bundle)
            for plane in PLANES:
                start = time.perf_counter()
                model = bundle[plane]
                predictions = _map(lambda item: predict_plane(model, item, plane), unlabeled, workers)
                elapsed = time.perf_counter() - start
                run_log.append(round_, plane, "pseudo-label", detail={"volumes": len(predictions)}, wall_time=elapsed)
                pseudo_pairs = [(item, pred.label_field) for item, pred in zip(unlabeled, predictions)]
                for case_id, pred in zip(dataset.unlabeled_ids, predictions):
                    mask = FusedMask(labels=LabelMask(labels=pred.label_field, num_classes=config.num_classes))
                    checkpoints.pseudo(round_, case_id, mask, plane)
                samples[plane] = plane_samples(labeled + pseudo_pairs, plane)
        final_round = config.T + 1
        bundle = _train_planes(samples, config, trainer, final_round, config.student_budget, run_log, bundle, workers)
    except TrainingDivergedError as ex:
        logger.error(f"Ошибка обучения: {ex}")
        ex.run_log = run_log
        checkpoints.run_log(run_log)
        raise
    checkpoints.models(f"round_{final_round}", bundle)
    checkpoints.models("final", bundle)
    checkpoints.run_log(run_log)
    return bundle, run_log


def slice_confidence(probs: Union[ProbMap, np.ndarray]) -> float:
    """
    Уверенность среза: минус средняя по пикселям энтропия распределения классов.

    :param probs: карта вероятностей (rows, cols, K + 1)
    :return: значение <= 0; 0 для one-hot среза
    """
    values = probs.probs if isinstance(probs, ProbMap) else np.asarray(probs, dtype=np.float64)
    entropy = -np.sum(values * np.log(np.maximum(values, PROB_EPSILON)), axis=-1)
    return float(-entropy.mean())


def select_top(scores: Sequence[float], top_n: int) -> SliceSelection:
    """Индексы top_n наибольших оценок; при равенстве берётся меньший индекс."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    truncated = top_n > len(order)
    if truncated:
        logger.warning(f"запрошено {top_n} срезов, доступно {len(order)}")
    return SliceSelection(indices=[int(index) for index in order[:top_n]], truncated=truncated)


def select_confident_slices(prob_stacks: Sequence[Union[ProbMap, np.ndarray]], top_n: int) -> SliceSelection:
    """
    Отбор наиболее уверенных срезов (традиционное совместное обучение).

    :param prob_stacks: карты вероятностей срезов
    :param top_n: сколько срезов отобрать
    :return: индексы отобранных срезов и признак нехватки срезов
    """
    return select_top([slice_confidence(probs) for probs in prob_stacks], top_n)


def _confident_pseudo_labels(
    bundle: PlaneModelBundle, channels: Sequence[np.ndarray], config: ExperimentConfig, workers: int
) -> tuple[list[FusedMask], dict[Plane, list[list[float]]]]:
    def job(item: np.ndarray) -> tuple[FusedMask, dict[Plane, list[float]]]:
        dims = item.shape[1:]
        predictions, scores = [], {}
        for plane in PLANES:
            labels, confidences, plane_scores = [], [], []
            for index in range(plane_extent(dims, plane)):
                slice_ = ChannelizedSlice(channels=extract_slice(item, plane, index), plane=plane, index=index)
                probs = bundle[plane].forward(slice_)
                label_slice, confidence_slice = hard_from_probs(probs.probs)
                labels.append(label_slice)
                confidences.append(confidence_slice)
                plane_scores.append(slice_confidence(probs))
            predictions.append(
                PlanePrediction(
                    plane=plane,
                    label_field=stack_slices(SliceStack(plane, tuple(labels)), dims),
                    confidence_field=stack_slices(SliceStack(plane, tuple(confidences)), dims),
                )
            )
            scores[plane] = plane_scores
        return fuse_volume(predictions, bundle.num_classes, provenance=config.provenance), scores

    results = _map(job, list(channels), workers)
    fused = [mask for mask, _ in results]
    return fused, {plane: [scores[plane] for _, scores in results] for plane in PLANES}


def _confident_samples(
    labeled: list[LabeledPair],
    pseudo_pairs: list[LabeledPair],
    scores: dict[Plane, list[list[float]]],
    config: ExperimentConfig,
    run_log: RunLog,
    round_: int,
) -> dict[Plane, list[Sample]]:
    samples = {}
    for plane in PLANES:
        candidates = [
            (volume_index, slice_index)
            for volume_index, volume_scores in enumerate(scores[plane])
            for slice_index in range(len(volume_scores))
        ]
        flat = [scores[plane][volume_index][slice_index] for volume_index, slice_index in candidates]
        selection = select_top(flat, config.top_n) if candidates else SliceSelection([], False)
        chosen = []
        for position in selection.indices:
            volume_index, slice_index = candidates[position]
            channels, labels = pseudo_pairs[volume_index]
            slice_ = ChannelizedSlice(
                channels=extract_slice(channels, plane, slice_index), plane=plane, index=slice_index
            )
            chosen.append((slice_, extract_slice(labels, plane, slice_index)))
        samples[plane] = plane_samples(labeled, plane) + chosen
        run_log.append(round_, plane, "select", detail={"selected": len(chosen), "truncated": selection.truncated})
    return samples


def run_dmpct_confident(
    dataset: Dataset,
    config: ExperimentConfig,
    trainer: Trainer = train,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    workers: Optional[int] = None,
) -> tuple[PlaneModelBundle, RunLog]:
    """
    Вариант с отбором уверенных срезов: в каждом раунде модель плоскости V получает S_L и только top_n
    наиболее уверенных (по энтропии) псевдо-размеченных срезов этой плоскости.
    """
    return _run_fused_loop(dataset, config, trainer, checkpoint_dir, workers, confident=True)


RUNNERS: dict[str, Callable[..., tuple[PlaneModelBundle, RunLog]]] = {
    "fcn": run_supervised,
    "spsl": run_spsl,
    "dmpct": run_dmpct,
    "dmpct-confident": run_dmpct_confident,
}


def run_mode(
    dataset: Dataset,
    config: ExperimentConfig,
    trainer: Trainer = train,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    workers: Optional[int] = None,
) -> tuple[PlaneModelBundle, RunLog]:
    """Запускает режим config.mode (fcn, spsl, dmpct, dmpct-confident)."""
    logger.info(f"запуск режима {config.mode}, T={config.T}, seed={config.seed}")
    return RUNNERS[config.mode](dataset, config, trainer, checkpoint_dir, workers)
