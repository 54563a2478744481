from dataclasses import dataclass
from dataclasses import field
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import Union

import numpy as np
import pandas as pd
from scipy.stats import norm
from scipy.stats import rankdata

from src.backbone import Segmenter
from src.config import ExperimentConfig
from src.exceptions import ShapeMismatchError
from src.exceptions import SignificanceError
from src.fusion import predict_volume
from src.logger import get_logger
from src.planar import Plane
from src.volume import LabelMask
from src.volume import Volume

logger = get_logger(__name__)

MEAN_ROW = "mean"
MIN_PAIRS = 5
EXACT_LIMIT = 10
PER_CASE_COLUMNS = ["mode", "case_id", "organ", "dsc"]
REPORT_COLUMNS = ["mode", "organ", "n", "mean_dsc", "std_dsc", "p_vs_baseline"]

MaskLike = Union[LabelMask, np.ndarray]


def frame_records(frame: pd.DataFrame) -> list[dict]:
    """Строки таблицы для JSON: пропуски становятся None."""
    return frame.astype(object).where(frame.notna(), None).to_dict(orient="records")


@dataclass
class OrganReport:
    """DSC одного органа по всем тестовым случаям: среднее и выборочное стандартное отклонение."""

    organ: str
    values: list[float]
    mean: float = 0.0
    std: float = 0.0
    p_value: Optional[float] = None

    @classmethod
    def from_values(cls, organ: str, values: Sequence[float]) -> "OrganReport":
        array = np.asarray(values, dtype=np.float64)
        std = float(np.std(array, ddof=1)) if array.size > 1 else 0.0
        return cls(organ=organ, values=[float(value) for value in values], mean=float(array.mean()), std=std)


@dataclass
class EvaluationReport:
    mode: str
    organs: list[OrganReport]
    mean_row: OrganReport
    per_case: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=PER_CASE_COLUMNS))

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "mode": self.mode,
                "organ": report.organ,
                "n": len(report.values),
                "mean_dsc": report.mean,
                "std_dsc": report.std,
                "p_vs_baseline": report.p_value,
            }
            for report in self.organs + [self.mean_row]
        ]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mean_row_convention": "mean over organs of per-organ mean DSC",
            "rows": frame_records(self.to_frame()),
        }


def _labels(mask: MaskLike) -> np.ndarray:
    return mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)


def dsc(prediction: MaskLike, truth: MaskLike, organ: int) -> float:
    """
    Коэффициент Дайса для органа k: 2|Z ∩ Y| / (|Z| + |Y|).

    Оба множества пусты -> 1.0, пусто только одно -> 0.0.

    :param prediction: предсказанная маска
    :param truth: эталонная маска
    :param organ: метка органа (1..K)
    :return: значение в [0, 1]
    """
    predicted, expected = _labels(prediction), _labels(truth)
    if predicted.shape != expected.shape:
        logger.error(f"Ошибка размеров масок: {predicted.shape} и {expected.shape}")
        raise ShapeMismatchError(f"prediction dims {predicted.shape} do not match truth dims {expected.shape}")
    if organ < 1:
        raise ValueError(f"organ label must be >= 1, got {organ}")
    z_set = predicted == organ
    y_set = expected == organ
    total = int(z_set.sum()) + int(y_set.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(z_set, y_set).sum()) / total


def summarize(per_case: pd.DataFrame, mode: str, organs: Sequence[int]) -> EvaluationReport:
    """
    Сводка по органам и строка среднего из таблицы DSC по случаям.

    Строка среднего: среднее по органам от средних по органу; её стандартное отклонение считается
    по средним за случай.

    :param per_case: таблица с колонками mode, case_id, organ, dsc (порядок случаев сохраняется)
    :param mode: режим обучения
    :param organs: органы отчёта
    :return: отчёт оценки
    """
    frame = per_case[per_case["organ"].isin(list(organs))]
    reports = []
    for organ in organs:
        values = frame.loc[frame["organ"] == organ, "dsc"].astype(float).tolist()
        reports.append(OrganReport.from_values(str(organ), values))
    case_ids = list(dict.fromkeys(frame["case_id"].tolist()))
    case_means = [float(np.mean(frame.loc[frame["case_id"] == case_id, "dsc"].astype(float))) for case_id in case_ids]
    mean_row = OrganReport.from_values(MEAN_ROW, case_means)
    mean_row.mean = float(np.mean([report.mean for report in reports])) if reports else 0.0
    logger.info(f"оценка {mode}: средний DSC {mean_row.mean:.4f} по {len(case_ids)} случаям")
    return EvaluationReport(mode=mode, organs=reports, mean_row=mean_row, per_case=per_case.reset_index(drop=True))


def evaluate(
    bundle: Mapping[Plane, Segmenter],
    test: Sequence[tuple[Volume, LabelMask]],
    config: ExperimentConfig,
    case_ids: Optional[Sequence[str]] = None,
    mode: Optional[str] = None,
) -> EvaluationReport:
    """
    Многоплоскостной вывод на тестовых объёмах и DSC по органам.

    :param bundle: модели плоскостей
    :param test: пары (объём, эталонная маска)
    :param config: конфигурация (окна, список органов)
    :param case_ids: идентификаторы случаев
    :param mode: подпись режима в отчёте
    :return: отчёт оценки
    """
    case_ids = list(case_ids) if case_ids else [f"test_{i:03d}" for i in range(len(test))]
    organs = config.evaluated_organs()
    mode = mode or config.mode
    rows = []
    for case_id, (volume, truth) in zip(case_ids, test):
        fused, _ = predict_volume(bundle, volume, config.window_specs(), provenance=False, workers=config.workers)
        for organ in organs:
            rows.append({"mode": mode, "case_id": case_id, "organ": organ, "dsc": dsc(fused.labels, truth, organ)})
    per_case = pd.DataFrame(rows, columns=PER_CASE_COLUMNS)
    return summarize(per_case, mode, organs)


def _exact_p_value(ranks: np.ndarray, r_plus: float) -> float:
    count = ranks.size
    signs = (np.arange(2**count)[:, np.newaxis] >> np.arange(count)) & 1
    sums = signs @ ranks
    tolerance = 1e-9
    lower = np.mean(sums <= r_plus + tolerance)
    upper = np.mean(sums >= r_plus - tolerance)
    return float(min(1.0, 2.0 * min(lower, upper)))


def _normal_p_value(ranks: np.ndarray, magnitudes: np.ndarray, r_plus: float) -> float:
    count = ranks.size
    _, ties = np.unique(magnitudes, return_counts=True)
    variance = (count * (count + 1) * (2 * count + 1) - 0.5 * np.sum(ties**3 - ties)) / 24.0
    if variance <= 0:
        return 1.0
    z_score = (r_plus - count * (count + 1) / 4.0) / np.sqrt(variance)
    return float(min(1.0, 2.0 * norm.sf(abs(z_score))))


def paired_significance(per_case_a: Sequence[float], per_case_b: Sequence[float]) -> float:
    """
    Двусторонний критерий знаковых рангов Уилкоксона для парных значений.

    Нулевые разности отбрасываются; при n < 10 используется точный перебор знаков, иначе нормальное
    приближение с поправкой на связки (без поправки на непрерывность).

    :param per_case_a: значения метода A по случаям
    :param per_case_b: значения метода B по тем же случаям
    :return: p-value; 1.0, если все разности нулевые
    """
    first = np.asarray(per_case_a, dtype=np.float64)
    second = np.asarray(per_case_b, dtype=np.float64)
    if first.shape != second.shape:
        raise SignificanceError(f"paired lists differ in length: {first.size} vs {second.size}")
    if first.size < MIN_PAIRS:
        logger.error(f"Ошибка: слишком мало пар для критерия ({first.size})")
        raise SignificanceError(f"at least {MIN_PAIRS} pairs required, got {first.size}")
    differences = second - first
    differences = differences[differences != 0]
    if differences.size == 0:
        return 1.0
    magnitudes = np.abs(differences)
    ranks = rankdata(magnitudes)
    r_plus = float(ranks[differences > 0].sum())
    if differences.size < EXACT_LIMIT:
        return _exact_p_value(ranks, r_plus)
    return _normal_p_value(ranks, magnitudes, r_plus)
