import json
from functools import wraps
from pathlib import Path
from typing import Any
from typing import Callable
from typing import Optional
from typing import Sequence
from typing import Union

import pandas as pd

from src.exceptions import SignificanceError
from src.logger import get_logger
from src.metrics import MEAN_ROW
from src.metrics import PER_CASE_COLUMNS
from src.metrics import EvaluationReport
from src.metrics import frame_records
from src.metrics import paired_significance
from src.metrics import summarize

logger = get_logger(__name__)

BASELINE_MODE = "fcn"
COMPARISON_COLUMNS = ["mode", "organ", "n", "mean_dsc", "std_dsc", "p_vs_baseline", "gain_vs_baseline"]

PathLike = Union[str, Path]


def log_json_data(filename: str, directory: Optional[PathLike] = None) -> Callable[..., Any]:
    """
    Декоратор: результат функции сохраняется в JSON-файл.

    :param filename: имя файла без расширения
    :param directory: каталог файла; по умолчанию ключевой аргумент out_dir вызова
    :return: результат функции
    """

    def wrapper(func: Callable[..., Any]) -> Callable[..., Any]:
        @wraps(func)
        def inner(*args: Any, **kwargs: Any) -> Any:
            logger.info(f"получение результата функции {func.__name__}")
            result = func(*args, **kwargs)
            target_dir = Path(directory if directory is not None else kwargs.get("out_dir", "."))
            target = target_dir / f"{filename}.json"
            try:
                target_dir.mkdir(parents=True, exist_ok=True)
                with open(target, "w", encoding="utf-8") as file:
                    json.dump(result, file, ensure_ascii=False, indent=4)
            except OSError as ex:
                logger.error(f"Ошибка сохранения результата функции в файл {target}: {ex}")
                raise
            logger.info(f"результат функции сохранён в файл {target}")
            return result

        return inner

    return wrapper


@log_json_data("report")
def _report_json(report: EvaluationReport, out_dir: PathLike) -> dict:
    return report.to_dict()


def write_evaluation(report: EvaluationReport, out_dir: PathLike) -> Path:
    """
    Записывает per_case.csv, report.csv и report.json.

    :param report: отчёт оценки
    :param out_dir: каталог оценки
    :return: путь к report.csv
    """
    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    report.per_case.to_csv(target / "per_case.csv", index=False)
    report.to_frame().to_csv(target / "report.csv", index=False)
    _report_json(report, out_dir=target)
    logger.info(f"отчёт оценки {report.mode} записан в {target}")
    return target / "report.csv"


def read_per_case(path: PathLike) -> pd.DataFrame:
    """
    Читает per_case.csv из каталога оценки или по пути к файлу.

    :param path: каталог оценки или файл per_case.csv
    :return: таблица mode, case_id, organ, dsc
    """
    source = Path(path)
    if source.is_dir():
        source = source / "per_case.csv"
    if not source.is_file():
        logger.error(f"Ошибка: нет файла {source}")
        raise FileNotFoundError(f"missing per-case table {source}")
    frame = pd.read_csv(source, dtype={"mode": str, "case_id": str, "organ": int, "dsc": float})
    missing = [column for column in PER_CASE_COLUMNS if column not in frame.columns]
    if missing:
        raise ValueError(f"{source}: missing columns {missing}")
    return frame


def _paired(frame: pd.DataFrame, organ: Optional[int]) -> pd.Series:
    rows = frame if organ is None else frame[frame["organ"] == organ]
    return rows.groupby("case_id", sort=False)["dsc"].mean()


def _p_value(mode_frame: pd.DataFrame, baseline_frame: pd.DataFrame, organ: Optional[int]) -> Optional[float]:
    values = _paired(mode_frame, organ)
    baseline = _paired(baseline_frame, organ)
    shared = [case_id for case_id in baseline.index if case_id in values.index]
    try:
        return paired_significance(baseline.loc[shared].to_numpy(), values.loc[shared].to_numpy())
    except SignificanceError as ex:
        logger.warning(f"p-value не вычислен ({organ or MEAN_ROW}): {ex}")
        return None


def compare_runs(per_case: Sequence[pd.DataFrame], baseline: str = BASELINE_MODE) -> pd.DataFrame:
    """
    Сравнительная таблица режимов: строка на каждый орган и строка среднего, p-value парного
    критерия против базового режима и прирост в пунктах DSC (×100).

    :param per_case: таблицы DSC по случаям для разных режимов
    :param baseline: базовый режим
    :return: таблица с колонками COMPARISON_COLUMNS
    """
    combined = pd.concat(list(per_case), ignore_index=True)
    organs = list(dict.fromkeys(combined["organ"].astype(int).tolist()))
    modes = list(dict.fromkeys(combined["mode"].tolist()))
    baseline_frame = combined[combined["mode"] == baseline]
    if baseline_frame.empty:
        logger.warning(f"базовый режим {baseline} отсутствует: p-value не вычисляются")
    reports = {mode: summarize(combined[combined["mode"] == mode], mode, organs) for mode in modes}
    rows = []
    for mode in modes:
        report = reports[mode]
        mode_frame = combined[combined["mode"] == mode]
        for organ_id, organ_report in zip(organs + [None], report.organs + [report.mean_row]):
            p_value, gain = None, None
            if not baseline_frame.empty:
                reference = reports[baseline]
                reference_row = reference.mean_row if organ_id is None else reference.organs[organs.index(organ_id)]
                gain = 100.0 * (organ_report.mean - reference_row.mean)
                if mode != baseline:
                    p_value = _p_value(mode_frame, baseline_frame, organ_id)
            rows.append(
                {
                    "mode": mode,
                    "organ": organ_report.organ,
                    "n": len(organ_report.values),
                    "mean_dsc": organ_report.mean,
                    "std_dsc": organ_report.std,
                    "p_vs_baseline": p_value,
                    "gain_vs_baseline": gain,
                }
            )
    logger.info(f"сравнение режимов {modes} против {baseline}")
    return pd.DataFrame(rows, columns=COMPARISON_COLUMNS)


@log_json_data("comparison")
def _comparison_json(comparison: pd.DataFrame, out_dir: PathLike) -> list[dict]:
    return frame_records(comparison)


def write_comparison(comparison: pd.DataFrame, out_dir: PathLike) -> Path:
    """
    Записывает comparison.csv, comparison.json и comparison.xlsx.

    :param comparison: результат compare_runs
    :param out_dir: каталог сравнения
    :return: путь к comparison.csv
    """
    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    comparison.to_csv(target / "comparison.csv", index=False)
    _comparison_json(comparison, out_dir=target)
    comparison.to_excel(target / "comparison.xlsx", index=False, engine="openpyxl")
    logger.info(f"сравнение записано в {target}")
    return target / "comparison.csv"
