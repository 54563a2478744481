import dataclasses
import math
from dataclasses import dataclass
from typing import Optional
from typing import Sequence

import pandas as pd

from src.backbone import Trainer
from src.backbone import train
from src.config import ExperimentConfig
from src.cotrain import Dataset
from src.cotrain import run_mode
from src.logger import get_logger
from src.metrics import EvaluationReport
from src.metrics import evaluate
from src.phantom import PhantomSpec
from src.phantom import generate_dataset
from src.phantom import phantom_spec_from_config

logger = get_logger(__name__)

TREND_MODES = ("fcn", "spsl", "dmpct")
CROSS_MODES = ("fcn", "dmpct")
TREND_MARGIN = 0.02
CROSS_WIN_SHARE = 0.8


@dataclass
class TrendResult:
    """Средний DSC по seed и режимам; passed: dmpct >= fcn + 0.02 и dmpct >= spsl."""

    frame: pd.DataFrame
    means: dict[str, float]
    passed: bool


@dataclass
class CrossResult:
    frame: pd.DataFrame
    wins: int
    passed: bool


def _counts(config: ExperimentConfig) -> dict[str, int]:
    return {"labeled": config.labeled, "unlabeled": config.unlabeled, "test": config.test}


def build_dataset(config: ExperimentConfig, seed: int, spec: Optional[PhantomSpec] = None) -> Dataset:
    """Фантомный набор данных по конфигурации и главному seed."""
    return generate_dataset(spec or phantom_spec_from_config(config), _counts(config), seed, config.workers)


def run_modes(
    config: ExperimentConfig, dataset: Dataset, modes: Sequence[str], trainer: Trainer = train
) -> dict[str, EvaluationReport]:
    """
    Обучает каждый режим на одном наборе данных и оценивает на его тестовой части.

    :param config: конфигурация (поле mode заменяется)
    :param dataset: набор данных
    :param modes: режимы
    :param trainer: функция обучения модели плоскости
    :return: отчёты оценки по режимам
    """
    reports = {}
    for mode in modes:
        mode_config = dataclasses.replace(config, mode=mode)
        bundle, _ = run_mode(dataset, mode_config, trainer)
        reports[mode] = evaluate(bundle, dataset.test, mode_config, dataset.test_ids, mode)
    return reports


def _mean_frame(rows: list[dict], keys: Sequence[str]) -> dict[str, float]:
    frame = pd.DataFrame(rows)
    return {key: float(frame.loc[frame["mode"] == key, "mean_dsc"].mean()) for key in keys}


def run_trend(config: ExperimentConfig, seeds: Sequence[int], trainer: Trainer = train) -> TrendResult:
    """
    Воспроизведение порядка методов на фантомах: для каждого seed обучаются fcn, spsl и dmpct.

    Проверка проходит, если в среднем по seed DSC(dmpct) >= DSC(fcn) + 0.02 и DSC(dmpct) >= DSC(spsl).

    :param config: конфигурация эксперимента
    :param seeds: главные seed
    :param trainer: функция обучения модели плоскости
    :return: таблица (seed, mode, mean_dsc), средние и итог
    """
    rows = []
    for seed in seeds:
        seed_config = dataclasses.replace(config, seed=seed)
        reports = run_modes(seed_config, build_dataset(seed_config, seed), TREND_MODES, trainer)
        rows += [{"seed": seed, "mode": mode, "mean_dsc": report.mean_row.mean} for mode, report in reports.items()]
        logger.info(f"тренд, seed {seed}: {[(row['mode'], row['mean_dsc']) for row in rows[-len(reports):]]}")
    means = _mean_frame(rows, TREND_MODES)
    passed = means["dmpct"] >= means["fcn"] + TREND_MARGIN and means["dmpct"] >= means["spsl"]
    logger.info(f"тренд: средние {means}, результат {passed}")
    return TrendResult(frame=pd.DataFrame(rows, columns=["seed", "mode", "mean_dsc"]), means=means, passed=passed)


def run_cross_distribution(
    config: ExperimentConfig,
    seeds: Sequence[int],
    hu_offset: float = 40.0,
    size_scale: float = 1.2,
    trainer: Trainer = train,
) -> CrossResult:
    """
    Обобщение на сдвинутое распределение: обучение на базовых фантомах, тест на фантомах
    со сдвигом интенсивности и масштабом органов.

    :param config: конфигурация эксперимента
    :param seeds: главные seed
    :param hu_offset: сдвиг HU тестовых объёмов
    :param size_scale: масштаб органов тестовых объёмов
    :param trainer: функция обучения модели плоскости
    :return: таблица (seed, mode, mean_dsc), число seed, где dmpct >= fcn, и итог
    """
    base_spec = phantom_spec_from_config(config)
    shifted_spec = dataclasses.replace(base_spec, hu_offset=base_spec.hu_offset + hu_offset, size_scale=size_scale)
    rows, wins = [], 0
    for seed in seeds:
        seed_config = dataclasses.replace(config, seed=seed)
        base = build_dataset(seed_config, seed, base_spec)
        shifted = generate_dataset(shifted_spec, {"labeled": 1, "test": config.test}, seed, config.workers)
        dataset = dataclasses.replace(base, test=shifted.test, test_ids=shifted.test_ids)
        reports = run_modes(seed_config, dataset, CROSS_MODES, trainer)
        means = {mode: report.mean_row.mean for mode, report in reports.items()}
        wins += int(means["dmpct"] >= means["fcn"])
        rows += [{"seed": seed, "mode": mode, "mean_dsc": value} for mode, value in means.items()]
    passed = wins >= math.ceil(CROSS_WIN_SHARE * len(seeds))
    logger.info(f"сдвиг распределения: dmpct >= fcn в {wins} из {len(seeds)}")
    return CrossResult(frame=pd.DataFrame(rows, columns=["seed", "mode", "mean_dsc"]), wins=wins, passed=passed)


def run_ablation(
    config: ExperimentConfig,
    labeled_counts: Sequence[int],
    unlabeled_counts: Sequence[int],
    modes: Sequence[str] = TREND_MODES,
    trainer: Trainer = train,
) -> pd.DataFrame:
    """
    Перебор числа размеченных и неразмеченных объёмов.

    :param config: конфигурация эксперимента (seed задаёт набор данных)
    :param labeled_counts: числа размеченных объёмов
    :param unlabeled_counts: числа неразмеченных объёмов
    :param modes: режимы
    :param trainer: функция обучения модели плоскости
    :return: таблица (labeled, unlabeled, mode, mean_dsc)
    """
    rows = []
    for labeled in labeled_counts:
        for unlabeled in unlabeled_counts:
            point = dataclasses.replace(config, labeled=labeled, unlabeled=unlabeled)
            reports = run_modes(point, build_dataset(point, config.seed), modes, trainer)
            for mode, report in reports.items():
                row = {"labeled": labeled, "unlabeled": unlabeled, "mode": mode}
                rows.append({**row, "mean_dsc": report.mean_row.mean})
    return pd.DataFrame(rows, columns=["labeled", "unlabeled", "mode", "mean_dsc"])


def run_contrast_sweep(
    config: ExperimentConfig, separations: Sequence[float], seeds: Sequence[int], trainer: Trainer = train
) -> pd.DataFrame:
    """
    Средний DSC обучения с учителем в зависимости от шага HU между органами.

    :return: таблица (separation, mean_dsc), усреднённая по seed
    """
    rows = []
    for separation in separations:
        spec = dataclasses.replace(phantom_spec_from_config(config), separation=separation)
        for seed in seeds:
            seed_config = dataclasses.replace(config, seed=seed, mode="fcn")
            reports = run_modes(seed_config, build_dataset(seed_config, seed, spec), ("fcn",), trainer)
            rows.append({"separation": separation, "seed": seed, "mean_dsc": reports["fcn"].mean_row.mean})
    frame = pd.DataFrame(rows, columns=["separation", "seed", "mean_dsc"])
    return frame.groupby("separation", sort=False, as_index=False)["mean_dsc"].mean()
