import dataclasses

import pytest

from src.config import ExperimentConfig
from src.experiments import CROSS_MODES
from src.experiments import TREND_MODES
from src.experiments import build_dataset
from src.experiments import run_ablation
from src.experiments import run_contrast_sweep
from src.experiments import run_cross_distribution
from src.experiments import run_modes
from src.experiments import run_trend


def test_build_dataset(tiny_config: ExperimentConfig) -> None:
    dataset = build_dataset(tiny_config, seed=4)
    assert len(dataset.labeled) == tiny_config.labeled
    assert len(dataset.unlabeled) == tiny_config.unlabeled
    assert len(dataset.test) == tiny_config.test
    assert dataset.labeled[0][0].dims == (10, 10, 10)
    same = build_dataset(tiny_config, seed=4)
    assert dataset.labeled[0][0].equals(same.labeled[0][0])


def test_run_modes(tiny_config: ExperimentConfig, tiny_dataset, constant_trainer) -> None:
    reports = run_modes(tiny_config, tiny_dataset, ("fcn", "dmpct"), constant_trainer)
    assert list(reports) == ["fcn", "dmpct"]
    assert set(reports["dmpct"].per_case["mode"]) == {"dmpct"}
    assert reports["fcn"].per_case["case_id"].tolist()[:2] == ["test_000", "test_000"]


def test_run_trend_structure(tiny_config: ExperimentConfig) -> None:
    result = run_trend(tiny_config, seeds=[1])
    assert result.frame["mode"].tolist() == list(TREND_MODES)
    assert set(result.means) == set(TREND_MODES)
    assert all(0.0 <= value <= 1.0 for value in result.means.values())
    assert isinstance(result.passed, bool)


def test_run_cross_distribution_structure(tiny_config: ExperimentConfig, constant_trainer) -> None:
    result = run_cross_distribution(tiny_config, seeds=[1, 2], trainer=constant_trainer)
    assert len(result.frame) == 2 * len(CROSS_MODES)
    assert 0 <= result.wins <= 2
    assert result.passed == (result.wins >= 2)


def test_run_ablation_grid(tiny_config: ExperimentConfig, constant_trainer) -> None:
    frame = run_ablation(tiny_config, [1, 2], [0, 1], modes=("fcn", "dmpct"), trainer=constant_trainer)
    assert len(frame) == 2 * 2 * 2
    assert frame[["labeled", "unlabeled"]].drop_duplicates().values.tolist() == [[1, 0], [1, 1], [2, 0], [2, 1]]


def test_run_contrast_sweep(tiny_config: ExperimentConfig, constant_trainer) -> None:
    frame = run_contrast_sweep(tiny_config, [20.0, 60.0], seeds=[1, 2], trainer=constant_trainer)
    assert frame["separation"].tolist() == [20.0, 60.0]
    assert frame["mean_dsc"].between(0.0, 1.0).all()


def test_contrast_sweep_is_monotone(reduced_config: ExperimentConfig) -> None:
    frame = run_contrast_sweep(reduced_config, [-40.0, 0.0, 80.0], seeds=[0, 1])
    assert frame["separation"].tolist() == [-40.0, 0.0, 80.0]
    assert frame["mean_dsc"].is_monotonic_increasing, frame


def test_trend_reduced_scale(reduced_config: ExperimentConfig) -> None:
    result = run_trend(reduced_config, seeds=[0, 1])
    assert result.means["dmpct"] >= result.means["fcn"], result.means


@pytest.mark.slow
def test_trend_on_phantoms() -> None:
    config = ExperimentConfig()
    result = run_trend(config, seeds=[0, 1, 2, 3, 4])
    assert result.passed, result.means


@pytest.mark.slow
def test_cross_distribution_on_phantoms() -> None:
    config = ExperimentConfig()
    result = run_cross_distribution(config, seeds=[0, 1, 2, 3, 4])
    assert result.passed, result.frame


@pytest.mark.slow
def test_worker_count_does_not_change_results() -> None:
    config = ExperimentConfig()
    dataset = build_dataset(config, seed=0)
    serial = run_modes(config, dataset, ("dmpct",))
    parallel = run_modes(dataclasses.replace(config, workers=4), dataset, ("dmpct",))
    assert serial["dmpct"].per_case["dsc"].tolist() == parallel["dmpct"].per_case["dsc"].tolist()
