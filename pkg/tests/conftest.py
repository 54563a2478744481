from typing import Any
from typing import Callable
from typing import Optional
from typing import Sequence

import numpy as np
import pytest

from src.backbone import PatchFeatureSpec
from src.backbone import SegmenterState
from src.backbone import init_state
from src.config import ExperimentConfig
from src.cotrain import Dataset
from src.phantom import PhantomSpec
from src.phantom import generate_dataset
from src.planar import Plane
from src.volume import LabelMask
from src.volume import Volume


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--runslow", action="store_true", default=False, help="запускать полномасштабные эксперименты")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="нужен флаг --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def constant_state(num_classes: int, label: int, plane: Optional[Plane] = None) -> SegmenterState:
    """Сегментатор, который везде предсказывает label: нулевые веса и большой сдвиг для класса label."""
    state = init_state(num_classes, PatchFeatureSpec(), plane=plane)
    bias = np.zeros(num_classes + 1, dtype=np.float32)
    bias[label] = 10.0
    return state.with_parameters({"weights": state.parameters()["weights"], "bias": bias.astype(np.float64)})


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return ExperimentConfig(
        T=1,
        num_classes=2,
        teacher_iters=3,
        student_iters=4,
        batch_slices=2,
        batch_pixels=16,
        labeled=2,
        unlabeled=2,
        test=2,
        dims=10,
        top_n=4,
    )


@pytest.fixture
def reduced_config() -> ExperimentConfig:
    """Уменьшенный протокол с настоящим обучением: один крупный контрастный орган, объёмы 20^3."""
    return ExperimentConfig(
        T=1,
        num_classes=1,
        dims=20,
        labeled=1,
        unlabeled=4,
        test=3,
        teacher_iters=150,
        noise_sigma=5.0,
        size_scale=1.5,
    )

@pytest.fixture
def tiny_spec() -> PhantomSpec:
    return PhantomSpec(dims=(10, 10, 10), num_classes=2, noise_sigma=5.0)


@pytest.fixture
def tiny_dataset(tiny_spec: PhantomSpec) -> Dataset:
    return generate_dataset(tiny_spec, {"labeled": 2, "unlabeled": 2, "test": 2}, master_seed=7)


@pytest.fixture
def random_volume() -> Volume:
    rng = np.random.default_rng(0)
    return Volume(voxels=rng.uniform(-1000.0, 1000.0, size=(8, 8, 8)), spacing=(0.7, 0.7, 2.5))


@pytest.fixture
def random_mask() -> LabelMask:
    rng = np.random.default_rng(1)
    return LabelMask(labels=rng.integers(0, 4, size=(7, 3, 5)), num_classes=3)


def counting_trainer() -> Callable[..., Any]:
    """Обучение-заглушка: все три плоскости раунда r (счёт с нуля) предсказывают 1 + r mod K; вызовы в calls."""
    calls: list[tuple[Optional[Plane], int]] = []

    def trainer(
        samples: Sequence[Any],
        config: ExperimentConfig,
        seed: int,
        iterations: int,
        plane: Optional[Plane] = None,
        init: Optional[Any] = None,
    ) -> SegmenterState:
        calls.append((plane, iterations))
        round_ = (len(calls) - 1) // 3
        return constant_state(config.num_classes, 1 + round_ % config.num_classes, plane)

    trainer.calls = calls  # type: ignore[attr-defined]
    return trainer


@pytest.fixture
def constant_trainer() -> Callable[..., Any]:
    return counting_trainer()
