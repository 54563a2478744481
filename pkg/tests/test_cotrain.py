import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from src.backbone import ProbMap
from src.backbone import SegmenterState
from src.backbone import train
from src.config import ExperimentConfig
from src.cotrain import RUNNERS
from src.cotrain import Dataset
from src.cotrain import PlaneModelBundle
from src.cotrain import RunLog
from src.cotrain import generate_pseudo_labels
from src.cotrain import load_bundle
from src.cotrain import plane_samples
from src.cotrain import run_dmpct
from src.cotrain import run_dmpct_confident
from src.cotrain import run_mode
from src.cotrain import run_spsl
from src.cotrain import run_supervised
from src.cotrain import save_bundle
from src.cotrain import select_confident_slices
from src.cotrain import select_top
from src.cotrain import slice_confidence
from src.cotrain import train_teacher
from src.exceptions import CheckpointError
from src.exceptions import ClassCountMismatchError
from src.exceptions import EmptyTrainingSetError
from src.exceptions import TrainingDivergedError
from src.metrics import evaluate
from src.planar import PLANES
from src.planar import Plane
from src.volume import ChannelizedSlice
from src.volume import channelize_volume
from src.volume import load_mask
from tests.conftest import constant_state
from tests.conftest import counting_trainer


def constant_bundle(num_classes: int, label: int) -> PlaneModelBundle:
    return PlaneModelBundle({plane: constant_state(num_classes, label, plane) for plane in PLANES})


@pytest.mark.parametrize("rounds", [1, 2, 3])
def test_dmpct_trace_counts(tiny_dataset: Dataset, tiny_config: ExperimentConfig, constant_trainer, rounds) -> None:
    config = dataclasses.replace(tiny_config, T=rounds)
    _, run_log = run_dmpct(tiny_dataset, config, constant_trainer)
    for plane in PLANES:
        assert run_log.count("train", plane) == rounds + 1
    assert run_log.count("pseudo-label") == rounds
    assert run_log.count("fuse") == rounds
    assert len(constant_trainer.calls) == 3 * (rounds + 1)


def test_dmpct_trace_order(tiny_dataset: Dataset, tiny_config: ExperimentConfig, constant_trainer) -> None:
    _, run_log = run_dmpct(tiny_dataset, tiny_config, constant_trainer)
    actions = [(event.round, event.plane, event.action) for event in run_log.events]
    assert actions == [
        (1, "sagittal", "train"),
        (1, "coronal", "train"),
        (1, "axial", "train"),
        (1, None, "pseudo-label"),
        (1, None, "fuse"),
        (2, "sagittal", "train"),
        (2, "coronal", "train"),
        (2, "axial", "train"),
    ]
    assert [event.index for event in run_log.events] == list(range(8))


def test_iteration_budgets(tiny_dataset: Dataset, tiny_config: ExperimentConfig, constant_trainer) -> None:
    config = dataclasses.replace(tiny_config, T=2)
    run_dmpct(tiny_dataset, config, constant_trainer)
    budgets = [iterations for _, iterations in constant_trainer.calls]
    assert budgets == [3, 3, 3, 4, 4, 4, 4, 4, 4]


def test_default_student_budget() -> None:
    assert ExperimentConfig(teacher_iters=7).student_budget == 14
    assert ExperimentConfig(teacher_iters=7, student_iters=5).student_budget == 5


def test_supervised_has_no_pseudo_labels(
    tiny_dataset: Dataset, tiny_config: ExperimentConfig, constant_trainer
) -> None:
    bundle, run_log = run_supervised(tiny_dataset, tiny_config, constant_trainer)
    assert run_log.count("pseudo-label") == 0
    assert all(run_log.count("train", plane) == 1 for plane in PLANES)
    assert bundle.num_classes == tiny_config.num_classes


def test_spsl_per_plane_pseudo_labels(
    tiny_dataset: Dataset, tiny_config: ExperimentConfig, constant_trainer, tmp_path: Path
) -> None:
    config = dataclasses.replace(tiny_config, T=2)
    _, run_log = run_spsl(tiny_dataset, config, constant_trainer, checkpoint_dir=tmp_path)
    for plane in PLANES:
        assert run_log.count("pseudo-label", plane) == 2
        assert run_log.count("train", plane) == 3
    assert run_log.count("fuse") == 0
    for plane in PLANES:
        assert (tmp_path / "round_1" / "pseudo" / f"unlabeled_000_{plane.tag}.dmpl").is_file()


def test_pseudo_masks_follow_rounds(
    tiny_dataset: Dataset, tiny_config: ExperimentConfig, constant_trainer, tmp_path: Path
) -> None:
    config = dataclasses.replace(tiny_config, T=2)
    run_dmpct(tiny_dataset, config, constant_trainer, checkpoint_dir=tmp_path)
    for round_, label in ((1, 1), (2, 2)):
        for case_id in tiny_dataset.unlabeled_ids:
            mask = load_mask(tmp_path / f"round_{round_}" / "pseudo" / f"{case_id}.dmpl")
            assert np.all(mask.labels == label)
            provenance = load_mask(tmp_path / f"round_{round_}" / "pseudo" / f"{case_id}.prov.dmpl")
            assert np.all(provenance.labels == 0)
    for directory in ("round_1", "round_2", "round_3", "final"):
        for plane in PLANES:
            assert (tmp_path / directory / f"model_{plane.tag}.dmpw").is_file()
    lines = (tmp_path / "runlog.json-lines").read_text(encoding="utf-8").splitlines()
    assert [json.loads(line)["action"] for line in lines].count("train") == 9


def test_final_bundle_is_last_student(tmp_path: Path, tiny_dataset: Dataset, tiny_config, constant_trainer) -> None:
    config = dataclasses.replace(tiny_config, T=2)
    bundle, _ = run_dmpct(tiny_dataset, config, constant_trainer, checkpoint_dir=tmp_path)
    loaded = load_bundle(tmp_path / "final")
    for plane in PLANES:
        assert loaded[plane].equals(bundle[plane])
        assert loaded[plane].plane is plane


def test_labeled_set_unchanged(tiny_dataset: Dataset, tiny_config: ExperimentConfig, constant_trainer) -> None:
    before = [(volume.voxels.tobytes(), mask.labels.tobytes()) for volume, mask in tiny_dataset.labeled]
    run_dmpct(tiny_dataset, dataclasses.replace(tiny_config, T=2), constant_trainer)
    after = [(volume.voxels.tobytes(), mask.labels.tobytes()) for volume, mask in tiny_dataset.labeled]
    assert before == after


def test_warm_start_passes_previous_model(tiny_dataset: Dataset, tiny_config: ExperimentConfig) -> None:
    inits = []

    def trainer(samples, config, seed, iterations, plane, init):
        inits.append(init)
        return constant_state(config.num_classes, 1, plane)

    run_dmpct(tiny_dataset, tiny_config, trainer)
    assert all(init is None for init in inits)
    inits.clear()
    run_dmpct(tiny_dataset, dataclasses.replace(tiny_config, warm_start=True), trainer)
    assert inits[:3] == [None, None, None]
    assert all(isinstance(init, SegmenterState) for init in inits[3:])


def test_training_seeds_are_derived(tiny_dataset: Dataset, tiny_config: ExperimentConfig) -> None:
    seeds = []

    def trainer(samples, config, seed, iterations, plane, init):
        seeds.append(seed)
        return constant_state(config.num_classes, 1, plane)

    run_dmpct(tiny_dataset, tiny_config, trainer)
    assert len(set(seeds)) == len(seeds)


def test_empty_labeled_set(tiny_dataset: Dataset, tiny_config: ExperimentConfig, constant_trainer) -> None:
    dataset = Dataset(labeled=[], unlabeled=tiny_dataset.unlabeled)
    with pytest.raises(EmptyTrainingSetError):
        run_dmpct(dataset, tiny_config, constant_trainer)


def test_class_count_mismatch(tiny_dataset: Dataset, tiny_config: ExperimentConfig, constant_trainer) -> None:
    with pytest.raises(ClassCountMismatchError):
        train_teacher(tiny_dataset, dataclasses.replace(tiny_config, num_classes=3), constant_trainer)


def test_bundle_class_mismatch() -> None:
    models = {
        Plane.SAGITTAL: constant_state(2, 1),
        Plane.CORONAL: constant_state(3, 1),
        Plane.AXIAL: constant_state(2, 1),
    }
    with pytest.raises(ClassCountMismatchError):
        PlaneModelBundle(models)


def test_empty_unlabeled_set(tiny_dataset: Dataset, tiny_config: ExperimentConfig, constant_trainer) -> None:
    dataset = Dataset(labeled=tiny_dataset.labeled, unlabeled=[])
    _, run_log = run_dmpct(dataset, tiny_config, constant_trainer)
    assert run_log.count("train") == 6


def test_divergence_keeps_run_log(tiny_dataset: Dataset, tiny_config: ExperimentConfig, tmp_path: Path) -> None:
    def trainer(samples, config, seed, iterations, plane, init):
        if init is not None or len(samples) > 20:
            raise TrainingDivergedError(2, float("nan"))
        return constant_state(config.num_classes, 1, plane)

    with pytest.raises(TrainingDivergedError) as info:
        run_dmpct(tiny_dataset, tiny_config, trainer, checkpoint_dir=tmp_path)
    assert info.value.run_log.count("pseudo-label") == 1
    assert (tmp_path / "runlog.json-lines").is_file()


def test_load_bundle_missing(tmp_path: Path) -> None:
    with pytest.raises(CheckpointError, match="model_sagittal.dmpw"):
        load_bundle(tmp_path)


def test_bundle_round_trip(tmp_path: Path) -> None:
    bundle = constant_bundle(3, 2)
    save_bundle(bundle, tmp_path)
    loaded = load_bundle(tmp_path)
    assert all(loaded[plane].equals(bundle[plane]) for plane in PLANES)


def test_generate_pseudo_labels(tiny_dataset: Dataset, tiny_config: ExperimentConfig) -> None:
    pairs = generate_pseudo_labels(constant_bundle(2, 2), tiny_dataset.unlabeled, tiny_config)
    assert len(pairs) == len(tiny_dataset.unlabeled)
    for volume, mask in pairs:
        assert mask.dims == volume.dims
        assert np.all(mask.labels == 2)


def test_plane_samples(tiny_dataset: Dataset, tiny_config: ExperimentConfig) -> None:
    pairs = [(channelize_volume(volume), mask.labels) for volume, mask in tiny_dataset.labeled]
    for plane in PLANES:
        samples = plane_samples(pairs, plane)
        assert len(samples) == 20
        slice_, labels = samples[0]
        assert slice_.plane is plane
        assert labels.shape == slice_.shape


@pytest.mark.parametrize(
    "scores, top_n, expected, truncated",
    [
        ([0.1, 0.5, 0.5, 0.2], 2, [1, 2], False),
        ([-0.3, -0.1, -0.2], 1, [1], False),
        ([0.0, 0.0], 5, [0, 1], True),
    ],
)
def test_select_top(scores: list[float], top_n: int, expected: list[int], truncated: bool) -> None:
    selection = select_top(scores, top_n)
    assert selection.indices == expected
    assert selection.truncated is truncated


def test_select_top_invalid() -> None:
    with pytest.raises(ValueError):
        select_top([1.0], 0)


def test_slice_confidence() -> None:
    one_hot = np.zeros((2, 3, 4))
    one_hot[..., 1] = 1.0
    assert slice_confidence(one_hot) == pytest.approx(0.0)
    assert slice_confidence(np.full((2, 3, 4), 0.25)) == pytest.approx(-np.log(4.0))


def test_select_confident_slices() -> None:
    uniform = np.full((2, 2, 3), 1.0 / 3.0)
    sharp = np.zeros((2, 2, 3))
    sharp[..., 0] = 1.0
    assert select_confident_slices([uniform, sharp, uniform], 1).indices == [1]


def test_confident_mode_selects_slices(
    tiny_dataset: Dataset, tiny_config: ExperimentConfig, constant_trainer
) -> None:
    _, run_log = run_dmpct_confident(tiny_dataset, tiny_config, constant_trainer)
    selects = [event for event in run_log.events if event.action == "select"]
    assert [event.plane for event in selects] == [plane.tag for plane in PLANES]
    assert all(event.detail == {"selected": 4, "truncated": False} for event in selects)
    assert run_log.count("train") == 6


def test_run_mode_dispatch(tiny_dataset: Dataset, tiny_config: ExperimentConfig, constant_trainer) -> None:
    _, run_log = run_mode(tiny_dataset, dataclasses.replace(tiny_config, mode="fcn"), constant_trainer)
    assert run_log.count("train") == 3
    assert isinstance(run_log, RunLog)


def test_worker_count_does_not_change_models(tiny_dataset: Dataset, tiny_config: ExperimentConfig) -> None:
    serial, _ = run_dmpct(tiny_dataset, tiny_config, workers=1)
    parallel, _ = run_dmpct(tiny_dataset, tiny_config, workers=2)
    for plane in PLANES:
        assert serial[plane].equals(parallel[plane])


def test_same_seed_same_models(tiny_dataset: Dataset, tiny_config: ExperimentConfig) -> None:
    first, _ = run_supervised(tiny_dataset, tiny_config)
    second, _ = run_supervised(tiny_dataset, tiny_config)
    other, _ = run_supervised(tiny_dataset, dataclasses.replace(tiny_config, seed=1))
    assert all(first[plane].equals(second[plane]) for plane in PLANES)
    assert not all(first[plane].equals(other[plane]) for plane in PLANES)


class PlainSegmenter:
    """Модель без общего базового класса: везде метка label с уверенностью 1."""

    def __init__(self, num_classes: int, label: int) -> None:
        self.num_classes = num_classes
        self.label = label

    def forward(self, slice_: ChannelizedSlice) -> ProbMap:
        probs = np.zeros((*slice_.shape, self.num_classes + 1))
        probs[..., self.label] = 1.0
        return ProbMap(probs=probs)

    def predict_hard(self, slice_: ChannelizedSlice) -> tuple[np.ndarray, np.ndarray]:
        return np.full(slice_.shape, self.label, dtype=np.uint8), np.ones(slice_.shape, dtype=np.float32)


@pytest.mark.parametrize("mode", list(RUNNERS))
def test_runners_accept_any_segmenter(mode: str, tiny_dataset: Dataset, tiny_config: ExperimentConfig) -> None:
    def trainer(samples, config, seed, iterations, plane, init):
        return PlainSegmenter(config.num_classes, 1)

    bundle, run_log = RUNNERS[mode](tiny_dataset, tiny_config, trainer, checkpoint_dir=None)
    assert all(isinstance(bundle[plane], PlainSegmenter) for plane in PLANES)
    assert run_log.count("train") == (3 if mode == "fcn" else 3 * (tiny_config.T + 1))
    report = evaluate(bundle, tiny_dataset.test, tiny_config, mode=mode)
    assert report.per_case["dsc"].between(0.0, 1.0).all()
    assert set(report.per_case["mode"]) == {mode}


def test_supervised_matches_cotrain_teacher(tiny_dataset: Dataset, tiny_config: ExperimentConfig) -> None:
    dataset = Dataset(labeled=tiny_dataset.labeled, unlabeled=[], test=tiny_dataset.test)
    models = []

    def recording_trainer(samples, config, seed, iterations, plane, init):
        model = train(samples, config, seed, iterations, plane, init)
        models.append(model)
        return model

    supervised, supervised_log = run_supervised(dataset, tiny_config)
    _, cotrain_log = run_dmpct(dataset, tiny_config, recording_trainer)
    for plane, teacher in zip(PLANES, models[:3]):
        assert teacher.equals(supervised[plane])
    assert cotrain_log.count("train") == supervised_log.count("train") * (tiny_config.T + 1)


def test_spsl_and_dmpct_agree_when_planes_agree(
    tiny_dataset: Dataset, tiny_config: ExperimentConfig, tmp_path: Path
) -> None:
    config = dataclasses.replace(tiny_config, T=2)
    run_spsl(tiny_dataset, config, counting_trainer(), checkpoint_dir=tmp_path / "spsl")
    run_dmpct(tiny_dataset, config, counting_trainer(), checkpoint_dir=tmp_path / "dmpct")
    for round_ in (1, 2):
        for case_id in tiny_dataset.unlabeled_ids:
            fused = load_mask(tmp_path / "dmpct" / f"round_{round_}" / "pseudo" / f"{case_id}.dmpl")
            for plane in PLANES:
                own = load_mask(tmp_path / "spsl" / f"round_{round_}" / "pseudo" / f"{case_id}_{plane.tag}.dmpl")
                np.testing.assert_array_equal(own.labels, fused.labels)
