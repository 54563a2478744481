import dataclasses
import hashlib
import json
from dataclasses import dataclass
from multiprocessing.pool import ThreadPool
from pathlib import Path
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import Union

import numpy as np

from src.config import ExperimentConfig
from src.config import derive_seed
from src.cotrain import Dataset
from src.exceptions import PhantomGenerationError
from src.logger import get_logger
from src.volume import LabelMask
from src.volume import Volume
from src.volume import load_mask
from src.volume import load_volume
from src.volume import save_mask
from src.volume import save_volume

logger = get_logger(__name__)

SHAPES = ("ellipsoid", "capsule")
SPLITS = ("labeled", "unlabeled", "test")
SMALL_ORGAN_RADIUS = 3.0
# Полуоси обычных органов в долях меньшей стороны объёма.
ORGAN_FRACTIONS = ((0.22, 0.16, 0.14), (0.24, 0.1, 0.1), (0.13, 0.13, 0.11))
MIN_NEW_FRACTION = 0.5
MANIFEST = "manifest.json-lines"

PathLike = Union[str, Path]


@dataclass(frozen=True)
class OrganSpec:
    """Геометрический «орган»: форма, полуоси в вокселях, средняя интенсивность и её разброс между случаями."""

    shape: str
    semi_axes: tuple[float, float, float]
    hu_mean: float
    hu_std: float = 12.0
    center: Optional[tuple[float, float, float]] = None

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise PhantomGenerationError(f"unknown organ shape {self.shape!r}, expected one of {SHAPES}")
        if any(axis <= 0 for axis in self.semi_axes):
            raise PhantomGenerationError(f"semi-axes must be positive, got {self.semi_axes}")
        if self.hu_std < 0:
            raise PhantomGenerationError(f"hu_std must be >= 0, got {self.hu_std}")


def default_organs(num_classes: int, dims: Sequence[int], separation: float = 45.0) -> tuple[OrganSpec, ...]:
    """
    Органы по умолчанию: средняя HU органа k равна −20 + separation·k; последний орган (при K ≥ 2)
    маленький, радиус около трёх вокселей.

    :param num_classes: число органов K
    :param dims: размеры объёма
    :param separation: шаг HU между соседними органами
    :return: описания органов в порядке размещения
    """
    side = min(dims)
    organs = []
    for organ in range(1, num_classes + 1):
        hu_mean = -20.0 + separation * organ
        if organ == num_classes and num_classes >= 2:
            radius = SMALL_ORGAN_RADIUS
            organs.append(OrganSpec("ellipsoid", (radius, radius, radius), hu_mean))
            continue
        fractions = ORGAN_FRACTIONS[(organ - 1) % len(ORGAN_FRACTIONS)]
        shape = SHAPES[(organ - 1) % len(SHAPES)]
        organs.append(OrganSpec(shape, tuple(fraction * side for fraction in fractions), hu_mean))
    return tuple(organs)


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (48, 48, 48)
    num_classes: int = 4
    organs: tuple[OrganSpec, ...] = ()
    separation: float = 45.0
    background_mean: float = -60.0
    background_std: float = 15.0
    noise_sigma: float = 10.0
    hu_offset: float = 0.0
    size_scale: float = 1.0
    max_retries: int = 50

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise PhantomGenerationError("K must be >= 1")
        if len(self.dims) != 3 or any(size < 1 for size in self.dims):
            raise PhantomGenerationError(f"dims must be three positive sizes, got {self.dims}")
        if self.organs and len(self.organs) != self.num_classes:
            raise PhantomGenerationError(f"{len(self.organs)} organs given for K={self.num_classes}")
        if self.background_std < 0 or self.noise_sigma < 0:
            raise PhantomGenerationError("standard deviations must be >= 0")
        if not self.size_scale > 0:
            raise PhantomGenerationError("size_scale must be > 0")

    def organ_specs(self) -> tuple[OrganSpec, ...]:
        return self.organs or default_organs(self.num_classes, self.dims, self.separation)


def phantom_spec_from_config(config: ExperimentConfig) -> PhantomSpec:
    return PhantomSpec(
        dims=(config.dims, config.dims, config.dims),
        num_classes=config.num_classes,
        noise_sigma=config.noise_sigma,
        hu_offset=config.hu_offset,
        size_scale=config.size_scale,
    )


def spec_hash(spec: PhantomSpec) -> str:
    """Короткий отпечаток описания фантома для манифеста."""
    payload = json.dumps(dataclasses.asdict(spec), sort_keys=True, default=list)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def organ_region(
    dims: Sequence[int], shape: str, semi_axes: Sequence[float], center: Sequence[float]
) -> np.ndarray:
    """
    Булева маска фигуры по центрам вокселей.

    Эллипсоид: Σ((x_i − c_i)/a_i)² ≤ 1. Капсула вытянута вдоль x: эллиптическое сечение (a_y, a_z)
    и закруглённые концы с полуосью min(a_x, a_y, a_z).
    """
    grid = np.ogrid[tuple(slice(0, size) for size in dims)]
    x, y, z = (axis.astype(np.float64) - c for axis, c in zip(grid, center))
    a_x, a_y, a_z = (float(axis) for axis in semi_axes)
    if shape == "capsule":
        cap = min(a_x, a_y, a_z)
        half_length = a_x - cap
        x = x - np.clip(x, -half_length, half_length)
        a_x = cap
    return (x / a_x) ** 2 + (y / a_y) ** 2 + (z / a_z) ** 2 <= 1.0


def _place(
    labels: np.ndarray, organ_id: int, organ: OrganSpec, spec: PhantomSpec, rng: np.random.Generator
) -> None:
    semi_axes = tuple(axis * spec.size_scale for axis in organ.semi_axes)
    lows = list(semi_axes)
    highs = [size - 1 - axis for size, axis in zip(spec.dims, semi_axes)]
    if organ.center is not None:
        if any(not low <= c <= high for low, c, high in zip(lows, organ.center, highs)):
            raise PhantomGenerationError(f"organ {organ_id} centered at {organ.center} does not fit in {spec.dims}")
        candidates = [tuple(organ.center)]
    elif any(low > high for low, high in zip(lows, highs)):
        logger.error(f"Ошибка: орган {organ_id} с полуосями {semi_axes} не помещается в {spec.dims}")
        raise PhantomGenerationError(f"organ {organ_id} with semi-axes {semi_axes} does not fit in {spec.dims}")
    else:
        candidates = (tuple(rng.uniform(lows, highs)) for _ in range(spec.max_retries))
    for center in candidates:
        region = organ_region(spec.dims, organ.shape, semi_axes, center)
        free = region & (labels == 0)
        total = int(region.sum())
        if total and free.sum() >= MIN_NEW_FRACTION * total:
            labels[free] = organ_id
            return
    logger.error(f"Ошибка: не удалось разместить орган {organ_id}")
    raise PhantomGenerationError(f"could not place organ {organ_id} after {spec.max_retries} attempts")


def generate_case(spec: PhantomSpec, case_seed: int) -> tuple[Volume, LabelMask]:
    """
    Один синтетический случай.

    Органы размещаются по порядку, уже размеченный воксель не перезаписывается. Интенсивность
    вокселя: средняя HU его области (одна на случай) плюс гауссов шум; сдвиг hu_offset прибавляется
    в конце и не меняет последовательность случайных чисел. Сумма считается в float64 и округляется
    до float32 один раз; для целых HU без шума разность объёмов равна hu_offset точно.

    :param spec: описание фантома
    :param case_seed: seed случая
    :return: (объём, маска)
    """
    rng = np.random.default_rng(case_seed)
    organs = spec.organ_specs()
    labels = np.zeros(spec.dims, dtype=np.uint8)
    for organ_id, organ in enumerate(organs, start=1):
        _place(labels, organ_id, organ, spec, rng)
    region_means = [rng.normal(spec.background_mean, spec.background_std)]
    region_means += [rng.normal(organ.hu_mean, organ.hu_std) for organ in organs]
    noise = rng.normal(0.0, spec.noise_sigma, size=spec.dims) if spec.noise_sigma > 0 else np.zeros(spec.dims)
    voxels = np.asarray(region_means)[labels] + noise + spec.hu_offset
    return Volume(voxels=voxels), LabelMask(labels=labels, num_classes=spec.num_classes)


def _case_counts(counts: Union[Mapping[str, int], Sequence[int]]) -> dict[str, int]:
    values = dict(counts) if isinstance(counts, Mapping) else dict(zip(SPLITS, counts))
    result = {split: int(values.get(split, 0)) for split in SPLITS}
    if any(count < 0 for count in result.values()):
        raise PhantomGenerationError(f"case counts must be >= 0, got {result}")
    if result["labeled"] < 1:
        raise PhantomGenerationError("at least one labeled case is required")
    return result


def generate_dataset(
    spec: PhantomSpec,
    counts: Union[Mapping[str, int], Sequence[int]],
    master_seed: int,
    workers: int = 1,
) -> Dataset:
    """
    Набор данных из размеченных, неразмеченных и тестовых случаев.

    Seed случая выводится из главного seed, сплита и номера. Маски неразмеченных случаев не попадают
    в обучение и хранятся отдельно как скрытый эталон для диагностики.

    :param spec: описание фантома
    :param counts: числа случаев {labeled, unlabeled, test} или кортеж в этом порядке
    :param master_seed: главный seed
    :param workers: число потоков; результат совпадает с последовательной генерацией
    :return: набор данных
    """
    counts = _case_counts(counts)
    cases = [(split, f"{split}_{i:03d}") for split in SPLITS for i in range(counts[split])]
    seeds = {case_id: derive_seed(master_seed, "case", split, case_id) for split, case_id in cases}
    if len(set(seeds.values())) != len(seeds):
        raise PhantomGenerationError(f"case seed collision for master seed {master_seed}")
    case_ids = [case_id for _, case_id in cases]
    if workers > 1 and len(case_ids) > 1:
        with ThreadPool(min(workers, len(case_ids))) as pool:
            generated = pool.map(lambda case_id: generate_case(spec, seeds[case_id]), case_ids)
    else:
        generated = [generate_case(spec, seeds[case_id]) for case_id in case_ids]
    by_split: dict[str, list] = {split: [] for split in SPLITS}
    for (split, case_id), pair in zip(cases, generated):
        by_split[split].append((case_id, pair))
    logger.info(f"сгенерировано случаев: {counts}, seed {master_seed}")
    return Dataset(
        labeled=[pair for _, pair in by_split["labeled"]],
        unlabeled=[volume for _, (volume, _) in by_split["unlabeled"]],
        test=[pair for _, pair in by_split["test"]],
        labeled_ids=[case_id for case_id, _ in by_split["labeled"]],
        unlabeled_ids=[case_id for case_id, _ in by_split["unlabeled"]],
        test_ids=[case_id for case_id, _ in by_split["test"]],
        hidden_masks=[mask for _, (_, mask) in by_split["unlabeled"]],
        seeds=seeds,
    )


def write_dataset(dataset: Dataset, directory: PathLike, spec: PhantomSpec) -> None:
    """
    Записывает набор: cases/<id>.dmpv (+ .dmpl для размеченных и тестовых), oracle/<id>.dmpl
    для скрытых масок и manifest.json-lines.
    """
    root = Path(directory)
    fingerprint = spec_hash(spec)
    rows = []
    for split, ids, pairs in (
        ("labeled", dataset.labeled_ids, dataset.labeled),
        ("test", dataset.test_ids, dataset.test),
    ):
        for case_id, (volume, mask) in zip(ids, pairs):
            save_volume(volume, root / "cases" / f"{case_id}.dmpv")
            save_mask(mask, root / "cases" / f"{case_id}.dmpl")
            rows.append({"case_id": case_id, "split": split})
    for index, (case_id, volume) in enumerate(zip(dataset.unlabeled_ids, dataset.unlabeled)):
        save_volume(volume, root / "cases" / f"{case_id}.dmpv")
        if index < len(dataset.hidden_masks):
            save_mask(dataset.hidden_masks[index], root / "oracle" / f"{case_id}.dmpl")
        rows.append({"case_id": case_id, "split": "unlabeled"})
    order = {split: position for position, split in enumerate(SPLITS)}
    rows.sort(key=lambda row: order[row["split"]])
    lines = [
        json.dumps({**row, "seed": dataset.seeds.get(row["case_id"]), "spec_hash": fingerprint}) + "\n" for row in rows
    ]
    (root / MANIFEST).write_text("".join(lines), encoding="utf-8")
    logger.info(f"набор данных записан в {root}: {len(rows)} случаев")


def read_dataset(directory: PathLike, include_oracle: bool = False) -> Dataset:
    """
    Читает набор, записанный write_dataset.

    :param directory: каталог набора
    :param include_oracle: загрузить ли скрытые маски неразмеченных случаев
    :return: набор данных
    """
    root = Path(directory)
    manifest = root / MANIFEST
    if not manifest.is_file():
        logger.error(f"Ошибка: нет манифеста {manifest}")
        raise FileNotFoundError(f"missing dataset manifest {manifest}")
    entries = [json.loads(line) for line in manifest.read_text(encoding="utf-8").splitlines() if line.strip()]
    labeled, test, unlabeled, hidden = [], [], [], []
    ids: dict[str, list[str]] = {split: [] for split in SPLITS}
    seeds = {}
    for entry in entries:
        case_id, split = entry["case_id"], entry["split"]
        volume = load_volume(root / "cases" / f"{case_id}.dmpv")
        ids[split].append(case_id)
        if entry.get("seed") is not None:
            seeds[case_id] = int(entry["seed"])
        if split == "unlabeled":
            unlabeled.append(volume)
            oracle = root / "oracle" / f"{case_id}.dmpl"
            if include_oracle and oracle.is_file():
                hidden.append(load_mask(oracle))
            continue
        pair = (volume, load_mask(root / "cases" / f"{case_id}.dmpl"))
        (labeled if split == "labeled" else test).append(pair)
    logger.info(f"прочитан набор {root}: {len(labeled)}/{len(unlabeled)}/{len(test)}")
    return Dataset(
        labeled=labeled,
        unlabeled=unlabeled,
        test=test,
        labeled_ids=ids["labeled"],
        unlabeled_ids=ids["unlabeled"],
        test_ids=ids["test"],
        hidden_masks=hidden,
        seeds=seeds,
    )
