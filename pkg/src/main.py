import argparse
import sys
from pathlib import Path
from typing import Callable
from typing import Optional
from typing import Sequence

from src.config import MODES
from src.config import ExperimentConfig
from src.config import echo_config
from src.config import load_config
from src.config import resolve_config
from src.cotrain import Dataset
from src.cotrain import PlaneModelBundle
from src.cotrain import generate_pseudo_labels
from src.cotrain import load_bundle
from src.cotrain import run_mode
from src.cotrain import run_supervised
from src.exceptions import ClassCountMismatchError
from src.exceptions import DmpctError
from src.experiments import build_dataset
from src.experiments import run_ablation
from src.experiments import run_contrast_sweep
from src.experiments import run_cross_distribution
from src.experiments import run_trend
from src.logger import get_logger
from src.metrics import evaluate
from src.phantom import generate_dataset
from src.phantom import phantom_spec_from_config
from src.phantom import read_dataset
from src.phantom import write_dataset
from src.reports import BASELINE_MODE
from src.reports import compare_runs
from src.reports import read_per_case
from src.reports import write_comparison
from src.reports import write_evaluation
from src.volume import save_mask

logger = get_logger(__name__)

ECHO_FILE = "config.echo"
BENCHMARKS = ("trend", "cross", "ablation", "contrast")


def _out_dir(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    target = Path(args.out or config.out_dir)
    target.mkdir(parents=True, exist_ok=True)
    return target


def _write_echo(directory: Path, config: ExperimentConfig) -> None:
    (directory / ECHO_FILE).write_text(echo_config(config), encoding="utf-8")


def _dataset(args: argparse.Namespace, config: ExperimentConfig) -> Dataset:
    data_dir = args.data or config.data_dir
    if data_dir:
        return read_dataset(data_dir)
    logger.info(f"каталог данных не задан: генерация фантомов с seed {config.seed}")
    return build_dataset(config, config.seed)


def _models(args: argparse.Namespace, config: ExperimentConfig) -> PlaneModelBundle:
    if not args.models:
        raise FileNotFoundError("--models is required for this command")
    directory = Path(args.models)
    bundle = load_bundle(directory / "final" if (directory / "final").is_dir() else directory)
    if bundle.num_classes != config.num_classes:
        logger.error(f"Ошибка: модели обучены на K={bundle.num_classes}, конфигурация K={config.num_classes}")
        raise ClassCountMismatchError(f"checkpoint has K={bundle.num_classes}, config has K={config.num_classes}")
    return bundle


def cmd_generate(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = Path(args.out or config.data_dir or config.out_dir)
    spec = phantom_spec_from_config(config)
    counts = {"labeled": config.labeled, "unlabeled": config.unlabeled, "test": config.test}
    write_dataset(generate_dataset(spec, counts, config.seed, config.workers), out, spec)
    _write_echo(out, config)
    print(out)
    return 0


def cmd_train(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = _out_dir(args, config)
    _write_echo(out, config)
    run_supervised(_dataset(args, config), config, checkpoint_dir=out)
    print(out / "final")
    return 0


def cmd_pseudolabel(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = _out_dir(args, config)
    _write_echo(out, config)
    dataset = _dataset(args, config)
    pairs = generate_pseudo_labels(_models(args, config), dataset.unlabeled, config)
    for case_id, (_, mask) in zip(dataset.unlabeled_ids, pairs):
        save_mask(mask, out / "pseudo" / f"{case_id}.dmpl")
    print(out / "pseudo")
    return 0


def cmd_cotrain(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = _out_dir(args, config)
    _write_echo(out, config)
    run_mode(_dataset(args, config), config, checkpoint_dir=out)
    print(out / "final")
    return 0


def _run_mode(args: argparse.Namespace, config: ExperimentConfig) -> str:
    if args.mode:
        return args.mode
    echo = Path(args.models) / ECHO_FILE if args.models else None
    if echo is not None and echo.is_file():
        return load_config(str(echo)).mode
    return config.mode


def cmd_evaluate(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = _out_dir(args, config)
    _write_echo(out, config)
    bundle = _models(args, config)
    dataset = _dataset(args, config)
    report = evaluate(bundle, dataset.test, config, dataset.test_ids, _run_mode(args, config))
    print(write_evaluation(report, out))
    return 0


def cmd_report(args: argparse.Namespace, config: ExperimentConfig) -> int:
    if not args.runs:
        raise FileNotFoundError("--runs requires at least one evaluation directory")
    out = _out_dir(args, config)
    comparison = compare_runs([read_per_case(run) for run in args.runs], baseline=args.baseline)
    print(write_comparison(comparison, out))
    return 0


def cmd_benchmark(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = _out_dir(args, config)
    _write_echo(out, config)
    seeds = args.seeds or [config.seed]
    if args.kind == "trend":
        result = run_trend(config, seeds)
        frame, passed = result.frame, result.passed
    elif args.kind == "cross":
        cross = run_cross_distribution(config, seeds)
        frame, passed = cross.frame, cross.passed
    elif args.kind == "contrast":
        frame = run_contrast_sweep(config, args.separations, seeds)
        passed = bool(frame["mean_dsc"].is_monotonic_increasing)
    else:
        frame, passed = run_ablation(config, args.labeled_counts, args.unlabeled_counts), None
    target = out / f"benchmark_{args.kind}.csv"
    frame.to_csv(target, index=False)
    print(target if passed is None else f"{target} passed={str(passed).lower()}")
    return 0


COMMANDS: dict[str, Callable[[argparse.Namespace, ExperimentConfig], int]] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "pseudolabel": cmd_pseudolabel,
    "cotrain": cmd_cotrain,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="файл key=value")
    common.add_argument("--out", help="каталог результатов")
    common.add_argument("--workers", type=int, help="число потоков")
    common.add_argument("--seed", type=int, help="главный seed (u64)")
    common.add_argument("--mode", choices=MODES, help="режим обучения")
    common.add_argument("--data", help="каталог набора данных")
    common.add_argument("--models", help="каталог запуска или моделей")

    parser = argparse.ArgumentParser(prog="dmpct", description="Многоплоскостное совместное обучение сегментации")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "pseudolabel", "cotrain", "evaluate"):
        commands.add_parser(name, parents=[common])
    report = commands.add_parser("report", parents=[common])
    report.add_argument("--runs", nargs="+", help="каталоги оценки")
    report.add_argument("--baseline", default=BASELINE_MODE, help="базовый режим для p-value")
    benchmark = commands.add_parser("benchmark", parents=[common])
    benchmark.add_argument("--kind", choices=BENCHMARKS, default="trend")
    benchmark.add_argument("--seeds", type=int, nargs="+")
    benchmark.add_argument("--labeled-counts", type=int, nargs="+", default=[1, 2, 4])
    benchmark.add_argument("--unlabeled-counts", type=int, nargs="+", default=[0, 8, 16])
    benchmark.add_argument("--separations", type=float, nargs="+", default=[20.0, 45.0, 70.0])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Точка входа CLI: код 0 при успехе, 1 при ошибке (одна строка в stderr), 2 при ошибке аргументов.

    :param argv: аргументы командной строки без имени программы
    :return: код завершения
    """
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args.config, workers=args.workers, seed=args.seed, mode=args.mode)
        logger.info(f"команда {args.command}, конфигурация {config}")
        return COMMANDS[args.command](args, config)
    except (DmpctError, OSError, ValueError) as ex:
        logger.error(f"Ошибка выполнения команды {args.command}: {ex}")
        message = " ".join(str(ex).split())
        print(f"error: {type(ex).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
