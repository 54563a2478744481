from pathlib import Path
from typing import Any
from unittest.mock import patch

import pandas as pd
import pytest

from src.config import load_config
from src.main import main
from src.phantom import MANIFEST
from src.planar import PLANES
from src.volume import load_mask

TINY_CONFIG = """
# маленький прогон для проверки CLI
T=1
num_classes=2
teacher_iters=2
student_iters=2
batch_slices=2
batch_pixels=16
labeled=2
unlabeled=2
test=2
dims=10
top_n=4
seed=3
"""


@pytest.fixture
def config_file(tmp_path: Path) -> str:
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return str(path)


@pytest.fixture
def data_dir(tmp_path: Path, config_file: str) -> str:
    target = tmp_path / "data"
    assert main(["generate", "--config", config_file, "--out", str(target)]) == 0
    return str(target)


def test_generate(data_dir: str) -> None:
    assert (Path(data_dir) / MANIFEST).is_file()
    assert len(list((Path(data_dir) / "cases").glob("*.dmpv"))) == 6
    assert load_config(str(Path(data_dir) / "config.echo")).dims == 10


def test_cotrain_evaluate_report(tmp_path: Path, config_file: str, data_dir: str, capsys) -> None:
    run_dir, fcn_dir = tmp_path / "run", tmp_path / "fcn"
    common = ["--config", config_file, "--data", data_dir]
    assert main(["cotrain", *common, "--out", str(run_dir)]) == 0
    assert main(["train", *common, "--out", str(fcn_dir)]) == 0
    for plane in PLANES:
        assert (run_dir / "final" / f"model_{plane.tag}.dmpw").is_file()
    assert (run_dir / "runlog.json-lines").is_file()

    assert main(["evaluate", *common, "--models", str(run_dir), "--out", str(tmp_path / "eval_dmpct")]) == 0
    fcn_args = ["--models", str(fcn_dir), "--mode", "fcn", "--out", str(tmp_path / "eval_fcn")]
    assert main(["evaluate", *common, *fcn_args]) == 0
    per_case = pd.read_csv(tmp_path / "eval_dmpct" / "per_case.csv")
    assert set(per_case["mode"]) == {"dmpct"}
    assert len(per_case) == 4
    assert per_case["dsc"].between(0.0, 1.0).all()

    runs = [str(tmp_path / "eval_fcn"), str(tmp_path / "eval_dmpct")]
    assert main(["report", "--runs", *runs, "--out", str(tmp_path / "compare")]) == 0
    comparison = pd.read_csv(tmp_path / "compare" / "comparison.csv")
    assert comparison["mode"].drop_duplicates().tolist() == ["fcn", "dmpct"]
    assert (tmp_path / "compare" / "comparison.xlsx").is_file()
    assert "comparison.csv" in capsys.readouterr().out


def test_pseudolabel(tmp_path: Path, config_file: str, data_dir: str) -> None:
    common = ["--config", config_file, "--data", data_dir]
    assert main(["train", *common, "--out", str(tmp_path / "fcn")]) == 0
    out = tmp_path / "pseudo_run"
    assert main(["pseudolabel", *common, "--models", str(tmp_path / "fcn"), "--out", str(out)]) == 0
    mask = load_mask(out / "pseudo" / "unlabeled_000.dmpl")
    assert mask.dims == (10, 10, 10)
    assert mask.num_classes == 2


def test_missing_models(tmp_path: Path, config_file: str, data_dir: str, capsys) -> None:
    missing = tmp_path / "nowhere"
    args = ["--data", data_dir, "--models", str(missing), "--out", str(tmp_path / "eval")]
    code = main(["evaluate", "--config", config_file, *args])
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("error: CheckpointError")
    assert str(missing) in err
    assert len(err.strip().splitlines()) == 1


def test_invalid_config(tmp_path: Path, capsys) -> None:
    path = tmp_path / "bad.cfg"
    path.write_text("T=0\n", encoding="utf-8")
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "out")]) == 1
    assert "ConfigError: line 1" in capsys.readouterr().err


def test_class_count_mismatch(tmp_path: Path, config_file: str, data_dir: str, capsys) -> None:
    common = ["--config", config_file, "--data", data_dir]
    assert main(["train", *common, "--out", str(tmp_path / "fcn")]) == 0
    other = tmp_path / "three.cfg"
    other.write_text(TINY_CONFIG.replace("num_classes=2", "num_classes=3"), encoding="utf-8")
    args = ["--data", data_dir, "--models", str(tmp_path / "fcn"), "--out", str(tmp_path / "eval")]
    code = main(["evaluate", "--config", str(other), *args])
    assert code == 1
    assert "ClassCountMismatchError" in capsys.readouterr().err


def test_unknown_command() -> None:
    with pytest.raises(SystemExit) as info:
        main(["fly"])
    assert info.value.code == 2


@patch("src.main.write_dataset")
def test_write_failure(mocked_write: Any, tmp_path: Path, config_file: str, capsys) -> None:
    mocked_write.side_effect = OSError("disk full")
    assert main(["generate", "--config", config_file, "--out", str(tmp_path / "data")]) == 1
    assert capsys.readouterr().err.strip() == "error: OSError: disk full"


@patch("src.main.run_contrast_sweep")
def test_benchmark_contrast(mocked_sweep: Any, tmp_path: Path, config_file: str, capsys) -> None:
    mocked_sweep.return_value = pd.DataFrame({"separation": [20.0, 45.0, 70.0], "mean_dsc": [0.2, 0.5, 0.5]})
    args = ["--kind", "contrast", "--separations", "20", "45", "70", "--seeds", "0", "1"]
    assert main(["benchmark", "--config", config_file, *args, "--out", str(tmp_path / "bench")]) == 0
    config, separations, seeds = mocked_sweep.call_args.args
    assert separations == [20.0, 45.0, 70.0]
    assert seeds == [0, 1]
    assert config.dims == 10
    assert capsys.readouterr().out.strip().endswith("passed=true")
    table = pd.read_csv(tmp_path / "bench" / "benchmark_contrast.csv")
    assert table["mean_dsc"].tolist() == [0.2, 0.5, 0.5]
