"""Tests for the command line and report emission."""
import subprocess
import sys
from pathlib import Path

import pandas as pd
import pytest
import yaml

from conftest import tiny_config_data

from lifelong_diffusion import __version__
from lifelong_diffusion.__main__ import _overrides, build_parser, main
from lifelong_diffusion.errors import MissingArtifactError
from lifelong_diffusion.evaluation.metrics import AlignmentMatrix
from lifelong_diffusion.experiment.report import ABLATION_COLUMNS, cmd_report

_DIR = Path(__file__).parent
_PROGRAM_DIR = _DIR.parent


def run_program(*args: str) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "lifelong_diffusion", *args],
        cwd=_PROGRAM_DIR,
        capture_output=True,
        text=True,
        timeout=120,
        check=False,
    )


def write_eval(run_dir: Path, tfr_ia: float = 1.0, method: str = "l2dm") -> None:
    eval_dir = run_dir / "eval"
    eval_dir.mkdir(parents=True)
    matrix = AlignmentMatrix()
    entries = {
        (1, 1): (80.0, 30.0),
        (2, 1): (80.0 - tfr_ia, 29.5),
        (2, 2): (70.0, 25.0),
    }
    for (k, task), (ia, ta) in entries.items():
        matrix.set(k, task, ia, ta)
    matrix.save_csv(eval_dir / "alignment.csv")
    pd.DataFrame([{"method": method, "k": 2, "TFR_IA": tfr_ia, "TFR_TA": 0.5}]).to_csv(
        eval_dir / "tfr.csv", index=False
    )
    pd.DataFrame(
        [
            {"concept": "dog", "IA": 80.0 - tfr_ia, "TA": 29.5},
            {"concept": "duck-toy", "IA": 70.0, "TA": 25.0},
            {"concept": "average", "IA": 75.0 - tfr_ia / 2, "TA": 27.25},
        ]
    ).to_csv(eval_dir / "per_concept.csv", index=False)


def test_version() -> None:
    result = run_program("--version")
    assert result.returncode == 0
    assert result.stdout.strip() == __version__


def test_report_without_evaluation_exits_three(tmp_path) -> None:
    result = run_program("report", str(tmp_path))
    assert result.returncode == 3
    assert "alignment.csv" in result.stderr


def test_missing_config_exits_two(tmp_path) -> None:
    result = run_program("pretrain", "--config", str(tmp_path / "absent.yaml"))
    assert result.returncode == 2


def test_invalid_config_exits_two(tmp_path) -> None:
    path = tmp_path / "bad.yaml"
    data = tiny_config_data(train={"steps": -1})
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    assert main(["run-sequence", "--config", str(path)]) == 2


def test_missing_base_checkpoint_exits_three(tmp_path) -> None:
    path = tmp_path / "run.yaml"
    data = tiny_config_data(str(tmp_path / "run"))
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    assert main(["run-sequence", "--config", str(path)]) == 3


def test_flags_become_overrides() -> None:
    args = build_parser().parse_args(
        ["run-sequence", "--no-tame", "--no-ecd", "--seed", "5", "--out", "x"]
    )
    assert _overrides(args) == {
        "seed": 5,
        "output_dir": "x",
        "train.use_tame": False,
        "train.use_ecd": False,
    }


def test_generate_requires_prompt() -> None:
    with pytest.raises(SystemExit):
        build_parser().parse_args(["generate", "--checkpoint", "x"])


class TestReport:
    def test_writes_tables_and_plots(self, tmp_path) -> None:
        write_eval(tmp_path)
        report = cmd_report(tmp_path)
        for name in (
            "ablation.csv",
            "tfr_table.csv",
            "alignment_table.csv",
            "ia_ta.png",
            "forgetting.png",
        ):
            assert (report / name).is_file(), name
        summary = (report / "summary.md").read_text(encoding="utf-8")
        assert "## Forgetting rates" in summary
        assert "| dog | 79.0 | 29.5 |" in summary
        assert not (report / "samples.png").exists()

    def test_rerun_is_identical(self, tmp_path) -> None:
        write_eval(tmp_path)
        report = cmd_report(tmp_path)
        names = ("ablation.csv", "tfr_table.csv", "summary.md")
        first = {name: (report / name).read_bytes() for name in names}
        cmd_report(tmp_path)
        for name, content in first.items():
            assert (report / name).read_bytes() == content, name

    def test_ablation_orders_by_forgetting(self, tmp_path) -> None:
        write_eval(tmp_path, tfr_ia=2.0)
        write_eval(tmp_path / "finetune", tfr_ia=6.0, method="finetune")
        write_eval(tmp_path / "no-ecd", tfr_ia=0.5, method="no-ecd")
        single = tmp_path / "single" / "eval"
        single.mkdir(parents=True)
        row = {"method": "l2dm", "k": 1, "TFR_IA": float("nan"), "TFR_TA": float("nan")}
        pd.DataFrame([row]).to_csv(
            single / "tfr.csv", index=False
        )
        cmd_report(tmp_path)
        ablation = pd.read_csv(tmp_path / "report" / "ablation.csv")
        assert list(ablation.columns) == ABLATION_COLUMNS
        runs = ["no-ecd", tmp_path.name, "finetune", "single"]
        assert ablation["run"].tolist() == runs
        assert ablation["TFR_IA"].isna().tolist() == [False, False, False, True]

    def test_optional_artifacts(self, tmp_path) -> None:
        write_eval(tmp_path)
        for k in (1, 2):
            (tmp_path / f"task-{k}").mkdir()
            log = {
                "step": [1, 2],
                "task_loss": [1.0, 0.5],
                "tame_loss": [0.0, 0.0],
                "ecd_loss": [0.0, 0.0],
            }
            pd.DataFrame({**log, "total": [1.0, 0.5]}).to_csv(
                tmp_path / f"task-{k}" / "train_log.csv", index=False
            )
        row = {"prompt": "a photo of V1 dog and V2 toy", "IA": 60.0, "TA": 20.0}
        pd.DataFrame([row]).to_csv(
            tmp_path / "eval" / "multi_concept.csv", index=False
        )
        report = cmd_report(tmp_path)
        assert (report / "loss_curves.png").is_file()
        summary = (report / "summary.md").read_text(encoding="utf-8")
        assert "## Multi-concept prompts" in summary

    def test_missing_per_concept_table(self, tmp_path) -> None:
        write_eval(tmp_path)
        (tmp_path / "eval" / "per_concept.csv").unlink()
        with pytest.raises(MissingArtifactError):
            cmd_report(tmp_path)


@pytest.mark.slow
def test_full_pipeline(tmp_path) -> None:
    data = tiny_config_data(
        str(tmp_path / "run"),
        pretrain={"max_steps": 60, "eval_every": 10, "images_per_family": 16},
        extractor={"images_per_family": 48, "steps": 20},
    )
    path = tmp_path / "desk.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")

    assert main(["pretrain", "--config", str(path)]) == 0
    assert main(["run-sequence", "--config", str(path)]) == 0
    assert main(["evaluate", "--config", str(path)]) == 0
    assert main(["report", str(tmp_path / "run")]) == 0
    checkpoint = tmp_path / "run" / "task-2" / "checkpoint"
    generate = [
        "generate",
        "--config",
        str(path),
        "--checkpoint",
        str(checkpoint),
        "--count",
        "2",
    ]
    assert main(generate + ["--prompt", "a photo of V1 dog and V2 toy"]) == 0

    run = tmp_path / "run"
    assert (run / "report" / "summary.md").is_file()
    assert len(pd.read_csv(run / "eval" / "alignment.csv")) == 3
    samples = sorted(path.name for path in (run / "generated").glob("*.png"))
    assert samples == ["sample-000.png", "sample-001.png"]
    guidance = pd.read_csv(run / "generated" / "sample-000_guidance.csv")
    assert {"max_V1", "max_V2"} <= set(guidance.columns)
