import json
from pathlib import Path

import pytest

from safenet.cli import EXIT_OK, EXIT_USAGE, main

SMALL_RUN = """
[network]
d_model = 8
encoder_layers = 1

[tcn]
dilations = [1]

[safd]
weight_hidden = 4

[train]
epochs = 1
batch_size = 16

[profile]
latency_repeats = 10
batch_size = 4
"""


def synth(out: Path, *extra: str) -> int:
    return main(["synth", "--subjects", "2", "--duration", "2", "--out", str(out), *extra])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """A synthetic cohort plus two small training runs, with and without decomposition."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "run.toml"
    config.write_text(SMALL_RUN)
    assert synth(root / "cohort") == EXIT_OK

    manifest = str(root / "cohort" / "manifest.json")
    assert main(["train", "--config", str(config), "--data", manifest, "--out", str(root / "with")]) == EXIT_OK
    assert (
        main(["train", "--config", str(config), "--data", manifest, "--out", str(root / "without"), "--no-safd"])
        == EXIT_OK
    )
    return root


def args(workspace: Path, command: str, out: str, *extra: str) -> list[str]:
    return [
        command,
        "--config",
        str(workspace / "run.toml"),
        "--data",
        str(workspace / "cohort" / "manifest.json"),
        "--out",
        str(workspace / out),
        *extra,
    ]


def test_synth(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    assert synth(tmp_path / "cohort") == EXIT_OK
    assert len(list((tmp_path / "cohort").iterdir())) == 5
    assert capsys.readouterr().out.splitlines()[-1] == str(tmp_path / "cohort" / "manifest.json")


def test_synth_is_reproducible(tmp_path: Path):
    assert synth(tmp_path / "a") == synth(tmp_path / "b") == EXIT_OK
    for path in (tmp_path / "a").iterdir():
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()


def test_synth_conditions_from_config(tmp_path: Path):
    config = tmp_path / "run.toml"
    config.write_text("[synth.conditions]\nlevel = 1.0\nfast = 1.25\n")
    assert synth(tmp_path / "cohort", "--config", str(config)) == EXIT_OK

    manifest = json.loads((tmp_path / "cohort" / "manifest.json").read_text())
    assert [entry["condition"] for entry in manifest["entries"]] == ["level", "fast"] * 2
    assert len(list((tmp_path / "cohort").iterdir())) == 2 * 2 * 2 + 1


def test_synth_refuses_occupied_directory(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    assert synth(tmp_path) == EXIT_OK
    assert synth(tmp_path) == EXIT_USAGE
    assert "--force" in capsys.readouterr().err
    assert synth(tmp_path, "--force") == EXIT_OK


def test_missing_manifest(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    missing = tmp_path / "missing.json"
    assert main(["train", "--data", str(missing), "--out", str(tmp_path / "out")]) == EXIT_USAGE
    assert str(missing) in capsys.readouterr().err


@pytest.mark.parametrize(
    "content",
    [
        "[train]\nepoch = 3\n",
        "[train\n",
        "[network]\nd_model = 0\n",
    ],
)
def test_invalid_config(tmp_path: Path, content: str):
    config = tmp_path / "run.toml"
    config.write_text(content)
    assert synth(tmp_path / "out", "--config", str(config)) == EXIT_USAGE


def test_missing_config(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    assert synth(tmp_path / "out", "--config", str(tmp_path / "run.toml")) == EXIT_USAGE
    assert "run.toml" in capsys.readouterr().err


def test_train_outputs(workspace: Path):
    out = workspace / "with"
    for name in ("model.sfn", "history.csv", "metrics.json", "metrics.prom"):
        assert (out / name).is_file()

    report = json.loads((out / "metrics.json").read_text())
    # 2 subjects, 119 windows each, 25 of every stream held out
    assert report["n_windows"] == 50
    assert set(report["joints"]) == {"hip", "knee", "ankle"}
    assert report["config"]["network"]["d_model"] == 8


def test_train_refuses_existing_checkpoint(workspace: Path):
    assert main(args(workspace, "train", "with")) == EXIT_USAGE


def test_eval_and_decompose(workspace: Path, capsys: pytest.CaptureFixture[str]):
    checkpoint = str(workspace / "with" / "model.sfn")
    assert main(args(workspace, "eval", "eval", "--checkpoint", checkpoint, "--split", "val")) == EXIT_OK
    report = json.loads((workspace / "eval" / "metrics_val.json").read_text())
    assert report["n_windows"] == 2 * 23

    assert main(args(workspace, "decompose", "eval", "--checkpoint", checkpoint, "--split", "val")) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[-1].startswith(f"{report['n_windows']} rows")
    lines = (workspace / "eval" / "features_val.csv").read_text().splitlines()
    assert lines[0].startswith("# config: ")
    assert len(lines) == 2 + report["n_windows"]


def test_eval_rejects_mismatched_architecture(workspace: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    config = tmp_path / "wide.toml"
    config.write_text(SMALL_RUN.replace("d_model = 8", "d_model = 16"))
    argv = [
        "eval",
        "--config",
        str(config),
        "--checkpoint",
        str(workspace / "with" / "model.sfn"),
        "--data",
        str(workspace / "cohort" / "manifest.json"),
        "--out",
        str(tmp_path / "out"),
    ]
    assert main(argv) == EXIT_USAGE
    assert "d_model" in capsys.readouterr().err


def test_preprocessed_container_evaluates_like_the_manifest(workspace: Path):
    assert main(args(workspace, "preprocess", "windows")) == EXIT_OK
    container = workspace / "windows" / "windows.sfw"
    assert container.is_file()

    argv = [
        "eval",
        "--checkpoint",
        str(workspace / "with" / "model.sfn"),
        "--data",
        str(container),
        "--out",
        str(workspace / "windows"),
    ]
    assert main(argv) == EXIT_OK
    from_container = json.loads((workspace / "windows" / "metrics_test.json").read_text())
    from_manifest = json.loads((workspace / "with" / "metrics.json").read_text())
    assert from_container["n_windows"] == from_manifest["n_windows"]
    assert from_container["per_subject_rmse"].keys() == from_manifest["per_subject_rmse"].keys()


def test_profile_checkpoint(workspace: Path):
    checkpoint = str(workspace / "with" / "model.sfn")
    assert main(args(workspace, "profile", "profile", "--checkpoint", checkpoint, "--label", "trained")) == EXIT_OK

    cost = json.loads((workspace / "profile" / "cost.json").read_text())
    assert cost["effective_macs"] <= cost["flops"]
    assert cost["latency_s"] > 0
    rows = (workspace / "profile" / "costs.csv").read_text().splitlines()
    assert rows[1].startswith("trained,")


def test_profile_random_windows(tmp_path: Path):
    config = tmp_path / "run.toml"
    config.write_text(SMALL_RUN)
    assert main(["profile", "--config", str(config), "--out", str(tmp_path)]) == EXIT_OK
    rows = (tmp_path / "costs.csv").read_text().splitlines()
    assert rows[1].startswith("safenet-d8-safd2,")


def test_profile_checkpoint_needs_data(tmp_path: Path):
    assert main(["profile", "--checkpoint", str(tmp_path / "model.sfn"), "--out", str(tmp_path)]) == EXIT_USAGE


def test_compare(workspace: Path, capsys: pytest.CaptureFixture[str]):
    argv = [
        "compare",
        "--with",
        str(workspace / "with" / "metrics.json"),
        "--without",
        str(workspace / "without" / "metrics.json"),
        "--out",
        str(workspace / "ablation"),
    ]
    assert main(argv) == EXIT_OK
    ablation = json.loads((workspace / "ablation" / "ablation.json").read_text())
    assert ablation["subjects"] == ["subject_00", "subject_01"]
    assert "median RMSE" in capsys.readouterr().out


def test_compare_needs_paired_reports(workspace: Path, tmp_path: Path):
    report = str(workspace / "with" / "metrics.json")
    argv = ["compare", "--with", report, "--with", report, "--without", report, "--out", str(tmp_path)]
    assert main(argv) == EXIT_USAGE


def test_training_is_deterministic(workspace: Path, tmp_path: Path):
    argv = args(workspace, "train", "with", "--force")
    argv[argv.index("--out") + 1] = str(tmp_path / "again")
    assert main(argv) == EXIT_OK
    for name in ("model.sfn", "metrics.json", "history.csv"):
        assert (tmp_path / "again" / name).read_bytes() == (workspace / "with" / name).read_bytes()
