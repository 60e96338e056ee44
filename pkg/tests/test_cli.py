import json

import pytest

from stprompt.checkpoint import load_checkpoint
from stprompt.cli import build_parser, main
from stprompt.config import FIELD_HELP

SMALL = ["--d", "4", "--d-t", "4", "--d-r", "4", "--layers", "1", "--history", "6", "--horizon", "3"]


def json_lines(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    for seed, R, extra in ((1, 8, []), (2, 10, []), (3, 7, ["--phase", "0.25"])):
        assert main(["gen-synth", "--out", str(root / f"d{seed}.stds"), "--seed", str(seed),
                     "--regions", str(R), "--steps", "150", "--steps-per-day", "24", *extra]) == 0
    return root


@pytest.fixture(scope="module")
def checkpoint(workspace):
    out = workspace / "ck.stck"
    data = f"{workspace / 'd1.stds'},{workspace / 'd2.stds'}"
    assert main(["pretrain", "--data", data, "--out", str(out), "--epochs", "2", *SMALL,
                 "--log-file", str(workspace / "pre.log")]) == 0
    return out


def test_pretrain_writes_checkpoint_and_epoch_log(workspace, checkpoint):
    records = json_lines((workspace / "pre.log").read_text())
    assert [r["epoch"] for r in records] == [1, 2]
    assert {"dataset", "train_loss", "val_mae", "val_rmse", "val_mape", "wall_ms"} <= records[0].keys()
    _, meta = load_checkpoint(checkpoint)
    assert meta["config"]["d"] == 4 and meta["seed"] == 0


def test_pretrain_logs_to_stdout_by_default(workspace, capsys):
    assert main(["pretrain", "--data", str(workspace / "d1.stds"), "--out", str(workspace / "x.stck"),
                 "--epochs", "1", *SMALL]) == 0
    assert json_lines(capsys.readouterr().out)[0]["epoch"] == 1


def test_prompt_tune_prints_metric_report(workspace, checkpoint, capsys):
    code = main(["prompt-tune", "--checkpoint", str(checkpoint), "--data", str(workspace / "d3.stds"),
                 "--epochs", "2", "--out", str(workspace / "tuned.stck")])
    assert code == 0
    report = json_lines(capsys.readouterr().out)[-1]
    assert report["mode"] == "prompt_tune" and {"mae", "rmse", "mape", "steps"} <= report.keys()
    assert (workspace / "tuned.stck").exists()


def test_compare_zero_shot_records_no_steps(workspace, checkpoint, capsys):
    assert main(["compare", "--mode", "zero_shot", "--checkpoint", str(checkpoint),
                 "--data", str(workspace / "d3.stds")]) == 0
    report = json_lines(capsys.readouterr().out)[-1]
    assert report["steps"] == 0 and report["mode"] == "zero_shot"


def test_evaluate_and_analyze(workspace, checkpoint, capsys):
    assert main(["evaluate", "--checkpoint", str(checkpoint), "--data", str(workspace / "d3.stds"),
                 "--on", "val"]) == 0
    assert json_lines(capsys.readouterr().out)[-1]["split"] == "val"
    out_dir = workspace / "analysis"
    assert main(["analyze", "--checkpoint", str(checkpoint), "--data", str(workspace / "d3.stds"),
                 "--out-dir", str(out_dir), "--max-samples", "100"]) == 0
    lines = (out_dir / "projection.csv").read_text().splitlines()
    assert lines[0] == "x,y" and 1 < len(lines) <= 101
    stats = json.loads((out_dir / "stats.json").read_text())
    assert {"mean_pairwise_cosine", "circular_variance", "uniformity_metric"} <= stats.keys()


def test_bench_subcommand(tmp_path, capsys):
    out = tmp_path / "scaling.csv"
    assert main(["bench", "--component", "uniformity", "--values", "4,8,16,32,64", "--out", str(out)]) == 0
    report = json_lines(capsys.readouterr().out)[-1]
    assert report["component"] == "uniformity" and len(report["median_ms"]) == 5
    assert out.read_text().splitlines()[-1].startswith("slope,uniformity,R,")


def test_seeded_runs_are_byte_identical(workspace):
    outs = []
    for k in range(2):
        out = workspace / f"rep{k}.stck"
        assert main(["pretrain", "--data", str(workspace / "d1.stds"), "--out", str(out), "--epochs", "2",
                     "--seed", "3", *SMALL, "--log-file", str(workspace / f"rep{k}.log")]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    for k in range(2):
        main(["gen-synth", "--out", str(workspace / f"g{k}.stds"), "--seed", "8", "--regions", "5"])
    assert (workspace / "g0.stds").read_bytes() == (workspace / "g1.stds").read_bytes()


def test_config_file_precedence(workspace, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"d": 6, "d_t": 4, "d_r": 4, "layers": 1, "tau": 0.5}))
    out = tmp_path / "ck.stck"
    assert main(["pretrain", "--config", str(cfg), "--data", str(workspace / "d1.stds"), "--out", str(out),
                 "--epochs", "1", "--d", "5", "--log-file", str(tmp_path / "log")]) == 0
    meta = load_checkpoint(out)[1]["config"]
    assert meta["d"] == 5 and meta["tau"] == 0.5 and meta["lam"] == 1.0


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_exit_codes(workspace, checkpoint, tmp_path, capsys):
    assert main(["pretrain", "--data", "x", "--out", "y", "--bogus"]) == 1
    assert "--bogus" in capsys.readouterr().err
    assert main(["frobnicate"]) == 1
    assert main(["pretrain", "--data", str(workspace / "d1.stds"), "--out", "y", "--no-uni", "--batchnorm"]) == 1
    bad = tmp_path / "bad.stck"
    bad.write_bytes(b"NOPE" + checkpoint.read_bytes()[4:])
    assert main(["evaluate", "--checkpoint", str(bad), "--data", str(workspace / "d3.stds")]) == 2
    assert "expected b'STCK'" in capsys.readouterr().err
    assert main(["evaluate", "--checkpoint", str(tmp_path / "missing.stck"), "--data", "x"]) == 2
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"d": 4, "warp": 9}))
    assert main(["pretrain", "--config", str(cfg), "--data", str(workspace / "d1.stds"), "--out", "y"]) == 2
    assert main(["pretrain", "--data", str(workspace / "d1.stds"), "--out", str(tmp_path / "z.stck"),
                 "--epochs", "2", "--lr", "1e36", *SMALL, "--log-file", str(tmp_path / "log")]) == 3


def test_help_documents_defaults(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, sp in sub.choices.items():
        text = sp.format_help()
        if name in ("gen-synth", "bench"):
            continue  # these carry their own --seed flag rather than the run configuration
        for action in sp._actions:
            if action.dest in FIELD_HELP:
                assert action.help == FIELD_HELP[action.dest]
        assert "usage" in text
    assert main(["prompt-tune", "--help"]) == 0
    text = capsys.readouterr().out
    assert "(default 20)" in text and "(default 0.3)" in text and "(default 32)" in text
