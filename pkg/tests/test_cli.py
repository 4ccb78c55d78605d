import json

import pytest

from hemslab import cli

TINY = {
    "schema_version": 1,
    "synth": {"num_days": 16},
    "data": {"history_len": 36, "horizon_len": 6},
    "models": {
        "seq2seq": {"epochs": 1, "windows_per_epoch": 20, "val_windows": 20,
                    "encoder_hidden": 4, "decoder_hidden": 5, "dow_embed_dim": 2},
        "lstm": {"epochs": 1, "windows_per_epoch": 20, "val_windows": 20,
                 "encoder_hidden": 4, "dow_embed_dim": 2},
        "varma": {"p": 2, "q": 1},
    },
    "dispatch": {"num_days": 1, "episodes": 40, "repetitions": 1,
                 "forecasters": ["persistence", "actual"]},
}


def write_cfg(tmp_path, extra=None):
    cfg = json.loads(json.dumps(TINY))
    if extra:
        cfg.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def run(args):
    return cli.main(args)


# -------------------------------------------------------------- config

def test_bad_json_config_is_exit_1(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{nope")
    assert run(["--config", str(path), "--out", str(tmp_path / "o"), "ingest"]) == 1


def test_unknown_forecaster_is_exit_1(tmp_path):
    cfg = write_cfg(tmp_path, {"dispatch": {"forecasters": ["astrology"]}})
    assert run(["--config", cfg, "--out", str(tmp_path / "o"), "ingest"]) == 1


def test_bad_split_is_exit_1(tmp_path):
    cfg = write_cfg(tmp_path, {"data": {"split": {"train": 0.5, "val": 0.2, "test": 0.2}}})
    assert run(["--config", cfg, "--out", str(tmp_path / "o"), "ingest"]) == 1


def test_wrong_schema_version_is_exit_1(tmp_path):
    cfg = write_cfg(tmp_path, {"schema_version": 99})
    assert run(["--config", cfg, "--out", str(tmp_path / "o"), "ingest"]) == 1


def test_missing_stage_output_is_exit_2(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "o"
    assert run(["--config", cfg, "--out", str(out), "ingest"]) == 2  # no data.csv yet
    assert run(["--config", cfg, "--out", str(out), "report"]) == 2


# -------------------------------------------------------------- pipeline

@pytest.fixture(scope="module")
def pipeline_out(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("pipe")
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    for stage in ("synth-data", "ingest", "train-forecasters", "dispatch", "report"):
        assert run(["--config", cfg, "--out", str(out), stage]) == 0, stage
    return cfg, out


def test_pipeline_artifacts_exist(pipeline_out):
    _, out = pipeline_out
    for rel in (
        "data.csv",
        "cache/train.npz", "cache/val.npz", "cache/test.npz",
        "cache/norm.json", "cache/resampled.csv", "cache/ingest.json",
        "models/seq2seq.ckpt", "models/lstm.ckpt", "models/varma.json",
        "reports/metrics_rmse.csv", "reports/metrics_nrmse.csv",
        "reports/metrics_wmape.csv", "reports/forecast_report.json",
        "dispatch/operation.csv", "report.json", "report.md",
    ):
        assert (out / rel).exists(), rel


def test_metric_csv_marks_best_per_row(pipeline_out):
    _, out = pipeline_out
    lines = (out / "reports/metrics_wmape.csv").read_text().strip().splitlines()
    header = lines[0].split(",")
    assert header[0] == "channel" and header[-1] == "best"
    models = header[1:-1]
    for line in lines[1:]:
        cells = line.split(",")
        assert cells[-1] in models or cells[-1] == "-"


def test_operation_csv_schema(pipeline_out):
    _, out = pipeline_out
    lines = (out / "dispatch/operation.csv").read_text().strip().splitlines()
    assert lines[0] == "day,forecaster,predicted_profit,actual_profit,optimal_profit"
    names = {l.split(",")[1] for l in lines[1:]}
    assert names == {"persistence", "actual"}
    for line in lines[1:]:
        _, _, pred, act, opt = line.split(",")
        assert float(opt) >= float(act) - 1e-9


def test_ingest_cache_hit(pipeline_out, capsys):
    cfg, out = pipeline_out
    assert run(["--config", cfg, "--out", str(out), "ingest"]) == 0
    assert "cache hit" in capsys.readouterr().out


def test_report_contents(pipeline_out):
    _, out = pipeline_out
    report = json.loads((out / "report.json").read_text())
    assert set(report["operation"]) == {"persistence", "actual"}
    for s in report["operation"].values():
        assert s["days"] == 1
        assert "mean_abs_profit_gap" in s
    # the identity forecaster has zero profit gap by construction
    assert report["operation"]["actual"]["mean_abs_profit_gap"] == pytest.approx(0.0, abs=1e-12)


def test_seed_override_changes_synth(tmp_path):
    cfg = write_cfg(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run(["--config", cfg, "--seed", "1", "--out", str(out1), "synth-data"]) == 0
    assert run(["--config", cfg, "--seed", "2", "--out", str(out2), "synth-data"]) == 0
    assert (out1 / "data.csv").read_bytes() != (out2 / "data.csv").read_bytes()


def test_synth_deterministic_across_runs(tmp_path):
    cfg = write_cfg(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert run(["--config", cfg, "--out", str(out), "synth-data"]) == 0
        assert run(["--config", cfg, "--out", str(out), "ingest"]) == 0
    assert (out1 / "data.csv").read_bytes() == (out2 / "data.csv").read_bytes()
    assert (out1 / "cache/norm.json").read_bytes() == (out2 / "cache/norm.json").read_bytes()
