"""Pipeline command line: synth-data, ingest, train-forecasters, dispatch,
report. Stages compose through files in the output directory; every stage
is deterministic given (config, seed) and writes atomically.

Exit codes: 0 success, 1 validation/config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data as tsd
from . import dp, hems, qlearn, scenario, synth, varma
from .errors import ConfigError, HemslabError, MissingStageOutput
from .metrics import MetricReport
from .seq2seq import (
    LstmBaselineForecaster,
    ModelConfig,
    Seq2SeqForecaster,
    TrainConfig,
    persistence_predict,
)

CONFIG_SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "seed": 0,
    "synth": {"num_days": 120},
    "data": {
        "csv_path": None,  # defaults to <out>/data.csv (the synth output)
        "resample_seconds": 600,
        "history_len": 144,
        "horizon_len": 6,
        "split": {"train": 0.7, "val": 0.2, "test": 0.1},
    },
    "models": {
        "seq2seq": {
            "encoder_hidden": 32,
            "decoder_hidden": 48,
            "dow_embed_dim": 4,
            "epochs": 15,
            "batch_size": 16,
            "lr": 2e-3,
            "patience": 5,
            "windows_per_epoch": 1200,
            "val_windows": 300,
        },
        "lstm": {
            "encoder_hidden": 32,
            "dow_embed_dim": 4,
            "epochs": 15,
            "batch_size": 16,
            "lr": 2e-3,
            "patience": 5,
            "windows_per_epoch": 1200,
            "val_windows": 300,
        },
        "varma": {"p": 6, "q": 2},
    },
    "dispatch": {
        "num_days": 40,
        "forecasters": ["seq2seq", "lstm", "varma", "persistence"],
        "episodes": 300,
        "repetitions": 10,
        "discount": 1.0,
        "learning_rate": 0.95,
        "epsilon_initial": 0.1,
        "epsilon_decay": 0.999,
        "soc_bins": 17,
    },
}

FORECASTER_NAMES = ("seq2seq", "lstm", "varma", "persistence", "actual")


# --------------------------------------------------------------- utilities

def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | None, seed_override: int | None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        cfg = _deep_merge(cfg, user)
    if cfg.get("schema_version") != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {cfg.get('schema_version')}")
    if seed_override is not None:
        cfg["seed"] = seed_override
    split = cfg["data"]["split"]
    total = split["train"] + split["val"] + split["test"]
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"split fractions sum to {total}, expected 1")
    for name in cfg["dispatch"]["forecasters"]:
        if name not in FORECASTER_NAMES:
            raise ConfigError(f"unknown forecaster {name!r}")
    return cfg


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _hash_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingStageOutput(f"{path} missing; run the '{stage}' stage first")
    return path


# ------------------------------------------------------------------ stages

def cmd_synth_data(cfg: dict, out: Path) -> None:
    frame = synth.generate(cfg["synth"]["num_days"], seed=cfg["seed"])
    tmp = out / "data.csv.tmp"
    tsd.write_csv(frame, tmp)
    os.replace(tmp, out / "data.csv")
    print(f"synth-data: wrote {out / 'data.csv'} ({frame.num_steps} rows)")


def cmd_ingest(cfg: dict, out: Path) -> None:
    dcfg = cfg["data"]
    csv_path = Path(dcfg["csv_path"]) if dcfg["csv_path"] else out / "data.csv"
    if not csv_path.exists():
        raise MissingStageOutput(f"input data file not found: {csv_path}")
    cache = out / "cache"
    cache.mkdir(parents=True, exist_ok=True)

    stamp = {
        "data_config": dcfg,
        "csv_sha256": hashlib.sha256(csv_path.read_bytes()).hexdigest(),
    }
    stamp_hash = _hash_obj(stamp)
    stamp_file = cache / "ingest.json"
    outputs = [cache / f"{p}.npz" for p in ("train", "val", "test")]
    outputs += [cache / "norm.json", cache / "resampled.csv"]
    if stamp_file.exists():
        prior = json.loads(stamp_file.read_text())
        if prior.get("hash") == stamp_hash and all(p.exists() for p in outputs):
            print("ingest: cache hit, outputs unchanged")
            return

    frame = tsd.load_csv(csv_path, list(synth.CHANNELS))
    if frame.period != dcfg["resample_seconds"]:
        frame = tsd.resample_mean(frame, dcfg["resample_seconds"])
    split = tsd.SplitSpec(dcfg["split"]["train"], dcfg["split"]["val"], dcfg["split"]["test"])
    train_idx, _, _ = tsd.partition_indices(split, frame.num_steps)
    norm = tsd.fit_normalization(frame, train_idx)
    frame_norm = tsd.normalize(frame, norm)
    train, val, test = tsd.make_windows(
        frame_norm, dcfg["history_len"], dcfg["horizon_len"], split
    )

    tmp = cache / "resampled.csv.tmp"
    tsd.write_csv(frame, tmp)
    os.replace(tmp, cache / "resampled.csv")
    for name, ds in (("train", train), ("val", val), ("test", test)):
        ds.save(cache / f"{name}.npz.tmp.npz")
        os.replace(cache / f"{name}.npz.tmp.npz", cache / f"{name}.npz")
    atomic_write_text(cache / "norm.json", json.dumps(norm.to_dict(), sort_keys=True, indent=2))
    atomic_write_text(stamp_file, json.dumps(
        {"hash": stamp_hash, "num_steps": frame.num_steps, "period": frame.period},
        sort_keys=True, indent=2,
    ))
    print(f"ingest: {train.num_windows}/{val.num_windows}/{test.num_windows} windows cached")


def _load_cache(cfg: dict, out: Path):
    cache = out / "cache"
    _require(cache / "train.npz", "ingest")
    train = tsd.WindowedDataset.load(cache / "train.npz")
    val = tsd.WindowedDataset.load(cache / "val.npz")
    test = tsd.WindowedDataset.load(cache / "test.npz")
    norm = tsd.NormalizationParams.from_dict(json.loads((cache / "norm.json").read_text()))
    frame = tsd.load_csv(cache / "resampled.csv", list(synth.CHANNELS))
    return train, val, test, norm, frame


def _model_config(cfg: dict, which: str, channels) -> ModelConfig:
    m = cfg["models"][which]
    return ModelConfig(
        channels=tuple(channels),
        history_len=cfg["data"]["history_len"],
        horizon_len=cfg["data"]["horizon_len"],
        encoder_hidden=m["encoder_hidden"],
        decoder_hidden=m.get("decoder_hidden", m["encoder_hidden"]),
        dow_embed_dim=m["dow_embed_dim"],
    )


def _train_config(cfg: dict, which: str) -> TrainConfig:
    m = cfg["models"][which]
    return TrainConfig(
        epochs=m["epochs"],
        batch_size=m["batch_size"],
        lr=m["lr"],
        seed=cfg["seed"],
        patience=m["patience"],
        windows_per_epoch=m.get("windows_per_epoch"),
        val_windows=m.get("val_windows"),
    )


def _varma_predict_fn(model: varma.VarmaModel, norm: tsd.NormalizationParams,
                      horizon_len: int):
    zeros = np.zeros((model.q, model.k)) if model.q else None

    def predict(windows: np.ndarray, dows: np.ndarray) -> np.ndarray:
        out = np.empty((windows.shape[0], horizon_len, model.k))
        for i in range(windows.shape[0]):
            out[i] = varma.forecast(model, windows[i], horizon_len, residual_history=zeros)
        return np.maximum(tsd.denormalize_values(out, norm), 0.0)
    return predict


def _persistence_predict_fn(norm: tsd.NormalizationParams, horizon_len: int):
    def predict(windows: np.ndarray, dows: np.ndarray) -> np.ndarray:
        out = np.stack([persistence_predict(w, horizon_len) for w in windows])
        return np.maximum(tsd.denormalize_values(out, norm), 0.0)
    return predict


def cmd_train_forecasters(cfg: dict, out: Path) -> None:
    train, val, test, norm, _ = _load_cache(cfg, out)
    channels = train.channel_names
    models_dir = out / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    horizon_len = cfg["data"]["horizon_len"]

    vcfg = cfg["models"]["varma"]
    # VARMA is fit on the normalized training rows (window cache keeps the
    # raw training span at its head)
    train_rows = _training_rows(cfg, out)
    varma_model = varma.fit(train_rows, p=vcfg["p"], q=vcfg["q"])
    atomic_write_text(models_dir / "varma.json", varma_model.to_json())

    lstm_model = LstmBaselineForecaster(_model_config(cfg, "lstm", channels), norm,
                                        seed=cfg["seed"])
    lstm_trace = lstm_model.train(train, val, _train_config(cfg, "lstm"))
    lstm_model.save(models_dir / "lstm.ckpt")

    s2s_model = Seq2SeqForecaster(_model_config(cfg, "seq2seq", channels), norm,
                                  seed=cfg["seed"])
    s2s_trace = s2s_model.train(train, val, _train_config(cfg, "seq2seq"))
    s2s_model.save(models_dir / "seq2seq.ckpt")

    predictors = {
        "varma": _varma_predict_fn(varma_model, norm, horizon_len),
        "lstm": lstm_model.predict,
        "seq2seq": s2s_model.predict,
        "persistence": _persistence_predict_fn(norm, horizon_len),
    }
    actual = tsd.denormalize_values(test.targets, norm)
    ranges = [(float(norm.vmin[j]), float(norm.vmax[j])) for j in range(len(channels))]
    reports = {}
    for name, fn in predictors.items():
        pred = fn(test.inputs, test.day_of_week)
        reports[name] = MetricReport.compute(channels, actual, pred, ranges)

    reports_dir = out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    for metric in ("rmse", "nrmse", "wmape"):
        _write_metric_table(reports_dir / f"metrics_{metric}.csv", metric, channels, reports)
    atomic_write_text(
        reports_dir / "forecast_report.json",
        json.dumps(
            {
                "metrics": {name: json.loads(r.to_json()) for name, r in reports.items()},
                "training": {"lstm": lstm_trace, "seq2seq": s2s_trace},
            },
            sort_keys=True,
            indent=2,
        ),
    )
    print(f"train-forecasters: wrote metrics for {len(reports)} models")


def _training_rows(cfg: dict, out: Path) -> np.ndarray:
    _, _, _, norm, frame = _load_cache(cfg, out)
    split = tsd.SplitSpec(**{
        "train_frac": cfg["data"]["split"]["train"],
        "val_frac": cfg["data"]["split"]["val"],
        "test_frac": cfg["data"]["split"]["test"],
    })
    train_idx, _, _ = tsd.partition_indices(split, frame.num_steps)
    return tsd.normalize_values(frame.values[train_idx], norm)


def _write_metric_table(path: Path, metric: str, channels, reports: dict) -> None:
    names = sorted(reports)
    lines = ["channel," + ",".join(names) + ",best"]
    for j, ch in enumerate(channels):
        vals = [getattr(reports[n], metric)[j] for n in names]
        best = names[int(np.nanargmin(vals))] if not np.all(np.isnan(vals)) else "-"
        lines.append(f"{ch}," + ",".join(f"{v:.12g}" for v in vals) + f",{best}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# ----------------------------------------------------------------- dispatch

def _dispatch_day_worker(args):
    """Q-learning offline training + online test + oracle for one
    (day, forecaster) pair; pure function of its arguments."""
    (day_idx, fname, env_pred_json, env_act_json, pv_pred, load_pred,
     pv_act, load_act, qkw, reps, base_seed) = args
    env_pred = hems.HemsConfig.from_json(env_pred_json)
    env_act = hems.HemsConfig.from_json(env_act_json)
    predicted, actual = [], []
    for rep in range(reps):
        qcfg = qlearn.QLearnConfig(seed=base_seed + rep, **qkw)
        table, pred_profit, _ = qlearn.train_offline(
            qcfg, env_pred, np.asarray(pv_pred), np.asarray(load_pred))
        act_profit, _ = qlearn.test_online(
            table, qcfg, env_act, np.asarray(pv_act), np.asarray(load_act))
        predicted.append(pred_profit)
        actual.append(act_profit)
    optimal, _, _ = dp.solve(env_act, np.asarray(pv_act), np.asarray(load_act))
    return (day_idx, fname, float(np.mean(predicted)), float(np.mean(actual)),
            float(optimal))


def dispatch_day_starts(cfg: dict, frame: tsd.SeriesFrame) -> list[int]:
    """Starts (frame row indices, midnight-aligned) of the evaluation days:
    the last num_days full days inside the test partition."""
    steps_per_day = 86400 // frame.period
    split = cfg["data"]["split"]
    spec = tsd.SplitSpec(split["train"], split["val"], split["test"])
    _, _, test_idx = tsd.partition_indices(spec, frame.num_steps)
    lo = max(int(test_idx[0]), cfg["data"]["history_len"])
    starts = [
        s
        for s in range(0, frame.num_steps - steps_per_day + 1, steps_per_day)
        if s >= lo
    ]
    return starts[-cfg["dispatch"]["num_days"]:]


def cmd_dispatch(cfg: dict, out: Path, jobs: int = 1) -> None:
    train, val, test, norm, frame = _load_cache(cfg, out)
    dcfg = cfg["dispatch"]
    models_dir = out / "models"
    horizon_len = cfg["data"]["horizon_len"]
    history_len = cfg["data"]["history_len"]

    predictors = {}
    for name in dcfg["forecasters"]:
        if name == "seq2seq":
            model = Seq2SeqForecaster.load(_require(models_dir / "seq2seq.ckpt",
                                                    "train-forecasters"))
            predictors[name] = model.predict
        elif name == "lstm":
            model = LstmBaselineForecaster.load(_require(models_dir / "lstm.ckpt",
                                                         "train-forecasters"))
            predictors[name] = model.predict
        elif name == "varma":
            vm = varma.VarmaModel.load(_require(models_dir / "varma.json",
                                                "train-forecasters"))
            predictors[name] = _varma_predict_fn(vm, norm, horizon_len)
        elif name == "persistence":
            predictors[name] = _persistence_predict_fn(norm, horizon_len)
        elif name == "actual":
            predictors[name] = None  # identity: fed the actual profile

    day_starts = dispatch_day_starts(cfg, frame)
    if not day_starts:
        raise ConfigError("no full evaluation days inside the test partition")

    qkw = dict(
        episodes=dcfg["episodes"],
        discount=dcfg["discount"],
        learning_rate=dcfg["learning_rate"],
        epsilon_initial=dcfg["epsilon_initial"],
        epsilon_decay=dcfg["epsilon_decay"],
        soc_bins=dcfg["soc_bins"],
    )
    tasks = []
    for di, start in enumerate(day_starts):
        act_profile = scenario.actual_day_profile(frame, start)
        env_act = scenario.build_env_config(act_profile)
        pv_act, load_act = scenario.trajectories(act_profile)
        for fname, predict_fn in predictors.items():
            if predict_fn is None:
                pred_profile = act_profile
            else:
                pred_profile = scenario.forecast_day_profile(
                    predict_fn, frame, norm, start, history_len, horizon_len)
            env_pred = scenario.build_env_config(pred_profile)
            pv_pred, load_pred = scenario.trajectories(pred_profile)
            tasks.append((
                di, fname, env_pred.to_json(), env_act.to_json(),
                pv_pred.tolist(), load_pred.tolist(),
                pv_act.tolist(), load_act.tolist(),
                qkw, dcfg["repetitions"], cfg["seed"],
            ))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_dispatch_day_worker, tasks))
    else:
        results = [_dispatch_day_worker(t) for t in tasks]
    results.sort(key=lambda r: (r[0], r[1]))

    dispatch_dir = out / "dispatch"
    lines = ["day,forecaster,predicted_profit,actual_profit,optimal_profit"]
    for day_idx, fname, pred, act, opt in results:
        lines.append(f"{day_idx},{fname},{pred:.12g},{act:.12g},{opt:.12g}")
    atomic_write_text(dispatch_dir / "operation.csv", "\n".join(lines) + "\n")
    print(f"dispatch: evaluated {len(day_starts)} days x {len(predictors)} forecasters")


def cmd_report(cfg: dict, out: Path) -> None:
    op_path = _require(out / "dispatch" / "operation.csv", "dispatch")
    fr_path = _require(out / "reports" / "forecast_report.json", "train-forecasters")
    rows = [r.split(",") for r in op_path.read_text().strip().splitlines()[1:]]
    if not rows:
        raise ConfigError("operation.csv has no rows")
    by_forecaster: dict[str, list[tuple[float, float, float]]] = {}
    for day, fname, pred, act, opt in rows:
        by_forecaster.setdefault(fname, []).append((float(pred), float(act), float(opt)))

    summary = {}
    for fname, vals in sorted(by_forecaster.items()):
        arr = np.asarray(vals)
        summary[fname] = {
            "days": len(vals),
            "mean_predicted_profit": float(arr[:, 0].mean()),
            "mean_actual_profit": float(arr[:, 1].mean()),
            "mean_optimal_profit": float(arr[:, 2].mean()),
            "mean_abs_profit_gap": float(np.abs(arr[:, 0] - arr[:, 1]).mean()),
            "mean_optimality_gap": float((arr[:, 2] - arr[:, 1]).mean()),
        }

    forecast_report = json.loads(fr_path.read_text())
    report = {
        "forecast_metrics": forecast_report["metrics"],
        "operation": summary,
    }
    atomic_write_text(out / "report.json", json.dumps(report, sort_keys=True, indent=2))

    md = ["# Pipeline report", "", "## Operation (per-forecaster daily profit)", ""]
    md.append("| forecaster | days | predicted | actual | optimal | |pred-actual| gap |")
    md.append("|---|---|---|---|---|---|")
    for fname, s in summary.items():
        md.append(
            f"| {fname} | {s['days']} | {s['mean_predicted_profit']:.4f} | "
            f"{s['mean_actual_profit']:.4f} | {s['mean_optimal_profit']:.4f} | "
            f"{s['mean_abs_profit_gap']:.4f} |"
        )
    md += ["", "## Forecast wMAPE (test partition)", ""]
    wmapes = {n: r["wmape"] for n, r in forecast_report["metrics"].items()}
    chans = forecast_report["metrics"][next(iter(wmapes))]["channels"]
    md.append("| channel | " + " | ".join(sorted(wmapes)) + " |")
    md.append("|---" * (len(wmapes) + 1) + "|")
    for j, ch in enumerate(chans):
        md.append(f"| {ch} | " + " | ".join(f"{wmapes[n][j]:.3f}" for n in sorted(wmapes)) + " |")
    atomic_write_text(out / "report.md", "\n".join(md) + "\n")
    print(f"report: wrote {out / 'report.json'} and {out / 'report.md'}")


# --------------------------------------------------------------------- main

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hemslab", description=__doc__)
    parser.add_argument("--config", type=str, default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", type=str, default="out", help="output directory")
    parser.add_argument("--jobs", type=int, default=1, help="parallel workers (dispatch)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth-data", "ingest", "train-forecasters", "dispatch", "report"):
        sub.add_parser(name)
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "synth-data":
            cmd_synth_data(cfg, out)
        elif args.command == "ingest":
            cmd_ingest(cfg, out)
        elif args.command == "train-forecasters":
            cmd_train_forecasters(cfg, out)
        elif args.command == "dispatch":
            cmd_dispatch(cfg, out, jobs=args.jobs)
        elif args.command == "report":
            cmd_report(cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (HemslabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
