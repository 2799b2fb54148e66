"""Command-line surface: data generation, training, comparison, streaming
inference, and plot-data export.

All machine-readable outputs are written atomically (temp file + rename) so
an interrupted run never leaves a half-written artifact. Streaming inference
emits line-delimited JSON: a header record, one prediction record per input
step once the window is full, and a closing latency summary. Every command
exits 0 on success and nonzero on any error; config validation problems are
listed exhaustively before exiting.

``GMOE_SEED`` in the environment supplies the default seed for any command
that takes one.
"""

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import data as data_mod
from .losses import LossConfig, MOTION_NORMS
from .model import (
    CheckpointError,
    ConfigError,
    FeatureLayout,
    GMoEConfig,
    forward,
    forward_baseline,
    load_checkpoint,
    param_count,
    save_checkpoint,
    unstandardize_motion,
)
from .train import (
    TrainConfig,
    evaluate,
    fit,
    make_splits,
    persistence_mae,
    run_comparison,
)


class CliError(Exception):
    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


def _env_seed(fallback):
    raw = os.environ.get("GMOE_SEED")
    if raw is None:
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"GMOE_SEED must be an integer, got {raw!r}", code=2)


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".gmoe-tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_bytes(path, blob):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".gmoe-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# -----------------------------------------------------------------------------
# gen-data
# -----------------------------------------------------------------------------

PRESETS = {
    "desk": {"duration": data_mod.DESK_DURATION_SECONDS, "noise": 0.05},
    "smoke": {"duration": 60.0, "noise": 0.05},
}


def cmd_gen_data(args):
    preset = PRESETS[args.preset]
    duration = args.duration if args.duration is not None else preset["duration"]
    noise = args.noise if args.noise is not None else preset["noise"]
    seed = _env_seed(0) if args.seed is None else args.seed
    dataset = data_mod.generate_synthetic(
        data_mod.desk_regimes(), duration=duration, rate=args.rate,
        noise_sigma=noise, seed=seed)
    data_mod.write_csv(dataset, args.out + ".part")
    os.replace(args.out + ".part", args.out)
    print(f"wrote {len(dataset)} records at {args.rate:g} Hz to {args.out}")
    for name, secs in dataset.action_durations().items():
        print(f"  {name}: {secs:.2f} s")
    return 0


# -----------------------------------------------------------------------------
# train
# -----------------------------------------------------------------------------

_MODEL_KEYS = ("past_steps", "horizon", "expert_hidden", "gate_hidden",
               "baseline_hidden", "dropout_rate")
_TRAIN_KEYS = ("seed", "batch_size", "max_epochs", "lr0", "decay_per_epoch",
               "adam_beta1", "adam_beta2", "adam_eps", "patience",
               "min_improvement")
_LOSS_KEYS = ("b1", "b2", "motion_norm", "competitive", "l1_coeff", "l2_coeff")


def _load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config file {path}: {exc}", code=2)
    errs = []
    for section, keys in (("model", _MODEL_KEYS), ("train", _TRAIN_KEYS),
                          ("loss", _LOSS_KEYS)):
        for key in raw.get(section, {}):
            if key not in keys:
                errs.append(f"config file: unknown key {section}.{key}")
    for section in raw:
        if section not in ("model", "train", "loss"):
            errs.append(f"config file: unknown section {section!r}")
    if errs:
        raise CliError("\n".join(errs), code=2)
    return raw


def _build_configs(args, dataset):
    """Defaults, overridden by the config file, overridden by flags."""
    file_cfg = _load_config_file(args.config) if args.config else {}
    layout = FeatureLayout(num_joints=dataset.num_joints,
                           wrench_dims=dataset.wrench_dims,
                           action_names=dataset.actions,
                           sample_rate=dataset.rate)
    model_cfg = GMoEConfig(layout=layout)
    train_cfg = TrainConfig(seed=_env_seed(TrainConfig.seed),
                            loss=LossConfig())

    for key, value in file_cfg.get("model", {}).items():
        setattr(model_cfg, key, value)
    for key, value in file_cfg.get("train", {}).items():
        setattr(train_cfg, key, value)
    for key, value in file_cfg.get("loss", {}).items():
        setattr(train_cfg.loss, key, value)

    flag_map = [
        (model_cfg, "past_steps", args.past_steps),
        (model_cfg, "horizon", args.horizon),
        (model_cfg, "expert_hidden", args.expert_hidden),
        (model_cfg, "gate_hidden", args.gate_hidden),
        (model_cfg, "baseline_hidden", args.baseline_hidden),
        (model_cfg, "dropout_rate", args.dropout),
        (train_cfg, "seed", args.seed),
        (train_cfg, "batch_size", args.batch_size),
        (train_cfg, "max_epochs", args.max_epochs),
        (train_cfg, "lr0", args.lr0),
        (train_cfg, "decay_per_epoch", args.decay),
        (train_cfg, "patience", args.patience),
        (train_cfg.loss, "b1", args.b1),
        (train_cfg.loss, "b2", args.b2),
        (train_cfg.loss, "motion_norm", args.motion_norm),
        (train_cfg.loss, "l1_coeff", args.l1_coeff),
        (train_cfg.loss, "l2_coeff", args.l2_coeff),
    ]
    for target, key, value in flag_map:
        if value is not None:
            setattr(target, key, value)
    if args.competitive:
        train_cfg.loss.competitive = True

    try:
        errs = model_cfg.validate() + train_cfg.validate()
    except TypeError as exc:  # e.g. a string where the file needs a number
        raise CliError(f"invalid configuration value type: {exc}", code=2)
    if errs:
        raise CliError("invalid configuration:\n  " + "\n  ".join(errs), code=2)
    return model_cfg, train_cfg


def _effective_config(model_cfg, train_cfg):
    return {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()}


def cmd_train(args):
    dataset = data_mod.read_csv(args.data)
    model_cfg, train_cfg = _build_configs(args, dataset)
    effective = _effective_config(model_cfg, train_cfg)
    print("effective config: " + _dump(effective))

    splits = make_splits(dataset, model_cfg)
    t0 = time.perf_counter()
    model, report = fit(args.arch, splits, model_cfg, train_cfg)
    test_metrics = evaluate(model, splits.test_windows, train_cfg.loss)
    test_metrics["persistence_mae"] = persistence_mae(
        splits.test_windows, model.standardizer)
    wall = time.perf_counter() - t0

    save_checkpoint(model, args.out_checkpoint)
    _atomic_write(args.report, "".join(
        _dump(rec) + "\n" for rec in report.epoch_records()))

    summary = report.summary()
    summary["results"]["test"] = test_metrics
    summary["results"]["effective_config"] = effective
    summary["runtime"]["wall_time_s"] = wall
    summary_path = args.summary or args.report + ".summary.json"
    _atomic_write(summary_path, _dump(summary) + "\n")

    print(f"trained {args.arch}: {param_count(model)} parameters, "
          f"{len(report.epochs)} epochs ({report.stop_reason}), "
          f"best epoch {report.best_epoch}")
    print("test: " + _dump(test_metrics))
    print(f"checkpoint: {args.out_checkpoint}")
    print(f"report: {args.report}")
    print(f"summary: {summary_path}")
    return 0


# -----------------------------------------------------------------------------
# compare
# -----------------------------------------------------------------------------

def cmd_compare(args):
    dataset = data_mod.read_csv(args.data)
    model_cfg, train_cfg = _build_configs(args, dataset)
    seeds = args.seeds
    report = run_comparison(dataset, seeds, model_cfg, train_cfg)
    _atomic_write(args.report, _dump(report.to_dict()) + "\n")
    print(report.format_table())
    print(f"report: {args.report}")
    return 0


# -----------------------------------------------------------------------------
# infer
# -----------------------------------------------------------------------------

def cmd_infer(args):
    model = load_checkpoint(args.checkpoint)
    cfg = model.config
    dataset = data_mod.read_csv(args.data, actions=cfg.layout.action_names)
    layout = FeatureLayout(num_joints=dataset.num_joints,
                           wrench_dims=dataset.wrench_dims,
                           action_names=cfg.layout.action_names,
                           sample_rate=dataset.rate)
    if layout.hash() != cfg.layout.hash():
        raise CliError(
            f"feature layout mismatch: checkpoint {cfg.layout.to_dict()} vs "
            f"data {layout.to_dict()}", code=1)

    feats = dataset.features()
    n_past = cfg.past_steps
    w_len = cfg.window_len
    lines = []
    lines.append(_dump({
        "type": "header", "arch": model.arch,
        "actions": list(cfg.layout.action_names),
        "channel_names": cfg.layout.channel_names(),
        "num_joints": cfg.layout.num_joints,
        "wrench_dims": cfg.layout.wrench_dims,
        "horizon": cfg.horizon, "rate": dataset.rate,
        "first_index": n_past,
    }))
    latencies = []
    dt = 1.0 / dataset.rate
    for k in range(n_past, len(dataset)):
        if args.stream == "replay" and k > n_past:
            time.sleep(dt)
        window = feats[k - n_past:k + 1]
        t0 = time.perf_counter()
        if model.arch == "gmoe":
            out, _ = forward(model, window, mode="eval")
            probs, motion_std = out.gate_probs, out.mixture
        else:
            probs, motion_std, _ = forward_baseline(model, window, mode="eval")
        motion = unstandardize_motion(model, motion_std)
        latency_ms = (time.perf_counter() - t0) * 1e3
        latencies.append(latency_ms)
        lines.append(_dump({
            "type": "prediction", "index": k, "time": float(dataset.time[k]),
            "probs": probs.tolist(), "motion": motion.tolist(),
            "measured": feats[k].tolist(), "latency_ms": latency_ms,
        }))
    lat = np.array(latencies) if latencies else np.array([0.0])
    lines.append(_dump({
        "type": "summary", "predictions": len(latencies),
        "mean_latency_ms": float(lat.mean()),
        "p95_latency_ms": float(np.percentile(lat, 95.0)),
    }))
    text = "\n".join(lines) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        _atomic_write(args.out, text)
        print(f"wrote {len(latencies)} predictions to {args.out}; "
              f"mean latency {lat.mean():.3f} ms, p95 {np.percentile(lat, 95):.3f} ms")
    return 0


# -----------------------------------------------------------------------------
# plot-export
# -----------------------------------------------------------------------------

def _read_ndjson(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CliError(
                    f"{path}: line {lineno}: truncated or invalid JSON "
                    f"({exc})") from exc
    return records


def _export_infer(log_path, out_dir, joint, wrench):
    records = _read_ndjson(log_path)
    if not records or records[0].get("type") != "header":
        raise CliError(f"{log_path}: not an inference log (missing header)")
    header = records[0]
    preds = [r for r in records if r.get("type") == "prediction"]
    channels = header["channel_names"]
    actions = header["actions"]
    rate = header["rate"]

    for name in (joint, wrench):
        if name not in channels:
            raise CliError(
                f"unknown channel name {name!r}; available: {channels}", code=2)
    if not wrench.startswith("f_"):
        raise CliError(f"{wrench!r} is not a wrench channel", code=2)
    if not (joint.startswith("s_") or joint.startswith("sdot_")):
        raise CliError(f"{joint!r} is not a joint channel", code=2)

    rows = ["time," + ",".join(actions)]
    for r in preds:
        first = r["probs"][0]
        rows.append(",".join([repr(r["time"])] + [repr(p) for p in first]))
    _atomic_write(os.path.join(out_dir, "probabilities.csv"),
                  "\n".join(rows) + "\n")

    for ch in (joint, wrench):
        idx = channels.index(ch)
        measured = ["time,value"]
        predicted = ["anchor_time,step,target_time,value"]
        for r in preds:
            measured.append(f"{r['time']!r},{r['measured'][idx]!r}")
            for step, vec in enumerate(r["motion"], start=1):
                target_time = r["time"] + step / rate
                predicted.append(f"{r['time']!r},{step},{target_time!r},"
                                 f"{vec[idx]!r}")
        _atomic_write(os.path.join(out_dir, f"{ch}_measured.csv"),
                      "\n".join(measured) + "\n")
        _atomic_write(os.path.join(out_dir, f"{ch}_predicted.csv"),
                      "\n".join(predicted) + "\n")


def _export_curves(report_path, out_dir):
    records = _read_ndjson(report_path)
    if not records:
        raise CliError(f"{report_path}: empty training report")
    cols = list(records[0].keys())
    rows = [",".join(cols)]
    for r in records:
        rows.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                             for c in cols))
    _atomic_write(os.path.join(out_dir, "training_curves.csv"),
                  "\n".join(rows) + "\n")


def cmd_plot_export(args):
    if not args.infer_log and not args.report:
        raise CliError("nothing to export: pass --infer-log and/or --report",
                       code=2)
    os.makedirs(args.out_dir, exist_ok=True)
    if args.infer_log:
        _export_infer(args.infer_log, args.out_dir, args.joint, args.wrench)
    if args.report:
        _export_curves(args.report, args.out_dir)
    print(f"exported plot data to {args.out_dir}")
    return 0


# -----------------------------------------------------------------------------
# Parser
# -----------------------------------------------------------------------------

def _add_config_flags(p):
    p.add_argument("--config", default=None,
                   help="JSON config file (sections: model, train, loss)")
    p.add_argument("--seed", type=int, default=None,
                   help="training seed (default: GMOE_SEED or 7)")
    p.add_argument("--batch-size", type=int, default=None, help="minibatch size")
    p.add_argument("--max-epochs", type=int, default=None, help="epoch cap")
    p.add_argument("--lr0", type=float, default=None, help="initial learning rate")
    p.add_argument("--decay", type=float, default=None,
                   help="learning-rate decay per epoch")
    p.add_argument("--patience", type=int, default=None,
                   help="early-stopping patience in epochs")
    p.add_argument("--b1", type=float, default=None, help="action-loss gain")
    p.add_argument("--b2", type=float, default=None, help="motion-loss gain")
    p.add_argument("--motion-norm", choices=MOTION_NORMS, default=None,
                   help="motion-loss form")
    p.add_argument("--competitive", action="store_true",
                   help="use the competitive per-expert motion loss")
    p.add_argument("--l1-coeff", type=float, default=None,
                   help="l1 weight-penalty coefficient")
    p.add_argument("--l2-coeff", type=float, default=None,
                   help="l2 weight-penalty coefficient")
    p.add_argument("--past-steps", type=int, default=None,
                   help="past samples per window (window length is N+1)")
    p.add_argument("--horizon", type=int, default=None,
                   help="future steps predicted per window")
    p.add_argument("--expert-hidden", type=int, default=None,
                   help="expert LSTM width")
    p.add_argument("--gate-hidden", type=int, default=None,
                   help="gate dense width")
    p.add_argument("--baseline-hidden", type=int, default=None,
                   help="baseline LSTM width")
    p.add_argument("--dropout", type=float, default=None, help="dropout rate")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gmoe",
        description="Joint short-horizon action and whole-body motion "
                    "forecasting with a guided mixture of experts.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset CSV",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=None,
                   help="generator seed (default: GMOE_SEED or 0)")
    p.add_argument("--duration", type=float, default=None,
                   help="seconds of data (default: preset value)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk",
                   help="regime/duration preset")
    p.add_argument("--rate", type=float, default=data_mod.DESK_RATE_HZ,
                   help="sample rate in Hz")
    p.add_argument("--noise", type=float, default=None,
                   help="noise sigma (default: preset value)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one architecture",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--arch", choices=("gmoe", "baseline"), default="gmoe",
                   help="architecture to train")
    p.add_argument("--out-checkpoint", default="model.gmoe",
                   help="checkpoint output path")
    p.add_argument("--report", default="train_report.ndjson",
                   help="per-epoch NDJSON report path")
    p.add_argument("--summary", default=None,
                   help="summary JSON path (default: <report>.summary.json)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="train both architectures over seeds",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--seeds", type=int, nargs="+", required=True,
                   help="one or more training seeds")
    p.add_argument("--report", default="comparison.json",
                   help="comparison JSON output path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("infer", help="streaming inference over a CSV",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--data", required=True, help="dataset CSV to stream")
    p.add_argument("--stream", choices=("replay", "max"), default="max",
                   help="replay paces at the dataset rate; max runs unpaced")
    p.add_argument("--out", default="-",
                   help="NDJSON output path, or - for stdout")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("plot-export", help="export tidy CSV series for plots",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--infer-log", default=None, help="inference NDJSON log")
    p.add_argument("--report", default=None, help="training NDJSON report")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--joint", default="s_0",
                   help="joint channel for measured-vs-predicted series")
    p.add_argument("--wrench", default="f_0",
                   help="wrench channel for measured-vs-predicted series")
    p.set_defaults(func=cmd_plot_export)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, CheckpointError, data_mod.DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
