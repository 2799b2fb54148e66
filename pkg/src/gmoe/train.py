"""Adam training loop with decayed learning rate, chronological splits,
early stopping, and multi-seed architecture comparison.

Everything a run reports is a deterministic function of (seed, config,
dataset): parameter init, per-epoch shuffles, and dropout masks all draw
from one seeded stream, and every reduction has a fixed order. Reported loss
components exclude the l1/l2 weight penalties (the penalties still shape
gradients when enabled).

The data pipeline splits records chronologically 70/20/10 and windows each
segment independently, so no window ever straddles a split boundary and the
test segment is strictly the latest data. The input standardizer is fitted
on the training segment only.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import DatasetTooSmallError, window_dataset
from .layers import Standardizer
from .losses import (
    LossConfig,
    accuracy,
    action_loss,
    action_loss_backward,
    mae,
    mixture_loss_and_grads,
    motion_loss,
    motion_loss_backward,
    regularization_grad,
)
from .model import (
    ConfigError,
    baseline_backward,
    forward,
    forward_baseline,
    gmoe_backward,
    init_baseline,
    init_gmoe,
    param_count,
)
from .tensor import SeededRng

ARCHITECTURES = ("gmoe", "baseline")


class NonFiniteGradientError(RuntimeError):
    def __init__(self, block):
        self.block = block
        super().__init__(f"non-finite gradient in parameter block {block!r}")


@dataclass
class TrainConfig:
    seed: int = 7
    batch_size: int = 64
    max_epochs: int = 200
    lr0: float = 1e-3
    decay_per_epoch: float = 0.97
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 5
    min_improvement: float = 1e-6
    loss: LossConfig = field(default_factory=LossConfig)

    def validate(self):
        errs = list(self.loss.validate())
        if self.batch_size < 1:
            errs.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            errs.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.lr0 <= 0:
            errs.append(f"lr0 must be > 0, got {self.lr0}")
        if not 0.0 < self.decay_per_epoch <= 1.0:
            errs.append(f"decay_per_epoch must be in (0, 1], "
                        f"got {self.decay_per_epoch}")
        if self.patience < 1:
            errs.append(f"patience must be >= 1, got {self.patience}")
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0:
            errs.append("adam betas must be in [0, 1)")
        return errs

    def validated(self):
        errs = self.validate()
        if errs:
            raise ConfigError(errs)
        return self

    def to_dict(self):
        return {"seed": self.seed, "batch_size": self.batch_size,
                "max_epochs": self.max_epochs, "lr0": self.lr0,
                "decay_per_epoch": self.decay_per_epoch,
                "adam_beta1": self.adam_beta1, "adam_beta2": self.adam_beta2,
                "adam_eps": self.adam_eps, "patience": self.patience,
                "min_improvement": self.min_improvement,
                "loss": self.loss.to_dict()}


# -----------------------------------------------------------------------------
# Splitting
# -----------------------------------------------------------------------------

def split_chronological(items):
    """Contiguous 70/20/10 partition, in time order.

    Sizes use integer arithmetic: floor(0.7 n), floor(0.2 n), remainder.
    Works on anything sliceable; Dataset objects split via ``.slice``.
    """
    n = len(items)
    n_train = (7 * n) // 10
    n_val = (2 * n) // 10
    if n_train == 0 or n_val == 0 or n - n_train - n_val == 0:
        raise DatasetTooSmallError(f"cannot split {n} items 70/20/10")
    cut1, cut2 = n_train, n_train + n_val
    if hasattr(items, "slice"):
        return items.slice(0, cut1), items.slice(cut1, cut2), items.slice(cut2, n)
    return items[:cut1], items[cut1:cut2], items[cut2:]


@dataclass
class DataSplits:
    train_dataset: object
    val_dataset: object
    test_dataset: object
    train_windows: object
    val_windows: object
    test_windows: object


def make_splits(dataset, model_config):
    """Split records chronologically, then window each segment on its own so
    windows never mix records across a split boundary."""
    tr, va, te = split_chronological(dataset)
    n, t = model_config.past_steps, model_config.horizon
    return DataSplits(
        train_dataset=tr, val_dataset=va, test_dataset=te,
        train_windows=window_dataset(tr, n, t),
        val_windows=window_dataset(va, n, t),
        test_windows=window_dataset(te, n, t),
    )


# -----------------------------------------------------------------------------
# Adam
# -----------------------------------------------------------------------------

@dataclass
class AdamState:
    moments: dict
    step: int = 0

    @classmethod
    def init_like(cls, param_blocks):
        return cls(moments={name: (np.zeros_like(p), np.zeros_like(p))
                            for name, p in param_blocks})


def adam_step(param_blocks, grads, state, lr, beta1=0.9, beta2=0.999,
              eps=1e-8):
    """One in-place Adam update with bias correction.

    Raises :class:`NonFiniteGradientError` naming the offending block if any
    gradient is not finite.
    """
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, p in param_blocks:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        m, v = state.moments[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# -----------------------------------------------------------------------------
# Evaluation
# -----------------------------------------------------------------------------

def _batch_forward(model, x, mode, rng, action_targets, motion_targets, cfg):
    """Forward + loss + grads for one batch of either architecture."""
    if model.arch == "gmoe":
        out, cache = forward(model, x, mode, rng)
        values, dp, dm, de = mixture_loss_and_grads(
            out.gate_probs, out.mixture, out.expert_outputs,
            action_targets, motion_targets, cfg)
        grads = gmoe_backward(model, cache, dp, dm, de) if mode == "train" else None
        return out.gate_probs, out.mixture, values, grads
    probs, motion, cache = forward_baseline(model, x, mode, rng)
    l1 = action_loss(probs, action_targets)
    l2 = motion_loss(motion, motion_targets, cfg.motion_norm)
    grads = None
    if mode == "train":
        dp = action_loss_backward(probs, action_targets, gain=cfg.b1)
        dm = motion_loss_backward(motion, motion_targets, cfg.motion_norm,
                                  gain=cfg.b2)
        grads = baseline_backward(model, cache, dp, dm)
    from .losses import LossValues, total_loss
    values = LossValues(total=total_loss(l1, l2, 0.0, cfg), action=l1,
                        motion=l2, reg=0.0)
    return probs, motion, values, grads


def evaluate(model, windows, loss_cfg, batch_size=256):
    """Loss components and metrics over a window set, eval mode, reg-free."""
    n = len(windows)
    m_std = model.standardizer.apply(windows.target_motions)
    sums = {"action": 0.0, "motion": 0.0, "correct": 0.0, "abs": 0.0}
    for b in range(0, n, batch_size):
        x = windows.inputs[b:b + batch_size]
        at = windows.target_actions[b:b + batch_size]
        mt = m_std[b:b + batch_size]
        probs, motion, values, _ = _batch_forward(
            model, x, "eval", None, at, mt, loss_cfg)
        mb = len(x)
        sums["action"] += values.action * 2.0 * mb
        sums["motion"] += values.motion * 2.0 * mb
        sums["correct"] += accuracy(probs, at) * mb * at.shape[1]
        sums["abs"] += mae(motion, mt) * motion.size
    t = windows.target_actions.shape[1]
    d = windows.target_motions.shape[2]
    l1 = sums["action"] / (2.0 * n)
    l2 = sums["motion"] / (2.0 * n)
    return {
        "total_loss": loss_cfg.b1 * l1 + loss_cfg.b2 * l2,
        "action_loss": l1,
        "motion_loss": l2,
        "accuracy": sums["correct"] / (n * t),
        "mae": sums["abs"] / (n * t * d),
    }


def persistence_mae(windows, standardizer):
    """MAE of repeating each window's last observed motion vector across the
    horizon, in the same standardized space as reported model MAE."""
    last = standardizer.apply(windows.inputs[:, -1, :])
    targets = standardizer.apply(windows.target_motions)
    pred = np.broadcast_to(last[:, None, :], targets.shape)
    return float(np.abs(pred - targets).mean())


# -----------------------------------------------------------------------------
# Fit
# -----------------------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    lr: float
    train: dict
    val: dict

    def to_record(self):
        rec = {"epoch": self.epoch, "lr": self.lr}
        rec.update({f"train_{k}": v for k, v in self.train.items()})
        rec.update({f"val_{k}": v for k, v in self.val.items()})
        return rec


@dataclass
class TrainReport:
    arch: str
    seed: int
    epochs: list
    best_epoch: int
    best_val_total: float
    stop_reason: str
    wall_time_s: float
    param_count: int

    def epoch_records(self):
        return [e.to_record() for e in self.epochs]

    def summary(self):
        best = self.epochs[self.best_epoch]
        return {
            "results": {
                "arch": self.arch,
                "seed": self.seed,
                "param_count": self.param_count,
                "epochs_run": len(self.epochs),
                "best_epoch": self.best_epoch,
                "stop_reason": self.stop_reason,
                "train": dict(best.train),
                "val": dict(best.val),
            },
            "runtime": {"wall_time_s": self.wall_time_s},
        }


def _snapshot(model):
    return [(name, arr.copy()) for name, arr in model.param_blocks()]


def _restore(model, snapshot):
    for name, arr in snapshot:
        model.set_block(name, arr)


def fit(arch, splits, model_config, train_config, val_loss_hook=None):
    """Train one architecture on pre-made splits.

    Minibatches are reshuffled each epoch with the seeded stream; after every
    epoch the validation total loss decides early stopping: training halts
    once it has not improved by ``min_improvement`` for ``patience``
    consecutive epochs, and the parameters from the best validation epoch are
    restored before returning. ``val_loss_hook(epoch, value) -> value`` lets
    tests inject validation plateaus.

    Returns (model, TrainReport). The test split is never touched here.
    """
    if arch not in ARCHITECTURES:
        raise ConfigError([f"unknown architecture {arch!r}"])
    train_config.validated()
    model_config.validated()
    cfg = train_config.loss
    if cfg.competitive and arch != "gmoe":
        raise ConfigError(["competitive loss requires the gmoe architecture"])

    t_start = time.perf_counter()
    rng = SeededRng(train_config.seed)
    model = init_gmoe(model_config, rng) if arch == "gmoe" \
        else init_baseline(model_config, rng)
    model.standardizer = Standardizer.fit(splits.train_dataset.features())

    x_all = splits.train_windows.inputs
    a_all = splits.train_windows.target_actions
    m_all = model.standardizer.apply(splits.train_windows.target_motions)
    n = len(x_all)
    t_steps = a_all.shape[1]
    d_out = m_all.shape[2]

    adam = AdamState.init_like(model.param_blocks())
    reg_on = cfg.l1_coeff > 0.0 or cfg.l2_coeff > 0.0

    epochs = []
    best_val = np.inf
    best_epoch = -1
    best_params = None
    stall = 0
    stop_reason = "max_epochs"

    for epoch in range(train_config.max_epochs):
        lr = train_config.lr0 * train_config.decay_per_epoch ** epoch
        perm = rng.permutation(n)
        sums = {"action": 0.0, "motion": 0.0, "correct": 0.0, "abs": 0.0}
        for b in range(0, n, train_config.batch_size):
            idx = perm[b:b + train_config.batch_size]
            x, at, mt = x_all[idx], a_all[idx], m_all[idx]
            probs, motion, values, grads = _batch_forward(
                model, x, "train", rng, at, mt, cfg)
            if reg_on:
                for name, p in model.param_blocks():
                    grads[name] = grads[name] + regularization_grad(
                        p, cfg.l1_coeff, cfg.l2_coeff)
            adam_step(model.param_blocks(), grads, adam, lr,
                      train_config.adam_beta1, train_config.adam_beta2,
                      train_config.adam_eps)
            mb = len(x)
            sums["action"] += values.action * 2.0 * mb
            sums["motion"] += values.motion * 2.0 * mb
            sums["correct"] += accuracy(probs, at) * mb * t_steps
            sums["abs"] += mae(motion, mt) * motion.size

        l1 = sums["action"] / (2.0 * n)
        l2 = sums["motion"] / (2.0 * n)
        train_metrics = {
            "total_loss": cfg.b1 * l1 + cfg.b2 * l2,
            "action_loss": l1, "motion_loss": l2,
            "accuracy": sums["correct"] / (n * t_steps),
            "mae": sums["abs"] / (n * t_steps * d_out),
        }
        val_metrics = evaluate(model, splits.val_windows, cfg)
        if val_loss_hook is not None:
            val_metrics = dict(val_metrics)
            val_metrics["total_loss"] = float(
                val_loss_hook(epoch, val_metrics["total_loss"]))
        epochs.append(EpochStats(epoch=epoch, lr=lr, train=train_metrics,
                                 val=val_metrics))

        if val_metrics["total_loss"] < best_val - train_config.min_improvement:
            best_val = val_metrics["total_loss"]
            best_epoch = epoch
            best_params = _snapshot(model)
            stall = 0
        else:
            stall += 1
            if stall >= train_config.patience:
                stop_reason = "patience"
                break

    if best_params is not None:
        _restore(model, best_params)
    report = TrainReport(arch=arch, seed=train_config.seed, epochs=epochs,
                         best_epoch=best_epoch, best_val_total=float(best_val),
                         stop_reason=stop_reason,
                         wall_time_s=time.perf_counter() - t_start,
                         param_count=param_count(model))
    return model, report


# -----------------------------------------------------------------------------
# Multi-seed comparison
# -----------------------------------------------------------------------------

@dataclass
class ComparisonReport:
    seeds: list
    per_seed: list   # {"seed", "gmoe": metrics, "baseline": metrics}
    aggregate: dict  # arch -> metric -> {"mean", "std"}
    param_counts: dict
    wall_time_s: float

    def to_dict(self):
        return {"seeds": self.seeds, "per_seed": self.per_seed,
                "aggregate": self.aggregate, "param_counts": self.param_counts,
                "wall_time_s": self.wall_time_s}

    def format_table(self):
        lines = [f"{'architecture':<14}{'total_loss':>22}{'accuracy':>22}"
                 f"{'mae':>22}{'params':>12}"]
        for arch in ARCHITECTURES:
            agg = self.aggregate[arch]
            cells = "".join(
                f"{agg[m]['mean']:>12.4f} +- {agg[m]['std']:<7.4f}"
                for m in ("total_loss", "accuracy", "mae"))
            lines.append(f"{arch:<14}{cells}{self.param_counts[arch]:>12}")
        return "\n".join(lines)


def run_comparison(dataset, seeds, model_config, train_config):
    """Train both architectures per seed; aggregate test metrics.

    Standard deviations are population (ddof=0), so a single seed reports
    zero spread.
    """
    if len(seeds) < 1:
        raise ConfigError(["need at least one seed"])
    t_start = time.perf_counter()
    splits = make_splits(dataset, model_config)
    per_seed = []
    counts = {}
    for seed in seeds:
        row = {"seed": int(seed)}
        for arch in ARCHITECTURES:
            cfg = replace(train_config, seed=int(seed))
            model, _ = fit(arch, splits, model_config, cfg)
            row[arch] = evaluate(model, splits.test_windows, cfg.loss)
            counts[arch] = param_count(model)
        per_seed.append(row)

    aggregate = {}
    for arch in ARCHITECTURES:
        aggregate[arch] = {}
        for metric in ("total_loss", "accuracy", "mae"):
            vals = np.array([row[arch][metric] for row in per_seed])
            aggregate[arch][metric] = {"mean": float(vals.mean()),
                                       "std": float(vals.std(ddof=0))}
    return ComparisonReport(seeds=[int(s) for s in seeds], per_seed=per_seed,
                            aggregate=aggregate, param_counts=counts,
                            wall_time_s=time.perf_counter() - t_start)
