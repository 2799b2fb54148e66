"""Model assembly: the guided mixture of experts and the stacked-LSTM baseline.

The guided mixture pairs one gate network with K per-action experts:

* The gate flattens the standardized observation window, passes it through
  two tanh dense layers, and emits ``T*K`` logits reshaped to one softmax
  distribution over actions per future step. Those probabilities double as
  the action prediction.
* Each expert runs one LSTM over the window and projects its final hidden
  state to the full ``T x D_out`` motion horizon in a single pass (direct
  multi-horizon output, no autoregression).
* The motion prediction is the probability-weighted sum of expert outputs,
  ``mix[t] = sum_i probs[t, i] * expert_i[t]``, accumulated in expert order.

The baseline stacks four LSTM layers and feeds the last layer's final hidden
state to two heads (action logits and motion horizon) with no mixture.

Input standardization is applied inside ``forward`` (the single documented
path): callers always pass raw windows. Expert and baseline motion outputs
live in the standardized feature space; use ``unstandardize_motion`` to map
predictions back to raw units.

Dropout placement: after the first gate dense layer and after each LSTM's
final hidden state, rate ``config.dropout_rate`` (0 disables).
"""

import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .layers import (
    DenseParams,
    LstmParams,
    Standardizer,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    lstm_seq_backward,
    lstm_seq_forward,
)
from .tensor import ShapeError, softmax_rows, tanh

CHECKPOINT_MAGIC = b"GMOE"
CHECKPOINT_VERSION = 1

FEATURE_ORDER = ("s", "sdot", "f")


class ConfigError(ValueError):
    """Invalid model configuration; ``.errors`` lists every violation."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class CheckpointError(RuntimeError):
    pass


class CheckpointFormatError(CheckpointError):
    """File does not start with the expected magic bytes."""


class CheckpointVersionError(CheckpointError):
    """Unsupported checkpoint version."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before the declared header or parameter payload."""


class CheckpointMismatchError(CheckpointError):
    """Declared configuration disagrees with the stored parameter payload."""


# -----------------------------------------------------------------------------
# Configuration
# -----------------------------------------------------------------------------

@dataclass
class FeatureLayout:
    """Describes how a record's channels are packed into one feature vector.

    Order is fixed as [joint angles | joint velocities | wrench channels];
    changing it invalidates checkpoints, which is enforced through
    :meth:`hash` stored in the checkpoint header.
    """

    num_joints: int = 4
    wrench_dims: int = 2
    action_names: tuple = ("walking", "rotating", "standing", "none")
    sample_rate: float = 25.0
    order: tuple = FEATURE_ORDER

    @property
    def feature_width(self):
        return 2 * self.num_joints + self.wrench_dims

    @property
    def num_actions(self):
        return len(self.action_names)

    def channel_names(self):
        d, w = self.num_joints, self.wrench_dims
        return ([f"s_{i}" for i in range(d)]
                + [f"sdot_{i}" for i in range(d)]
                + [f"f_{i}" for i in range(w)])

    def to_dict(self):
        return {
            "num_joints": self.num_joints,
            "wrench_dims": self.wrench_dims,
            "action_names": list(self.action_names),
            "sample_rate": self.sample_rate,
            "order": list(self.order),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(num_joints=d["num_joints"], wrench_dims=d["wrench_dims"],
                   action_names=tuple(d["action_names"]),
                   sample_rate=d["sample_rate"], order=tuple(d["order"]))

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class GMoEConfig:
    layout: FeatureLayout = field(default_factory=FeatureLayout)
    past_steps: int = 5       # N past samples; window length is N + 1
    horizon: int = 25         # T future steps predicted directly
    expert_hidden: int = 64
    gate_hidden: int = 64
    baseline_hidden: int = 96
    dropout_rate: float = 0.1

    @property
    def num_actions(self):
        return self.layout.num_actions

    @property
    def window_len(self):
        return self.past_steps + 1

    @property
    def feature_width(self):
        return self.layout.feature_width

    @property
    def motion_width(self):
        return self.layout.feature_width

    def validate(self):
        errs = []
        if self.layout.num_joints < 1:
            errs.append(f"num_joints must be >= 1, got {self.layout.num_joints}")
        if self.layout.wrench_dims < 0:
            errs.append(f"wrench_dims must be >= 0, got {self.layout.wrench_dims}")
        if self.num_actions < 2:
            errs.append(f"need at least 2 actions, got {self.num_actions}")
        if len(set(self.layout.action_names)) != self.num_actions:
            errs.append("action names must be unique")
        if self.layout.sample_rate <= 0:
            errs.append(f"sample_rate must be > 0, got {self.layout.sample_rate}")
        if tuple(self.layout.order) != FEATURE_ORDER:
            errs.append(f"feature order must be {FEATURE_ORDER}")
        if self.past_steps < 1:
            errs.append(f"past_steps must be >= 1, got {self.past_steps}")
        if self.horizon < 1:
            errs.append(f"horizon must be >= 1, got {self.horizon}")
        if self.expert_hidden < 1:
            errs.append(f"expert_hidden must be >= 1, got {self.expert_hidden}")
        if self.gate_hidden < 1:
            errs.append(f"gate_hidden must be >= 1, got {self.gate_hidden}")
        if self.baseline_hidden < 1:
            errs.append(f"baseline_hidden must be >= 1, got {self.baseline_hidden}")
        if not 0.0 <= self.dropout_rate < 1.0:
            errs.append(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        return errs

    def validated(self):
        errs = self.validate()
        if errs:
            raise ConfigError(errs)
        return self

    def to_dict(self):
        return {
            "layout": self.layout.to_dict(),
            "past_steps": self.past_steps,
            "horizon": self.horizon,
            "expert_hidden": self.expert_hidden,
            "gate_hidden": self.gate_hidden,
            "baseline_hidden": self.baseline_hidden,
            "dropout_rate": self.dropout_rate,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(layout=FeatureLayout.from_dict(d["layout"]),
                   past_steps=d["past_steps"], horizon=d["horizon"],
                   expert_hidden=d["expert_hidden"], gate_hidden=d["gate_hidden"],
                   baseline_hidden=d["baseline_hidden"],
                   dropout_rate=d["dropout_rate"])


def full_body_config():
    """Full-body preset (66 joints, 12 wrench channels), for parameter-count
    comparisons only; the widths put both architectures in the millions."""
    return GMoEConfig(
        layout=FeatureLayout(num_joints=66, wrench_dims=12),
        expert_hidden=128, gate_hidden=128, baseline_hidden=384,
    )


# -----------------------------------------------------------------------------
# Parameters
# -----------------------------------------------------------------------------

@dataclass
class ExpertParams:
    lstm: LstmParams
    head: DenseParams


@dataclass
class GateParams:
    dense1: DenseParams
    dense2: DenseParams
    head: DenseParams


@dataclass
class GMoEModel:
    config: GMoEConfig
    standardizer: Standardizer
    gate: GateParams
    experts: list  # K ExpertParams

    arch = "gmoe"

    def param_blocks(self):
        blocks = [
            ("gate.dense1.weight", self.gate.dense1.weight),
            ("gate.dense1.bias", self.gate.dense1.bias),
            ("gate.dense2.weight", self.gate.dense2.weight),
            ("gate.dense2.bias", self.gate.dense2.bias),
            ("gate.head.weight", self.gate.head.weight),
            ("gate.head.bias", self.gate.head.bias),
        ]
        for i, ex in enumerate(self.experts):
            blocks += [
                (f"expert{i}.lstm.wx", ex.lstm.wx),
                (f"expert{i}.lstm.wh", ex.lstm.wh),
                (f"expert{i}.lstm.bias", ex.lstm.bias),
                (f"expert{i}.head.weight", ex.head.weight),
                (f"expert{i}.head.bias", ex.head.bias),
            ]
        return blocks

    def set_block(self, name, value):
        for bname, arr in self.param_blocks():
            if bname == name:
                arr[...] = value
                return
        raise KeyError(name)


@dataclass
class BaselineModel:
    config: GMoEConfig
    standardizer: Standardizer
    lstm_layers: list  # 4 LstmParams
    action_head: DenseParams
    motion_head: DenseParams

    arch = "baseline"

    def param_blocks(self):
        blocks = []
        for i, layer in enumerate(self.lstm_layers):
            blocks += [
                (f"lstm{i}.wx", layer.wx),
                (f"lstm{i}.wh", layer.wh),
                (f"lstm{i}.bias", layer.bias),
            ]
        blocks += [
            ("action_head.weight", self.action_head.weight),
            ("action_head.bias", self.action_head.bias),
            ("motion_head.weight", self.motion_head.weight),
            ("motion_head.bias", self.motion_head.bias),
        ]
        return blocks

    def set_block(self, name, value):
        for bname, arr in self.param_blocks():
            if bname == name:
                arr[...] = value
                return
        raise KeyError(name)


def init_gmoe(config, rng):
    """Initialize a guided mixture model; deterministic per rng seed.

    Draw order is fixed: gate dense1, dense2, head, then each expert's
    LSTM and head in expert order.
    """
    config.validated()
    flat = config.window_len * config.feature_width
    gate = GateParams(
        dense1=DenseParams.init(rng, flat, config.gate_hidden),
        dense2=DenseParams.init(rng, config.gate_hidden, config.gate_hidden),
        head=DenseParams.init(rng, config.gate_hidden,
                              config.horizon * config.num_actions),
    )
    experts = []
    for _ in range(config.num_actions):
        experts.append(ExpertParams(
            lstm=LstmParams.init(rng, config.feature_width, config.expert_hidden),
            head=DenseParams.init(rng, config.expert_hidden,
                                  config.horizon * config.motion_width),
        ))
    return GMoEModel(config=config,
                     standardizer=Standardizer.identity(config.feature_width),
                     gate=gate, experts=experts)


def init_baseline(config, rng):
    """Initialize the four-layer stacked LSTM baseline."""
    config.validated()
    h = config.baseline_hidden
    layers = [LstmParams.init(rng, config.feature_width, h)]
    for _ in range(3):
        layers.append(LstmParams.init(rng, h, h))
    return BaselineModel(
        config=config,
        standardizer=Standardizer.identity(config.feature_width),
        lstm_layers=layers,
        action_head=DenseParams.init(rng, h, config.horizon * config.num_actions),
        motion_head=DenseParams.init(rng, h, config.horizon * config.motion_width),
    )


def param_count(model):
    """Exact number of scalar trainable parameters."""
    return sum(arr.size for _, arr in model.param_blocks())


# -----------------------------------------------------------------------------
# Forward / backward
# -----------------------------------------------------------------------------

@dataclass
class ModelOutput:
    """Gate probabilities, per-expert motion horizons, and their mixture.

    Batched calls produce ``gate_probs (B,T,K)``, ``expert_outputs
    (K,B,T,D)``, ``mixture (B,T,D)``; single-window calls drop the batch
    axis. Every ``gate_probs`` row is a distribution, and the mixture is the
    expert-order weighted sum, so it stays inside the experts' componentwise
    convex hull.
    """

    gate_probs: np.ndarray
    expert_outputs: np.ndarray
    mixture: np.ndarray


@dataclass
class GMoECache:
    z: np.ndarray
    flat: np.ndarray
    c1: object
    a1: np.ndarray
    mask1: np.ndarray
    c2: object
    a2: np.ndarray
    c3: object
    probs: np.ndarray           # (B, T, K)
    expert_lstm: list
    expert_masks: list
    expert_heads: list
    expert_outputs: np.ndarray  # (K, B, T, D)
    squeeze: bool


def _lift_window(config, window):
    window = np.asarray(window, dtype=np.float64)
    W, F = config.window_len, config.feature_width
    if window.ndim == 2:
        if window.shape != (W, F):
            raise ShapeError(f"window must be ({W}, {F}), got {window.shape}")
        return window[None], True
    if window.ndim == 3:
        if window.shape[1:] != (W, F):
            raise ShapeError(
                f"windows must be (batch, {W}, {F}), got {window.shape}")
        return window, False
    raise ShapeError(f"window must be 2-D or 3-D, got shape {window.shape}")


def forward(model, window, mode="eval", rng=None):
    """Run the guided mixture on one raw window or a batch of raw windows.

    Standardization happens internally. Eval mode is a pure function of
    (model, window); train mode additionally consumes ``rng`` for dropout.
    """
    cfg = model.config
    x, squeeze = _lift_window(cfg, window)
    B = x.shape[0]
    T, K, D = cfg.horizon, cfg.num_actions, cfg.motion_width
    z = model.standardizer.apply(x)

    flat = z.reshape(B, cfg.window_len * cfg.feature_width)
    y1, c1 = dense_forward(model.gate.dense1, flat)
    a1 = tanh(y1)
    a1d, mask1 = dropout_forward(a1, cfg.dropout_rate, mode, rng)
    y2, c2 = dense_forward(model.gate.dense2, a1d)
    a2 = tanh(y2)
    logits, c3 = dense_forward(model.gate.head, a2)
    probs = softmax_rows(logits.reshape(B * T, K)).reshape(B, T, K)

    expert_lstm, expert_masks, expert_heads = [], [], []
    outputs = np.empty((K, B, T, D))
    for i, ex in enumerate(model.experts):
        _, h_fin, _, lc = lstm_seq_forward(ex.lstm, z)
        hd, m = dropout_forward(h_fin, cfg.dropout_rate, mode, rng)
        yflat, hc = dense_forward(ex.head, hd)
        outputs[i] = yflat.reshape(B, T, D)
        expert_lstm.append(lc)
        expert_masks.append(m)
        expert_heads.append(hc)

    mixture = np.zeros((B, T, D))
    for i in range(K):
        mixture += probs[:, :, i, None] * outputs[i]

    cache = GMoECache(z=z, flat=flat, c1=c1, a1=a1, mask1=mask1, c2=c2, a2=a2,
                      c3=c3, probs=probs, expert_lstm=expert_lstm,
                      expert_masks=expert_masks, expert_heads=expert_heads,
                      expert_outputs=outputs, squeeze=squeeze)
    if squeeze:
        out = ModelOutput(gate_probs=probs[0], expert_outputs=outputs[:, 0],
                          mixture=mixture[0])
    else:
        out = ModelOutput(gate_probs=probs, expert_outputs=outputs,
                          mixture=mixture)
    return out, cache


def _softmax_backward(probs, d_probs):
    # d logits = p * (dp - sum(dp * p)) per distribution row
    s = (d_probs * probs).sum(axis=-1, keepdims=True)
    return probs * (d_probs - s)


def gmoe_backward(model, cache, d_probs, d_mixture=None, d_experts=None):
    """Backward through the mixture, gate, and experts.

    ``d_probs`` is the loss gradient w.r.t. gate probabilities from paths
    that touch probabilities directly (cross-entropy, competitive weighting).
    ``d_mixture`` is the gradient w.r.t. the combined motion output; the
    mixture constraint routes it to every expert scaled by its probability
    and back into the gate through the weighting. ``d_experts`` carries any
    gradient applied to expert outputs directly. Returns a dict keyed like
    ``param_blocks``.
    """
    cfg = model.config
    K = cfg.num_actions
    probs = cache.probs
    B, T, _ = probs.shape

    d_probs = np.zeros_like(probs) if d_probs is None else np.array(d_probs)
    dY = np.zeros_like(cache.expert_outputs)
    if d_mixture is not None:
        for i in range(K):
            dY[i] += probs[:, :, i, None] * d_mixture
            d_probs[:, :, i] += (d_mixture * cache.expert_outputs[i]).sum(axis=-1)
    if d_experts is not None:
        dY += d_experts

    grads = {}

    d_logits = _softmax_backward(probs, d_probs).reshape(B, T * K)
    d_a2, gw, gb = dense_backward(model.gate.head, cache.c3, d_logits)
    grads["gate.head.weight"] = gw
    grads["gate.head.bias"] = gb
    d_y2 = d_a2 * (1.0 - cache.a2 * cache.a2)
    d_a1d, gw, gb = dense_backward(model.gate.dense2, cache.c2, d_y2)
    grads["gate.dense2.weight"] = gw
    grads["gate.dense2.bias"] = gb
    d_a1 = dropout_backward(cache.mask1, d_a1d)
    d_y1 = d_a1 * (1.0 - cache.a1 * cache.a1)
    _, gw, gb = dense_backward(model.gate.dense1, cache.c1, d_y1)
    grads["gate.dense1.weight"] = gw
    grads["gate.dense1.bias"] = gb

    W = cfg.window_len
    h = cfg.expert_hidden
    zero_seq = np.zeros((B, W, h))
    for i, ex in enumerate(model.experts):
        d_flat = dY[i].reshape(B, T * cfg.motion_width)
        d_hd, gw, gb = dense_backward(ex.head, cache.expert_heads[i], d_flat)
        grads[f"expert{i}.head.weight"] = gw
        grads[f"expert{i}.head.bias"] = gb
        d_hfin = dropout_backward(cache.expert_masks[i], d_hd)
        (gwx, gwh, gbias), _ = lstm_seq_backward(
            ex.lstm, cache.expert_lstm[i], zero_seq, upstream_h_final=d_hfin)
        grads[f"expert{i}.lstm.wx"] = gwx
        grads[f"expert{i}.lstm.wh"] = gwh
        grads[f"expert{i}.lstm.bias"] = gbias
    return grads


@dataclass
class BaselineCache:
    lstm_caches: list
    final_mask: np.ndarray
    hd: np.ndarray
    ca: object
    cm: object
    probs: np.ndarray
    squeeze: bool


def forward_baseline(model, window, mode="eval", rng=None):
    """Stacked-LSTM baseline: (action probs, motion horizon, cache)."""
    cfg = model.config
    x, squeeze = _lift_window(cfg, window)
    B = x.shape[0]
    T, K, D = cfg.horizon, cfg.num_actions, cfg.motion_width
    seq = model.standardizer.apply(x)

    caches = []
    h_fin = None
    for layer in model.lstm_layers:
        seq, h_fin, _, lc = lstm_seq_forward(layer, seq)
        caches.append(lc)
    hd, mask = dropout_forward(h_fin, cfg.dropout_rate, mode, rng)
    logits, ca = dense_forward(model.action_head, hd)
    probs = softmax_rows(logits.reshape(B * T, K)).reshape(B, T, K)
    motion_flat, cm = dense_forward(model.motion_head, hd)
    motion = motion_flat.reshape(B, T, D)

    cache = BaselineCache(lstm_caches=caches, final_mask=mask, hd=hd,
                          ca=ca, cm=cm, probs=probs, squeeze=squeeze)
    if squeeze:
        return probs[0], motion[0], cache
    return probs, motion, cache


def baseline_backward(model, cache, d_probs, d_motion):
    cfg = model.config
    probs = cache.probs
    B, T, K = probs.shape

    grads = {}
    d_logits = _softmax_backward(probs, d_probs).reshape(B, T * K)
    d_hd_a, gw, gb = dense_backward(model.action_head, cache.ca, d_logits)
    grads["action_head.weight"] = gw
    grads["action_head.bias"] = gb
    d_hd_m, gw, gb = dense_backward(
        model.motion_head, cache.cm, d_motion.reshape(B, T * cfg.motion_width))
    grads["motion_head.weight"] = gw
    grads["motion_head.bias"] = gb
    d_hfin = dropout_backward(cache.final_mask, d_hd_a + d_hd_m)

    upstream = np.zeros_like(cache.lstm_caches[-1].tanh_c)
    upstream_final = d_hfin
    for i in range(len(model.lstm_layers) - 1, -1, -1):
        (gwx, gwh, gbias), d_xs = lstm_seq_backward(
            model.lstm_layers[i], cache.lstm_caches[i], upstream,
            upstream_h_final=upstream_final)
        grads[f"lstm{i}.wx"] = gwx
        grads[f"lstm{i}.wh"] = gwh
        grads[f"lstm{i}.bias"] = gbias
        upstream = d_xs  # gradient w.r.t. the full hidden sequence below
        upstream_final = None
    return grads


def unstandardize_motion(model, motion):
    """Map standardized motion predictions back to raw record units."""
    return model.standardizer.unapply(motion)


# -----------------------------------------------------------------------------
# Checkpoint serialization
# -----------------------------------------------------------------------------
#
# Binary layout (all integers little-endian):
#   bytes 0-3    magic "GMOE"
#   bytes 4-7    uint32 format version (currently 1)
#   bytes 8-15   uint64 header length in bytes
#   header       canonical JSON (sorted keys, compact separators), UTF-8
#   payload      parameter blocks in declared order, little-endian float64
#
# The header records the architecture, full config, standardizer statistics,
# the feature-layout hash, and each block's name and shape, so a reader can
# validate the payload length before touching any parameter bytes.

def _expected_blocks(config, arch):
    flat = config.window_len * config.feature_width
    T, K, D = config.horizon, config.num_actions, config.motion_width
    he, hg, hb = config.expert_hidden, config.gate_hidden, config.baseline_hidden
    F = config.feature_width
    if arch == "gmoe":
        blocks = [
            ("gate.dense1.weight", (flat, hg)),
            ("gate.dense1.bias", (hg,)),
            ("gate.dense2.weight", (hg, hg)),
            ("gate.dense2.bias", (hg,)),
            ("gate.head.weight", (hg, T * K)),
            ("gate.head.bias", (T * K,)),
        ]
        for i in range(K):
            blocks += [
                (f"expert{i}.lstm.wx", (F, 4 * he)),
                (f"expert{i}.lstm.wh", (he, 4 * he)),
                (f"expert{i}.lstm.bias", (4 * he,)),
                (f"expert{i}.head.weight", (he, T * D)),
                (f"expert{i}.head.bias", (T * D,)),
            ]
        return blocks
    if arch == "baseline":
        blocks = [("lstm0.wx", (F, 4 * hb)), ("lstm0.wh", (hb, 4 * hb)),
                  ("lstm0.bias", (4 * hb,))]
        for i in range(1, 4):
            blocks += [(f"lstm{i}.wx", (hb, 4 * hb)),
                       (f"lstm{i}.wh", (hb, 4 * hb)),
                       (f"lstm{i}.bias", (4 * hb,))]
        blocks += [
            ("action_head.weight", (hb, T * K)),
            ("action_head.bias", (T * K,)),
            ("motion_head.weight", (hb, T * D)),
            ("motion_head.bias", (T * D,)),
        ]
        return blocks
    raise ValueError(f"unknown architecture {arch!r}")


def save_checkpoint(model, path):
    header = {
        "arch": model.arch,
        "config": model.config.to_dict(),
        "standardizer": {
            "mean": model.standardizer.mean.tolist(),
            "std": model.standardizer.std.tolist(),
        },
        "layout_hash": model.config.layout.hash(),
        "blocks": [{"name": n, "shape": list(a.shape)}
                   for n, a in model.param_blocks()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for _, arr in model.param_blocks():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    # temp-and-rename so a crash never leaves a partial checkpoint
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise CheckpointTruncatedError(f"{path}: file shorter than fixed header")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(
            f"{path}: bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: version {version}, this reader supports {CHECKPOINT_VERSION}")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + header_len:
        raise CheckpointTruncatedError(
            f"{path}: header declares {header_len} bytes, payload missing")
    try:
        header = json.loads(raw[16:16 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header: {exc}") from exc

    arch = header.get("arch")
    config = GMoEConfig.from_dict(header["config"])
    config.validated()
    expected = _expected_blocks(config, arch)
    declared = [(b["name"], tuple(b["shape"])) for b in header["blocks"]]
    if declared != expected:
        raise CheckpointMismatchError(
            f"{path}: declared parameter blocks disagree with the stored "
            f"config (e.g. expert count or widths)")
    if header["layout_hash"] != config.layout.hash():
        raise CheckpointMismatchError(f"{path}: feature-layout hash mismatch")

    payload = raw[16 + header_len:]
    total = sum(int(np.prod(shape)) for _, shape in expected) * 8
    if len(payload) < total:
        raise CheckpointTruncatedError(
            f"{path}: payload has {len(payload)} bytes, config requires {total}")
    if len(payload) > total:
        raise CheckpointMismatchError(
            f"{path}: payload has {len(payload)} bytes, config requires {total}")

    arrays = {}
    offset = 0
    for name, shape in expected:
        n = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset)
        arrays[name] = arr.astype(np.float64).reshape(shape).copy()
        offset += n * 8

    std = Standardizer(mean=np.array(header["standardizer"]["mean"]),
                       std=np.array(header["standardizer"]["std"]))
    if arch == "gmoe":
        gate = GateParams(
            dense1=DenseParams(arrays["gate.dense1.weight"],
                               arrays["gate.dense1.bias"]),
            dense2=DenseParams(arrays["gate.dense2.weight"],
                               arrays["gate.dense2.bias"]),
            head=DenseParams(arrays["gate.head.weight"],
                             arrays["gate.head.bias"]),
        )
        experts = [
            ExpertParams(
                lstm=LstmParams(arrays[f"expert{i}.lstm.wx"],
                                arrays[f"expert{i}.lstm.wh"],
                                arrays[f"expert{i}.lstm.bias"]),
                head=DenseParams(arrays[f"expert{i}.head.weight"],
                                 arrays[f"expert{i}.head.bias"]),
            )
            for i in range(config.num_actions)
        ]
        return GMoEModel(config=config, standardizer=std, gate=gate,
                         experts=experts)
    layers = [LstmParams(arrays[f"lstm{i}.wx"], arrays[f"lstm{i}.wh"],
                         arrays[f"lstm{i}.bias"]) for i in range(4)]
    return BaselineModel(
        config=config, standardizer=std, lstm_layers=layers,
        action_head=DenseParams(arrays["action_head.weight"],
                                arrays["action_head.bias"]),
        motion_head=DenseParams(arrays["motion_head.weight"],
                                arrays["motion_head.bias"]),
    )
