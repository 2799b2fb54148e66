"""Combined training loss and evaluation metrics.

The total loss is ``L = b1 * L1 + b2 * L2`` plus optional l1/l2 weight
penalties. L1 is categorical cross-entropy over the per-step action
distributions; L2 is the motion error of the mixture output. Both are
normalized by ``1/(2M)`` only, where M is the batch size; there is no
division by the horizon or the output width, so loss magnitudes scale with
the horizon by construction.

Gradient routing is intentionally asymmetric: expert parameters receive
gradients only through L2 (set ``b2 = 0`` and every expert gradient is
exactly zero), while gate parameters receive both the cross-entropy gradient
and the mixture-weighting part of L2.

``motion_norm`` selects the L2 summand: ``"squared"`` (mean-squared-error
style, the default) or ``"euclidean"`` (the unsquared 2-norm). The
competitive variant replaces L2 with the probability-weighted sum of each
expert's own unsquared error, sharpening expert specialization.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

LOG_CLAMP = 1e-12

MOTION_NORMS = ("squared", "euclidean")


@dataclass
class LossConfig:
    b1: float = 1.0
    b2: float = 0.2
    motion_norm: str = "squared"
    competitive: bool = False
    l1_coeff: float = 0.0
    l2_coeff: float = 0.0

    def validate(self):
        errs = []
        if self.b1 < 0:
            errs.append(f"b1 must be >= 0, got {self.b1}")
        if self.b2 < 0:
            errs.append(f"b2 must be >= 0, got {self.b2}")
        if self.motion_norm not in MOTION_NORMS:
            errs.append(f"motion_norm must be one of {MOTION_NORMS}, "
                        f"got {self.motion_norm!r}")
        if self.l1_coeff < 0:
            errs.append(f"l1_coeff must be >= 0, got {self.l1_coeff}")
        if self.l2_coeff < 0:
            errs.append(f"l2_coeff must be >= 0, got {self.l2_coeff}")
        return errs

    def to_dict(self):
        return {"b1": self.b1, "b2": self.b2, "motion_norm": self.motion_norm,
                "competitive": self.competitive, "l1_coeff": self.l1_coeff,
                "l2_coeff": self.l2_coeff}


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes differ, {a.shape} vs {b.shape}")


def action_loss(probs, targets):
    """Cross-entropy, ``-(1/(2M)) sum_{t,j,i} a log(max(p, 1e-12))``.

    ``probs`` and ``targets`` are (M, T, K); targets are one-hot per step.
    The clamp keeps saturated softmax outputs from producing infinities.
    """
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    _check_same(probs, targets, "action_loss")
    m = probs.shape[0]
    logp = np.log(np.maximum(probs, LOG_CLAMP))
    return -(targets * logp).sum() / (2.0 * m)


def action_loss_backward(probs, targets, gain=1.0):
    """d(gain * L1)/d probs; zero where the log clamp is active."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    m = probs.shape[0]
    inv = np.where(probs >= LOG_CLAMP, 1.0 / np.maximum(probs, LOG_CLAMP), 0.0)
    return -(gain / (2.0 * m)) * targets * inv


def motion_loss(pred, targets, norm="squared"):
    """Motion error of the combined prediction, (M, T, D) inputs.

    squared:   (1/(2M)) sum_{t,j} ||pred - target||^2
    euclidean: (1/(2M)) sum_{t,j} ||pred - target||_2
    """
    pred = np.asarray(pred, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    _check_same(pred, targets, "motion_loss")
    m = pred.shape[0]
    r = pred - targets
    if norm == "squared":
        return (r * r).sum() / (2.0 * m)
    if norm == "euclidean":
        return np.sqrt((r * r).sum(axis=-1)).sum() / (2.0 * m)
    raise ValueError(f"unknown motion norm {norm!r}")


def motion_loss_backward(pred, targets, norm="squared", gain=1.0):
    """d(gain * L2)/d pred. The euclidean subgradient is zero at zero residual."""
    pred = np.asarray(pred, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    m = pred.shape[0]
    r = pred - targets
    if norm == "squared":
        return (gain / m) * r
    if norm == "euclidean":
        norms = np.sqrt((r * r).sum(axis=-1, keepdims=True))
        safe = np.where(norms > 0.0, norms, 1.0)
        return (gain / (2.0 * m)) * np.where(norms > 0.0, r / safe, 0.0)
    raise ValueError(f"unknown motion norm {norm!r}")


def competitive_motion_loss(expert_outputs, gate_probs, targets):
    """Probability-weighted per-expert error,
    ``(1/(2M)) sum_{t,j,i} p_i ||y_i - y||_2``.

    ``expert_outputs`` is (K, M, T, D); ``gate_probs`` (M, T, K). With a
    one-hot gate this reduces to the selected expert's euclidean motion loss.
    """
    expert_outputs = np.asarray(expert_outputs, dtype=np.float64)
    gate_probs = np.asarray(gate_probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    k, m = expert_outputs.shape[0], expert_outputs.shape[1]
    if gate_probs.shape != expert_outputs.shape[1:3] + (k,):
        raise ShapeError(
            f"competitive loss: gate {gate_probs.shape} does not match "
            f"experts {expert_outputs.shape}")
    _check_same(expert_outputs[0], targets, "competitive_motion_loss")
    r = expert_outputs - targets[None]
    norms = np.sqrt((r * r).sum(axis=-1))            # (K, M, T)
    weighted = np.moveaxis(norms, 0, -1) * gate_probs  # (M, T, K)
    return weighted.sum() / (2.0 * m)


def competitive_motion_loss_backward(expert_outputs, gate_probs, targets,
                                     gain=1.0):
    """Returns (d_experts (K,M,T,D), d_probs (M,T,K))."""
    expert_outputs = np.asarray(expert_outputs, dtype=np.float64)
    gate_probs = np.asarray(gate_probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    m = expert_outputs.shape[1]
    r = expert_outputs - targets[None]
    norms = np.sqrt((r * r).sum(axis=-1, keepdims=True))  # (K, M, T, 1)
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = np.where(norms > 0.0, r / safe, 0.0)
    w = np.moveaxis(gate_probs, -1, 0)[..., None]         # (K, M, T, 1)
    d_experts = (gain / (2.0 * m)) * w * unit
    d_probs = (gain / (2.0 * m)) * np.moveaxis(norms[..., 0], 0, -1)
    return d_experts, d_probs


def regularization(param_blocks, l1_coeff=0.0, l2_coeff=0.0):
    """l1/l2 weight penalty over every trainable parameter."""
    if l1_coeff == 0.0 and l2_coeff == 0.0:
        return 0.0
    total = 0.0
    for _, arr in param_blocks:
        if l1_coeff:
            total += l1_coeff * np.abs(arr).sum()
        if l2_coeff:
            total += l2_coeff * (arr * arr).sum()
    return total


def regularization_grad(arr, l1_coeff=0.0, l2_coeff=0.0):
    g = np.zeros_like(arr)
    if l1_coeff:
        g += l1_coeff * np.sign(arr)
    if l2_coeff:
        g += 2.0 * l2_coeff * arr
    return g


def total_loss(l1_value, l2_value, reg_value, cfg):
    """L = b1 L1 + b2 L2 + reg, exact in 64-bit arithmetic."""
    return cfg.b1 * l1_value + cfg.b2 * l2_value + reg_value


def accuracy(probs, targets):
    """Fraction of (sample, step) pairs whose argmax matches the target.

    Ties break toward the lowest class index (numpy argmax order), so a
    uniform prediction counts as class 0.
    """
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    _check_same(probs, targets, "accuracy")
    return float(np.mean(probs.argmax(axis=-1) == targets.argmax(axis=-1)))


def mae(pred, targets):
    """Mean absolute error over all entries."""
    pred = np.asarray(pred, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    _check_same(pred, targets, "mae")
    return float(np.abs(pred - targets).mean())


@dataclass
class LossValues:
    total: float
    action: float
    motion: float
    reg: float


def mixture_loss_and_grads(output_probs, mixture, expert_outputs,
                           action_targets, motion_targets, cfg):
    """Evaluate the combined loss and its gradients for one batch.

    Returns (LossValues, d_probs, d_mixture, d_experts); ``d_mixture`` is
    None in competitive mode (the motion term bypasses the mixture), and
    ``d_experts`` is None otherwise. Regularization is excluded here and
    added by the optimizer step, so the reported components stay penalty-free.
    """
    l1_value = action_loss(output_probs, action_targets)
    d_probs = action_loss_backward(output_probs, action_targets, gain=cfg.b1)
    if cfg.competitive:
        l2_value = competitive_motion_loss(expert_outputs, output_probs,
                                           motion_targets)
        d_experts, d_probs_comp = competitive_motion_loss_backward(
            expert_outputs, output_probs, motion_targets, gain=cfg.b2)
        d_probs = d_probs + d_probs_comp
        d_mixture = None
    else:
        l2_value = motion_loss(mixture, motion_targets, cfg.motion_norm)
        d_mixture = motion_loss_backward(mixture, motion_targets,
                                         cfg.motion_norm, gain=cfg.b2)
        d_experts = None
    values = LossValues(total=total_loss(l1_value, l2_value, 0.0, cfg),
                        action=l1_value, motion=l2_value, reg=0.0)
    return values, d_probs, d_mixture, d_experts
