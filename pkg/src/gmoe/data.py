"""Synthetic motion/wrench generation, dataset windowing, and CSV ingestion.

The generator is a desk-scale stand-in for a wearable capture rig: a
semi-Markov process switches between action regimes (dwell time uniform in
[2 s, 6 s]), each regime drives every joint with its own sinusoid
``s_j(t) = A_j sin(2 pi f t + phi_j) + c_j`` (velocities are the analytic
derivative), and wrench channels follow a per-regime pattern. The walking
regime's vertical-force channel is a periodic double-Gaussian bump profile
per gait cycle (the M-shaped stance profile of a stride). Regime changes
crossfade over 0.4 s with a raised-cosine blend; the action label switches
at the crossfade midpoint.

Windowing follows the N-past / T-future contract: an example anchored at
record k packs the W = N+1 records ending at k as input (feature order
``[s | sdot | f]`` per step) and the T following records as targets.

CSV schema: header ``time,s_0..s_{d-1},sdot_0..sdot_{d-1},f_0..f_{w-1},action``,
UTF-8, one record per line, floats written with shortest round-trip
formatting (up to 17 significant digits).
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import SeededRng

WRENCH_KINDS = ("m_shape_gait", "constant_weight", "sinusoidal", "noise_floor")

CROSSFADE_SECONDS = 0.4
DWELL_RANGE_SECONDS = (2.0, 6.0)

# Additive noise is sigma times a per-channel-group scale so one knob covers
# radian, rad/s, and newton channels.
NOISE_SCALE_JOINT = 1.0
NOISE_SCALE_VELOCITY = 5.0
NOISE_SCALE_WRENCH = 50.0

DESK_DURATION_SECONDS = 480.0
DESK_RATE_HZ = 25.0


class DataError(ValueError):
    pass


class CsvFormatError(DataError):
    pass


class DatasetTooSmallError(DataError):
    pass


@dataclass
class MotionRecord:
    """One timestamped sample: joint angles, velocities, wrenches, label."""

    time: float
    joints: np.ndarray
    joint_velocities: np.ndarray
    wrenches: np.ndarray
    action: str


@dataclass
class Dataset:
    """Column-oriented record store; immutable once built."""

    time: np.ndarray            # (n,)
    joints: np.ndarray          # (n, d)
    joint_velocities: np.ndarray
    wrenches: np.ndarray        # (n, w)
    labels: np.ndarray          # (n,) int indices into actions
    actions: tuple
    rate: float

    def __post_init__(self):
        if len(self.time) and np.any(np.diff(self.time) <= 0):
            raise DataError("record times must be strictly increasing")

    def __len__(self):
        return len(self.time)

    @property
    def num_joints(self):
        return self.joints.shape[1]

    @property
    def wrench_dims(self):
        return self.wrenches.shape[1]

    @property
    def feature_width(self):
        return 2 * self.num_joints + self.wrench_dims

    def features(self):
        """(n, 2d+w) matrix in the fixed [s | sdot | f] order."""
        return np.concatenate(
            [self.joints, self.joint_velocities, self.wrenches], axis=1)

    def record(self, i):
        return MotionRecord(time=float(self.time[i]), joints=self.joints[i],
                            joint_velocities=self.joint_velocities[i],
                            wrenches=self.wrenches[i],
                            action=self.actions[self.labels[i]])

    def slice(self, start, stop):
        return Dataset(time=self.time[start:stop], joints=self.joints[start:stop],
                       joint_velocities=self.joint_velocities[start:stop],
                       wrenches=self.wrenches[start:stop],
                       labels=self.labels[start:stop], actions=self.actions,
                       rate=self.rate)

    def action_durations(self):
        """Seconds spent in each action label."""
        counts = np.bincount(self.labels, minlength=len(self.actions))
        return {name: counts[i] / self.rate
                for i, name in enumerate(self.actions)}


# -----------------------------------------------------------------------------
# Regimes and closed forms
# -----------------------------------------------------------------------------

@dataclass
class ActionRegime:
    """Closed-form motion law for one action.

    Every joint follows ``A sin(2 pi f t + phi) + c`` at the shared regime
    frequency. Wrench channel 0 follows ``wrench_kind``; remaining channels
    are small sinusoids (or constants for the constant kinds).
    """

    name: str
    freq: float
    amplitudes: np.ndarray
    phases: np.ndarray
    offsets: np.ndarray
    wrench_kind: str
    wrench_base: np.ndarray
    wrench_amp: np.ndarray

    def validate(self, d, w):
        errs = []
        if self.wrench_kind not in WRENCH_KINDS:
            errs.append(f"{self.name}: unknown wrench kind {self.wrench_kind!r}")
        for fname, arr, want in (("amplitudes", self.amplitudes, d),
                                 ("phases", self.phases, d),
                                 ("offsets", self.offsets, d),
                                 ("wrench_base", self.wrench_base, w),
                                 ("wrench_amp", self.wrench_amp, w)):
            if len(arr) != want:
                errs.append(f"{self.name}: {fname} must have length {want}")
        if self.freq <= 0:
            errs.append(f"{self.name}: freq must be > 0")
        return errs


def m_shape_profile(phase):
    """Double-Gaussian stance profile over one gait cycle, phase in [0, 1).

    Bumps sit symmetrically at 0.3 and 0.7 of the cycle (width 0.08), giving
    exactly two local maxima per period.
    """
    u = np.asarray(phase, dtype=np.float64) % 1.0
    s2 = 2.0 * 0.08 ** 2
    return np.exp(-(u - 0.3) ** 2 / s2) + np.exp(-(u - 0.7) ** 2 / s2)


def regime_joints(regime, t):
    """Joint angles and analytic velocities of a regime at times ``t``."""
    t = np.asarray(t, dtype=np.float64)[:, None]
    omega = 2.0 * math.pi * regime.freq
    arg = omega * t + regime.phases[None, :]
    s = regime.amplitudes[None, :] * np.sin(arg) + regime.offsets[None, :]
    sdot = regime.amplitudes[None, :] * omega * np.cos(arg)
    return s, sdot


def regime_wrench(regime, t):
    """Wrench channels of a regime at times ``t``."""
    t = np.asarray(t, dtype=np.float64)
    w = len(regime.wrench_base)
    out = np.empty((len(t), w))
    kind = regime.wrench_kind
    for c in range(w):
        base, amp = regime.wrench_base[c], regime.wrench_amp[c]
        if kind in ("constant_weight", "noise_floor"):
            out[:, c] = base
        elif c == 0 and kind == "m_shape_gait":
            out[:, c] = base + amp * m_shape_profile(regime.freq * t)
        else:  # sinusoidal channels, phase-shifted per channel
            out[:, c] = base + amp * np.sin(2.0 * math.pi * regime.freq * t + c)
    return out


def desk_regimes():
    """Default 4-action regime table (4 joints, 2 wrench channels)."""
    def regime(name, freq, amps, phases, offsets, kind, base, amp):
        return ActionRegime(name=name, freq=freq,
                            amplitudes=np.array(amps), phases=np.array(phases),
                            offsets=np.array(offsets), wrench_kind=kind,
                            wrench_base=np.array(base), wrench_amp=np.array(amp))

    return [
        regime("walking", 1.2, [0.8, 0.6, 0.5, 0.35],
               [0.0, 1.57, 3.14, 4.71], [0.1, -0.2, 0.3, 0.0],
               "m_shape_gait", [60.0, 0.0], [680.0, 40.0]),
        regime("rotating", 0.6, [0.5, 0.7, 0.45, 0.6],
               [0.8, 2.2, 3.9, 5.3], [-0.3, 0.4, -0.1, 0.2],
               "sinusoidal", [340.0, 10.0], [90.0, 25.0]),
        regime("standing", 0.25, [0.05, 0.04, 0.06, 0.03],
               [0.0, 0.7, 1.4, 2.1], [0.25, 0.1, -0.2, 0.4],
               "constant_weight", [345.0, 0.0], [0.0, 0.0]),
        regime("none", 0.42, [0.3, 0.22, 0.28, 0.18],
               [2.5, 0.3, 4.4, 1.9], [0.0, 0.15, 0.05, -0.25],
               "noise_floor", [300.0, -5.0], [0.0, 0.0]),
    ]


def generate_synthetic(regimes, duration, rate=DESK_RATE_HZ, noise_sigma=0.0,
                       seed=0, dwell_range=DWELL_RANGE_SECONDS,
                       crossfade=CROSSFADE_SECONDS):
    """Sample a labeled multi-regime dataset; deterministic per seed."""
    if len(regimes) < 2:
        raise DataError("need at least 2 regimes")
    if duration < 10.0:
        raise DataError(f"duration must be >= 10 s, got {duration}")
    d = len(regimes[0].amplitudes)
    w = len(regimes[0].wrench_base)
    errs = []
    for r in regimes:
        errs += r.validate(d, w)
    freqs = [r.freq for r in regimes]
    if len(set(freqs)) != len(freqs):
        errs.append("regime frequencies must be distinct")
    if len({r.name for r in regimes}) != len(regimes):
        errs.append("regime names must be distinct")
    if errs:
        raise DataError("; ".join(errs))

    rng = SeededRng(seed)
    n = int(round(duration * rate))
    t = np.arange(n) / rate

    # Label runs: (regime index, start, end); run length is the dwell draw,
    # so label dwells land in dwell_range by construction.
    runs = []
    cur = rng.integers(0, len(regimes))
    start = 0.0
    while start < duration:
        dwell = dwell_range[0] + (dwell_range[1] - dwell_range[0]) * rng.uniform(())
        runs.append((cur, start, min(start + float(dwell), duration)))
        start += float(dwell)
        step = rng.integers(0, len(regimes) - 1)  # uniform among the others
        cur = step if step < cur else step + 1

    joints = np.empty((n, d))
    vels = np.empty((n, d))
    wrench = np.empty((n, w))
    labels = np.empty(n, dtype=int)
    for ri, t0, t1 in runs:
        idx = (t >= t0) & (t < t1)
        labels[idx] = ri
        s, sdot = regime_joints(regimes[ri], t[idx])
        joints[idx] = s
        vels[idx] = sdot
        wrench[idx] = regime_wrench(regimes[ri], t[idx])

    # Raised-cosine crossfade around each interior boundary. The blend is
    # convex, so joints stay inside the two regimes' envelopes; velocities
    # include the blend-rate term so they remain the exact derivative.
    half = crossfade / 2.0
    for (prev, _, boundary), (nxt, _, _) in zip(runs[:-1], runs[1:]):
        idx = (t >= boundary - half) & (t < boundary + half)
        if not np.any(idx):
            continue
        u = (t[idx] - (boundary - half)) / crossfade
        alpha = 0.5 * (1.0 - np.cos(math.pi * u))
        dalpha = 0.5 * math.pi / crossfade * np.sin(math.pi * u)
        s_a, sd_a = regime_joints(regimes[prev], t[idx])
        s_b, sd_b = regime_joints(regimes[nxt], t[idx])
        joints[idx] = (1.0 - alpha)[:, None] * s_a + alpha[:, None] * s_b
        vels[idx] = ((1.0 - alpha)[:, None] * sd_a + alpha[:, None] * sd_b
                     + dalpha[:, None] * (s_b - s_a))
        f_a = regime_wrench(regimes[prev], t[idx])
        f_b = regime_wrench(regimes[nxt], t[idx])
        wrench[idx] = (1.0 - alpha)[:, None] * f_a + alpha[:, None] * f_b

    if noise_sigma > 0.0:
        joints += noise_sigma * NOISE_SCALE_JOINT * rng.standard_normal((n, d))
        vels += noise_sigma * NOISE_SCALE_VELOCITY * rng.standard_normal((n, d))
        wrench += noise_sigma * NOISE_SCALE_WRENCH * rng.standard_normal((n, w))

    return Dataset(time=t, joints=joints, joint_velocities=vels,
                   wrenches=wrench, labels=labels,
                   actions=tuple(r.name for r in regimes), rate=rate)


# -----------------------------------------------------------------------------
# Windowing
# -----------------------------------------------------------------------------

@dataclass
class WindowedExample:
    input: np.ndarray           # (W, 2d+w)
    target_actions: np.ndarray  # (T, K) one-hot
    target_motions: np.ndarray  # (T, 2d+w)
    anchor_time: float
    anchor_index: int


@dataclass
class WindowSet:
    """Batched windowed examples backed by contiguous arrays."""

    inputs: np.ndarray          # (n, W, F)
    target_actions: np.ndarray  # (n, T, K)
    target_motions: np.ndarray  # (n, T, F)
    anchor_times: np.ndarray
    anchor_indices: np.ndarray
    actions: tuple

    def __len__(self):
        return len(self.inputs)

    def __getitem__(self, i):
        return WindowedExample(input=self.inputs[i],
                               target_actions=self.target_actions[i],
                               target_motions=self.target_motions[i],
                               anchor_time=float(self.anchor_times[i]),
                               anchor_index=int(self.anchor_indices[i]))

    def subset(self, indices):
        return WindowSet(inputs=self.inputs[indices],
                         target_actions=self.target_actions[indices],
                         target_motions=self.target_motions[indices],
                         anchor_times=self.anchor_times[indices],
                         anchor_indices=self.anchor_indices[indices],
                         actions=self.actions)


def window_dataset(dataset, past_steps, horizon):
    """Build one example per anchor with full past and future coverage.

    A dataset of n records yields ``n - past_steps - horizon`` examples.
    Records must be sampled at a consistent rate.
    """
    n = len(dataset)
    w_len = past_steps + 1
    if n < past_steps + horizon + 1:
        raise DatasetTooSmallError(
            f"need at least {past_steps + horizon + 1} records, got {n}")
    dt = np.diff(dataset.time)
    if np.max(np.abs(dt - dt[0])) > 1e-6 * dt[0]:
        raise DataError("records are not sampled at a consistent rate")

    feats = dataset.features()
    k = len(dataset.actions)
    onehot = np.eye(k)[dataset.labels]

    in_view = sliding_window_view(feats, w_len, axis=0)       # (n-W+1, F, W)
    mot_view = sliding_window_view(feats, horizon, axis=0)    # (n-T+1, F, T)
    act_view = sliding_window_view(onehot, horizon, axis=0)

    num = n - past_steps - horizon
    anchors = np.arange(past_steps, n - horizon)
    inputs = np.ascontiguousarray(
        in_view[:num].transpose(0, 2, 1))                     # (num, W, F)
    motions = np.ascontiguousarray(
        mot_view[past_steps + 1:].transpose(0, 2, 1))         # (num, T, F)
    targets = np.ascontiguousarray(
        act_view[past_steps + 1:].transpose(0, 2, 1))         # (num, T, K)
    return WindowSet(inputs=inputs, target_actions=targets,
                     target_motions=motions,
                     anchor_times=dataset.time[anchors].copy(),
                     anchor_indices=anchors, actions=dataset.actions)


# -----------------------------------------------------------------------------
# CSV
# -----------------------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def write_csv(dataset, path):
    d, w = dataset.num_joints, dataset.wrench_dims
    header = (["time"] + [f"s_{i}" for i in range(d)]
              + [f"sdot_{i}" for i in range(d)]
              + [f"f_{i}" for i in range(w)] + ["action"])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(dataset)):
            row = ([_fmt(dataset.time[i])]
                   + [_fmt(v) for v in dataset.joints[i]]
                   + [_fmt(v) for v in dataset.joint_velocities[i]]
                   + [_fmt(v) for v in dataset.wrenches[i]]
                   + [dataset.actions[dataset.labels[i]]])
            fh.write(",".join(row) + "\n")


def _parse_header(cols):
    if not cols or cols[0] != "time" or cols[-1] != "action":
        raise CsvFormatError(
            "header must start with 'time' and end with 'action'")
    d = sum(1 for c in cols if c.startswith("s_"))
    dv = sum(1 for c in cols if c.startswith("sdot_"))
    w = sum(1 for c in cols if c.startswith("f_"))
    expected = (["time"] + [f"s_{i}" for i in range(d)]
                + [f"sdot_{i}" for i in range(dv)]
                + [f"f_{i}" for i in range(w)] + ["action"])
    if d == 0 or d != dv or cols != expected:
        raise CsvFormatError(f"malformed header: {','.join(cols)}")
    return d, w


def read_csv(path, actions=None):
    """Parse a schema CSV into a Dataset.

    If ``actions`` is given, labels outside it are rejected; otherwise the
    action set is inferred in order of first appearance.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln != ""]
    if not lines:
        raise CsvFormatError(f"{path}: empty file, no header")
    d, w = _parse_header(lines[0].split(","))
    ncols = 1 + 2 * d + w + 1
    if len(lines) == 1:
        raise CsvFormatError(f"{path}: no records")

    times, joints, vels, wrench, names = [], [], [], [], []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != ncols:
            raise CsvFormatError(
                f"{path}: line {lineno}: expected {ncols} columns, "
                f"got {len(parts)}")
        try:
            vals = [float(p) for p in parts[:-1]]
        except ValueError as exc:
            raise CsvFormatError(f"{path}: line {lineno}: {exc}") from exc
        if actions is not None and parts[-1] not in actions:
            raise CsvFormatError(
                f"{path}: line {lineno}: unknown action label {parts[-1]!r}")
        times.append(vals[0])
        joints.append(vals[1:1 + d])
        vels.append(vals[1 + d:1 + 2 * d])
        wrench.append(vals[1 + 2 * d:1 + 2 * d + w])
        names.append(parts[-1])

    time = np.array(times)
    if np.any(np.diff(time) <= 0):
        bad = int(np.argmax(np.diff(time) <= 0)) + 3  # header + 1-based + next
        raise CsvFormatError(f"{path}: line {bad}: time not strictly increasing")

    if actions is None:
        seen = list(dict.fromkeys(names))
        actions = tuple(seen)
    else:
        actions = tuple(actions)
    index = {a: i for i, a in enumerate(actions)}
    labels = np.array([index[nm] for nm in names], dtype=int)
    dt = np.diff(time)
    # round away last-ulp noise in the timestamps so equal nominal rates
    # hash identically across write/read cycles
    rate = round(1.0 / float(np.median(dt)), 6) if len(dt) else DESK_RATE_HZ
    return Dataset(time=time, joints=np.array(joints),
                   joint_velocities=np.array(vels), wrenches=np.array(wrench),
                   labels=labels, actions=actions, rate=rate)
