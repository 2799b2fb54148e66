"""Generator closed forms, windowing arithmetic, CSV round trips."""

import numpy as np
import pytest

from gmoe.data import (
    CsvFormatError,
    DataError,
    DatasetTooSmallError,
    desk_regimes,
    generate_synthetic,
    m_shape_profile,
    read_csv,
    regime_joints,
    window_dataset,
    write_csv,
)


def single_regime_dataset(name="walking", duration=30.0):
    target = [r for r in desk_regimes() if r.name == name]
    other = [r for r in desk_regimes() if r.name != name][0]
    # Two regimes are required and the starting one is seed-dependent; an
    # absurdly long dwell pins whichever starts, so scan seeds for a clip
    # that stays in the target regime throughout.
    for seed in range(16):
        ds = generate_synthetic(target + [other], duration=duration,
                                noise_sigma=0.0, seed=seed,
                                dwell_range=(10 * duration, 10 * duration + 1))
        if not ds.labels.any():  # target regime has index 0
            return ds
    raise AssertionError("no seed produced a single-regime clip")


# -----------------------------------------------------------------------------
# generator
# -----------------------------------------------------------------------------

def test_velocities_are_analytic_derivative_single_regime():
    ds = single_regime_dataset()
    regime = desk_regimes()[0]
    _, sdot = regime_joints(regime, ds.time)
    assert np.max(np.abs(ds.joint_velocities - sdot)) < 1e-9
    # independent check against a numerical derivative of the closed form
    eps = 1e-6
    sp, _ = regime_joints(regime, ds.time + eps)
    sm, _ = regime_joints(regime, ds.time - eps)
    numeric = (sp - sm) / (2 * eps)
    assert np.max(np.abs(ds.joint_velocities - numeric)) < 1e-5


def count_peaks(values):
    """Strict interior local maxima."""
    return int(np.sum((values[1:-1] > values[:-2])
                      & (values[1:-1] > values[2:])))


def test_walking_force_has_two_maxima_per_gait_cycle():
    # Peak-count oracle on the closed form, sampled densely over one cycle.
    u = np.linspace(0.0, 1.0, 5000, endpoint=False)
    profile = m_shape_profile(u)
    assert count_peaks(profile) == 2

    # and the generated channel follows that closed form exactly at sigma=0
    ds = single_regime_dataset("walking")
    walking = desk_regimes()[0]
    expected = (walking.wrench_base[0]
                + walking.wrench_amp[0] * m_shape_profile(walking.freq * ds.time))
    assert np.max(np.abs(ds.wrenches[:, 0] - expected)) < 1e-9


def test_label_dwell_lengths_within_range():
    ds = generate_synthetic(desk_regimes(), duration=240.0, noise_sigma=0.0,
                            seed=3)
    changes = np.flatnonzero(np.diff(ds.labels) != 0)
    bounds = np.concatenate([[-1], changes, [len(ds) - 1]])
    runs = np.diff(bounds) / ds.rate
    tol = 1.0 / ds.rate
    # the final run is truncated by the end of the recording
    for run in runs[:-1]:
        assert 2.0 - tol <= run <= 6.0 + tol
    assert runs[-1] <= 6.0 + tol


def test_crossfade_stays_in_blended_envelope():
    # within each crossfade, every joint lies between the closed forms of
    # the two regimes being blended (raised-cosine weights are convex)
    regimes = desk_regimes()
    ds = generate_synthetic(regimes, duration=120.0, noise_sigma=0.0, seed=4)
    changes = np.flatnonzero(np.diff(ds.labels) != 0) + 1
    half = 0.2
    slack = 1e-9
    assert len(changes) > 5
    for c in changes:
        boundary = ds.time[c]
        idx = (ds.time >= boundary - half) & (ds.time < boundary + half)
        prev_r = regimes[ds.labels[c - 1]]
        next_r = regimes[ds.labels[c]]
        s_a, _ = regime_joints(prev_r, ds.time[idx])
        s_b, _ = regime_joints(next_r, ds.time[idx])
        lo = np.minimum(s_a, s_b)
        hi = np.maximum(s_a, s_b)
        assert np.all(ds.joints[idx] >= lo - slack)
        assert np.all(ds.joints[idx] <= hi + slack)


def test_generator_deterministic_per_seed():
    a = generate_synthetic(desk_regimes(), duration=30.0, noise_sigma=0.1, seed=5)
    b = generate_synthetic(desk_regimes(), duration=30.0, noise_sigma=0.1, seed=5)
    assert np.array_equal(a.joints, b.joints)
    assert np.array_equal(a.wrenches, b.wrenches)
    assert np.array_equal(a.labels, b.labels)
    c = generate_synthetic(desk_regimes(), duration=30.0, noise_sigma=0.1, seed=6)
    assert not np.array_equal(a.joints, c.joints)


def test_generator_rejects_bad_inputs():
    with pytest.raises(DataError):
        generate_synthetic(desk_regimes()[:1], duration=30.0)
    with pytest.raises(DataError):
        generate_synthetic(desk_regimes(), duration=5.0)
    clashing = desk_regimes()
    clashing[1].freq = clashing[0].freq
    with pytest.raises(DataError):
        generate_synthetic(clashing, duration=30.0)


def test_record_count_matches_duration():
    ds = generate_synthetic(desk_regimes(), duration=480.0, seed=0)
    assert len(ds) == 12000
    assert sum(ds.action_durations().values()) == pytest.approx(480.0)


# -----------------------------------------------------------------------------
# windowing
# -----------------------------------------------------------------------------

def test_window_count_arithmetic():
    ds = generate_synthetic(desk_regimes(), duration=40.0, seed=7)
    ws = window_dataset(ds, 5, 25)
    assert len(ds) == 1000
    assert len(ws) == 970


def test_window_targets_are_one_hot():
    ds = generate_synthetic(desk_regimes(), duration=20.0, seed=8)
    ws = window_dataset(ds, 3, 4)
    sums = ws.target_actions.sum(axis=-1)
    assert np.array_equal(sums, np.ones_like(sums))
    assert set(np.unique(ws.target_actions)) <= {0.0, 1.0}


def test_window_reconstructs_raw_records():
    ds = generate_synthetic(desk_regimes(), duration=20.0, seed=9)
    n_past, horizon = 4, 6
    ws = window_dataset(ds, n_past, horizon)
    feats = ds.features()
    ex = ws[10]
    k = ex.anchor_index
    assert np.array_equal(ex.input, feats[k - n_past:k + 1])
    assert np.array_equal(ex.target_motions[0], feats[k + 1])
    assert np.array_equal(ex.target_motions[-1], feats[k + horizon])
    lbl = ds.labels[k + 1]
    assert ex.target_actions[0, lbl] == 1.0


def test_window_dataset_too_short():
    ds = generate_synthetic(desk_regimes(), duration=10.0, seed=10)
    with pytest.raises(DatasetTooSmallError):
        window_dataset(ds, 5, len(ds))


# -----------------------------------------------------------------------------
# csv
# -----------------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    ds = generate_synthetic(desk_regimes(), duration=15.0, noise_sigma=0.3,
                            seed=11)
    path = tmp_path / "d.csv"
    write_csv(ds, path)
    back = read_csv(path, actions=ds.actions)
    assert np.array_equal(back.time, ds.time)
    assert np.array_equal(back.joints, ds.joints)
    assert np.array_equal(back.joint_velocities, ds.joint_velocities)
    assert np.array_equal(back.wrenches, ds.wrenches)
    assert np.array_equal(back.labels, ds.labels)
    assert back.actions == ds.actions
    assert back.rate == pytest.approx(ds.rate)


def test_csv_wrong_column_count_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,s_0,sdot_0,f_0,action\n"
                    "0.0,1.0,2.0,3.0,walking\n"
                    "0.04,1.0,2.0,walking\n")
    with pytest.raises(CsvFormatError) as err:
        read_csv(path)
    assert "line 3" in str(err.value)
    assert "4" in str(err.value) and "5" in str(err.value)


def test_csv_empty_file_distinct_error(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(CsvFormatError) as err:
        read_csv(path)
    assert "empty" in str(err.value)

    path.write_text("time,s_0,sdot_0,f_0,action\n")
    with pytest.raises(CsvFormatError) as err:
        read_csv(path)
    assert "no records" in str(err.value)


def test_csv_unknown_action_label(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,s_0,sdot_0,f_0,action\n"
                    "0.0,1.0,2.0,3.0,flying\n")
    with pytest.raises(CsvFormatError) as err:
        read_csv(path, actions=("walking", "standing"))
    assert "flying" in str(err.value)


def test_csv_non_monotone_time(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,s_0,sdot_0,f_0,action\n"
                    "0.0,1.0,2.0,3.0,walking\n"
                    "0.04,1.0,2.0,3.0,walking\n"
                    "0.04,1.0,2.0,3.0,walking\n")
    with pytest.raises(CsvFormatError) as err:
        read_csv(path)
    assert "increasing" in str(err.value)


def test_csv_malformed_float(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,s_0,sdot_0,f_0,action\n"
                    "0.0,oops,2.0,3.0,walking\n")
    with pytest.raises(CsvFormatError) as err:
        read_csv(path)
    assert "line 2" in str(err.value)
