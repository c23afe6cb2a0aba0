import dataclasses

import numpy as np
import pytest

from kinemetrics.calibration import pivot_calibrate, rotation_coverage
from kinemetrics.errors import DegenerateRotations, InvalidConfig
from kinemetrics.intervals import IntervalSet, duration
from kinemetrics.io import files
from kinemetrics.sim import (
    SimConfig,
    burst_start_probability,
    cohort_configs,
    default_config,
    dropout_mask,
    file_digest,
    frame_times,
    load_config,
    lossless,
    path_position,
    save_config,
    simulate_trial,
    synth_metric_cohort,
    synth_pivot_samples,
    write_trial,
)


def test_config_roundtrip(tmp_path):
    cfg = default_config(7, dropout_rate=0.1)
    save_config(tmp_path / "c.json", cfg)
    assert load_config(tmp_path / "c.json").to_dict() == cfg.to_dict()
    assert SimConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


@pytest.mark.parametrize(
    "change",
    [
        {"dropout_rate": 1.0},
        {"dropout_rate": -0.1},
        {"noise_sigma_mm": -1.0},
        {"seed": -1},
        {"group": "Novice"},
        {"contact_time_s": 500.0},
        {"pivot_samples": 2},
        {"instruments": {}},
    ],
)
def test_invalid_configs(change):
    cfg = dataclasses.replace(default_config(0), **change)
    with pytest.raises(InvalidConfig):
        cfg.validate()


def test_schedules_within_duration():
    for cfg in (default_config(s) for s in range(5)):
        for inst in cfg.instruments.values():
            assert all(0 <= a < b <= cfg.duration_s for a, b in inst.usage)


def test_tip_follows_motion_profile():
    cfg = lossless(default_config(2))
    trial = simulate_trial(cfg)
    for name, traj in trial.ground_truth.trajectories.items():
        expected = path_position(cfg.instruments[name].motion, traj.t / 1e9)
        assert np.abs(traj.points - expected).max() < 1e-9


def test_same_seed_same_files(tmp_path):
    cfg = default_config(5, dropout_rate=0.1)
    write_trial(simulate_trial(cfg), tmp_path / "a", wire=True)
    write_trial(simulate_trial(cfg), tmp_path / "b", wire=True)
    assert file_digest(tmp_path / "a") == file_digest(tmp_path / "b")


def test_different_seed_different_files(tmp_path):
    write_trial(simulate_trial(default_config(5)), tmp_path / "a")
    write_trial(simulate_trial(default_config(6)), tmp_path / "b")
    assert file_digest(tmp_path / "a") != file_digest(tmp_path / "b")


def test_written_trial_parses(tmp_path):
    trial = simulate_trial(default_config(1))
    manifest = files.load_manifest(write_trial(trial, tmp_path))
    for name, entry in manifest.instruments.items():
        log = files.read_pose_log(entry.pose_log)
        tr = log.tracks[entry.body_id]
        orig = next(t for t in trial.logs[entry.camera] if t.body_id == entry.body_id)
        assert np.array_equal(tr.p, orig.p) and np.array_equal(tr.visible, orig.visible)
    assert files.read_annotations(manifest.annotations).usage == trial.annotations.usage


def test_ground_truth_consistent():
    trial = simulate_trial(default_config(4, dropout_rate=0.2))
    for m in trial.ground_truth.report.instruments.values():
        assert m.time.t_capt <= min(m.time.t_usage, m.time.t_track) + 1e-12
    for m in trial.ground_truth.report.pairs.values():
        assert m.bit_capt <= min(m.bit_usage, m.bit_track) + 1e-12
        assert 0 <= m.coord_idx <= 1 and 0 <= m.efficiency_idx <= 1


# --- dropout model -----------------------------------------------------------------


def test_dropout_mask_rate(rng):
    lost = []
    for _ in range(20):
        vis = dropout_mask(rng, 200_000, 0.2, 30)
        lost.append(1 - vis.mean())
    assert np.mean(lost) == pytest.approx(0.2 * 30 / 31, abs=0.01)


def test_dropout_mask_bursts_have_fixed_length(rng):
    vis = dropout_mask(rng, 50_000, 0.3, 30)
    edges = np.flatnonzero(np.diff(np.r_[1, vis.astype(int), 1]))
    runs = edges[1::2] - edges[::2]
    assert set(runs[:-1]) == {30}


def test_dropout_protection_and_zero_rate(rng):
    protected = np.zeros(1000, dtype=bool)
    protected[100:300] = True
    vis = dropout_mask(rng, 1000, 0.5, 10, protected)
    assert vis[100:300].all()
    assert dropout_mask(rng, 1000, 0.0, 10).all()
    assert burst_start_probability(0.0, 30) == 0.0


def test_dropout_reduces_pct_captured():
    pct = []
    for seed in range(20):
        trial = simulate_trial(default_config(seed, dropout_rate=0.2))
        for m in trial.ground_truth.report.instruments.values():
            pct.append(m.time.pct_captured)
    assert np.mean(pct) == pytest.approx(0.80, abs=0.02)


def test_frame_times_exact():
    t = frame_times(1.0, 100.0)
    assert len(t) == 101 and t[-1] == 1_000_000_000 and np.all(np.diff(t) == 10_000_000)
    t = frame_times(1.0, 120.0)
    assert len(t) == 121 and t[-1] == 1_000_000_000


# --- pivot samples -----------------------------------------------------------------


def test_pivot_samples_recover_offset():
    poses = synth_pivot_samples((2, -3, 120), (10, 20, 400), 200, 90, 0.0, rng=0)
    cal = pivot_calibrate(poses)
    assert np.linalg.norm(cal.tip_offset - (2, -3, 120)) < 1e-6


def test_pivot_samples_coverage():
    for seed in range(10):
        poses = synth_pivot_samples((0, 0, 100), (0, 0, 0), 100, 60, 0.0, rng=seed)
        assert rotation_coverage(poses) >= 0.9 * 60


def test_pivot_samples_exact_constraint():
    for p in synth_pivot_samples((1, 2, 3), (4, 5, 6), 50, 120, rng=1):
        assert np.allclose(p.apply((1, 2, 3)), (4, 5, 6), atol=1e-12)


def test_zero_coverage_is_degenerate():
    with pytest.raises(DegenerateRotations):
        pivot_calibrate(synth_pivot_samples((0, 0, 100), (0, 0, 0), 50, 0, rng=0))


def test_pivot_sample_validation():
    with pytest.raises(InvalidConfig):
        synth_pivot_samples((0, 0, 1), (0, 0, 0), 2, 90)
    with pytest.raises(InvalidConfig):
        synth_pivot_samples((0, 0, 1), (0, 0, 0), 10, 200)


# --- cohorts --------------------------------------------------------------------------


def test_cohort_preset_shape():
    cfgs = cohort_configs("cohort-47x3")
    assert len(cfgs) == 141
    assert len({c.participant for c in cfgs}) == 47
    groups = [c.group for c in cfgs if c.trial == 1]
    assert [groups.count(g) for g in ("Student", "Junior", "Senior", "Expert")] == [14, 14, 11, 8]
    assert len({c.seed for c in cfgs}) == 141


def test_cohort_unknown_preset():
    with pytest.raises(InvalidConfig):
        cohort_configs("cohort-9")


def test_cohort_deterministic():
    a = [c.to_dict() for c in cohort_configs("cohort-47x3", seed=3)]
    b = [c.to_dict() for c in cohort_configs("cohort-47x3", seed=3)]
    assert a == b


def test_synth_metric_cohort():
    samples = synth_metric_cohort(0)
    assert len(samples) == 47
    assert all(len(s.values) == 3 for s in samples)
    assert synth_metric_cohort(0) == samples
    assert synth_metric_cohort(1) != samples


def test_usage_time_matches_schedule():
    cfg = default_config(0)
    trial = simulate_trial(cfg)
    for name, inst in cfg.instruments.items():
        expected = sum(b - a for a, b in inst.usage)
        got = duration(trial.ground_truth.usage[name])
        assert got == pytest.approx(expected, abs=1e-9)
    assert trial.ground_truth.usage.usage == {
        k: v.shift(trial.ground_truth.sync_offset_ns) for k, v in trial.annotations.usage.items()
    }
    assert isinstance(trial.annotations["bipolar"], IntervalSet)
