"""Tests for the metric layer, persistence helpers, config, and CLI."""

import dataclasses
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridhouse import mpc, signals
from gridhouse.evalcli import cli, config, metrics, store

START = datetime(2023, 1, 5)


# ---------------------------------------------------------------- metrics

def test_smrae_worked_examples():
    """Hand-checked values: 3 vs 1 gives 1, sign flip saturates at 2."""
    assert metrics.smrae(np.array([3.0]), np.array([1.0])) == pytest.approx(1.0)
    y = np.array([0.7, -2.0, 5.0])
    assert metrics.smrae(-y, y) == pytest.approx(2.0)
    assert metrics.smrae(y, y) == 0.0
    assert metrics.smrae(np.zeros(4), np.zeros(4)) == 0.0


def test_smrae_mixed_zero_and_exact():
    # one zero pair contributes 0, the other two contribute 1 and 2
    y_hat = np.array([0.0, 3.0, -1.0])
    y = np.array([0.0, 1.0, 1.0])
    assert metrics.smrae(y_hat, y) == pytest.approx((0.0 + 1.0 + 2.0) / 3.0)


def test_mae_basic():
    assert metrics.mae(np.array([1.0, 3.0]), np.array([2.0, 1.0])) == 1.5
    with pytest.raises(ValueError):
        metrics.mae(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        metrics.mae(np.zeros(0), np.zeros(0))


@given(st.floats(min_value=-10.0, max_value=10.0).filter(lambda a: abs(a) > 1e-3),
       st.integers(min_value=1, max_value=30), st.integers(min_value=0, max_value=2**31))
@settings(max_examples=40, deadline=None)
def test_mae_scale_covariance(a, n, seed):
    """MAE scales linearly with the data: mae(a yhat, a y) = |a| mae."""
    rng = np.random.default_rng(seed)
    y_hat = rng.normal(size=n)
    y = rng.normal(size=n)
    assert metrics.mae(a * y_hat, a * y) == pytest.approx(
        abs(a) * metrics.mae(y_hat, y), rel=1e-12, abs=1e-300)


@given(st.integers(min_value=1, max_value=40), st.integers(min_value=0, max_value=2**31))
@settings(max_examples=60, deadline=None)
def test_smrae_bounds(n, seed):
    rng = np.random.default_rng(seed)
    y_hat = rng.normal(scale=3.0, size=n)
    y = rng.normal(scale=3.0, size=n)
    # sprinkle exact zeros to hit the 0/0 branch
    y_hat[rng.random(n) < 0.2] = 0.0
    y[rng.random(n) < 0.2] = 0.0
    v = metrics.smrae(y_hat, y)
    assert 0.0 <= v <= 2.0


def test_control_worked_example():
    """Two samples, eight rooms, one room 1 degree over in one sample."""
    temps = np.full((2, 8), 21.0)
    temps[1, 3] = 25.0
    zeros = np.zeros(2)
    cm = metrics.control_metrics(temps, zeros, zeros, zeros)
    assert cm.comfort_violation == pytest.approx(0.5)
    assert cm.n_violating == 1
    assert cm.violation_depth == pytest.approx(1.0)
    assert cm.p_grid == 0.0 and cm.p_thermal == 0.0


def test_control_count_modes():
    # two rooms violating in the same sample: one sample but two pairs
    temps = np.full((4, 8), 22.0)
    temps[2, 0] = 25.0
    temps[2, 1] = 18.0
    by_sample = metrics.control_metrics(temps, *[np.zeros(4)] * 3)
    by_room = metrics.control_metrics(temps, *[np.zeros(4)] * 3, count="room")
    assert by_sample.n_violating == 1
    assert by_room.n_violating == 2
    assert by_sample.comfort_violation == by_room.comfort_violation
    assert by_room.violation_depth == pytest.approx(
        by_sample.violation_depth / 2.0)


def test_grid_power_cancels_when_production_matches():
    temps = np.full((5, 8), 21.0)
    p_th = np.array([1.0, 2.0, 0.5, 0.0, 3.0])
    p_app = np.array([0.3, 0.3, 0.3, 0.3, 0.3])
    cm = metrics.control_metrics(temps, p_th, p_app, p_th + p_app)
    assert cm.p_grid == 0.0
    assert cm.p_thermal == pytest.approx(np.mean(p_th))


def test_grid_power_counts_export_magnitude():
    # production above consumption still counts as exchanged power
    temps = np.full((2, 8), 21.0)
    cm = metrics.control_metrics(temps, np.zeros(2), np.zeros(2),
                                 np.array([4.0, 0.0]))
    assert cm.p_grid == pytest.approx(2.0)


@given(st.integers(min_value=1, max_value=30), st.integers(min_value=1, max_value=8),
       st.integers(min_value=0, max_value=2**31),
       st.sampled_from(["sample", "room"]))
@settings(max_examples=60, deadline=None)
def test_depth_count_identity(n, rooms, seed, count):
    """depth * n_violating equals violation * n_samples to 1e-9."""
    rng = np.random.default_rng(seed)
    temps = rng.uniform(14.0, 30.0, size=(n, rooms))
    cm = metrics.control_metrics(temps, rng.uniform(0, 5, n),
                                 rng.uniform(0, 2, n), rng.uniform(0, 8, n),
                                 count=count)
    lhs = cm.violation_depth * cm.n_violating
    rhs = cm.comfort_violation * cm.n_samples
    assert abs(lhs - rhs) <= metrics.IDENTITY_TOL * max(1.0, rhs)


def test_control_metrics_validation():
    with pytest.raises(ValueError):
        metrics.ControlMetrics(-0.1, 0.0, 0.0, 0.0, 1, 0)
    with pytest.raises(ValueError):
        metrics.ControlMetrics(0.0, 0.0, 0.0, 0.5, 4, 0)
    with pytest.raises(ValueError):
        metrics.ControlMetrics(0.0, 0.0, 0.25, 2.0, 4, 2)


def test_forecast_metrics_validation():
    with pytest.raises(ValueError):
        metrics.ForecastMetrics(0.1, 0.1, 0.1, 0.1, 2.1, 0.1, 4, 3, 0.5)
    with pytest.raises(ValueError):
        metrics.ForecastMetrics(-0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 4, 3, 0.5)


@given(st.integers(min_value=1, max_value=20), st.integers(min_value=0, max_value=50),
       st.integers(min_value=0, max_value=300))
@settings(max_examples=80, deadline=None)
def test_window_tiling(m, first, extra):
    n_total = first + m + extra
    starts = metrics.window_starts(n_total, m, first)
    assert starts[0] == first
    assert np.all(np.diff(starts) == m)
    assert starts[-1] + m <= n_total
    # one more window would overrun the record
    assert starts[-1] + 2 * m > n_total


def test_window_starts_too_short():
    with pytest.raises(ValueError):
        metrics.window_starts(10, 4, 8)
    with pytest.raises(ValueError):
        metrics.window_starts(10, 0, 0)


def test_forecast_eval_with_persistence():
    """Windows are disjoint and scored against the right observations."""
    rng = np.random.default_rng(5)
    n, m, hist = 22, 4, 8
    inputs = rng.normal(size=(n, 12))
    temps = rng.uniform(18, 24, size=(n, 8))
    power = rng.uniform(0, 5, size=n)

    seen = []

    def persistence(u_hist, y_hist, z_hist, u_future):
        seen.append((len(u_hist), len(u_future)))
        k = len(u_future)
        return np.repeat(y_hist[-1:], k, axis=0), np.repeat(z_hist[-1], k)

    fm = metrics.forecast_eval(persistence, inputs, temps, power, m,
                               history_steps=hist)
    assert fm.n_windows == 3
    assert seen == [(8, 4), (12, 4), (16, 4)]
    assert fm.window_steps == m
    assert fm.span_days == pytest.approx(12 / signals.STEPS_PER_DAY)

    # recompute both temperature MAEs independently
    errs, ends = [], []
    for s in (8, 12, 16):
        pred = np.repeat(temps[s - 1:s], m, axis=0)
        errs.append(np.abs(pred - temps[s:s + m]))
        ends.append(np.abs(temps[s - 1] - temps[s + m - 1]))
    assert fm.mae_temperature == pytest.approx(float(np.mean(errs)))
    assert fm.mae_temperature_end == pytest.approx(float(np.mean(ends)))


def test_forecast_eval_perfect_predictor():
    rng = np.random.default_rng(9)
    inputs = rng.normal(size=(20, 12))
    temps = rng.uniform(18, 24, size=(20, 8))
    power = rng.uniform(0.1, 5, size=20)

    def oracle(u_hist, y_hist, z_hist, u_future):
        s = len(u_hist)
        k = len(u_future)
        return temps[s:s + k], power[s:s + k]

    fm = metrics.forecast_eval(oracle, inputs, temps, power, 4,
                               history_steps=4)
    assert fm.mae_temperature == 0.0
    assert fm.smrae_power == 0.0


# ------------------------------------------------------------------ store

def _tiny_episode():
    weather = signals.synth_weather(1.5, seed=3, start=START)
    ctrl = mpc.RuleBasedController(mpc.RuleBasedConfig(zone_setpoint=20.0))
    return mpc.run_episode(ctrl, weather, days=1, start=START, warmup_days=0,
                           horizon=1)


def test_record_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    inputs = rng.normal(size=(30, 12))
    temps = rng.normal(size=(30, 8))
    power = rng.normal(size=30)
    p = tmp_path / "rec.npz"
    store.save_record(p, inputs, temps, power, start=START)
    i2, t2, z2, s2 = store.load_record(p)
    assert np.array_equal(i2, inputs)
    assert np.array_equal(t2, temps)
    assert np.array_equal(z2, power)
    assert s2 == START


def test_record_length_mismatch(tmp_path):
    with pytest.raises(ValueError):
        store.save_record(tmp_path / "bad.npz", np.zeros((3, 12)),
                          np.zeros((4, 8)), np.zeros(3))


def test_episode_roundtrip(tmp_path):
    log = _tiny_episode()
    p = tmp_path / "ep.npz"
    store.save_episode(p, log)
    back = store.load_episode(p)
    assert back.start == log.start
    assert np.array_equal(back.setpoints, log.setpoints)
    assert np.array_equal(back.temps, log.temps)
    assert np.array_equal(back.p_el_thermal, log.p_el_thermal)
    assert np.array_equal(back.p_pv, log.p_pv)
    assert back.termination == log.termination
    assert back.warmup_steps == log.warmup_steps
    assert back.merit_monotone == log.merit_monotone
    assert back.n_steps == log.n_steps


def test_episode_csv_deterministic(tmp_path):
    log = _tiny_episode()
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    store.write_episode_csv(a, log)
    store.write_episode_csv(b, log)
    assert a.read_bytes() == b.read_bytes()
    header = a.read_text().splitlines()[0].split(",")
    assert header == list(store.EPISODE_CSV_COLUMNS)
    assert len(a.read_text().splitlines()) == log.n_steps + 1


def test_table_roundtrip_and_determinism(tmp_path):
    header = ["name", "value", "count"]
    rows = [["alpha", 1.0 / 3.0, 7], ["beta", 2.5e-13, 0]]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    store.write_table(a, header, rows)
    store.write_table(b, header, rows)
    assert a.read_bytes() == b.read_bytes()
    h2, r2 = store.read_table(a)
    assert h2 == header
    assert r2[0][0] == "alpha"
    assert float(r2[0][1]) == pytest.approx(1.0 / 3.0, rel=1e-8)
    assert r2[1][2] == "0"


# ----------------------------------------------------------------- config

def test_config_roundtrip(tmp_path):
    cfg = config.ExperimentConfig(eval_days=4, episode_days=2,
                                  rnn_seeds=(1, 2), rnn_epochs=(3, 3))
    p = tmp_path / "cfg.yaml"
    config.dump_config(cfg, p)
    back = config.load_config(p)
    assert back == cfg


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("horizon: 6\nmystery_knob: 3\n")
    with pytest.raises(ValueError, match="mystery_knob"):
        config.load_config(p)


def test_config_coerces_yaml_lists(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("rb_zone_setpoints: [19.0, 20.0]\nhorizon: 8\n")
    cfg = config.load_config(p)
    assert cfg.rb_zone_setpoints == (19.0, 20.0)
    assert cfg.horizon == 8


def test_config_validates_slices():
    with pytest.raises(ValueError):
        config.ExperimentConfig(corpus_days=10, lss_points=(4000,),
                                lss_offsets=(0,), rnn_seeds=(1,),
                                rnn_epochs=(1,))


def test_stage_epochs_partition():
    cfg = config.ExperimentConfig()
    for total in (1, 2, 7, 20, 48, 97):
        stages = cfg.stage_epochs(total)
        assert sum(n for _, n in stages) == total
        rates = [r for r, n in stages if n > 0]
        assert rates == sorted(rates, reverse=True)


# -------------------------------------------------------------------- cli

def test_parser_covers_all_subcommands():
    parser = cli.build_parser()
    for argv in (
        ["excite", "--out", "x.npz"],
        ["simulate", "--out", "x.npz"],
        ["fit-lss", "--train", "r.npz", "--out", "m.npz"],
        ["fit-rnn", "--train", "r.npz", "--out", "m.npz"],
        ["mpc-run", "--model", "m.npz", "--predictor", "lss", "--out", "e"],
        ["rb-run", "--out", "e"],
        ["evaluate", "--episode", "e.npz"],
        ["report"],
    ):
        args = parser.parse_args(argv)
        assert args.command == argv[0]


def test_cli_excite_simulate_evaluate(tmp_path, capsys):
    sched = tmp_path / "sched.npz"
    rec = tmp_path / "rec.npz"
    assert cli.main(["excite", "--kind", "sinusoidal", "--days", "1",
                     "--amplitude", "0.4", "--out", str(sched)]) == 0
    with np.load(sched) as d:
        mat = d["setpoints"]
    assert mat.shape == (signals.STEPS_PER_DAY, 9)
    boxes = signals.channel_boxes()
    assert np.all(mat >= boxes[:, 0]) and np.all(mat <= boxes[:, 1])

    assert cli.main(["simulate", "--setpoints", str(sched), "--days", "1",
                     "--weather-seed", "2", "--out", str(rec)]) == 0
    inputs, temps, power, _ = store.load_record(rec)
    assert inputs.shape == (signals.STEPS_PER_DAY, 12)
    assert temps.shape == (signals.STEPS_PER_DAY, 8)
    assert np.all(np.isfinite(power))

    ep = tmp_path / "ep"
    assert cli.main(["rb-run", "--zone", "20", "--days", "1",
                     "--warmup-days", "0", "--weather-seed", "2",
                     "--out", str(ep)]) == 0
    capsys.readouterr()
    assert cli.main(["evaluate", "--episode", str(ep) + ".npz"]) == 0
    out = capsys.readouterr().out
    assert "p_grid:" in out and "p_thermal:" in out


def test_cli_fit_lss_and_forecast_eval(tmp_path, capsys):
    sched = tmp_path / "sched.npz"
    rec = tmp_path / "rec.npz"
    model = tmp_path / "m.npz"
    cli.main(["excite", "--kind", "multisine", "--days", "3", "--seed", "4",
              "--out", str(sched)])
    cli.main(["simulate", "--setpoints", str(sched), "--days", "3",
              "--weather-seed", "5", "--out", str(rec)])
    assert cli.main(["fit-lss", "--train", str(rec), "--points", "180",
                     "--offset", "0", "--order", "4", "--support", "150",
                     "--out", str(model)]) == 0
    capsys.readouterr()
    assert cli.main(["evaluate", "--record", str(rec), "--model", str(model),
                     "--predictor", "lss", "--window", "4"]) == 0
    out = capsys.readouterr().out
    assert "mae_temperature:" in out and "smrae_power:" in out


def test_cli_evaluate_requires_a_target():
    with pytest.raises(SystemExit):
        cli.main(["evaluate"])


def test_episode_metrics_uses_eval_slice():
    log = _tiny_episode()
    cm = metrics.episode_metrics(log)
    assert cm.n_samples == log.n_steps - log.warmup_steps
    direct = metrics.control_metrics(
        log.temps, log.p_el_thermal, log.p_appliances, log.p_pv)
    assert direct.n_samples == log.n_steps


def test_control_metrics_rejects_empty():
    with pytest.raises(ValueError):
        metrics.control_metrics(np.zeros((0, 8)), np.zeros(0), np.zeros(0),
                                np.zeros(0))


def test_metrics_dataclasses_frozen():
    cm = metrics.ControlMetrics(1.0, 1.0, 0.0, 0.0, 4, 0)
    with pytest.raises(dataclasses.FrozenInstanceError):
        cm.p_grid = 2.0
