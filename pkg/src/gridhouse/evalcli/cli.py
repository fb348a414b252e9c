"""Command-line entry points for the workbench.

Subcommands map one-to-one onto library calls: schedule generation,
plant simulation, model fitting for both families, closed-loop episodes
under either controller, metric evaluation, and the full-report
pipeline. Artifacts are plain files (npz, CSV, PNG) so every stage can
be rerun or inspected in isolation.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from datetime import datetime
from pathlib import Path

import numpy as np

from .. import plant, signals
from ..lss import LssNlConfig, fit_lss_nl, load_lss_nl, save_lss_nl
from ..mpc import (EncdecPredictor, LssPredictor, MpcConfig, MpcController,
                   RuleBasedConfig, RuleBasedController, run_episode)
from ..rnn import TrainConfig, init_encdec, load_encdec, save_encdec, train
from ..sqp import SqpConfig
from .config import ExperimentConfig, load_config
from .experiment import run_experiment, simulate_record
from .metrics import (encdec_forecaster, episode_metrics, forecast_eval,
                      lss_forecaster)
from .store import (load_episode, load_record, save_episode, save_record,
                    write_episode_csv)

DEFAULT_START = "2023-01-05"


def _add_excite(sub):
    p = sub.add_parser("excite", help="generate a setpoint schedule")
    p.add_argument("--kind", default="multisine",
                   choices=["multisine", "piecewise-constant", "sinusoidal",
                            "square", "triangular"])
    p.add_argument("--days", type=float, default=7.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--period-h", type=float, default=24.0)
    p.add_argument("--dwell-h", type=float, default=6.0)
    p.add_argument("--out", required=True)


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="drive the plant through a schedule")
    p.add_argument("--setpoints", help="schedule npz; mid-box constant if omitted")
    p.add_argument("--days", type=float, default=14.0)
    p.add_argument("--weather-seed", type=int, default=11)
    p.add_argument("--start", default=DEFAULT_START)
    p.add_argument("--out", required=True)


def _add_fit_lss(sub):
    p = sub.add_parser("fit-lss", help="fit one linear-plus-kernel instance")
    p.add_argument("--train", required=True)
    p.add_argument("--points", type=int, default=4000)
    p.add_argument("--offset", type=int, default=0)
    p.add_argument("--order", type=int, default=8)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--ridge", type=float, default=1.0)
    p.add_argument("--support", type=int, default=2000)
    p.add_argument("--out", required=True)


def _add_fit_rnn(sub):
    p = sub.add_parser("fit-rnn", help="train one encoder-decoder instance")
    p.add_argument("--train", required=True)
    p.add_argument("--epochs", type=int, default=48)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--encoder", type=int, default=48)
    p.add_argument("--batch", type=int, default=200)
    p.add_argument("--rate", type=float,
                   help="fixed learning rate; staged schedule if omitted")
    p.add_argument("--out", required=True)


def _add_runs(sub):
    p = sub.add_parser("mpc-run", help="closed-loop optimizing episode")
    p.add_argument("--model", required=True)
    p.add_argument("--predictor", required=True, choices=["lss", "encdec"])
    p.add_argument("--days", type=int, default=14)
    p.add_argument("--warmup-days", type=int, default=1)
    p.add_argument("--horizon", type=int, default=12)
    p.add_argument("--iterations", type=int, default=12)
    p.add_argument("--weather-seed", type=int, default=7)
    p.add_argument("--start", default=DEFAULT_START)
    p.add_argument("--out", required=True, help="path stem for .npz and .csv")

    p = sub.add_parser("rb-run", help="closed-loop rule-based episode")
    p.add_argument("--zone", type=float, default=20.0)
    p.add_argument("--days", type=int, default=14)
    p.add_argument("--warmup-days", type=int, default=1)
    p.add_argument("--weather-seed", type=int, default=7)
    p.add_argument("--start", default=DEFAULT_START)
    p.add_argument("--out", required=True, help="path stem for .npz and .csv")


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="score an episode or a forecaster")
    p.add_argument("--episode", help="episode npz to score")
    p.add_argument("--record", help="held-out record npz for forecast scoring")
    p.add_argument("--model", help="model npz (with --record)")
    p.add_argument("--predictor", choices=["lss", "encdec"])
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--count", default="sample", choices=["sample", "room"])


def _add_report(sub):
    p = sub.add_parser("report", help="run the full experiment pipeline")
    p.add_argument("--config", help="experiment YAML; defaults if omitted")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridhouse",
        description="building-control workbench: simulation, fitting, "
                    "episodes, evaluation, reporting")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_excite(sub)
    _add_simulate(sub)
    _add_fit_lss(sub)
    _add_fit_rnn(sub)
    _add_runs(sub)
    _add_evaluate(sub)
    _add_report(sub)
    return parser


def _cmd_excite(args) -> int:
    spec = signals.ExcitationSpec(
        kind=args.kind, duration_days=args.days, seed=args.seed,
        amplitude=args.amplitude, waveform_period_h=args.period_h,
        mean_dwell_h=args.dwell_h)
    mat = np.array([sp.as_array() for sp in signals.generate(spec)])
    np.savez_compressed(Path(args.out), setpoints=mat)
    print(f"wrote {len(mat)} setpoint rows to {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    start = datetime.fromisoformat(args.start)
    weather = signals.synth_weather(args.days, seed=args.weather_seed,
                                    start=start)
    if args.setpoints:
        with np.load(args.setpoints) as d:
            mat = d["setpoints"]
        schedule = [plant.ControlSetpoints.from_array(row) for row in mat]
    else:
        boxes = signals.channel_boxes()
        mid = boxes.mean(axis=1)
        schedule = [plant.ControlSetpoints.from_array(mid)] * len(weather)
    cfg = plant.PlantConfig()
    state = plant.default_initial_state(cfg, start)
    n = min(len(schedule), len(weather))
    inputs = np.empty((n, 12))
    temps = np.empty((n, plant.N_ZONES))
    power = np.empty(n)
    for k in range(n):
        wx = weather[k]
        state, out = plant.step(state, schedule[k], wx, cfg)
        inputs[k] = np.concatenate([schedule[k].as_array(),
                                    [wx.t_out, wx.ghi, wx.rel_humidity]])
        temps[k] = out.t_air
        power[k] = out.p_el_thermal
    save_record(args.out, inputs, temps, power, start=start)
    print(f"wrote {n}-step record to {args.out}")
    return 0


def _cmd_fit_lss(args) -> int:
    inputs, temps, power, _ = load_record(args.train)
    sl = slice(args.offset, args.offset + args.points)
    if sl.stop > len(inputs):
        raise SystemExit("training slice exceeds the record")
    model = fit_lss_nl(inputs[sl], temps[sl], power[sl],
                       LssNlConfig(order=args.order, gamma=args.gamma,
                                   ridge=args.ridge,
                                   max_support=min(args.points,
                                                   args.support)))
    save_lss_nl(args.out, model)
    print(f"fitted linear instance on {args.points} points -> {args.out}")
    return 0


def _cmd_fit_rnn(args) -> int:
    inputs, temps, power, _ = load_record(args.train)
    base = ExperimentConfig()
    model = init_encdec(hidden_size=args.hidden, n_encoder=args.encoder,
                        seed=args.seed)
    stages = ([(args.rate, args.epochs)] if args.rate
              else base.stage_epochs(args.epochs))
    done = 0
    for rate, epochs in stages:
        tc = TrainConfig(batch_size=args.batch, learning_rate=rate,
                         epochs=epochs, seed=args.seed * 1000 + done,
                         decode_lengths=base.rnn_decode)
        model, _ = train(model, inputs, temps, power, tc)
        done += epochs
    save_encdec(args.out, model)
    print(f"trained {done} epochs -> {args.out}")
    return 0


def _run_and_save(controller, args, horizon: int) -> int:
    start = datetime.fromisoformat(args.start)
    weather = signals.synth_weather(args.days + args.warmup_days + 1,
                                    seed=args.weather_seed, start=start)
    log = run_episode(controller, weather,
                      days=args.days + args.warmup_days, start=start,
                      warmup_days=args.warmup_days, horizon=horizon)
    stem = Path(args.out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    save_episode(stem.with_suffix(".npz"), log)
    write_episode_csv(stem.with_suffix(".csv"), log)
    cm = episode_metrics(log)
    for key, value in asdict(cm).items():
        print(f"{key}: {value:.6g}")
    return 0


def _cmd_mpc_run(args) -> int:
    if args.predictor == "lss":
        predictor = LssPredictor(load_lss_nl(args.model))
    else:
        predictor = EncdecPredictor(load_encdec(args.model))
    cfg = MpcConfig(horizon=args.horizon,
                    solver=SqpConfig(max_iterations=args.iterations))
    return _run_and_save(MpcController(predictor, cfg), args, args.horizon)


def _cmd_rb_run(args) -> int:
    controller = RuleBasedController(RuleBasedConfig(zone_setpoint=args.zone))
    return _run_and_save(controller, args, 1)


def _cmd_evaluate(args) -> int:
    if args.episode:
        cm = episode_metrics(load_episode(args.episode), count=args.count)
        for key, value in asdict(cm).items():
            print(f"{key}: {value:.6g}")
        return 0
    if not (args.record and args.model and args.predictor):
        raise SystemExit(
            "evaluate needs --episode, or --record with --model and "
            "--predictor")
    inputs, temps, power, _ = load_record(args.record)
    if args.predictor == "lss":
        forecaster = lss_forecaster(load_lss_nl(args.model))
    else:
        forecaster = encdec_forecaster(load_encdec(args.model))
    fm = forecast_eval(forecaster, inputs, temps, power, args.window)
    for key, value in asdict(fm).items():
        print(f"{key}: {value:.6g}")
    return 0


def _cmd_report(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    root = run_experiment(cfg)
    print(f"artifacts in {root}")
    return 0


_HANDLERS = {
    "excite": _cmd_excite,
    "simulate": _cmd_simulate,
    "fit-lss": _cmd_fit_lss,
    "fit-rnn": _cmd_fit_rnn,
    "mpc-run": _cmd_mpc_run,
    "rb-run": _cmd_rb_run,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _HANDLERS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
