"""Receding-horizon controller assembly and rule-based baselines.

Each control period the controller forecasts zone temperatures and
thermal electric power over the horizon with one of the two predictors,
minimizes the absolute grid exchange |P_el - P_pv| subject to comfort and
setpoint-coupling constraints, and applies only the first setpoint
vector. Decisions are normalized to [0, 1] per channel before handing
the problem to the SQP solver.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from . import plant, signals, sqp
from .lss import LssNl, lss_nl_forecast, lss_nl_forecast_with_jacobian
from .plant import (
    HP_SUPPLY_RANGE,
    N_TANKS,
    N_ZONES,
    TANK_SP_RANGE,
    TANK_SUPPLY_MARGIN,
    ZONE_SP_RANGE,
    ControlSetpoints,
    PlantConfig,
    WeatherSample,
)
from .rnn import EncoderDecoderModel, encdec_forecast, encdec_forecast_with_jacobian

N_CHANNELS = 9

COMFORT_LOW = 19.0
COMFORT_HIGH = 24.0

RULE_BASED_ZONE_CHOICES = (19.0, 19.5, 20.0, 21.0)


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 24
    control_period_minutes: int = 15
    comfort_low: float = COMFORT_LOW
    comfort_high: float = COMFORT_HIGH
    comfort_margin: float = 0.1
    smoothing_window: int = 3
    penalty: float = 10.0
    objective_smoothing: float = 1e-3
    anchor_start: bool = True
    solver: sqp.SqpConfig = field(default_factory=sqp.SqpConfig)

    def __post_init__(self):
        if self.horizon < 1 or self.horizon > 96:
            raise ValueError("horizon must be between 1 and 96 steps")
        if self.comfort_low >= self.comfort_high:
            raise ValueError("comfort band is empty")
        if not 0.0 <= self.comfort_margin < 0.5 * (self.comfort_high
                                                   - self.comfort_low):
            raise ValueError("margin must leave a nonempty tightened band")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ValueError("smoothing window must be odd and positive")
        if self.penalty <= 0 or self.objective_smoothing <= 0:
            raise ValueError("penalty and smoothing must be positive")


@dataclass(frozen=True)
class RuleBasedConfig:
    zone_setpoint: float = 20.0
    tank_setpoint: float = 40.0
    curve_cold_out: float = -5.0
    curve_cold_supply: float = 55.0
    curve_warm_out: float = 15.0
    curve_warm_supply: float = 40.0

    def __post_init__(self):
        if self.zone_setpoint not in RULE_BASED_ZONE_CHOICES:
            raise ValueError(
                f"zone setpoint must be one of {RULE_BASED_ZONE_CHOICES}")
        if not TANK_SP_RANGE[0] <= self.tank_setpoint <= TANK_SP_RANGE[1]:
            raise ValueError("tank setpoint outside its range")
        if self.curve_cold_out >= self.curve_warm_out:
            raise ValueError("curve breakpoints must be ordered")


def objective(p_el: np.ndarray, p_prod: np.ndarray) -> float:
    """Grid exchange cost: sum of |consumption - production| over steps."""
    p_el = np.asarray(p_el, dtype=float)
    p_prod = np.asarray(p_prod, dtype=float)
    if p_el.shape != p_prod.shape:
        raise ValueError("power series lengths differ")
    return float(np.sum(np.abs(p_el - p_prod)))


def constraints(temps: np.ndarray, setpoints: np.ndarray) -> np.ndarray:
    """Stacked inequality residuals; feasible means every entry <= 0.

    Order: comfort upper (T - 24) per step and room, comfort lower
    (19 - T), setpoint box upper, box lower, then tank-coupling rows.
    """
    temps = np.atleast_2d(np.asarray(temps, dtype=float))
    u = np.atleast_2d(np.asarray(setpoints, dtype=float))
    if u.shape[1] != N_CHANNELS:
        raise ValueError("setpoint rows must have 9 channels")
    boxes = signals.channel_boxes()
    parts = [
        (temps - COMFORT_HIGH).ravel(),
        (COMFORT_LOW - temps).ravel(),
        (u - boxes[:, 1]).ravel(),
        (boxes[:, 0] - u).ravel(),
        (u[:, 1:5] - (u[:, :1] - TANK_SUPPLY_MARGIN)).ravel(),
    ]
    return np.concatenate(parts)


def warm_start(previous: np.ndarray, window: int = 3) -> np.ndarray:
    """Shift the last plan one step, smooth it, and project into boxes."""
    prev = np.atleast_2d(np.asarray(previous, dtype=float))
    h = prev.shape[0]
    shifted = np.vstack([prev[1:], prev[-1:]])
    half = window // 2
    smoothed = np.empty_like(shifted)
    for t in range(h):
        lo = max(0, t - half)
        hi = min(h, t + half + 1)
        smoothed[t] = shifted[lo:hi].mean(axis=0)
    boxes = signals.channel_boxes()
    out = np.clip(smoothed, boxes[:, 0], boxes[:, 1])
    out[:, 1:5] = np.minimum(out[:, 1:5],
                             out[:, :1] - TANK_SUPPLY_MARGIN)
    return np.clip(out, boxes[:, 0], boxes[:, 1])


def cold_start(horizon: int) -> np.ndarray:
    boxes = signals.channel_boxes()
    mid = 0.5 * (boxes[:, 0] + boxes[:, 1])
    traj = np.tile(mid, (horizon, 1))
    traj[:, 1:5] = np.minimum(traj[:, 1:5], traj[:, :1] - TANK_SUPPLY_MARGIN)
    return traj


def anchor_plan(horizon: int, comfort_low: float = COMFORT_LOW) -> np.ndarray:
    """Minimum-power band-riding plan: lowest supply and tank setpoints
    with zone setpoints half a relay band above the lower comfort bound."""
    boxes = signals.channel_boxes()
    row = np.empty(N_CHANNELS)
    row[0] = boxes[0, 0]
    row[1:5] = np.minimum(boxes[1:5, 0], row[0] - TANK_SUPPLY_MARGIN)
    row[5:9] = np.clip(comfort_low + 0.5, boxes[5:9, 0], boxes[5:9, 1])
    return np.tile(row, (horizon, 1))


class LssPredictor:
    """Adapter exposing the linear pipeline through the common interface."""

    name = "lss-nl"

    def __init__(self, model: LssNl, history_steps: int = 96):
        self.model = model
        self.history_steps = history_steps

    def forecast(self, u_hist, y_hist, z_hist, u_future):
        n = min(len(u_hist), self.history_steps)
        return lss_nl_forecast(self.model, u_hist[-n:], y_hist[-n:], u_future)

    def forecast_with_jacobian(self, u_hist, y_hist, z_hist, u_future, wrt):
        n = min(len(u_hist), self.history_steps)
        return lss_nl_forecast_with_jacobian(
            self.model, u_hist[-n:], y_hist[-n:], u_future, wrt=wrt)


class EncdecPredictor:
    """Adapter exposing the recurrent model through the common interface."""

    name = "enc-dec"

    def __init__(self, model: EncoderDecoderModel):
        self.model = model
        self.history_steps = model.n_encoder

    def forecast(self, u_hist, y_hist, z_hist, u_future):
        return encdec_forecast(self.model, u_hist, y_hist, z_hist, u_future)

    def forecast_with_jacobian(self, u_hist, y_hist, z_hist, u_future, wrt):
        return encdec_forecast_with_jacobian(
            self.model, u_hist, y_hist, z_hist, u_future, wrt=wrt)


@dataclass(frozen=True)
class MpcStepResult:
    applied: ControlSetpoints
    trajectory: np.ndarray
    objective: float
    violation: float
    solve_seconds: float
    termination: str
    merit_monotone: bool
    iterations: int


def mpc_step(predictor, u_hist: np.ndarray, y_hist: np.ndarray,
             z_hist: np.ndarray, weather_forecast: np.ndarray,
             p_appliance: np.ndarray, p_production: np.ndarray,
             previous: np.ndarray | None, cfg: MpcConfig) -> MpcStepResult:
    """Solve one receding-horizon problem and return the first setpoint.

    `weather_forecast` is (H, 3) rows of [t_out, ghi, rh];
    `p_appliance` and `p_production` are (H,) known power profiles.
    """
    started = time.perf_counter()
    h = cfg.horizon
    weather_forecast = np.asarray(weather_forecast, dtype=float)
    if weather_forecast.shape != (h, 3):
        raise ValueError("weather forecast must be (horizon, 3)")
    if len(p_appliance) != h or len(p_production) != h:
        raise ValueError("power profiles must cover the horizon")
    boxes = signals.channel_boxes()
    lo, span = boxes[:, 0], boxes[:, 1] - boxes[:, 0]
    u0_phys = warm_start(previous, cfg.smoothing_window) \
        if previous is not None else cold_start(h)
    x0 = ((u0_phys - lo) / span).ravel()

    delta = cfg.objective_smoothing
    cache: dict = {}

    def predict(x: np.ndarray):
        key = x.tobytes()
        if key not in cache:
            cache.clear()
            u_phys = (lo + span * x.reshape(h, N_CHANNELS))
            u_full = np.hstack([u_phys, weather_forecast])
            cache[key] = predictor.forecast_with_jacobian(
                u_hist, y_hist, z_hist, u_full, np.arange(N_CHANNELS))
        return cache[key]

    def objective_cb(x: np.ndarray):
        y_pred, z_pred, jac_y, jac_z = predict(x)
        diff = z_pred + p_appliance - p_production
        root = np.sqrt(diff * diff + delta * delta)
        f = float(np.sum(root - delta))
        weight = diff / root
        grad_phys = np.einsum("t,tpc->pc", weight, jac_z)
        return f, (grad_phys * span).ravel()

    # hard linear coupling rows: tank_sp <= hp_supply - margin, one row
    # per tank and step, expressed in normalized decision coordinates
    coupling_jac = np.zeros((h * N_TANKS, h * N_CHANNELS))
    coupling_const = np.empty(h * N_TANKS)
    for t in range(h):
        for k in range(N_TANKS):
            row = t * N_TANKS + k
            coupling_jac[row, t * N_CHANNELS + 1 + k] = span[1 + k]
            coupling_jac[row, t * N_CHANNELS] = -span[0]
            coupling_const[row] = lo[1 + k] - lo[0] + TANK_SUPPLY_MARGIN

    # comfort rows pruned to the reachable set: a row whose residual cannot
    # reach zero anywhere inside the unit step box is dropped; dropped rows
    # contribute nothing to the merit either way. The mask is frozen at the
    # first evaluation so row indices stay stable across the whole solve and
    # active-set warm starts carry over between iterations.
    comfort_keep: list = [None]

    def constraints_cb(x: np.ndarray):
        y_pred, z_pred, jac_y, jac_z = predict(x)
        jac_flat = (jac_y * span).reshape(h, N_ZONES, h * N_CHANNELS)
        g_hi = y_pred - (cfg.comfort_high - cfg.comfort_margin)
        g_lo = (cfg.comfort_low + cfg.comfort_margin) - y_pred
        if comfort_keep[0] is None:
            reach = 2.0 * np.sum(np.abs(jac_flat), axis=2)
            comfort_keep[0] = (g_hi + reach >= 0.0, g_lo + reach >= 0.0)
        keep_hi, keep_lo = comfort_keep[0]
        g_soft = np.concatenate([g_hi[keep_hi], g_lo[keep_lo]])
        jac_soft = np.vstack([jac_flat[keep_hi], -jac_flat[keep_lo]])
        g_coupling = coupling_jac @ x + coupling_const
        g = np.concatenate([g_soft, g_coupling])
        jac = np.vstack([jac_soft, coupling_jac])
        soft = np.zeros(len(g), dtype=bool)
        soft[:len(g_soft)] = True
        return g, jac, soft

    def merit_at(x: np.ndarray) -> float:
        f, _ = objective_cb(x)
        g, _, soft = constraints_cb(x)
        return f + cfg.penalty * float(np.sum(np.maximum(g[soft], 0.0)))

    problem = sqp.NlpProblem(
        objective=objective_cb, constraints=constraints_cb,
        lower=np.zeros(h * N_CHANNELS), upper=np.ones(h * N_CHANNELS),
        penalty=cfg.penalty)
    result = sqp.solve(problem, x0, cfg.solver)

    # a fixed band-riding plan gives the solver a second basin to try when
    # the warm-started solve settles on an expensive plateau; the extra
    # solve only runs when the anchor already beats the incumbent merit
    monotone_runs = [result.merit_history]
    if cfg.anchor_start:
        x_anchor = ((anchor_plan(h, cfg.comfort_low + cfg.comfort_margin)
                     - lo) / span).ravel()
        if merit_at(x_anchor) < result.merit_history[-1]:
            second = sqp.solve(problem, x_anchor, cfg.solver)
            monotone_runs.append(second.merit_history)
            if second.merit_history[-1] < result.merit_history[-1]:
                result = second

    u_star = (lo + span * result.solution.reshape(h, N_CHANNELS))
    # guard the applied vector against the last floating-point ulp of the
    # coupling rows before constructing validated setpoints
    u_star[:, 1:5] = np.minimum(u_star[:, 1:5],
                                u_star[:, :1] - TANK_SUPPLY_MARGIN)
    u_star = np.clip(u_star, boxes[:, 0], boxes[:, 1])
    y_pred, z_pred, *_ = predict(result.solution)
    exact = objective(z_pred + p_appliance, p_production)
    applied = ControlSetpoints.from_array(u_star[0])
    monotone = all(
        hist[i + 1] <= hist[i] + 1e-12
        for hist in monotone_runs for i in range(len(hist) - 1))
    comfort = np.concatenate([(y_pred - cfg.comfort_high).ravel(),
                              (cfg.comfort_low - y_pred).ravel()])
    violation = float(np.max(np.maximum(comfort, 0.0), initial=0.0))
    return MpcStepResult(
        applied=applied, trajectory=u_star, objective=exact,
        violation=violation, solve_seconds=time.perf_counter() - started,
        termination=result.termination, merit_monotone=monotone,
        iterations=result.iterations)


def rule_based_step(t_out: float, cfg: RuleBasedConfig) -> ControlSetpoints:
    """Heating-curve supply with fixed zone and tank setpoints."""
    frac = (t_out - cfg.curve_cold_out) / (cfg.curve_warm_out
                                           - cfg.curve_cold_out)
    supply = cfg.curve_cold_supply + frac * (cfg.curve_warm_supply
                                             - cfg.curve_cold_supply)
    supply = float(np.clip(supply, HP_SUPPLY_RANGE[0], HP_SUPPLY_RANGE[1]))
    tank = min(cfg.tank_setpoint, supply - TANK_SUPPLY_MARGIN)
    tank = float(np.clip(tank, TANK_SP_RANGE[0], TANK_SP_RANGE[1]))
    zone = float(np.clip(cfg.zone_setpoint, ZONE_SP_RANGE[0],
                         ZONE_SP_RANGE[1]))
    return ControlSetpoints(hp_supply=supply, tank_sp=(tank,) * N_TANKS,
                            zone_sp=(zone,) * plant.N_APARTMENTS)


@dataclass
class EpisodeLog:
    """Per-step trace of one closed-loop episode."""

    start: datetime
    setpoints: np.ndarray
    temps: np.ndarray
    p_el_thermal: np.ndarray
    p_appliances: np.ndarray
    p_pv: np.ndarray
    t_out: np.ndarray
    objective: np.ndarray
    violation: np.ndarray
    solve_seconds: np.ndarray
    termination: list
    warmup_steps: int
    merit_monotone: bool

    @property
    def n_steps(self) -> int:
        return len(self.setpoints)

    def eval_slice(self) -> slice:
        return slice(self.warmup_steps, self.n_steps)


class RuleBasedController:
    def __init__(self, cfg: RuleBasedConfig):
        self.cfg = cfg

    def step(self, u_hist, y_hist, z_hist, weather_now, weather_forecast,
             p_appliance, p_production, clock):
        t0 = time.perf_counter()
        sp = rule_based_step(weather_now.t_out, self.cfg)
        return sp, {"objective": float("nan"), "violation": 0.0,
                    "solve_seconds": time.perf_counter() - t0,
                    "termination": "rule", "merit_monotone": True}


class MpcController:
    def __init__(self, predictor, cfg: MpcConfig,
                 fallback: RuleBasedConfig | None = None):
        self.predictor = predictor
        self.cfg = cfg
        self.fallback = fallback or RuleBasedConfig()
        self.previous: np.ndarray | None = None
        self.last_applied: ControlSetpoints | None = None

    def step(self, u_hist, y_hist, z_hist, weather_now, weather_forecast,
             p_appliance, p_production, clock):
        t0 = time.perf_counter()
        try:
            res = mpc_step(self.predictor, u_hist, y_hist, z_hist,
                           weather_forecast, p_appliance, p_production,
                           self.previous, self.cfg)
        except Exception:
            sp = self.last_applied or rule_based_step(weather_now.t_out,
                                                      self.fallback)
            self.previous = None
            return sp, {"objective": float("nan"), "violation": float("nan"),
                        "solve_seconds": time.perf_counter() - t0,
                        "termination": "fallback", "merit_monotone": True}
        self.previous = res.trajectory
        self.last_applied = res.applied
        return res.applied, {"objective": res.objective,
                             "violation": res.violation,
                             "solve_seconds": res.solve_seconds,
                             "termination": res.termination,
                             "merit_monotone": res.merit_monotone}


def run_episode(controller, weather: list, days: int,
                plant_cfg: PlantConfig | None = None,
                start: datetime | None = None, warmup_days: int = 1,
                horizon: int | None = None,
                warmup_cfg: RuleBasedConfig | None = None) -> EpisodeLog:
    """Closed-loop episode: warmup under the rule-based baseline, then the
    given controller, on one weather record.

    `weather` must cover days*96 + horizon samples so the final forecasts
    fit. The warmup under a fixed baseline builds predictor history and is
    excluded from evaluation via `warmup_steps`.
    """
    cfg = plant_cfg or PlantConfig()
    h = horizon if horizon is not None else getattr(
        getattr(controller, "cfg", None), "horizon", 0) or 1
    n_steps = days * signals.STEPS_PER_DAY
    if len(weather) < n_steps + h:
        raise ValueError("weather record too short for episode plus horizon")
    start = start or weather[0].timestamp
    state = plant.default_initial_state(cfg, start)
    warmup = RuleBasedController(warmup_cfg or RuleBasedConfig())
    warmup_steps = warmup_days * signals.STEPS_PER_DAY

    u_log = np.empty((n_steps, N_CHANNELS))
    y_log = np.empty((n_steps, N_ZONES))
    z_log = np.empty(n_steps)
    # predictor history carries the applied setpoints plus the weather
    # columns, matching the 12-column records the models were fit on
    uin_log = np.empty((n_steps, N_CHANNELS + 3))
    app_log = np.empty(n_steps)
    pv_log = np.empty(n_steps)
    tout_log = np.empty(n_steps)
    obj_log = np.full(n_steps, np.nan)
    viol_log = np.zeros(n_steps)
    secs_log = np.zeros(n_steps)
    term_log: list[str] = []
    merit_ok = True

    for k in range(n_steps):
        wx = weather[k]
        fc = weather[k:k + h]
        wf = np.array([[w.t_out, w.ghi, w.rel_humidity] for w in fc])
        clocks = [wx.timestamp + timedelta(minutes=signals.STEP_MINUTES * i)
                  for i in range(h)]
        p_app = np.array([plant.occupancy_load(ts) for ts in clocks])
        p_prod = np.array([plant.pv_power(w, cfg) for w in fc])
        active = warmup if k < warmup_steps else controller
        sp, info = active.step(uin_log[:k], y_log[:k], z_log[:k], wx, wf,
                               p_app, p_prod, wx.timestamp)
        state, out = plant.step(state, sp, wx, cfg)
        u_log[k] = sp.as_array()
        uin_log[k] = np.concatenate([u_log[k], wf[0]])
        y_log[k] = out.t_air
        z_log[k] = out.p_el_thermal
        app_log[k] = out.p_el_appliances
        pv_log[k] = out.p_pv
        tout_log[k] = wx.t_out
        obj_log[k] = info["objective"]
        viol_log[k] = info["violation"]
        secs_log[k] = info["solve_seconds"]
        term_log.append(info["termination"])
        merit_ok = merit_ok and info["merit_monotone"]

    return EpisodeLog(start=start, setpoints=u_log, temps=y_log,
                      p_el_thermal=z_log, p_appliances=app_log,
                      p_pv=pv_log, t_out=tout_log, objective=obj_log,
                      violation=viol_log, solve_seconds=secs_log,
                      termination=term_log, warmup_steps=warmup_steps,
                      merit_monotone=merit_ok)
