"""Control-performance and forecast-accuracy metrics.

Control episodes are scored by four scalars: mean absolute grid
exchange, mean thermal electric power, mean comfort-band violation, and
mean violation depth per violating sample. Forecast accuracy is scored
over non-overlapping sliding windows by MAE and by the symmetric mean
relative absolute error, which is bounded in [0, 2].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import signals
from ..lss import LssNl, lss_nl_forecast
from ..mpc import COMFORT_HIGH, COMFORT_LOW
from ..rnn import EncoderDecoderModel, encdec_forecast

IDENTITY_TOL = 1e-9


@dataclass(frozen=True)
class ControlMetrics:
    """Episode-level control scores.

    `violation_depth` is the mean violation per violating sample,
    defined as n_samples * comfort_violation / n_violating and as zero
    when no sample violates.
    """

    p_grid: float
    p_thermal: float
    comfort_violation: float
    violation_depth: float
    n_samples: int
    n_violating: int

    def __post_init__(self):
        if min(self.p_grid, self.p_thermal, self.comfort_violation,
               self.violation_depth, self.n_samples, self.n_violating) < 0:
            raise ValueError("control metrics must be non-negative")
        if self.n_violating == 0:
            if self.violation_depth != 0.0:
                raise ValueError("violation depth must be 0 with no violations")
        else:
            gap = abs(self.violation_depth * self.n_violating
                      - self.comfort_violation * self.n_samples)
            if gap > IDENTITY_TOL * max(1.0, self.comfort_violation
                                        * self.n_samples):
                raise ValueError("violation depth breaks the count identity")


@dataclass(frozen=True)
class ForecastMetrics:
    """Windowed forecast scores for one model on one record.

    The plain MAE fields average over every step inside the windows;
    the `_end` fields score only each window's last step, which for an
    m-step window is the m-step-ahead error.
    """

    mae_temperature: float
    mae_power: float
    mae_temperature_end: float
    mae_power_end: float
    smrae_temperature: float
    smrae_power: float
    window_steps: int
    n_windows: int
    span_days: float

    def __post_init__(self):
        if min(self.mae_temperature, self.mae_power,
               self.mae_temperature_end, self.mae_power_end) < 0:
            raise ValueError("MAE must be non-negative")
        for v in (self.smrae_temperature, self.smrae_power):
            if not 0.0 <= v <= 2.0:
                raise ValueError("sMRAE must lie in [0, 2]")
        if self.window_steps < 1 or self.n_windows < 1:
            raise ValueError("window shape must be positive")


def mae(y_hat: np.ndarray, y: np.ndarray) -> float:
    """Mean absolute error over all elements."""
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if y_hat.shape != y.shape:
        raise ValueError("prediction and observation shapes differ")
    if y_hat.size == 0:
        raise ValueError("cannot score an empty series")
    return float(np.mean(np.abs(y_hat - y)))


def smrae(y_hat: np.ndarray, y: np.ndarray) -> float:
    """Symmetric mean relative absolute error, 2|e| / (|y_hat| + |y|).

    A sample where prediction and observation are both exactly zero
    contributes zero (the error is zero as well).
    """
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if y_hat.shape != y.shape:
        raise ValueError("prediction and observation shapes differ")
    if y_hat.size == 0:
        raise ValueError("cannot score an empty series")
    num = 2.0 * np.abs(y_hat - y)
    den = np.abs(y_hat) + np.abs(y)
    out = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(np.mean(out))


def control_metrics(temps: np.ndarray, p_thermal: np.ndarray,
                    p_appliances: np.ndarray, p_production: np.ndarray,
                    low: float = COMFORT_LOW, high: float = COMFORT_HIGH,
                    count: str = "sample") -> ControlMetrics:
    """Score one aligned episode trace.

    `count` selects what a "violating point" is for the depth metric:
    "sample" counts time samples where any room violates, "room" counts
    individual room-sample pairs.
    """
    temps = np.atleast_2d(np.asarray(temps, dtype=float))
    p_thermal = np.asarray(p_thermal, dtype=float)
    p_appliances = np.asarray(p_appliances, dtype=float)
    p_production = np.asarray(p_production, dtype=float)
    n = len(temps)
    if not (len(p_thermal) == len(p_appliances) == len(p_production) == n):
        raise ValueError("episode series lengths differ")
    if n == 0:
        raise ValueError("cannot score an empty episode")
    if count not in ("sample", "room"):
        raise ValueError("count must be 'sample' or 'room'")

    p_el = p_thermal + p_appliances
    p_grid = float(np.mean(np.abs(p_el - p_production)))
    over = np.maximum(temps - high, 0.0)
    under = np.maximum(low - temps, 0.0)
    excess = over + under
    violation = float(np.sum(excess) / n)
    if count == "sample":
        n_out = int(np.count_nonzero(np.any(excess > 0.0, axis=1)))
    else:
        n_out = int(np.count_nonzero(excess > 0.0))
    depth = 0.0 if n_out == 0 else n * violation / n_out
    return ControlMetrics(p_grid=p_grid, p_thermal=float(np.mean(p_thermal)),
                          comfort_violation=violation, violation_depth=depth,
                          n_samples=n, n_violating=n_out)


def episode_metrics(log, low: float = COMFORT_LOW,
                    high: float = COMFORT_HIGH,
                    count: str = "sample") -> ControlMetrics:
    """Score an episode log over its evaluation slice (warmup excluded)."""
    s = log.eval_slice()
    return control_metrics(log.temps[s], log.p_el_thermal[s],
                           log.p_appliances[s], log.p_pv[s],
                           low=low, high=high, count=count)


def window_starts(n_total: int, m: int, first: int) -> np.ndarray:
    """Anchor indices of non-overlapping m-step windows tiling the record."""
    if m < 1:
        raise ValueError("window length must be positive")
    if first + m > n_total:
        raise ValueError("record too short for one evaluation window")
    return np.arange(first, n_total - m + 1, m)


def forecast_eval(predict, inputs: np.ndarray, temps: np.ndarray,
                  power: np.ndarray, m: int,
                  history_steps: int = signals.STEPS_PER_DAY
                  ) -> ForecastMetrics:
    """Windowed evaluation of one forecaster on one held-out record.

    Each window predicts m steps from the full history before its
    anchor, scores against the observations, then the anchor advances by
    m, so the windows are disjoint and tile the record after the initial
    history. `predict` maps (u_hist, y_hist, z_hist, u_future) to
    (y_pred, z_pred).
    """
    inputs = np.asarray(inputs, dtype=float)
    temps = np.asarray(temps, dtype=float)
    power = np.asarray(power, dtype=float)
    if not (len(inputs) == len(temps) == len(power)):
        raise ValueError("record series lengths differ")
    starts = window_starts(len(inputs), m, history_steps)
    y_hat = np.empty((len(starts), m, temps.shape[1]))
    z_hat = np.empty((len(starts), m))
    y_obs = np.empty_like(y_hat)
    z_obs = np.empty_like(z_hat)
    for i, s in enumerate(starts):
        y_pred, z_pred = predict(inputs[:s], temps[:s], power[:s],
                                 inputs[s:s + m])
        y_hat[i] = y_pred
        z_hat[i] = np.asarray(z_pred, dtype=float).reshape(m)
        y_obs[i] = temps[s:s + m]
        z_obs[i] = power[s:s + m]
    span = len(starts) * m / signals.STEPS_PER_DAY
    return ForecastMetrics(
        mae_temperature=mae(y_hat, y_obs), mae_power=mae(z_hat, z_obs),
        mae_temperature_end=mae(y_hat[:, -1], y_obs[:, -1]),
        mae_power_end=mae(z_hat[:, -1], z_obs[:, -1]),
        smrae_temperature=smrae(y_hat, y_obs), smrae_power=smrae(z_hat, z_obs),
        window_steps=m, n_windows=len(starts), span_days=span)


def lss_forecaster(lssnl: LssNl):
    """Adapt a fitted linear-plus-kernel model to the forecast interface."""
    def predict(u_hist, y_hist, z_hist, u_future):
        return lss_nl_forecast(lssnl, u_hist, y_hist, u_future)
    return predict


def encdec_forecaster(model: EncoderDecoderModel):
    """Adapt a trained encoder-decoder to the forecast interface."""
    def predict(u_hist, y_hist, z_hist, u_future):
        return encdec_forecast(model, u_hist, y_hist, z_hist, u_future)
    return predict
