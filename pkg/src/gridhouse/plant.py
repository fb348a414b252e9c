"""Surrogate building plant: 8 thermal zones, geothermal heat pump, hot-water
tanks, PV array and deterministic occupancy schedules.

The building is a 4-apartment residence with two zones per apartment. Each
zone is a 2-node RC network (air + wall). Heat is supplied by fan coils fed
from a water loop at the heat-pump supply temperature; four storage tanks
hang off the same loop. Low-level control is hysteresis on/off, which is the
main source of the plant's non-linear power signature, together with the
supply-temperature dependence of the heat-pump COP and the saturation of
fan-coil heat delivery as the supply temperature approaches the zone
temperature.

All dynamics advance by explicit Euler at `substep` resolution (3 minutes by
default); a `step` covers one control period (15 minutes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta

import numpy as np

TEMP_MIN = -30.0
TEMP_MAX = 90.0

# Comfort / setpoint boxes. Zone thermostats may be commanded up to 25 degC
# while the comfort band tops out at 24 degC.
HP_SUPPLY_RANGE = (40.0, 55.0)
TANK_SP_RANGE = (35.0, 50.0)
ZONE_SP_RANGE = (19.0, 25.0)
TANK_SUPPLY_MARGIN = 5.0

N_APARTMENTS = 4
N_TANKS = 4
N_ZONES = 8


class PlantError(ValueError):
    """Invalid plant inputs (setpoints, weather or state out of range)."""


class SimulationFault(RuntimeError):
    """Non-finite quantities appeared while integrating the plant."""


# Hourly appliance + lighting electric load for the whole building (kW).
# Morning and evening peaks; the daily integral is DAILY_APPLIANCE_KWH.
APPLIANCE_SCHEDULE_KW = (
    0.30, 0.30, 0.30, 0.30, 0.30, 0.30,
    0.80, 1.80, 1.50, 0.90, 0.60, 0.60,
    0.90, 0.90, 0.60, 0.60, 0.60, 1.20,
    2.20, 2.20, 2.20, 1.60, 0.90, 0.50,
)
DAILY_APPLIANCE_KWH = sum(APPLIANCE_SCHEDULE_KW)

# Hourly domestic-hot-water thermal draw per tank (kW).
DHW_SCHEDULE_KW = (
    0.05, 0.05, 0.05, 0.05, 0.05, 0.05,
    0.80, 0.80, 0.80, 0.15, 0.15, 0.15,
    0.15, 0.15, 0.15, 0.15, 0.15, 0.60,
    0.60, 0.60, 0.60, 0.60, 0.10, 0.10,
)

# Per-zone heterogeneity so the eight outputs are not collinear: capacity,
# envelope-resistance and solar-aperture multipliers, plus the orientation
# fraction of window area that actually sees the sun.
ZONE_CAP_SCALE = (1.00, 0.85, 1.10, 0.95, 1.05, 0.90, 1.15, 0.80)
ZONE_RES_SCALE = (1.00, 1.10, 0.90, 1.05, 0.95, 1.15, 0.85, 1.00)
ZONE_SUN_FRACTION = (1.00, 0.35, 1.00, 0.35, 0.90, 0.45, 0.90, 0.45)


@dataclass(frozen=True)
class PlantConfig:
    """Physical parameters of the surrogate building."""

    n_zones: int = 8
    c_air: float = 3.0            # kWh/degC per zone (air, furniture, screed)
    c_wall: float = 4.0           # kWh/degC per zone
    r_air_wall: float = 2.0       # degC/kW
    r_wall_out: float = 12.0      # degC/kW
    r_air_out: float = 30.0       # degC/kW (infiltration + glazing)
    fan_coil_max: float = 2.5     # kW thermal per zone
    fan_coil_coeff: float = 0.09  # kW per degC of (supply - air)
    hp_rated_electric: float = 5.0
    carnot_efficiency: float = 0.45
    cop_min: float = 1.5
    cop_max: float = 6.0
    ground_temp: float = 12.0     # degC, shallow-geothermal source
    hysteresis_band: float = 0.5  # degC
    window_m2: float = 3.0        # effective glazing per zone
    shgc: float = 0.5             # solar heat gain coefficient
    tank_capacity: float = 0.35   # kWh/degC (about 300 L)
    tank_loss_coeff: float = 0.002  # kW/degC toward 20 degC surroundings
    tank_charge_coeff: float = 0.4  # kW per degC of (supply - tank)
    tank_charge_max: float = 4.0  # kW per tank
    aux_fan_power: float = 0.05   # kW electric per running fan coil
    aux_base_power: float = 0.10  # kW electric while the heat pump runs
    pv_peak: float = 10.8         # kW at 1000 W/m2 plane-of-array
    pv_area: float = 58.0         # m2, informational
    pv_tilt_deg: float = 40.0
    latitude_deg: float = 41.39   # Barcelona
    albedo: float = 0.2
    substep: float = 3.0          # minutes
    control_period: float = 15.0  # minutes

    def __post_init__(self):
        for name in ("c_air", "c_wall", "r_air_wall", "r_wall_out",
                     "r_air_out", "tank_capacity", "hysteresis_band",
                     "substep", "control_period"):
            if getattr(self, name) <= 0:
                raise PlantError(f"PlantConfig.{name} must be positive")
        ratio = self.control_period / self.substep
        if abs(ratio - round(ratio)) > 1e-9:
            raise PlantError("control_period must be an integer multiple of substep")

    @property
    def substeps_per_period(self) -> int:
        return int(round(self.control_period / self.substep))


@dataclass(frozen=True)
class ControlSetpoints:
    """Commands applied for one control period.

    `zone_sp` has one entry per apartment; both zones of an apartment share
    the thermostat setpoint.
    """

    hp_supply: float
    tank_sp: tuple[float, ...]
    zone_sp: tuple[float, ...]

    def __post_init__(self):
        if len(self.tank_sp) != N_TANKS or len(self.zone_sp) != N_APARTMENTS:
            raise PlantError("expected 4 tank and 4 zone setpoints")
        if not HP_SUPPLY_RANGE[0] <= self.hp_supply <= HP_SUPPLY_RANGE[1]:
            raise PlantError(f"hp_supply {self.hp_supply!r} outside {HP_SUPPLY_RANGE}")
        for t in self.tank_sp:
            if not TANK_SP_RANGE[0] <= t <= TANK_SP_RANGE[1]:
                raise PlantError(f"tank setpoint {t!r} outside {TANK_SP_RANGE}")
            if t > self.hp_supply - TANK_SUPPLY_MARGIN + 1e-9:
                raise PlantError(
                    f"tank setpoint {t!r} violates tank_sp <= hp_supply - "
                    f"{TANK_SUPPLY_MARGIN} (hp_supply={self.hp_supply!r})")
        for z in self.zone_sp:
            if not ZONE_SP_RANGE[0] <= z <= ZONE_SP_RANGE[1]:
                raise PlantError(f"zone setpoint {z!r} outside {ZONE_SP_RANGE}")

    def as_array(self) -> np.ndarray:
        """Channel layout [hp_supply, tank_1..4, zone_1..4]."""
        return np.array([self.hp_supply, *self.tank_sp, *self.zone_sp])

    @staticmethod
    def from_array(vec) -> "ControlSetpoints":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (9,):
            raise PlantError(f"setpoint vector must have 9 entries, got {vec.shape}")
        return ControlSetpoints(float(vec[0]), tuple(vec[1:5]), tuple(vec[5:9]))


@dataclass(frozen=True)
class WeatherSample:
    ghi: float          # W/m2, global horizontal irradiance
    t_out: float        # degC
    rel_humidity: float  # 0..1
    timestamp: datetime

    def __post_init__(self):
        if self.ghi < 0 or not math.isfinite(self.ghi):
            raise PlantError(f"ghi {self.ghi!r} must be finite and >= 0")
        if not 0.0 <= self.rel_humidity <= 1.0:
            raise PlantError(f"rel_humidity {self.rel_humidity!r} outside [0, 1]")
        if not math.isfinite(self.t_out):
            raise PlantError("t_out must be finite")


@dataclass(frozen=True)
class PlantState:
    t_air: np.ndarray          # (n_zones,)
    t_wall: np.ndarray         # (n_zones,)
    t_tank: np.ndarray         # (4,)
    hp_on: bool
    fan_on: np.ndarray         # (n_zones,) bool
    clock: datetime

    def validate(self, cfg: PlantConfig) -> None:
        if self.t_air.shape != (cfg.n_zones,) or self.t_wall.shape != (cfg.n_zones,):
            raise PlantError("zone temperature arrays must match n_zones")
        if self.t_tank.shape != (N_TANKS,):
            raise PlantError("expected 4 tank temperatures")
        if self.fan_on.shape != (cfg.n_zones,):
            raise PlantError("fan state array must match n_zones")
        temps = np.concatenate([self.t_air, self.t_wall, self.t_tank])
        if not np.all(np.isfinite(temps)):
            raise SimulationFault("non-finite temperature in plant state")
        if np.any(temps < TEMP_MIN) or np.any(temps > TEMP_MAX):
            raise PlantError(
                f"temperature outside [{TEMP_MIN}, {TEMP_MAX}] degC in plant state")


@dataclass(frozen=True)
class PlantOutput:
    t_air: np.ndarray            # zone temperatures at end of period
    p_el_thermal: float          # kW electric, heat pump + auxiliaries, period mean
    p_el_appliances: float       # kW electric, schedule
    p_pv: float                  # kW produced
    q_thermal: float = 0.0       # kW thermal delivered, period mean (diagnostic)


def default_initial_state(cfg: PlantConfig, clock: datetime) -> PlantState:
    return PlantState(
        t_air=np.full(cfg.n_zones, 20.0),
        t_wall=np.full(cfg.n_zones, 18.0),
        t_tank=np.full(N_TANKS, 42.0),
        hp_on=False,
        fan_on=np.zeros(cfg.n_zones, dtype=bool),
        clock=clock,
    )


def heat_pump_cop(supply_temp: float, cfg: PlantConfig) -> float:
    """Carnot-scaled COP against the fixed ground source, clipped."""
    lift = max(supply_temp - cfg.ground_temp, 5.0)
    cop = cfg.carnot_efficiency * (supply_temp + 273.15) / lift
    return float(np.clip(cop, cfg.cop_min, cfg.cop_max))


def occupancy_load(timestamp: datetime) -> float:
    """Appliance + lighting electric load (kW) from the fixed daily table."""
    return APPLIANCE_SCHEDULE_KW[timestamp.hour]


def dhw_draw(timestamp: datetime) -> float:
    """Domestic hot water thermal draw per tank (kW) from the fixed table."""
    return DHW_SCHEDULE_KW[timestamp.hour]


def _solar_geometry(timestamp: datetime, latitude_deg: float) -> tuple[float, float, float]:
    """Sine of solar elevation, declination and hour angle (radians).

    Local clock time is treated as solar time; adequate for a synthetic
    single-site plant.
    """
    doy = timestamp.timetuple().tm_yday
    hour = timestamp.hour + timestamp.minute / 60.0 + timestamp.second / 3600.0
    decl = math.radians(23.45) * math.sin(2.0 * math.pi * (284 + doy) / 365.0)
    hour_angle = math.radians(15.0 * (hour - 12.0))
    lat = math.radians(latitude_deg)
    sin_elev = (math.sin(lat) * math.sin(decl)
                + math.cos(lat) * math.cos(decl) * math.cos(hour_angle))
    return sin_elev, decl, hour_angle


def plane_of_array_irradiance(w: WeatherSample, cfg: PlantConfig) -> float:
    """Isotropic-sky irradiance (W/m2) on the south-facing tilted array."""
    if w.ghi <= 0.0:
        return 0.0
    sin_elev, decl, hour_angle = _solar_geometry(w.timestamp, cfg.latitude_deg)
    if sin_elev <= 0.0:
        return 0.0
    tilt = math.radians(cfg.pv_tilt_deg)
    lat = math.radians(cfg.latitude_deg)
    # Erbs-style diffuse fraction from the clearness index.
    g0 = 1367.0 * sin_elev
    kt = min(max(w.ghi / max(g0, 1.0), 0.0), 1.2)
    if kt <= 0.22:
        fd = 1.0 - 0.09 * kt
    elif kt <= 0.8:
        fd = (0.9511 - 0.1604 * kt + 4.388 * kt ** 2
              - 16.638 * kt ** 3 + 12.336 * kt ** 4)
    else:
        fd = 0.165
    dhi = fd * w.ghi
    bhi = w.ghi - dhi
    dni = bhi / max(sin_elev, 0.087)
    cos_inc = (math.sin(lat - tilt) * math.sin(decl)
               + math.cos(lat - tilt) * math.cos(decl) * math.cos(hour_angle))
    beam = dni * max(cos_inc, 0.0)
    sky = dhi * (1.0 + math.cos(tilt)) / 2.0
    ground = w.ghi * cfg.albedo * (1.0 - math.cos(tilt)) / 2.0
    return beam + sky + ground


def pv_power_from_poa(poa_w_m2: float, cfg: PlantConfig) -> float:
    """Linear conversion calibrated so 1000 W/m2 on-plane yields pv_peak."""
    return float(np.clip(cfg.pv_peak * poa_w_m2 / 1000.0, 0.0, cfg.pv_peak))


def pv_power(w: WeatherSample, cfg: PlantConfig) -> float:
    """PV production (kW) for one weather sample."""
    return pv_power_from_poa(plane_of_array_irradiance(w, cfg), cfg)


def _zone_arrays(cfg: PlantConfig):
    n = cfg.n_zones
    cap = np.array(ZONE_CAP_SCALE[:n])
    res = np.array(ZONE_RES_SCALE[:n])
    sun = np.array(ZONE_SUN_FRACTION[:n])
    c_air = cfg.c_air * cap
    c_wall = cfg.c_wall * cap
    r_aw = cfg.r_air_wall * res
    r_wo = cfg.r_wall_out * res
    r_ao = cfg.r_air_out * res
    return c_air, c_wall, r_aw, r_wo, r_ao, sun


def step(state: PlantState, sp: ControlSetpoints, w: WeatherSample,
         cfg: PlantConfig) -> tuple[PlantState, PlantOutput]:
    """Advance the plant by one control period.

    Hysteresis switching is evaluated at every substep: a zone fan switches
    on below `zone_sp - band` and off above `zone_sp + band`; the heat pump
    follows the union of fan demand and tank demand with the same band.
    Delivered fan-coil heat saturates as the supply temperature approaches
    the zone temperature. Electric power is thermal power divided by the
    supply-temperature-dependent COP.
    """
    state.validate(cfg)
    if not isinstance(sp, ControlSetpoints):
        sp = ControlSetpoints.from_array(np.asarray(sp))

    c_air, c_wall, r_aw, r_wo, r_ao, sun = _zone_arrays(cfg)
    band = cfg.hysteresis_band
    dt_h = cfg.substep / 60.0
    n_sub = cfg.substeps_per_period

    t_air = state.t_air.astype(float).copy()
    t_wall = state.t_wall.astype(float).copy()
    t_tank = state.t_tank.astype(float).copy()
    fan_on = state.fan_on.astype(bool).copy()
    hp_on = bool(state.hp_on)

    zone_sp = np.repeat(np.asarray(sp.zone_sp, dtype=float), 2)[:cfg.n_zones]
    tank_sp = np.asarray(sp.tank_sp, dtype=float)
    supply = sp.hp_supply

    # Solar gain per zone (kW), constant over the period.
    q_sol = sun * cfg.window_m2 * cfg.shgc * w.ghi / 1000.0
    draw = dhw_draw(state.clock)
    cop = heat_pump_cop(supply, cfg)
    q_hp_max = cfg.hp_rated_electric * cop

    energy_el = 0.0
    energy_th = 0.0
    for _ in range(n_sub):
        # Hysteresis switching from current temperatures.
        fan_on = np.where(t_air < zone_sp - band, True,
                          np.where(t_air > zone_sp + band, False, fan_on))
        tank_demand = bool(np.any(t_tank < tank_sp - band))
        tank_done = bool(np.all(t_tank >= tank_sp + band))
        if fan_on.any() or tank_demand:
            hp_on = True
        elif not fan_on.any() and tank_done:
            hp_on = False

        # Requested thermal loads.
        if hp_on:
            q_fc = np.where(
                fan_on,
                np.minimum(cfg.fan_coil_max,
                           cfg.fan_coil_coeff * np.maximum(0.0, supply - t_air)),
                0.0)
            charging = t_tank < tank_sp + band
            q_tk = np.where(
                charging,
                np.minimum(cfg.tank_charge_max,
                           cfg.tank_charge_coeff * np.maximum(0.0, supply - t_tank)),
                0.0)
        else:
            q_fc = np.zeros(cfg.n_zones)
            q_tk = np.zeros(N_TANKS)

        q_request = q_fc.sum() + q_tk.sum()
        scale = 1.0 if q_request <= q_hp_max else q_hp_max / q_request
        q_fc = q_fc * scale
        q_tk = q_tk * scale
        q_total = q_request * scale

        p_el = q_total / cop if q_total > 0 else 0.0
        p_el += cfg.aux_base_power * hp_on + cfg.aux_fan_power * fan_on.sum()
        energy_el += p_el * dt_h
        energy_th += q_total * dt_h

        # Explicit Euler on the RC network and tanks.
        flow_aw = (t_wall - t_air) / r_aw
        flow_ao = (w.t_out - t_air) / r_ao
        flow_wo = (w.t_out - t_wall) / r_wo
        d_air = (flow_aw + flow_ao + q_fc + 0.5 * q_sol) / c_air
        d_wall = (-flow_aw + flow_wo + 0.5 * q_sol) / c_wall
        d_tank = (q_tk - cfg.tank_loss_coeff * (t_tank - 20.0) - draw) / cfg.tank_capacity
        t_air = t_air + dt_h * d_air
        t_wall = t_wall + dt_h * d_wall
        t_tank = t_tank + dt_h * d_tank

    if not (np.all(np.isfinite(t_air)) and np.all(np.isfinite(t_wall))
            and np.all(np.isfinite(t_tank))):
        raise SimulationFault("integration produced non-finite temperatures")

    period_h = cfg.control_period / 60.0
    new_state = PlantState(
        t_air=t_air, t_wall=t_wall, t_tank=t_tank,
        hp_on=hp_on, fan_on=fan_on,
        clock=state.clock + timedelta(minutes=cfg.control_period),
    )
    out = PlantOutput(
        t_air=t_air.copy(),
        p_el_thermal=energy_el / period_h,
        p_el_appliances=occupancy_load(state.clock),
        p_pv=pv_power(w, cfg),
        q_thermal=energy_th / period_h,
    )
    return new_state, out


def step_fine(state: PlantState, sp: ControlSetpoints, w: WeatherSample,
              cfg: PlantConfig, substep_minutes: float) -> tuple[PlantState, PlantOutput]:
    """Same control period integrated at a finer substep (accuracy checks)."""
    fine = replace(cfg, substep=substep_minutes)
    return step(state, sp, w, fine)
