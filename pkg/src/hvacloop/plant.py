"""Simulated ground-truth building.

The plant shares the RC zone structure (with its own true parameter
values, never exposed to the estimator) and adds actuator dynamics the
identified model has to learn: the cooling coil's delivered temperature
drop and each reheat box's temperature rise follow first-order lags
toward commands produced by local PI loops tracking the supervisory
setpoints. Modelling the lag on the (non-negative) drop/rise rather than
on the temperature itself keeps delivered supply temperatures physical:
T_supp_c <= T_mix and T_supp_h_i >= T_supp_c hold by construction, and
coil powers are never negative.

Integration: classical 4-stage Runge-Kutta on 30 s substeps inside each
300 s control step, PI commands and process noise held per substep.
Randomness comes from a named, seeded generator (PCG64) stored in the
plant state, so trajectories are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import PiController, pi_step
from .errors import SimulationError
from .hvac_nn import mixed_air
from .zone_rc import CP_AIR, ThermalLoads, ZoneRcParams, total_load, zone_rhs


@dataclass(frozen=True)
class PlantConfig:
    """True building + actuator parameters and noise levels."""

    rc: ZoneRcParams
    mass_flow_zone: np.ndarray
    r_mix: float = 0.3
    cp_air: float = CP_AIR
    tau_cool: float = 600.0          # s, cooling-drop lag
    tau_heat: float = 300.0          # s, reheat-rise lag
    pi_cool: tuple = (11.0, 0.06)    # (kp, ki) on supply-temp error
    pi_heat: tuple = (2.5, 0.004)    # (kp, ki) on zone-temp error
    max_cool_drop: float = 25.0      # K, coil capacity
    max_heat_rise: float = 25.0      # K, reheat capacity
    sigma_v: float = 0.2             # degC, measurement noise
    sigma_w: float = 0.0             # W, per-zone process noise
    seed: int = 0
    substeps: int = 10

    @property
    def n_zones(self) -> int:
        return self.rc.n_zones


@dataclass
class PlantState:
    """Everything that evolves: temperatures, actuator states, PI
    integrals and the noise generator."""

    zone_temps: np.ndarray
    cool_drop: float                 # delivered T_mix - T_supp_c, >= 0
    heat_rise: np.ndarray            # delivered T_supp_h_i - T_supp_c
    pi_cool: PiController
    pi_heat: list
    t_amb: float
    rng: np.random.Generator
    time: float = 0.0

    def copy(self) -> "PlantState":
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = self.rng.bit_generator.state
        return PlantState(
            zone_temps=self.zone_temps.copy(),
            cool_drop=self.cool_drop,
            heat_rise=self.heat_rise.copy(),
            pi_cool=replace(self.pi_cool),
            pi_heat=[replace(p) for p in self.pi_heat],
            t_amb=self.t_amb,
            rng=rng,
            time=self.time)


def init_state(cfg: PlantConfig, zone_temps, t_amb: float) -> PlantState:
    n = cfg.n_zones
    return PlantState(
        zone_temps=np.asarray(zone_temps, dtype=np.float64).copy(),
        cool_drop=0.0,
        heat_rise=np.zeros(n),
        pi_cool=PiController(cfg.pi_cool[0], cfg.pi_cool[1], 0.0,
                             cfg.max_cool_drop),
        pi_heat=[PiController(cfg.pi_heat[0], cfg.pi_heat[1], 0.0,
                              cfg.max_heat_rise) for _ in range(n)],
        t_amb=float(t_amb),
        rng=np.random.default_rng(cfg.seed))


def supply_temps(state: PlantState, cfg: PlantConfig):
    """Delivered (T_supp_c, T_supp_h vector) from the actuator states."""
    t_mix = mixed_air(state.t_amb, list(state.zone_temps), cfg.r_mix)
    t_supp_c = t_mix - state.cool_drop
    return t_supp_c, t_supp_c + state.heat_rise


def true_measurement(state: PlantState, cfg: PlantConfig) -> np.ndarray:
    """Noise-free state vector [T_z | T_supp_c | T_supp_h]."""
    t_supp_c, t_supp_h = supply_temps(state, cfg)
    return np.concatenate((state.zone_temps, [t_supp_c], t_supp_h))


def measure(state: PlantState, cfg: PlantConfig) -> np.ndarray:
    """Measured temperatures: truth plus i.i.d. Gaussian noise on every
    channel (draws consume the state's generator)."""
    y = true_measurement(state, cfg)
    if cfg.sigma_v > 0:
        y = y + state.rng.normal(0.0, cfg.sigma_v, y.size)
    return y


def powers(state: PlantState, cfg: PlantConfig, eta_c: float, eta_h: float,
           mass_flow_coil, cp_water: float):
    """Coil powers implied by the delivered actuator states (W); both are
    non-negative because drop and rise are."""
    p_c = float(np.sum(mass_flow_coil)) * cp_water * state.cool_drop / eta_c
    p_h = float(np.sum(cfg.mass_flow_zone * cfg.cp_air * state.heat_rise)) \
        / eta_h
    return p_c, p_h


def plant_step(state: PlantState, cfg: PlantConfig, setpoints,
               disturbance, dt: float = 300.0) -> PlantState:
    """Advance one control step.

    setpoints: [T_cs, T_zs_0..n-1]; disturbance: [T_amb, eta_sol,
    Q_occ_0..n-1] held over the step. Returns a new state; the input
    state is not modified.
    """
    state = state.copy()
    n = cfg.n_zones
    t_cs = float(setpoints[0])
    t_zs = np.asarray(setpoints[1:], dtype=float)
    t_amb = float(disturbance[0])
    eta_sol = float(disturbance[1])
    q_occ = np.asarray(disturbance[2:2 + n], dtype=float)
    h = dt / cfg.substeps
    state.t_amb = t_amb

    for _ in range(cfg.substeps):
        # local loops run at the substep rate
        t_mix = mixed_air(t_amb, list(state.zone_temps), cfg.r_mix)
        err_c = (t_mix - state.cool_drop) - t_cs
        cmd_drop = pi_step(state.pi_cool, err_c, h)
        cmd_rise = np.array([
            pi_step(state.pi_heat[i], t_zs[i] - state.zone_temps[i], h)
            for i in range(n)])
        noise = (state.rng.normal(0.0, cfg.sigma_w, n)
                 if cfg.sigma_w > 0 else np.zeros(n))

        def rates(z, drop, rise):
            t_supp_c = mixed_air(t_amb, list(z), cfg.r_mix) - drop
            supply = t_supp_c + rise
            loads = ThermalLoads(list(q_occ), eta_sol, list(noise))
            tot = total_load(cfg.rc, list(z), list(supply),
                             list(cfg.mass_flow_zone), cfg.cp_air, loads)
            dz = np.asarray(zone_rhs(cfg.rc, list(z), t_amb, tot))
            ddrop = (cmd_drop - drop) / cfg.tau_cool
            drise = (cmd_rise - rise) / cfg.tau_heat
            return dz, ddrop, drise

        z0, d0, r0 = state.zone_temps, state.cool_drop, state.heat_rise
        k1 = rates(z0, d0, r0)
        k2 = rates(z0 + 0.5 * h * k1[0], d0 + 0.5 * h * k1[1],
                   r0 + 0.5 * h * k1[2])
        k3 = rates(z0 + 0.5 * h * k2[0], d0 + 0.5 * h * k2[1],
                   r0 + 0.5 * h * k2[2])
        k4 = rates(z0 + h * k3[0], d0 + h * k3[1], r0 + h * k3[2])
        state.zone_temps = z0 + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0]
                                             + k4[0])
        state.cool_drop = max(0.0, d0 + (h / 6.0) * (k1[1] + 2 * k2[1]
                                                     + 2 * k3[1] + k4[1]))
        state.heat_rise = np.maximum(
            0.0, r0 + (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]))

    state.time += dt
    if not (np.isfinite(state.zone_temps).all()
            and np.isfinite(state.cool_drop)
            and np.isfinite(state.heat_rise).all()):
        raise SimulationError(
            f"plant state non-finite at t={state.time}: "
            f"zones={state.zone_temps}")
    return state
