"""Rule-based control and the PI primitives it is built from.

The rule-based controller mirrors common commercial practice: the
cooling unit PI tracks a scheduled supply-air setpoint, per-zone heating
engages when the zone drops below the heating (lower band) setpoint and
stays engaged until the zone reaches the cooling (upper band) setpoint.
Outside occupied hours the deadband widens and the supply setpoint rises
(setback).

The exact-model controller configuration lives here too: it is the
ordinary predictive controller fed a different parameter vector, built
from the plant's true RC values plus supply networks least-squares
fitted on noise-free plant responses (the actuator dynamics are not in
the network's function class, so "exact" means the best model this
structure admits, with nothing held back).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, ParameterError


@dataclass
class PiController:
    """PI with output clamping and a frozen integral while saturated."""

    kp: float
    ki: float
    out_lo: float
    out_hi: float
    integral: float = 0.0

    def __post_init__(self):
        if self.out_lo > self.out_hi:
            raise ParameterError("output bounds out of order")

    def reset(self):
        self.integral = 0.0


def pi_step(pi: PiController, error: float, dt: float) -> float:
    """Advance one sample: the integral absorbs error * dt unless the
    resulting output saturates (anti-windup by clamping)."""
    candidate = pi.integral + error * dt
    raw = pi.kp * error + pi.ki * candidate
    if raw > pi.out_hi:
        return pi.out_hi
    if raw < pi.out_lo:
        return pi.out_lo
    pi.integral = candidate
    return raw


@dataclass(frozen=True)
class RbcConfig:
    """Setpoints and deadbands for the rule-based controller."""

    supply_setpoint_occ: float = 14.0    # degC
    supply_setpoint_unocc: float = 18.0
    deadband_occ: tuple = (21.0, 24.0)   # (heat, cool) degC
    deadband_unocc: tuple = (15.0, 30.0)

    def __post_init__(self):
        if self.deadband_occ[0] >= self.deadband_occ[1]:
            raise ParameterError("occupied deadband out of order")
        if self.deadband_unocc[0] >= self.deadband_unocc[1]:
            raise ParameterError("unoccupied deadband out of order")
        if not (self.deadband_unocc[0] <= self.deadband_occ[0]
                and self.deadband_unocc[1] >= self.deadband_occ[1]):
            raise ParameterError(
                "unoccupied deadband must contain the occupied one")
        if self.supply_setpoint_unocc < self.supply_setpoint_occ:
            raise ParameterError(
                "unoccupied supply setpoint must not be lower")


def setback_bounds(cfg: RbcConfig, schedule, t: float):
    """(deadband, supply setpoint) at time t. ``schedule.occupied(t)``
    decides which band applies; occupancy windows include their start
    instant and exclude their end."""
    if schedule.occupied(t):
        return cfg.deadband_occ, cfg.supply_setpoint_occ
    return cfg.deadband_unocc, cfg.supply_setpoint_unocc


def rbc_step(cfg: RbcConfig, zone_temps, occupied: bool, engaged):
    """One supervisory decision.

    Returns (setpoint command vector [T_cs, T_zs_0..n-1], new engaged
    flags). An engaged zone tracks the cooling (upper band) setpoint;
    a disengaged zone is parked at the heating setpoint, which keeps its
    reheat loop idle until the next lower-band violation.
    """
    if occupied:
        (heat_sp, cool_sp), supply_sp = (cfg.deadband_occ,
                                         cfg.supply_setpoint_occ)
    else:
        (heat_sp, cool_sp), supply_sp = (cfg.deadband_unocc,
                                         cfg.supply_setpoint_unocc)
    zone_temps = np.asarray(zone_temps, dtype=float)
    if zone_temps.shape[0] != len(engaged):
        raise DimensionError("flags/zone count mismatch")
    new_flags = []
    commands = [supply_sp]
    for tz, on in zip(zone_temps, engaged):
        if not on and tz < heat_sp:
            on = True
        elif on and tz >= cool_sp:
            on = False
        new_flags.append(on)
        commands.append(cool_sp if on else heat_sp)
    return np.asarray(commands), new_flags


def _fit_network(inputs: np.ndarray, targets: np.ndarray, unit_id: str,
                 rng: np.random.Generator):
    """Least-squares fit of one 16-parameter supply network on
    (normalized input triple -> next temperature) pairs."""
    from scipy.optimize import least_squares

    from .hvac_nn import N_PARAMS, NeuralNetParams

    def residual(flat):
        iw = flat[:9].reshape(3, 3)
        hidden = np.tanh(inputs @ iw.T + flat[9:12])
        return hidden @ flat[12:15] + flat[15] - targets

    best = None
    for _ in range(3):  # few restarts guard against bad local fits
        guess = rng.uniform(-0.5, 0.5, N_PARAMS)
        guess[15] = targets.mean()
        fit = least_squares(residual, guess, method="lm", xtol=1e-12)
        if best is None or fit.cost < best.cost:
            best = fit
    return NeuralNetParams.from_flat(list(best.x), unit_id)


def exact_model_parameters(model, plant_cfg, dt: float = 300.0,
                           days: float = 2.0, seed: int = 0) -> np.ndarray:
    """Parameter vector for the exact-model controller: true RC values
    plus supply networks fitted on noise-free plant actuator responses
    under multisine setpoint excitation."""
    from .hvac_nn import normalize_temp, reheat_unit
    from .plant import init_state, plant_step, true_measurement

    n = model.n_zones
    cfg = replace(plant_cfg, sigma_v=0.0, sigma_w=0.0)
    rng = np.random.default_rng(seed)
    steps = int(round(days * 86400.0 / dt))
    phases = rng.uniform(0, 2 * np.pi, (n + 1, 3))

    def setpoints(k):
        t = k * dt
        cs = 15.0 + 1.6 * np.sin(2 * np.pi * t / 1500 + phases[0, 0]) \
            + 0.9 * np.sin(2 * np.pi * t / 2700 + phases[0, 1])
        zs = [22.5 + 1.2 * np.sin(2 * np.pi * t / 2100 + phases[1 + i, 0])
              + 0.8 * np.sin(2 * np.pi * t / 5100 + phases[1 + i, 1])
              for i in range(n)]
        return np.concatenate(([cs], zs))

    st = init_state(cfg, np.full(n, 23.0), t_amb=28.0)
    xs, us = [], []
    for k in range(steps):
        xs.append(true_measurement(st, cfg))
        u = setpoints(k)
        us.append(u)
        amb = 28.0 + 4.0 * np.sin(2 * np.pi * k * dt / 86400.0)
        dist = np.concatenate(([amb, 300.0], np.full(n, 300.0)))
        st = plant_step(st, cfg, u, dist, dt)
    xs.append(true_measurement(st, cfg))
    xs = np.asarray(xs)
    us = np.asarray(us)

    norm = normalize_temp
    zones_avg = xs[:-1, :n].mean(axis=1)
    ambs = 28.0 + 4.0 * np.sin(2 * np.pi * np.arange(steps) * dt / 86400.0)
    t_mix = cfg.r_mix * ambs + (1 - cfg.r_mix) * zones_avg

    nets = []
    cool_in = np.stack([norm(t_mix), norm(xs[:-1, n]), norm(us[:, 0])],
                       axis=1)
    nets.append(_fit_network(cool_in, xs[1:, n], "cooling", rng))
    for i in range(n):
        reheat_in = np.stack([norm(xs[:-1, n + 1 + i]), norm(xs[:-1, n]),
                              norm(us[:, 1 + i])], axis=1)
        nets.append(_fit_network(reheat_in, xs[1:, n + 1 + i],
                                 reheat_unit(i), rng))
    return model.pack_params(plant_cfg.rc, nets)
