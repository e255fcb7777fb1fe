"""Scenario data: weather/occupancy series, forecasts and run configs.

Disturbance series live on a strictly uniform 5-minute grid. CSV is the
single interchange format for series (header ``time,T_amb,eta_sol,
Qocc_1..Qocc_n``, time as epoch seconds or ISO-8601); JSON holds run
configuration. Series values follow a 9-significant-digit decimal
formatting contract: generators quantize to that precision, so a
write/reload round trip reproduces every value bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import (DimensionError, FormatError, ParameterError, RangeError,
                     ValidationError)

DT_DEFAULT = 300.0


def _round9(arr):
    """Quantize to 9 significant decimal digits (formatting contract)."""
    a = np.asarray(arr, dtype=np.float64)
    out = np.array([float(f"{v:.9g}") for v in a.ravel()])
    return out.reshape(a.shape)


@dataclass(frozen=True)
class DisturbanceSeries:
    """Exogenous inputs on a uniform grid: ambient temperature (degC),
    solar irradiance (W/m^2) and per-zone occupant load (W)."""

    t0: float                 # epoch seconds of the first sample
    dt: float
    t_amb: np.ndarray         # (K,)
    eta_sol: np.ndarray       # (K,)
    q_occ: np.ndarray         # (K, n_zones)
    source: str = "synthetic"
    repairs: tuple = ()       # row indices filled by interpolation

    def __post_init__(self):
        t_amb = np.asarray(self.t_amb, dtype=np.float64)
        eta = np.asarray(self.eta_sol, dtype=np.float64)
        q = np.atleast_2d(np.asarray(self.q_occ, dtype=np.float64))
        if eta.shape != t_amb.shape or q.shape[0] != t_amb.shape[0]:
            raise DimensionError("series columns disagree in length")
        if np.any(eta < 0):
            raise ValidationError("irradiance must be >= 0")
        if np.any(q < 0):
            raise ValidationError("occupant load must be >= 0")
        object.__setattr__(self, "t_amb", t_amb)
        object.__setattr__(self, "eta_sol", eta)
        object.__setattr__(self, "q_occ", q)

    def __len__(self):
        return self.t_amb.shape[0]

    @property
    def n_zones(self):
        return self.q_occ.shape[1]

    def time(self, k: int) -> float:
        return self.t0 + k * self.dt

    def row(self, k: int) -> np.ndarray:
        """[T_amb, eta_sol, Q_occ...] at sample k."""
        return np.concatenate(([self.t_amb[k], self.eta_sol[k]],
                               self.q_occ[k]))

    def with_occupancy(self, q_occ) -> "DisturbanceSeries":
        return DisturbanceSeries(self.t0, self.dt, self.t_amb, self.eta_sol,
                                 _round9(q_occ), self.source, self.repairs)


def _parse_time(token: str, row: int) -> float:
    try:
        return float(token)
    except ValueError:
        pass
    try:
        stamp = datetime.fromisoformat(token)
        if stamp.tzinfo is None:
            stamp = stamp.replace(tzinfo=timezone.utc)
        return stamp.timestamp()
    except ValueError:
        raise FormatError(f"row {row}: unparseable time {token!r}") from None


def load_timeseries_csv(path) -> DisturbanceSeries:
    """Load and validate a disturbance CSV. A single missing sample is
    repaired by linear interpolation (recorded in ``repairs``); larger
    gaps or a nonuniform grid are rejected with the offending row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "time" or header[1] != "T_amb" \
                or header[2] != "eta_sol":
            raise FormatError(
                "header must be time,T_amb,eta_sol,Qocc_1..Qocc_n")
        n = len(header) - 3
        for i in range(n):
            if header[3 + i] != f"Qocc_{i + 1}":
                raise FormatError(f"column {3 + i} must be Qocc_{i + 1}")
        times, rows = [], []
        for r, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 3 + n:
                raise FormatError(f"row {r}: expected {3 + n} fields")
            times.append(_parse_time(rec[0], r))
            rows.append([float(v) for v in rec[1:]])
    if len(times) < 2:
        if not times:
            raise FormatError("empty series")
        return DisturbanceSeries(times[0], DT_DEFAULT,
                                 [rows[0][0]], [rows[0][1]],
                                 [rows[0][2:]], source="file")
    deltas = np.diff(times)
    dt = deltas.min()
    if dt <= 0:
        raise FormatError("time column must be strictly increasing")
    out_t, out_rows, repairs = [times[0]], [rows[0]], []
    for i, d in enumerate(deltas):
        steps = d / dt
        if abs(steps - 1.0) < 1e-6:
            out_t.append(times[i + 1])
            out_rows.append(rows[i + 1])
        elif abs(steps - 2.0) < 1e-6:
            # one missing sample: linear repair
            mid = [(a + b) / 2.0 for a, b in zip(rows[i], rows[i + 1])]
            repairs.append(len(out_t))
            out_t.append(times[i] + dt)
            out_rows.append(mid)
            out_t.append(times[i + 1])
            out_rows.append(rows[i + 1])
        else:
            raise FormatError(
                f"row {i + 3}: grid step {d} is not the base step {dt} "
                f"or a single gap")
    arr = np.asarray(out_rows)
    return DisturbanceSeries(out_t[0], float(dt), arr[:, 0], arr[:, 1],
                             arr[:, 2:], source="file",
                             repairs=tuple(repairs))


def write_timeseries_csv(series: DisturbanceSeries, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "T_amb", "eta_sol"]
                   + [f"Qocc_{i + 1}" for i in range(series.n_zones)])
        for k in range(len(series)):
            w.writerow([f"{series.time(k):.9g}", f"{series.t_amb[k]:.9g}",
                        f"{series.eta_sol[k]:.9g}"]
                       + [f"{q:.9g}" for q in series.q_occ[k]])


def ambient_profile(hour):
    """Deterministic diurnal shape: trough 24 degC at 05:00 rising on a
    half-cosine to the 33 degC peak at 15:00, then falling on a
    half-cosine back to the trough at 05:00 next day."""
    h = np.asarray(hour, dtype=float) % 24.0
    rise = 24.0 + 9.0 * 0.5 * (1.0 - np.cos(np.pi * (h - 5.0) / 10.0))
    fall_h = (h - 15.0) % 24.0
    fall = 24.0 + 9.0 * 0.5 * (1.0 + np.cos(np.pi * fall_h / 14.0))
    return np.where((h >= 5.0) & (h < 15.0), rise, fall)


def solar_profile(hour, peak=850.0, sunrise=6.0, sunset=20.0):
    """Clipped half-sine irradiance, zero at night."""
    h = np.asarray(hour, dtype=float) % 24.0
    arg = (h - sunrise) / (sunset - sunrise)
    return peak * np.clip(np.sin(np.pi * np.clip(arg, 0.0, 1.0)), 0.0, None) \
        * ((h >= sunrise) & (h < sunset))


def synth_weather(profile: str, days: float, seed: int, n_zones: int = 0,
                  dt: float = DT_DEFAULT, noise_amp: float = 0.4,
                  t0: float = 0.0) -> DisturbanceSeries:
    """Synthetic hot-summer weather, deterministic per seed. Occupant
    loads are zero; overlay them with ``with_occupancy``."""
    if profile != "hot-humid-summer":
        raise ParameterError(f"unknown weather profile {profile!r}")
    if days < 1:
        raise ParameterError("days must be >= 1")
    steps = int(round(days * 86400.0 / dt))
    hours = (t0 + dt * np.arange(steps)) / 3600.0
    t_amb = ambient_profile(hours)
    eta = solar_profile(hours)
    if noise_amp > 0:
        rng = np.random.default_rng(seed)
        # AR(1) gives slowly wandering, weather-like deviations
        e = rng.normal(0.0, 1.0, steps)
        x = np.empty(steps)
        acc = 0.0
        for k in range(steps):
            acc = 0.97 * acc + math.sqrt(1 - 0.97 ** 2) * e[k]
            x[k] = acc
        t_amb = t_amb + noise_amp * x
        eta = np.clip(eta * (1.0 + 0.05 * x), 0.0, None)
    q = np.zeros((steps, n_zones))
    return DisturbanceSeries(t0, dt, _round9(t_amb), _round9(eta), q,
                             source="synthetic")


@dataclass(frozen=True)
class OccupancySchedule:
    """Daily occupied windows in hours, start-inclusive/end-exclusive."""

    windows: tuple = ((8.0, 18.0),)

    def __post_init__(self):
        wins = tuple((float(a), float(b)) for a, b in self.windows)
        for a, b in wins:
            if not (0.0 <= a < b <= 24.0):
                raise ValidationError(f"window ({a}, {b}) outside a day")
        for i, (a1, b1) in enumerate(wins):
            for a2, b2 in wins[i + 1:]:
                if a1 < b2 and a2 < b1:
                    raise ValidationError("occupancy windows overlap")
        object.__setattr__(self, "windows", wins)

    def occupied(self, t: float) -> bool:
        hour = (t / 3600.0) % 24.0
        return any(a <= hour < b for a, b in self.windows)


def occupancy_profile(schedule: OccupancySchedule, per_person_w: float,
                      counts, days: float, dt: float = DT_DEFAULT,
                      t0: float = 0.0) -> np.ndarray:
    """Rectangular per-zone load series: count * per-person load inside
    each occupied window, zero outside."""
    counts = np.asarray(counts, dtype=float)
    steps = int(round(days * 86400.0 / dt))
    occ = np.array([schedule.occupied(t0 + k * dt) for k in range(steps)])
    return np.where(occ[:, None], counts[None, :] * per_person_w, 0.0)


def forecast_slice(series: DisturbanceSeries, k: int, n_ahead: int,
                   noise_sigma: float = 0.0, seed: int = 0) -> np.ndarray:
    """Rows k+1..k+n_ahead as an (n_ahead, 2 + n_zones) array. The default
    is perfect foresight; with noise_sigma > 0 ambient and irradiance get
    additive Gaussian perturbations, deterministic per (seed, k)."""
    if k < 0 or k + n_ahead > len(series) - 1:
        raise RangeError(
            f"forecast window k={k}+{n_ahead} exceeds series length "
            f"{len(series)}")
    out = np.stack([series.row(k + 1 + j) for j in range(n_ahead)])
    if noise_sigma > 0:
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        out[:, 0] += rng.normal(0.0, noise_sigma, n_ahead)
        out[:, 1] = np.clip(
            out[:, 1] + rng.normal(0.0, noise_sigma * 50.0, n_ahead),
            0.0, None)
    return out


# -- run configuration ---------------------------------------------------------


@dataclass
class PlantSection:
    capacitances: list = field(default_factory=list)   # J/K per zone
    resistances: list = field(default_factory=list)    # K/W per edge
    window_areas: list = field(default_factory=list)   # m^2 per zone
    tau_cool: float = 600.0
    tau_heat: float = 300.0
    pi_cool: list = field(default_factory=lambda: [11.0, 0.06])
    pi_heat: list = field(default_factory=lambda: [2.5, 0.004])
    max_cool_drop: float = 25.0
    max_heat_rise: float = 25.0
    sigma_v: float = 0.2
    sigma_w: float = 25.0
    substeps: int = 10
    init_zone_temp: float = 23.0


@dataclass
class ModelSection:
    mass_flow_zone: list = field(default_factory=list)  # kg/s per zone
    mass_flow_coil: list = field(default_factory=list)
    r_mix: float = 0.3
    cp_air: float = 1005.0


@dataclass
class MheSection:
    window: int = 12
    degree: int = 4
    p_x: float = 1.0
    p_p: float = 50.0
    p_v: float = 25.0
    p_w_zone: float = 4e-4      # 1/W^2-ish weight on zone process noise
    p_w_supp: float = 4.0       # 1/K^2 weight on supply-map noise
    comfort_margin: float = 2.0
    max_iter: int = 120
    tol: float = 1e-6
    mu_init: float = 1e-2
    mu_warm: float = 1e-4


@dataclass
class MpcSection:
    horizon: int = 48
    degree: int = 4
    r_move: float = 20.0
    eta_c: float = 0.9
    eta_h: float = 0.9
    cp_water: float = 1005.0
    soft_weight: float = 1e5    # W per K of comfort violation
    comfort_backoff: float = 0.4
    supply_c_bounds: list = field(default_factory=lambda: [12.0, 18.0])
    supply_h_bounds: list = field(default_factory=lambda: [12.0, 35.0])
    zone_setpoint_bounds: list = field(default_factory=lambda: [10.0, 35.0])
    max_iter: int = 120
    tol: float = 1e-6
    mu_init: float = 1e-2
    mu_warm: float = 1e-4


@dataclass
class RbcSection:
    supply_setpoint_occ: float = 14.0
    supply_setpoint_unocc: float = 18.0
    deadband_occ: list = field(default_factory=lambda: [21.0, 24.0])
    deadband_unocc: list = field(default_factory=lambda: [15.0, 30.0])


@dataclass
class OccupancySection:
    windows: list = field(default_factory=lambda: [[8.0, 18.0]])
    per_person_w: float = 120.0
    counts: list = field(default_factory=list)


@dataclass
class WeatherSection:
    profile: str = "hot-humid-summer"
    noise_amp: float = 0.4
    file: str = ""              # CSV path overrides the profile


@dataclass
class DitherSection:
    """Multisine excitation added to the rule-based commands during the
    identification warmup."""
    amp_supply: float = 2.0     # K
    amp_zone: float = 1.2       # K
    periods: list = field(default_factory=lambda: [1500.0, 2700.0, 5100.0])


@dataclass
class ScenarioConfig:
    name: str = "default"
    n_zones: int = 5
    seed: int = 0
    dt: float = DT_DEFAULT
    days: float = 3.0
    warmup_days: float = 1.0
    adjacency: object = "star_ring"   # or explicit [[i, j], ...]
    plant: PlantSection = field(default_factory=PlantSection)
    model: ModelSection = field(default_factory=ModelSection)
    mhe: MheSection = field(default_factory=MheSection)
    mpc: MpcSection = field(default_factory=MpcSection)
    rbc: RbcSection = field(default_factory=RbcSection)
    occupancy: OccupancySection = field(default_factory=OccupancySection)
    weather: WeatherSection = field(default_factory=WeatherSection)
    dither: DitherSection = field(default_factory=DitherSection)

    def __post_init__(self):
        n = self.n_zones
        for name, seq in (("capacitances", self.plant.capacitances),
                          ("window_areas", self.plant.window_areas),
                          ("mass_flow_zone", self.model.mass_flow_zone),
                          ("mass_flow_coil", self.model.mass_flow_coil),
                          ("counts", self.occupancy.counts)):
            if seq and len(seq) != n:
                raise ValidationError(
                    f"{name} has {len(seq)} entries for {n} zones")

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @staticmethod
    def from_json(path) -> "ScenarioConfig":
        with open(path) as fh:
            raw = json.load(fh)
        return ScenarioConfig.from_dict(raw)

    @staticmethod
    def from_dict(raw: dict) -> "ScenarioConfig":
        sections = {"plant": PlantSection, "model": ModelSection,
                    "mhe": MheSection, "mpc": MpcSection,
                    "rbc": RbcSection, "occupancy": OccupancySection,
                    "weather": WeatherSection, "dither": DitherSection}
        kwargs = {}
        for key, val in raw.items():
            if key in sections:
                kwargs[key] = sections[key](**val)
            else:
                kwargs[key] = val
        return ScenarioConfig(**kwargs)


def default_scenario(n_zones: int = 5, seed: int = 0,
                     name: str = "default") -> ScenarioConfig:
    """The documented default scenario: star+ring topology, plausible
    commercial-zone RC values, June-like hot weather."""
    from .model import star_ring_adjacency

    rng = np.random.default_rng(1234 + n_zones)  # fixed plant, not per-seed
    caps = list(_round9(rng.uniform(3.5e6, 6.0e6, n_zones)))
    areas = list(_round9(rng.uniform(2.0, 5.0, n_zones)))
    flows = list(_round9(rng.uniform(0.45, 0.6, n_zones)))
    # resistances follow the canonical (i < j) edge order of the topology:
    # envelope values on zone-ambient edges, wall values on zone-zone ones
    adj = star_ring_adjacency(n_zones)
    res = []
    for i in range(n_zones + 1):
        for j in range(i + 1, n_zones + 1):
            if adj[i, j]:
                if j == n_zones:
                    res.append(float(_round9(rng.uniform(0.015, 0.03))))
                else:
                    res.append(float(_round9(rng.uniform(0.05, 0.09))))
    return ScenarioConfig(
        name=name,
        n_zones=n_zones,
        seed=seed,
        plant=PlantSection(capacitances=caps, resistances=res,
                           window_areas=areas),
        model=ModelSection(mass_flow_zone=flows, mass_flow_coil=flows),
        occupancy=OccupancySection(counts=[6] * n_zones),
    )
