"""Combined gray-box building model: RC zone network + supply networks.

Defines the shared vector layouts used by the estimator and controller:

    state x   = [T_z (n) | T_supp_c | T_supp_h (n)]        (all measured)
    input u   = [T_cs | T_zs (n)]
    exog p_tv = [T_amb | eta_sol | Q_occ (n)]
    params p  = [log C (n) | log R (edges) | A_w (n) |
                 cooling net (16) | reheat nets (16 each)]

Capacitances and resistances are carried in log space so simple bound
constraints keep them positive; packing/unpacking applies exp/log. The
zone ODE and the discrete supply maps work on numbers and autodiff
expressions alike, so one implementation backs the plant-facing
prediction, the estimator's constraint graphs and the controller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import hvac_nn, zone_rc
from .errors import DimensionError, ParameterError
from .hvac_nn import NeuralNetParams
from .zone_rc import ThermalLoads, ZoneRcParams


def star_ring_adjacency(n: int) -> np.ndarray:
    """Default topology: every zone borders ambient, zones form a ring.
    (For n = 2 the "ring" is the single shared wall.)"""
    adj = np.zeros((n + 1, n + 1), dtype=bool)
    for i in range(n):
        adj[i, n] = adj[n, i] = True
    if n >= 2:
        for i in range(n):
            j = (i + 1) % n
            if i != j:
                adj[i, j] = adj[j, i] = True
    return adj


@dataclass(frozen=True)
class BuildingModel:
    """Structure (not values) of the identified model, plus the known
    constants the identification does not touch."""

    n_zones: int
    adjacency: np.ndarray = field(repr=False)
    mass_flow_zone: np.ndarray      # m_z_i, kg/s
    mass_flow_coil: np.ndarray      # m_i through the cooling coil, kg/s
    cp_air: float = zone_rc.CP_AIR
    r_mix: float = 0.3

    def __post_init__(self):
        n = self.n_zones
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.shape != (n + 1, n + 1):
            raise DimensionError("adjacency shape mismatch")
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "mass_flow_zone",
                           np.asarray(self.mass_flow_zone, dtype=float))
        object.__setattr__(self, "mass_flow_coil",
                           np.asarray(self.mass_flow_coil, dtype=float))
        if self.mass_flow_zone.shape != (n,) or \
                self.mass_flow_coil.shape != (n,):
            raise DimensionError("mass flow vectors must have one entry "
                                 "per zone")
        if not 0.0 <= self.r_mix <= 1.0:
            raise ParameterError("r_mix outside [0, 1]")

    # -- layout ---------------------------------------------------------------

    @property
    def edges(self):
        n = self.n_zones
        return [(i, j) for i in range(n + 1) for j in range(i + 1, n + 1)
                if self.adjacency[i, j]]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_rc_params(self) -> int:
        return 2 * self.n_zones + self.n_edges

    @property
    def n_nn_params(self) -> int:
        return hvac_nn.N_PARAMS * (self.n_zones + 1)

    @property
    def n_params(self) -> int:
        return self.n_rc_params + self.n_nn_params

    @property
    def nx(self) -> int:
        return 2 * self.n_zones + 1

    @property
    def nu(self) -> int:
        return self.n_zones + 1

    @property
    def nptv(self) -> int:
        return self.n_zones + 2

    def unit_ids(self):
        return [hvac_nn.COOLING_UNIT] + [hvac_nn.reheat_unit(i)
                                         for i in range(self.n_zones)]

    # state/input/ptv slot helpers
    def ix_zone(self, i):
        return i

    @property
    def ix_supp_c(self):
        return self.n_zones

    def ix_supp_h(self, i):
        return self.n_zones + 1 + i

    # -- parameter vector codec ------------------------------------------------

    def pack_params(self, rc: ZoneRcParams, nets) -> np.ndarray:
        n = self.n_zones
        if rc.n_zones != n or len(nets) != n + 1:
            raise DimensionError("parameter structure mismatch")
        vec = [math.log(c) for c in rc.capacitances]
        vec += [math.log(rc.resistances[i][j]) for i, j in self.edges]
        vec += list(rc.window_areas)
        for unit_id, net in zip(self.unit_ids(), nets):
            if net.unit_id != unit_id:
                raise ParameterError(
                    f"network order mismatch: {net.unit_id} != {unit_id}")
            vec += net.flatten()
        return np.asarray(vec, dtype=np.float64)

    def unpack_params(self, vec):
        """Rebuild structured parameters from a flat vector whose entries
        may be numbers or expressions (log entries pass through exp)."""
        n = self.n_zones
        if len(vec) != self.n_params:
            raise DimensionError(
                f"expected {self.n_params} parameters, got {len(vec)}")
        caps = [ad.exp(vec[i]) for i in range(n)]
        res = [[None] * (n + 1) for _ in range(n + 1)]
        for k, (i, j) in enumerate(self.edges):
            r = ad.exp(vec[n + k])
            res[i][j] = r
            res[j][i] = r
        areas = [vec[n + self.n_edges + i] for i in range(n)]
        rc = ZoneRcParams(caps, res, areas, self.adjacency)
        nets = []
        off = self.n_rc_params
        for unit_id in self.unit_ids():
            nets.append(NeuralNetParams.from_flat(
                list(vec[off:off + hvac_nn.N_PARAMS]), unit_id))
            off += hvac_nn.N_PARAMS
        return rc, nets

    # -- dynamics --------------------------------------------------------------

    def zone_rates(self, zone_temps, supply_h, rc: ZoneRcParams, ambient,
                   eta_sol, q_occ, w_zone):
        """dT_z/dt for the zone block; supply temperatures act as inputs."""
        loads = ThermalLoads(q_occ, eta_sol, w_zone)
        totals = zone_rc.total_load(rc, zone_temps, supply_h,
                                    self.mass_flow_zone, self.cp_air, loads)
        return zone_rc.zone_rhs(rc, zone_temps, ambient, totals)

    def mixed_air(self, ambient, zone_temps):
        return hvac_nn.mixed_air(ambient, zone_temps, self.r_mix)

    def supply_next(self, x, u, nets, ambient):
        """One-step-ahead supply temperatures [cooling, reheat_0..n-1]."""
        n = self.n_zones
        zone_temps = [x[i] for i in range(n)]
        t_supp_c = x[self.ix_supp_c]
        t_mix = self.mixed_air(ambient, zone_temps)
        norm = hvac_nn.normalize_temp
        out = [hvac_nn.nn_forward(
            nets[0], [norm(t_mix), norm(t_supp_c), norm(u[0])])]
        for i in range(n):
            out.append(hvac_nn.nn_forward(
                nets[1 + i], [norm(x[self.ix_supp_h(i)]), norm(t_supp_c),
                              norm(u[1 + i])]))
        return out

    def simulate_open_loop(self, params, x0, u_seq, ptv_seq, dt=300.0,
                           substeps=6) -> np.ndarray:
        """Numeric open-loop prediction over len(u_seq) steps.

        Zone temperatures integrate the RC ODE (RK4 substeps) with supply
        temperatures held at their start-of-step values; supply
        temperatures then advance through the discrete network maps. This
        mirrors how the transcribed dynamics treat the hybrid system.
        """
        params = np.asarray(params, dtype=np.float64)
        rc, nets = self.unpack_params(params)
        n = self.n_zones
        u_seq = np.atleast_2d(np.asarray(u_seq, dtype=np.float64))
        ptv_seq = np.atleast_2d(np.asarray(ptv_seq, dtype=np.float64))
        steps = u_seq.shape[0]
        if ptv_seq.shape[0] < steps:
            raise DimensionError("ptv_seq shorter than u_seq")
        out = np.empty((steps + 1, self.nx))
        out[0] = np.asarray(x0, dtype=np.float64)
        x = out[0].copy()
        zeros = [0.0] * n
        h = dt / substeps
        for k in range(steps):
            amb, eta = ptv_seq[k, 0], ptv_seq[k, 1]
            q_occ = list(ptv_seq[k, 2:2 + n])
            supply_h = [x[self.ix_supp_h(i)] for i in range(n)]

            def rate(z):
                return np.asarray(self.zone_rates(
                    list(z), supply_h, rc, amb, eta, q_occ, zeros))

            z = x[:n].copy()
            for _ in range(substeps):
                k1 = rate(z)
                k2 = rate(z + 0.5 * h * k1)
                k3 = rate(z + 0.5 * h * k2)
                k4 = rate(z + h * k3)
                z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            nxt = self.supply_next(x, u_seq[k], nets, amb)
            x[:n] = z
            x[self.ix_supp_c] = nxt[0]
            for i in range(n):
                x[self.ix_supp_h(i)] = nxt[1 + i]
            out[k + 1] = x
        return out


# -- parameter priors ---------------------------------------------------------

def parameter_bounds(model: BuildingModel):
    """Box bounds for the flat parameter vector (log space for C and R)."""
    n, e = model.n_zones, model.n_edges
    lb = np.concatenate([
        np.full(n, math.log(1e5)),       # C in [1e5, 1e8] J/K
        np.full(e, math.log(1e-4)),      # R in [1e-4, 1] K/W
        np.zeros(n),                     # A_w in [0, 30] m^2
        np.full(model.n_nn_params, -60.0),
    ])
    ub = np.concatenate([
        np.full(n, math.log(1e8)),
        np.full(e, math.log(1.0)),
        np.full(n, 30.0),
        np.full(model.n_nn_params, 60.0),
    ])
    return lb, ub


def initial_parameter_guess(model: BuildingModel,
                            rng: np.random.Generator) -> np.ndarray:
    """Random initialization: RC values log-uniform over plausible
    decades, network weights uniform in [-0.5, 0.5]."""
    n, e = model.n_zones, model.n_edges
    return np.concatenate([
        rng.uniform(math.log(5e5), math.log(5e7), n),
        rng.uniform(math.log(3e-3), math.log(0.3), e),
        rng.uniform(0.5, 8.0, n),
        rng.uniform(-0.5, 0.5, model.n_nn_params),
    ])


def parameter_scaling(model: BuildingModel) -> np.ndarray:
    """Variable scaling for the parameter block of an NLP."""
    return np.concatenate([
        np.full(model.n_zones, 10.0),    # log C ~ 11..18
        np.full(model.n_edges, 5.0),     # log R ~ -9..0
        np.full(model.n_zones, 10.0),    # A_w
        np.full(model.n_nn_params, 10.0)
    ])
