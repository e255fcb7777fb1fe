"""Lumped RC thermal network for the conditioned zones.

An n-zone building is n+1 thermal nodes (the last is ambient) coupled by
wall resistances wherever the adjacency table is set:

    C_i dT_i/dt = sum_j a_ij (T_j - T_i)/R_ij + Q_tot_i
    Q_tot_i     = Q_occ_i + A_w_i * eta_sol + m_z_i c_pa (T_supp_h_i - T_i)
                  + Q_other_i

All operations accept plain floats or autodiff expressions, so the same
formulas serve the simulated plant, the estimator's constraint graphs and
the controller's prediction model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, ParameterError

#: default specific heat of air, J/(kg K)
CP_AIR = 1005.0


def _is_number(v) -> bool:
    return isinstance(v, (int, float, np.integer, np.floating))


@dataclass(frozen=True)
class ZoneRcParams:
    """RC-network parameters for n zones plus the ambient node.

    ``resistances`` and ``adjacency`` are (n+1) x (n+1); entries where
    ``adjacency`` is false are ignored. Entries may be numbers or autodiff
    expressions; numeric entries are validated on construction.
    """

    capacitances: Sequence          # C_i, J/K, length n
    resistances: Sequence           # R_ij, K/W, (n+1) x (n+1)
    window_areas: Sequence          # A_w_i, m^2, length n
    adjacency: np.ndarray = field(repr=False)  # bool, (n+1) x (n+1)

    def __post_init__(self):
        n = len(self.capacitances)
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.shape != (n + 1, n + 1):
            raise DimensionError(
                f"adjacency shape {adj.shape} does not match "
                f"{n} zones + ambient")
        if len(self.window_areas) != n:
            raise DimensionError("window_areas length mismatch")
        if adj.diagonal().any():
            raise ParameterError("adjacency diagonal must be zero")
        if not np.array_equal(adj, adj.T):
            raise ParameterError("adjacency must be symmetric")
        object.__setattr__(self, "adjacency", adj)
        for c in self.capacitances:
            if _is_number(c) and c <= 0:
                raise ParameterError(f"capacitance {c} must be positive")
        for i in range(n + 1):
            for j in range(i + 1, n + 1):
                if adj[i, j]:
                    r = self.resistances[i][j]
                    if _is_number(r):
                        if r <= 0:
                            raise ParameterError(
                                f"resistance R[{i}][{j}]={r} on an active "
                                f"edge must be positive")
                        rt = self.resistances[j][i]
                        if _is_number(rt) and rt != r:
                            raise ParameterError(
                                "resistance table must be symmetric on "
                                "active edges")

    @property
    def n_zones(self) -> int:
        return len(self.capacitances)

    def edges(self):
        """Active undirected edges as (i, j) pairs with i < j; node
        n_zones is ambient."""
        n = self.n_zones
        return [(i, j) for i in range(n + 1) for j in range(i + 1, n + 1)
                if self.adjacency[i, j]]


@dataclass(frozen=True)
class ThermalLoads:
    """Per-zone heat inputs: occupants, solar and stochastic remainder."""

    occupant: Sequence              # W, length n
    solar_irradiance: object        # W/m^2, scalar
    process_noise: Sequence         # W, length n

    def __post_init__(self):
        for q in self.occupant:
            if _is_number(q) and q < 0:
                raise ParameterError("occupant load must be >= 0")
        s = self.solar_irradiance
        if _is_number(s) and s < 0:
            raise ParameterError("solar irradiance must be >= 0")

    @staticmethod
    def zero(n: int) -> "ThermalLoads":
        return ThermalLoads([0.0] * n, 0.0, [0.0] * n)


def total_load(params: ZoneRcParams, zone_temps, supply_temps, mass_flows,
               cp_air, loads: ThermalLoads):
    """Total heat load per zone: occupants + solar gain + supply air +
    process noise. Returns a list (entries are expressions when any input
    is an expression)."""
    n = params.n_zones
    for name, seq in (("zone_temps", zone_temps),
                      ("supply_temps", supply_temps),
                      ("mass_flows", mass_flows),
                      ("occupant", loads.occupant),
                      ("process_noise", loads.process_noise)):
        if len(seq) != n:
            raise DimensionError(
                f"{name} has length {len(seq)}, expected {n}")
    for m in mass_flows:
        if _is_number(m) and m < 0:
            raise ParameterError("mass flows must be >= 0")
    out = []
    for i in range(n):
        q_hvac = mass_flows[i] * cp_air * (supply_temps[i] - zone_temps[i])
        q_sol = params.window_areas[i] * loads.solar_irradiance
        out.append(loads.occupant[i] + q_sol + q_hvac
                   + loads.process_noise[i])
    return out


def zone_rhs(params: ZoneRcParams, zone_temps, ambient, total_loads):
    """Temperature rates dT_i/dt (K/s) of the zone nodes; the ambient node
    is prescribed, not integrated."""
    n = params.n_zones
    if len(zone_temps) != n or len(total_loads) != n:
        raise DimensionError("zone_temps/total_loads length mismatch")
    for c in params.capacitances:
        if _is_number(c) and c <= 0:
            raise ParameterError("nonpositive capacitance")
    temps = list(zone_temps) + [ambient]
    rates = []
    for i in range(n):
        acc = total_loads[i]
        for j in range(n + 1):
            if j != i and params.adjacency[i, j]:
                r = params.resistances[i][j]
                if _is_number(r) and r <= 0:
                    raise ParameterError(
                        f"nonpositive resistance on active edge "
                        f"({i},{j})")
                acc = acc + (temps[j] - temps[i]) / r
        rates.append(acc / params.capacitances[i])
    return rates
