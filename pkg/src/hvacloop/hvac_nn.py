"""Neural one-step models for the HVAC supply temperatures.

The cooling coil and each VAV reheat box get a small feed-forward network
(3 inputs, one hidden tanh layer of 3 neurons, linear output = 16
scalars) predicting the delivered supply temperature one control step
ahead:

    cooling:   T_supp_c(t+dt) = f(T_mix(t),      T_supp_c(t), T_cs(t))
    reheat i:  T_supp_h_i(t+dt) = f(T_supp_h_i(t), T_supp_c(t), T_zs_i(t))

Temperature-like inputs are normalized with a fixed affine map from
[0, 50] degC onto [-1, 1] before entering the network; outputs are in
degC directly. The mixed-air balance lives here too since it feeds the
cooling unit's input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, NumericError, ParameterError, StateError

N_INPUTS = 3
N_HIDDEN = 3
#: scalars per network: 3x3 input weights + 3 input biases + 3 output
#: weights + 1 output bias
N_PARAMS = N_INPUTS * N_HIDDEN + N_HIDDEN + N_HIDDEN + 1

# fixed input normalization: degC in [0, 50] -> [-1, 1]
NORM_OFFSET = 25.0
NORM_SCALE = 1.0 / 25.0

COOLING_UNIT = "cooling"


def reheat_unit(zone: int) -> str:
    return f"reheat{zone}"


def normalize_temp(t):
    """Affine map of a temperature (degC) onto the network input range."""
    return (t - NORM_OFFSET) * NORM_SCALE


def _is_number(v) -> bool:
    return isinstance(v, (int, float, np.integer, np.floating))


@dataclass(frozen=True)
class NeuralNetParams:
    """Weights of one supply-temperature network (16 scalars).

    Flat ordering for serialization: input_weights row-major, input_bias,
    output_weights, output_bias.
    """

    input_weights: Sequence   # 3 x 3
    input_bias: Sequence      # 3
    output_weights: Sequence  # 3
    output_bias: object       # scalar
    unit_id: str              # "cooling" or "reheat<i>"

    def __post_init__(self):
        if len(self.input_weights) != N_HIDDEN or any(
                len(row) != N_INPUTS for row in self.input_weights):
            raise DimensionError("input_weights must be 3x3")
        if len(self.input_bias) != N_HIDDEN:
            raise DimensionError("input_bias must have 3 entries")
        if len(self.output_weights) != N_HIDDEN:
            raise DimensionError("output_weights must have 3 entries")

    @property
    def n_params(self) -> int:
        return N_PARAMS

    def flatten(self) -> list:
        flat = [w for row in self.input_weights for w in row]
        flat += list(self.input_bias)
        flat += list(self.output_weights)
        flat.append(self.output_bias)
        return flat

    @staticmethod
    def from_flat(flat, unit_id: str) -> "NeuralNetParams":
        if len(flat) != N_PARAMS:
            raise DimensionError(
                f"expected {N_PARAMS} scalars, got {len(flat)}")
        iw = [list(flat[r * N_INPUTS:(r + 1) * N_INPUTS])
              for r in range(N_HIDDEN)]
        ib = list(flat[9:12])
        ow = list(flat[12:15])
        return NeuralNetParams(iw, ib, ow, flat[15], unit_id)


def nn_forward(params: NeuralNetParams, inputs):
    """Network output for three (already normalized) inputs. Works on
    numbers and autodiff expressions alike."""
    if len(inputs) != N_INPUTS:
        raise DimensionError(f"expected {N_INPUTS} inputs")
    for v in inputs:
        if _is_number(v) and not math.isfinite(v):
            raise NumericError(f"non-finite network input {v}")
    out = params.output_bias
    for h in range(N_HIDDEN):
        pre = params.input_bias[h]
        for j in range(N_INPUTS):
            pre = pre + params.input_weights[h][j] * inputs[j]
        out = out + params.output_weights[h] * ad.tanh(pre)
    return out


def mixed_air(ambient, zone_temps, r_mix):
    """Mixed-air temperature: r_mix outside air plus recirculated average
    zone exhaust."""
    if _is_number(r_mix) and not 0.0 <= r_mix <= 1.0:
        raise ParameterError(f"r_mix={r_mix} outside [0, 1]")
    if len(zone_temps) == 0:
        raise DimensionError("zone_temps must be nonempty")
    avg = zone_temps[0]
    for t in zone_temps[1:]:
        avg = avg + t
    avg = avg / float(len(zone_temps))
    return r_mix * ambient + (1.0 - r_mix) * avg


class LagBuffer:
    """Ring of the last depth samples of named signals on the control grid.

    Single-writer: the harness pushes one sample per control step; the
    buffer rejects reads until full and enforces a strictly uniform time
    step.
    """

    def __init__(self, channels: Sequence[str], depth: int, dt: float):
        if depth < 1:
            raise ParameterError("depth must be >= 1")
        self.channels = tuple(channels)
        self.depth = int(depth)
        self.dt = float(dt)
        self._times: list[float] = []
        self._data: dict[str, list[float]] = {c: [] for c in self.channels}

    def push(self, t: float, values: dict):
        if self._times and abs((t - self._times[-1]) - self.dt) > 1e-9:
            raise StateError(
                f"sample at t={t} breaks the uniform {self.dt} s grid")
        missing = set(self.channels) - set(values)
        if missing:
            raise DimensionError(f"missing channels {sorted(missing)}")
        self._times.append(float(t))
        for c in self.channels:
            self._data[c].append(float(values[c]))
        if len(self._times) > self.depth:
            self._times.pop(0)
            for c in self.channels:
                self._data[c].pop(0)

    @property
    def full(self) -> bool:
        return len(self._times) == self.depth

    def current(self, channel: str) -> float:
        if not self.full:
            raise StateError("lag buffer not yet full")
        return self._data[channel][-1]

    def history(self, channel: str) -> np.ndarray:
        if not self.full:
            raise StateError("lag buffer not yet full")
        return np.asarray(self._data[channel])


def predict_supply(unit: NeuralNetParams, lags: LagBuffer):
    """One-step-ahead supply temperature (degC) for a unit, reading the
    current sample of its three input signals from the lag buffer."""
    if not lags.full:
        raise StateError("lag buffer not yet full")
    if unit.unit_id == COOLING_UNIT:
        names = ("T_mix", "T_supp_c", "u_cool")
    elif unit.unit_id.startswith("reheat"):
        zone = int(unit.unit_id[len("reheat"):])
        names = (f"T_supp_h{zone}", "T_supp_c", f"u_zone{zone}")
    else:
        raise ParameterError(f"unknown unit id {unit.unit_id!r}")
    inputs = [normalize_temp(lags.current(c)) for c in names]
    return nn_forward(unit, inputs)
