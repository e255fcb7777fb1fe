"""Joint state and parameter estimation over a sliding window.

Each step solves a constrained least-squares problem over the last M+1
samples: decision variables are the full state trajectory (zone
temperatures collocated, supply temperatures as discrete one-step maps),
the model parameters and per-interval process noise. The cost anchors
the oldest state and the parameters to their previous estimates and
penalizes measurement mismatch and process noise with the configured
inverse-covariance weights. The feasible set carries the physical
constraints: supply bounds, (margin-widened) comfort bounds on zone
temperatures, supply-below-mixed-air and reheat-above-supply orderings.

The NLP structure is built once per estimator; subsequent windows only
swap the data vector and bounds, and warm-start from the shifted
previous solution.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import FunctionGraph
from .blocks import BlockSpace
from .collocation import collocation_equations, radau_scheme
from .errors import DimensionError, ParameterError, StateError
from .model import (BuildingModel, parameter_bounds, parameter_scaling)
from .nlp import NlpProblem, SolverOptions, solve

TEMP_SCALE = 50.0
EQ_SCALE = 1.0 / 50.0
F_SCALE = 1e-2


@dataclass
class MheConfig:
    """Window length, weights (diagonals of the quadratic penalties) and
    the bounds defining the feasible set."""

    model: BuildingModel
    window: int = 12
    degree: int = 4
    dt: float = 300.0
    p_x: object = 1.0           # arrival cost on the oldest state
    p_p: object = 50.0          # parameter drift penalty
    p_v: object = 25.0          # measurement residuals (1/sigma_v^2)
    p_w_zone: object = 4e-4     # zone process noise, W^-2
    p_w_supp: object = 4.0      # supply-map noise, K^-2
    comfort_margin: float = 2.0
    supply_c_bounds: tuple = (12.0, 18.0)
    supply_h_bounds: tuple = (12.0, 35.0)
    noise_zone_cap: float = 5000.0   # |w| bound, W
    noise_supp_cap: float = 8.0      # |w| bound, K
    max_iter: int = 120
    tol: float = 1e-6
    mu_init: float = 1e-2
    mu_warm: float = 1e-4

    def __post_init__(self):
        if self.window < 1:
            raise ParameterError("window must be >= 1")
        m = self.model
        self.p_x = _diag(self.p_x, m.nx, "p_x")
        self.p_p = _diag(self.p_p, m.n_params, "p_p")
        self.p_v = _diag(self.p_v, m.nx, "p_v")
        self.p_w_zone = _diag(self.p_w_zone, m.n_zones, "p_w_zone")
        self.p_w_supp = _diag(self.p_w_supp, m.n_zones + 1, "p_w_supp")
        for name in ("p_v", "p_w_zone", "p_w_supp"):
            if np.any(getattr(self, name) <= 0):
                raise ParameterError(f"{name} must be positive definite")


def _diag(value, size, name) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(size, float(arr))
    if arr.shape != (size,):
        raise DimensionError(f"{name} needs {size} diagonal entries")
    if np.any(arr < 0):
        raise ParameterError(f"{name} must be positive semidefinite")
    return arr


@dataclass
class MheWindow:
    """Time-aligned window data: measurements, applied inputs, exogenous
    rows, zone comfort bands, and the prior estimates being anchored."""

    y: np.ndarray          # (M+1, nx)
    u: np.ndarray          # (M+1, nu), u[t] active over [t, t+1]
    ptv: np.ndarray        # (M+1, nptv)
    band_lo: np.ndarray    # (M+1, n)
    band_hi: np.ndarray    # (M+1, n)
    prior_traj: np.ndarray  # (M+1, nx)
    prior_params: np.ndarray

    def check(self, cfg: MheConfig):
        m = cfg.model
        steps = cfg.window + 1
        for name in ("y", "u", "ptv", "band_lo", "band_hi", "prior_traj"):
            arr = getattr(self, name)
            if arr.shape[0] != steps:
                raise StateError(
                    f"window incomplete: {name} has {arr.shape[0]} rows, "
                    f"needs {steps}")
        if self.y.shape[1] != m.nx or self.u.shape[1] != m.nu \
                or self.ptv.shape[1] != m.nptv:
            raise DimensionError("window column sizes disagree with model")
        if self.prior_params.shape != (m.n_params,):
            raise DimensionError("prior parameter vector size mismatch")


class MovingHorizonEstimator:
    """Sliding-window estimator with a cached NLP structure."""

    def __init__(self, cfg: MheConfig):
        self.cfg = cfg
        self.model = cfg.model
        self.scheme = radau_scheme(cfg.degree)
        self._build_structure()
        self._warm = None
        self._prev_result = None
        self.history = []      # (time_index, states, params, obj, status)
        self.degraded_steps = 0
        self._step_index = 0

    # -- structure ------------------------------------------------------------

    def _build_structure(self):
        m = self.model
        n, nx, nu, nptv = m.n_zones, m.nx, m.nu, m.nptv
        M, d = self.cfg.window, self.cfg.degree
        sp = BlockSpace()
        sp.add("x", M + 1, nx)
        sp.add("xc", M, d, n)
        sp.add("wz", M, n)
        sp.add("ws", M, n + 1)
        sp.add("p", m.n_params)
        sp.add("y", M + 1, nx, data=True)
        sp.add("u", M + 1, nu, data=True)
        sp.add("ptv", M + 1, nptv, data=True)
        sp.add("prior_x0", nx, data=True)
        sp.add("prior_p", m.n_params, data=True)
        sp.finalize()
        self.space = sp

        x = sp.sym_block("x")
        xc = sp.sym_block("xc")
        wz = sp.sym_block("wz")
        ws = sp.sym_block("ws")
        p = list(sp.sym_block("p"))
        y = sp.sym_block("y")
        u = sp.sym_block("u")
        ptv = sp.sym_block("ptv")
        prior_x0 = sp.sym_block("prior_x0")
        prior_p = sp.sym_block("prior_p")

        rc, nets = m.unpack_params(p)
        cfg = self.cfg

        residuals, weights, obj = [], [], ad.Expr.const(0.0)

        def add_sq(expr, weight):
            nonlocal obj
            if weight == 0.0:
                return
            residuals.append(expr)
            weights.append(2.0 * weight * F_SCALE)
            obj = obj + (F_SCALE * weight) * ad.square(expr)

        for s in range(nx):
            add_sq(x[0, s] - prior_x0[s], cfg.p_x[s])
        for j in range(m.n_params):
            add_sq(p[j] - prior_p[j], cfg.p_p[j])
        for t in range(M + 1):
            for s in range(nx):
                add_sq(y[t, s] - x[t, s], cfg.p_v[s])
        for i in range(M):
            for z in range(n):
                add_sq(wz[i, z], cfg.p_w_zone[z])
            for s in range(n + 1):
                add_sq(ws[i, s], cfg.p_w_supp[s])

        eqs = []
        for i in range(M):
            supply_h = [x[i, m.ix_supp_h(z)] for z in range(n)]
            q_occ = [ptv[i, 2 + z] for z in range(n)]
            x_nodes = [[xc[i, k, z] for z in range(n)] for k in range(d)]
            rates = [m.zone_rates(x_nodes[k], supply_h, rc, ptv[i, 0],
                                  ptv[i, 1], q_occ, list(wz[i]))
                     for k in range(d)]
            res, end_state = collocation_equations(
                self.scheme, [x[i, z] for z in range(n)], x_nodes, rates,
                cfg.dt)
            eqs.extend(r * EQ_SCALE for r in res)
            for z in range(n):
                eqs.append((x[i + 1, z] - end_state[z]) * EQ_SCALE)
            nxt = m.supply_next(list(x[i]), list(u[i]), nets, ptv[i, 0])
            eqs.append((x[i + 1, m.ix_supp_c] - nxt[0] - ws[i, 0])
                       * EQ_SCALE)
            for z in range(n):
                eqs.append((x[i + 1, m.ix_supp_h(z)] - nxt[1 + z]
                            - ws[i, 1 + z]) * EQ_SCALE)

        ineqs = []
        for t in range(M + 1):
            t_mix = m.mixed_air(ptv[t, 0], [x[t, z] for z in range(n)])
            ineqs.append((x[t, m.ix_supp_c] - t_mix) * EQ_SCALE)
            for z in range(n):
                ineqs.append((x[t, m.ix_supp_c] - x[t, m.ix_supp_h(z)])
                             * EQ_SCALE)

        n_all = sp.n_all
        self._objective = FunctionGraph([obj], n_all)
        self._equality = FunctionGraph(eqs, n_all)
        self._inequality = FunctionGraph(ineqs, n_all)
        self._residuals = FunctionGraph(residuals, n_all)
        self._res_weights = np.asarray(weights)

        scaling = np.empty(sp.n_dec)
        scaling[sp.slice("x")] = TEMP_SCALE
        scaling[sp.slice("xc")] = TEMP_SCALE
        scaling[sp.slice("wz")] = 1000.0
        scaling[sp.slice("ws")] = 1.0
        scaling[sp.slice("p")] = parameter_scaling(m)
        self._scaling = scaling
        self._p_lb, self._p_ub = parameter_bounds(m)

    # -- per-window assembly ----------------------------------------------------

    def _bounds(self, window: MheWindow):
        m, cfg = self.model, self.cfg
        n, M, d = m.n_zones, cfg.window, cfg.degree
        sp = self.space
        lb = np.full(sp.n_dec, -np.inf)
        ub = np.full(sp.n_dec, np.inf)
        lo_band = window.band_lo - cfg.comfort_margin
        hi_band = window.band_hi + cfg.comfort_margin
        for t in range(M + 1):
            for z in range(n):
                i = sp.offset("x", t, z)
                lb[i], ub[i] = lo_band[t, z], hi_band[t, z]
            i = sp.offset("x", t, m.ix_supp_c)
            lb[i], ub[i] = cfg.supply_c_bounds
            for z in range(n):
                i = sp.offset("x", t, m.ix_supp_h(z))
                lb[i], ub[i] = cfg.supply_h_bounds
        for i_int in range(M):
            for k in range(d):
                for z in range(n):
                    i = sp.offset("xc", i_int, k, z)
                    lb[i] = lo_band[min(i_int + 1, M), z]
                    ub[i] = hi_band[min(i_int + 1, M), z]
        s = sp.slice("wz")
        lb[s], ub[s] = -cfg.noise_zone_cap, cfg.noise_zone_cap
        s = sp.slice("ws")
        lb[s], ub[s] = -cfg.noise_supp_cap, cfg.noise_supp_cap
        s = sp.slice("p")
        lb[s], ub[s] = self._p_lb, self._p_ub
        return lb, ub

    def _data_vector(self, window: MheWindow) -> np.ndarray:
        sp = self.space
        data = np.empty(sp.n_data)
        data[sp.data_slice("y")] = window.y.ravel()
        data[sp.data_slice("u")] = window.u.ravel()
        data[sp.data_slice("ptv")] = window.ptv.ravel()
        data[sp.data_slice("prior_x0")] = window.prior_traj[0]
        data[sp.data_slice("prior_p")] = window.prior_params
        return data

    def _initial_guess(self, window: MheWindow) -> np.ndarray:
        sp = self.space
        m, cfg = self.model, self.cfg
        if self._warm is not None:
            return self._warm
        x0 = np.empty(sp.n_dec)
        x0[sp.slice("x")] = window.prior_traj.ravel()
        xc = np.repeat(window.prior_traj[1:, :m.n_zones],
                       cfg.degree, axis=0)
        x0[sp.slice("xc")] = xc.ravel()
        x0[sp.slice("wz")] = 0.0
        x0[sp.slice("ws")] = 0.0
        x0[sp.slice("p")] = window.prior_params
        return x0

    def build_nlp(self, window: MheWindow) -> NlpProblem:
        window.check(self.cfg)
        lb, ub = self._bounds(window)
        return NlpProblem(
            objective=self._objective,
            equality=self._equality,
            inequality=self._inequality,
            lb=lb, ub=ub,
            x0=self._initial_guess(window),
            scaling=self._scaling,
            data=self._data_vector(window),
            residuals=self._residuals,
            residual_weights=self._res_weights)

    # -- stepping ----------------------------------------------------------------

    def step(self, window: MheWindow):
        """Solve the window, apply the estimate recursion, and prepare the
        warm start for the next sample. Returns (trajectory, params,
        result); on a non-optimal solve the previous estimates are held
        and the step is flagged in ``degraded_steps``."""
        m, cfg = self.model, self.cfg
        M = cfg.window
        problem = self.build_nlp(window)
        warm = self._warm is not None
        opts = SolverOptions(
            tol=cfg.tol, max_iter=cfg.max_iter,
            mu_init=cfg.mu_warm if warm else cfg.mu_init,
            hessian="gauss_newton")
        result = solve(problem, opts)
        sp = self.space

        if result.optimal:
            sol = result.x
            traj = sol[sp.slice("x")].reshape(M + 1, m.nx)
            params = sol[sp.slice("p")].copy()
            self._warm = self._shift_warm(sol, window)
        else:
            self.degraded_steps += 1
            traj = window.prior_traj.copy()
            traj[-1] = window.y[-1]
            params = window.prior_params.copy()
            # keep any existing warm start shifted along the window
            if self._warm is not None:
                fake = np.empty(sp.n_dec)
                fake[:] = self._warm
                self._warm = self._shift_warm(fake, window)

        self._step_index += 1
        self.history.append((self._step_index, traj[-1].copy(),
                             params.copy(), result.objective,
                             result.status))
        self._prev_result = result
        return traj, params, result

    def _shift_warm(self, sol: np.ndarray, window: MheWindow) -> np.ndarray:
        """Shift the solved window one sample forward as the next warm
        start: drop the oldest sample, duplicate the newest."""
        m, cfg = self.model, self.cfg
        sp = self.space
        M, d, n = cfg.window, cfg.degree, m.n_zones
        warm = sol.copy()
        x = sol[sp.slice("x")].reshape(M + 1, m.nx)
        x_new = np.vstack((x[1:], x[-1]))
        warm[sp.slice("x")] = x_new.ravel()
        xc = sol[sp.slice("xc")].reshape(M, d, n)
        xc_new = np.concatenate((xc[1:], xc[-1:]), axis=0)
        warm[sp.slice("xc")] = xc_new.ravel()
        for name in ("wz", "ws"):
            w = sol[sp.slice(name)].reshape(M, -1)
            w_new = np.vstack((w[1:], np.zeros((1, w.shape[1]))))
            warm[sp.slice(name)] = w_new.ravel()
        return warm[:sp.n_dec]

    def reset_warm_start(self):
        self._warm = None

    # -- export -------------------------------------------------------------------

    def export_history_csv(self, path):
        m = self.model
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step"]
                       + [f"x_{i}" for i in range(m.nx)]
                       + [f"p_{j}" for j in range(m.n_params)]
                       + ["objective", "status"])
            for step, x, p, obj, status in self.history:
                w.writerow([step] + [f"{v:.9g}" for v in x]
                           + [f"{v:.9g}" for v in p]
                           + [f"{obj:.9g}", status])

    def params_hash(self, params: np.ndarray) -> str:
        return hashlib.sha256(params.tobytes()).hexdigest()[:16]


def build_mhe_nlp(window: MheWindow, cfg: MheConfig) -> NlpProblem:
    """One-shot NLP construction (fresh structure; tests and offline
    replays)."""
    return MovingHorizonEstimator(cfg).build_nlp(window)


def step_mhe(window: MheWindow, cfg: MheConfig):
    """One-shot estimation step without persistent structure caching."""
    return MovingHorizonEstimator(cfg).step(window)
