"""Receding-horizon energy-minimizing supervisory control.

Each step solves for a setpoint trajectory [T_cs | T_zs_i] over N
control intervals minimizing the summed cooling/heating coil powers plus
a move-suppression term anchored at the previously applied command, and
applies only the first move. Dynamics are the identified model (zone RC
ODE collocated, supply temperatures as discrete network maps); comfort
bands enter as soft constraints with an L1 penalty far above the energy
scale (hard comfort together with hard supply bounds can be jointly
infeasible under model error), tightened inward by a small back-off so
the closed loop does not ride the raw band edge. Commanded setpoints are
hard-bounded to the supply ranges; predicted supply states get the same
box widened by a margin so an imperfect supply model cannot make the
program infeasible. Supply-below-mixed-air and reheat-above-supply stay
hard, which keeps both stage powers non-negative along any feasible
plan.

The controller with exact plant parameters (the upper-bound reference)
is this same class fed a different parameter vector; parameters enter as
data, so one cached NLP structure serves both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import FunctionGraph
from .blocks import BlockSpace
from .collocation import collocation_equations, radau_scheme
from .errors import DimensionError, ParameterError
from .model import BuildingModel
from .nlp import NlpProblem, SolverOptions, solve

TEMP_SCALE = 50.0
EQ_SCALE = 1.0 / 50.0
F_SCALE = 1e-4


@dataclass
class MpcConfig:
    model: BuildingModel
    horizon: int = 48
    degree: int = 4
    dt: float = 300.0
    r_move: object = 20.0            # move penalty diagonal, per input
    eta_c: float = 0.9
    eta_h: float = 0.9
    cp_water: float = 1005.0         # paired with air flows as configured
    soft_weight: float = 1e5         # W per K of comfort violation
    comfort_backoff: float = 0.4     # K, tighten the band inward
    supply_c_bounds: tuple = (12.0, 18.0)
    supply_h_bounds: tuple = (12.0, 35.0)
    zone_setpoint_bounds: tuple = (10.0, 35.0)
    state_margin: float = 2.0        # widen supply-state boxes vs commands
    zone_state_bounds: tuple = (5.0, 45.0)
    slack_cap: float = 40.0
    max_iter: int = 120
    tol: float = 1e-6
    mu_init: float = 1e-2
    mu_warm: float = 1e-4

    def __post_init__(self):
        if self.horizon < 1:
            raise ParameterError("horizon must be >= 1")
        if not (0.0 < self.eta_c <= 1.0 and 0.0 < self.eta_h <= 1.0):
            raise ParameterError("efficiencies must be in (0, 1]")
        nu = self.model.nu
        r = np.asarray(self.r_move, dtype=np.float64)
        if r.ndim == 0:
            r = np.full(nu, float(r))
        if r.shape != (nu,) or np.any(r < 0):
            raise ParameterError("r_move must be a PSD diagonal over the "
                                 "inputs")
        self.r_move = r
        for lo, hi in (self.supply_c_bounds, self.supply_h_bounds,
                       self.zone_setpoint_bounds, self.zone_state_bounds):
            if lo > hi:
                raise ParameterError("bounds out of order")


def stage_power(cfg: MpcConfig, t_mix, t_supp_c, t_supp_h):
    """Cooling and heating coil powers (W) at one stage. Non-negative
    whenever t_supp_c <= t_mix and t_supp_c <= t_supp_h_i."""
    m = cfg.model
    p_c = (1.0 / cfg.eta_c) * float(np.sum(m.mass_flow_coil)) \
        * cfg.cp_water * (t_mix - t_supp_c)
    p_h = 0.0
    for i in range(m.n_zones):
        p_h = p_h + float(m.mass_flow_zone[i]) * m.cp_air \
            * (t_supp_h[i] - t_supp_c)
    return p_c, p_h * (1.0 / cfg.eta_h)


@dataclass
class MpcPlan:
    """Solved plan: inputs, predicted states, stage powers and the soft
    comfort violations (vs the raw band, not the backed-off one)."""

    u: np.ndarray            # (N, nu); u[0] is the applied move
    x: np.ndarray            # (N, nx), states at k+1..k+N
    p_c: np.ndarray          # (N,)
    p_h: np.ndarray          # (N,)
    violations: np.ndarray   # (N, n) K beyond the raw band
    objective: float
    used_fallback: bool = False


class ModelPredictiveController:
    def __init__(self, cfg: MpcConfig):
        self.cfg = cfg
        self.model = cfg.model
        self.scheme = radau_scheme(cfg.degree)
        self._build_structure()
        self._warm = None

    # -- structure ------------------------------------------------------------

    def _build_structure(self):
        m, cfg = self.model, self.cfg
        n, nx, nu, nptv = m.n_zones, m.nx, m.nu, m.nptv
        N, d = cfg.horizon, cfg.degree
        sp = BlockSpace()
        sp.add("u", N, nu)
        sp.add("x", N, nx)
        sp.add("xc", N, d, n)
        sp.add("s_lo", N, n)
        sp.add("s_hi", N, n)
        sp.add("p", m.n_params, data=True)
        sp.add("x0", nx, data=True)
        sp.add("u_prev", nu, data=True)
        sp.add("ptv", N + 1, nptv, data=True)
        sp.add("band_lo", N, n, data=True)
        sp.add("band_hi", N, n, data=True)
        sp.finalize()
        self.space = sp

        u = sp.sym_block("u")
        x = sp.sym_block("x")
        xc = sp.sym_block("xc")
        s_lo = sp.sym_block("s_lo")
        s_hi = sp.sym_block("s_hi")
        p = list(sp.sym_block("p"))
        x0 = sp.sym_block("x0")
        u_prev = sp.sym_block("u_prev")
        ptv = sp.sym_block("ptv")
        band_lo = sp.sym_block("band_lo")
        band_hi = sp.sym_block("band_hi")

        rc, nets = m.unpack_params(p)

        def state_at(l):
            """State vector at time k+l (l=0 is the data anchor)."""
            return list(x0) if l == 0 else list(x[l - 1])

        residuals, weights = [], []
        obj = ad.Expr.const(0.0)

        # stage powers at l = 1..N (linear in the decision variables)
        zeros_n = [0.0] * n
        self._power_exprs = []
        for l in range(1, N + 1):
            xs = state_at(l)
            t_mix = m.mixed_air(ptv[l, 0], xs[:n])
            p_c, p_h = stage_power(cfg, t_mix, xs[m.ix_supp_c],
                                   [xs[m.ix_supp_h(i)] for i in range(n)])
            self._power_exprs.append((p_c, p_h))
            obj = obj + F_SCALE * (p_c + p_h)

        # move suppression, anchored at the previously applied command
        for l in range(N):
            prev = list(u_prev) if l == 0 else list(u[l - 1])
            for j in range(nu):
                move = u[l, j] - prev[j]
                if cfg.r_move[j] > 0:
                    residuals.append(move)
                    weights.append(2.0 * cfg.r_move[j] * F_SCALE)
                    obj = obj + (F_SCALE * cfg.r_move[j]) * ad.square(move)

        # soft comfort penalties
        for l in range(N):
            for z in range(n):
                obj = obj + (F_SCALE * cfg.soft_weight) * (s_lo[l, z]
                                                           + s_hi[l, z])

        eqs = []
        for l in range(N):
            xs = state_at(l)
            supply_h = [xs[m.ix_supp_h(z)] for z in range(n)]
            q_occ = [ptv[l, 2 + z] for z in range(n)]
            x_nodes = [[xc[l, k, z] for z in range(n)] for k in range(d)]
            rates = [m.zone_rates(x_nodes[k], supply_h, rc, ptv[l, 0],
                                  ptv[l, 1], q_occ, zeros_n)
                     for k in range(d)]
            res, end_state = collocation_equations(
                self.scheme, xs[:n], x_nodes, rates, cfg.dt)
            eqs.extend(r * EQ_SCALE for r in res)
            for z in range(n):
                eqs.append((x[l, z] - end_state[z]) * EQ_SCALE)
            nxt = m.supply_next(xs, list(u[l]), nets, ptv[l, 0])
            eqs.append((x[l, m.ix_supp_c] - nxt[0]) * EQ_SCALE)
            for z in range(n):
                eqs.append((x[l, m.ix_supp_h(z)] - nxt[1 + z]) * EQ_SCALE)

        ineqs = []
        for l in range(1, N + 1):
            xs = state_at(l)
            t_mix = m.mixed_air(ptv[l, 0], xs[:n])
            ineqs.append((xs[m.ix_supp_c] - t_mix) * EQ_SCALE)
            for z in range(n):
                ineqs.append((xs[m.ix_supp_c] - xs[m.ix_supp_h(z)])
                             * EQ_SCALE)
        for l in range(N):
            for z in range(n):
                hi_eff = band_hi[l, z] - cfg.comfort_backoff
                lo_eff = band_lo[l, z] + cfg.comfort_backoff
                ineqs.append((x[l, z] - s_hi[l, z] - hi_eff) * EQ_SCALE)
                ineqs.append((lo_eff - x[l, z] - s_lo[l, z]) * EQ_SCALE)

        n_all = sp.n_all
        self._objective = FunctionGraph([obj], n_all)
        self._equality = FunctionGraph(eqs, n_all)
        self._inequality = FunctionGraph(ineqs, n_all)
        self._residuals = FunctionGraph(residuals, n_all)
        self._res_weights = np.asarray(weights)

        lb = np.full(sp.n_dec, -np.inf)
        ub = np.full(sp.n_dec, np.inf)
        for l in range(N):
            i = sp.offset("u", l, 0)
            lb[i], ub[i] = cfg.supply_c_bounds
            for z in range(n):
                i = sp.offset("u", l, 1 + z)
                lb[i], ub[i] = cfg.zone_setpoint_bounds
            for z in range(n):
                i = sp.offset("x", l, z)
                lb[i], ub[i] = cfg.zone_state_bounds
            i = sp.offset("x", l, m.ix_supp_c)
            lb[i] = cfg.supply_c_bounds[0] - cfg.state_margin
            ub[i] = cfg.supply_c_bounds[1] + cfg.state_margin
            for z in range(n):
                i = sp.offset("x", l, m.ix_supp_h(z))
                lb[i] = cfg.supply_h_bounds[0] - cfg.state_margin
                ub[i] = cfg.supply_h_bounds[1] + cfg.state_margin
        s = sp.slice("xc")
        lb[s], ub[s] = cfg.zone_state_bounds
        for name in ("s_lo", "s_hi"):
            s = sp.slice(name)
            lb[s], ub[s] = 0.0, cfg.slack_cap
        self._lb, self._ub = lb, ub

        scaling = np.empty(sp.n_dec)
        scaling[sp.slice("u")] = TEMP_SCALE
        scaling[sp.slice("x")] = TEMP_SCALE
        scaling[sp.slice("xc")] = TEMP_SCALE
        scaling[sp.slice("s_lo")] = 1.0
        scaling[sp.slice("s_hi")] = 1.0
        self._scaling = scaling

    # -- per-solve assembly ------------------------------------------------------

    def _data_vector(self, x_hat, params, u_prev, ptv, band_lo, band_hi):
        sp = self.space
        m, cfg = self.model, self.cfg
        N = cfg.horizon
        ptv = np.asarray(ptv, dtype=np.float64)
        if ptv.shape != (N + 1, m.nptv):
            raise DimensionError(
                f"need {N + 1} exogenous rows (current + horizon), got "
                f"{ptv.shape}")
        band_lo = np.asarray(band_lo, dtype=np.float64)
        band_hi = np.asarray(band_hi, dtype=np.float64)
        if band_lo.shape != (N, m.n_zones) or band_hi.shape != band_lo.shape:
            raise DimensionError("band arrays must be (N, n_zones)")
        if np.any(band_lo >= band_hi):
            raise ParameterError("comfort band must satisfy lo < hi")
        data = np.empty(sp.n_data)
        data[sp.data_slice("p")] = params
        data[sp.data_slice("x0")] = x_hat
        data[sp.data_slice("u_prev")] = u_prev
        data[sp.data_slice("ptv")] = ptv.ravel()
        data[sp.data_slice("band_lo")] = band_lo.ravel()
        data[sp.data_slice("band_hi")] = band_hi.ravel()
        return data

    def _initial_guess(self, x_hat, u_prev, params, ptv):
        sp = self.space
        m, cfg = self.model, self.cfg
        N, d, n = cfg.horizon, cfg.degree, m.n_zones
        if self._warm is not None:
            return self._warm
        # cold start: roll the model out under the held previous command,
        # which lands the solver in the basin the closed loop actually
        # occupies rather than an artificial cool-hard trajectory
        u_lb = self._lb[sp.slice("u")].reshape(N, m.nu)[0]
        u_ub = self._ub[sp.slice("u")].reshape(N, m.nu)[0]
        u_hold = np.clip(u_prev, u_lb, u_ub)
        rollout = m.simulate_open_loop(params, x_hat,
                                       np.tile(u_hold, (N, 1)), ptv[:N],
                                       dt=cfg.dt, substeps=2)
        rollout = np.clip(rollout, 1.0, 49.0)
        x0 = np.empty(sp.n_dec)
        x0[sp.slice("u")] = np.tile(u_hold, N)
        x0[sp.slice("x")] = rollout[1:].ravel()
        x0[sp.slice("xc")] = np.repeat(rollout[1:, :n], d, axis=0).ravel()
        x0[sp.slice("s_lo")] = 0.05
        x0[sp.slice("s_hi")] = 0.05
        return x0

    def build_nlp(self, x_hat, params, u_prev, ptv, band_lo,
                  band_hi) -> NlpProblem:
        ptv = np.asarray(ptv, dtype=np.float64)
        return NlpProblem(
            objective=self._objective,
            equality=self._equality,
            inequality=self._inequality,
            lb=self._lb, ub=self._ub,
            x0=self._initial_guess(np.asarray(x_hat, dtype=float),
                                   np.asarray(u_prev, dtype=float),
                                   np.asarray(params, dtype=float), ptv),
            scaling=self._scaling,
            data=self._data_vector(x_hat, params, u_prev, ptv, band_lo,
                                   band_hi),
            residuals=self._residuals,
            residual_weights=self._res_weights)

    def step(self, x_hat, params, u_prev, ptv, band_lo, band_hi,
             fallback_input=None):
        """Solve and return (next input, plan, result). On a non-optimal
        solve the fallback input (when given) is returned with the plan
        flagged."""
        m, cfg = self.model, self.cfg
        N = cfg.horizon
        problem = self.build_nlp(x_hat, params, u_prev, ptv, band_lo,
                                 band_hi)
        warm = self._warm is not None
        opts = SolverOptions(
            tol=cfg.tol, max_iter=cfg.max_iter,
            mu_init=cfg.mu_warm if warm else cfg.mu_init,
            hessian="gauss_newton")
        result = solve(problem, opts)
        sp = self.space

        if result.optimal:
            sol = result.x
            u = sol[sp.slice("u")].reshape(N, m.nu)
            x = sol[sp.slice("x")].reshape(N, m.nx)
            p_c, p_h = self._stage_powers(sol, problem.data)
            viol = self._violations(x, band_lo, band_hi)
            plan = MpcPlan(u=u, x=x, p_c=p_c, p_h=p_h, violations=viol,
                           objective=result.objective)
            self._warm = self._shift_warm(sol)
            return u[0].copy(), plan, result

        self._warm = None
        used = fallback_input if fallback_input is not None else \
            np.asarray(u_prev, dtype=float)
        plan = MpcPlan(u=np.tile(used, (N, 1)),
                       x=np.tile(np.asarray(x_hat, float), (N, 1)),
                       p_c=np.zeros(N), p_h=np.zeros(N),
                       violations=np.zeros((N, m.n_zones)),
                       objective=float("nan"), used_fallback=True)
        return np.asarray(used, dtype=float).copy(), plan, result

    def _stage_powers(self, sol, data):
        full = np.concatenate((sol, data))
        graph = getattr(self, "_power_graph", None)
        if graph is None:
            outs = []
            for p_c, p_h in self._power_exprs:
                outs.append(p_c)
                outs.append(p_h)
            graph = FunctionGraph(outs, self.space.n_all)
            self._power_graph = graph
        vals = graph.eval(full)
        return vals[0::2].copy(), vals[1::2].copy()

    def _violations(self, x, band_lo, band_hi):
        n = self.model.n_zones
        z = x[:, :n]
        return np.maximum(z - band_hi, 0.0) + np.maximum(band_lo - z, 0.0)

    def _shift_warm(self, sol):
        sp = self.space
        m, cfg = self.model, self.cfg
        N, d, n = cfg.horizon, cfg.degree, m.n_zones
        warm = sol.copy()
        for name, width in (("u", m.nu), ("x", m.nx), ("s_lo", n),
                            ("s_hi", n)):
            blk = sol[sp.slice(name)].reshape(N, width)
            warm[sp.slice(name)] = np.vstack((blk[1:], blk[-1])).ravel()
        xc = sol[sp.slice("xc")].reshape(N, d, n)
        warm[sp.slice("xc")] = np.concatenate((xc[1:], xc[-1:]),
                                              axis=0).ravel()
        return warm

    def reset_warm_start(self):
        self._warm = None


def build_mpc_nlp(x_hat, params, forecast, u_prev, cfg: MpcConfig,
                  band_lo, band_hi) -> NlpProblem:
    """One-shot NLP construction (fresh structure)."""
    return ModelPredictiveController(cfg).build_nlp(
        x_hat, params, u_prev, forecast, band_lo, band_hi)


def step_mpc(x_hat, params, forecast, u_prev, cfg: MpcConfig, band_lo,
             band_hi, fallback_input=None):
    """One-shot receding-horizon step without structure caching."""
    return ModelPredictiveController(cfg).step(
        x_hat, params, u_prev, forecast, band_lo, band_hi,
        fallback_input=fallback_input)
