"""Primal-dual interior-point solver for constrained nonlinear programs.

Solves

    min f(z)  s.t.  g(z) = 0,  h(z) <= 0,  lb <= z <= ub

with slack variables for the inequalities, a log-barrier with monotone
mu reduction, an Armijo line search on an exact-penalty merit function,
and a quasi-Newton model of the Lagrangian Hessian: damped BFGS by
default, or a Gauss-Newton matrix when the problem declares its
least-squares residual structure (then the KKT system stays sparse and
large transcribed problems remain tractable).

All function/derivative information comes from FunctionGraph callbacks;
the decision variables may be followed by fixed data slots in the shared
variable space. Two solves with identical inputs are bitwise identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .autodiff import FunctionGraph
from .errors import DimensionError, UsageError

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITER = "max_iter"
STATUS_INFEASIBLE = "infeasible"
STATUS_NUMERIC = "numeric_failure"

_BIG = 1e19


@dataclass
class NlpProblem:
    """A constrained NLP over a shared variable space.

    All graphs see the same variables: the first ``len(lb)`` entries are
    decision variables, any further entries are fixed to ``data``. The
    optional ``residuals``/``residual_weights`` pair declares that the
    objective's nonlinear part is 0.5 * sum(w_i * r_i(z)^2), enabling the
    Gauss-Newton Hessian path.
    """

    objective: FunctionGraph
    equality: FunctionGraph | None
    inequality: FunctionGraph | None
    lb: np.ndarray
    ub: np.ndarray
    x0: np.ndarray
    scaling: np.ndarray | None = None
    data: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residuals: FunctionGraph | None = None
    residual_weights: np.ndarray | None = None

    def __post_init__(self):
        self.lb = np.asarray(self.lb, dtype=np.float64)
        self.ub = np.asarray(self.ub, dtype=np.float64)
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        self.data = np.asarray(self.data, dtype=np.float64)
        n = self.lb.size
        if self.ub.size != n or self.x0.size != n:
            raise DimensionError("lb/ub/x0 sizes disagree")
        if np.any(self.lb > self.ub):
            raise UsageError("lb > ub")
        if self.scaling is None:
            self.scaling = np.ones(n)
        self.scaling = np.asarray(self.scaling, dtype=np.float64)
        if np.any(self.scaling <= 0):
            raise UsageError("scaling entries must be positive")
        n_all = n + self.data.size
        if self.objective.n_vars != n_all:
            raise DimensionError(
                f"objective graph has {self.objective.n_vars} vars, "
                f"expected {n_all}")
        if self.objective.n_outputs != 1:
            raise UsageError("objective must have one output")
        for g in (self.equality, self.inequality, self.residuals):
            if g is not None and g.n_vars != n_all:
                raise DimensionError("constraint graph variable mismatch")

    @property
    def n(self) -> int:
        return self.lb.size


@dataclass
class SolverOptions:
    tol: float = 1e-6
    max_iter: int = 200
    mu_init: float = 1e-1
    mu_min_factor: float = 0.1      # mu floor = tol * this
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    kappa_eps: float = 10.0
    tau_min: float = 0.99
    armijo_eta: float = 1e-4
    alpha_min: float = 1e-10
    hessian: str = "auto"           # bfgs | gauss_newton | auto
    aug_weight: float = 10.0        # equality-curvature boost for GN
    step_cap: float = 1e3           # max |dw| component before rescaling
    verbose: bool = False
    log_fn: object = None
    record_merit: bool = False


@dataclass
class SolveResult:
    x: np.ndarray
    objective: float
    status: str
    kkt: dict                       # stationarity, eq, ineq, comp norms
    iterations: int
    wall_time: float
    mu: float
    multipliers: dict
    merit_history: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL


class _Evaluator:
    """Scaled views of a problem: internal variable w = z / scaling."""

    def __init__(self, p: NlpProblem):
        self.p = p
        self.s = p.scaling
        self.n = p.n
        self.m_eq = p.equality.n_outputs if p.equality is not None else 0
        self.m_in = p.inequality.n_outputs if p.inequality is not None else 0
        self.lb = np.where(np.isfinite(p.lb), p.lb / self.s, -np.inf)
        self.ub = np.where(np.isfinite(p.ub), p.ub / self.s, np.inf)

    def full(self, w):
        return np.concatenate((self.s * w, self.p.data))

    def f(self, w):
        return float(self.p.objective.eval(self.full(w))[0])

    def grad(self, w):
        return self.p.objective.gradient(self.full(w))[:self.n] * self.s

    def g(self, w):
        if self.m_eq == 0:
            return np.zeros(0)
        return self.p.equality.eval(self.full(w))

    def jac_g(self, w):
        if self.m_eq == 0:
            return sp.csr_matrix((0, self.n))
        J = self.p.equality.jacobian(self.full(w))[:, :self.n]
        return J.multiply(self.s[None, :]).tocsr()

    def h(self, w):
        if self.m_in == 0:
            return np.zeros(0)
        return self.p.inequality.eval(self.full(w))

    def jac_h(self, w):
        if self.m_in == 0:
            return sp.csr_matrix((0, self.n))
        J = self.p.inequality.jacobian(self.full(w))[:, :self.n]
        return J.multiply(self.s[None, :]).tocsr()

    def gauss_newton(self, w):
        J = self.p.residuals.jacobian(self.full(w))[:, :self.n]
        J = J.multiply(self.s[None, :]).tocsr()
        Wd = sp.diags(self.p.residual_weights)
        return (J.T @ Wd @ J).tocsc()


def kkt_residual(problem: NlpProblem, point, multipliers: dict) -> dict:
    """Infinity norms of the first-order optimality conditions at a point
    (given in original variable units) with the supplied multipliers.
    Missing multiplier entries default to zero."""
    ev = _Evaluator(problem)
    w = np.asarray(point, dtype=np.float64) / ev.s
    lam = np.asarray(multipliers.get("eq", np.zeros(ev.m_eq)), dtype=float)
    nu = np.asarray(multipliers.get("ineq", np.zeros(ev.m_in)), dtype=float)
    zl = np.asarray(multipliers.get("lb", np.zeros(ev.n)), dtype=float)
    zu = np.asarray(multipliers.get("ub", np.zeros(ev.n)), dtype=float)
    if lam.size != ev.m_eq or nu.size != ev.m_in:
        raise DimensionError("multiplier sizes disagree with constraints")

    r = ev.grad(w) - zl + zu
    if ev.m_eq:
        r = r + ev.jac_g(w).T @ lam
    if ev.m_in:
        r = r + ev.jac_h(w).T @ nu
    g = ev.g(w)
    h = ev.h(w)
    comp = 0.0
    if ev.m_in:
        comp = max(comp, float(np.abs(nu * h).max()))
    gap_l = np.where(np.isfinite(ev.lb), w - ev.lb, 0.0)
    gap_u = np.where(np.isfinite(ev.ub), ev.ub - w, 0.0)
    if ev.n:
        comp = max(comp, float(np.abs(zl * gap_l).max()),
                   float(np.abs(zu * gap_u).max()))
    return {
        "stationarity": float(np.abs(r).max()) if r.size else 0.0,
        "eq": float(np.abs(g).max()) if g.size else 0.0,
        "ineq": float(np.maximum(h, 0.0).max()) if h.size else 0.0,
        "complementarity": float(comp),
    }


def _push_interior(w, lb, ub):
    out = w.copy()
    both = np.isfinite(lb) & np.isfinite(ub)
    width = np.where(both, ub - lb, np.inf)
    margin_l = np.where(np.isfinite(lb),
                        np.minimum(0.01 * np.maximum(1.0, np.abs(lb)),
                                   0.01 * width), 0.0)
    margin_u = np.where(np.isfinite(ub),
                        np.minimum(0.01 * np.maximum(1.0, np.abs(ub)),
                                   0.01 * width), 0.0)
    lo = np.where(np.isfinite(lb), lb + margin_l, -np.inf)
    hi = np.where(np.isfinite(ub), ub - margin_u, np.inf)
    return np.clip(out, lo, hi)


def _fraction_to_boundary(x, dx, tau):
    """Largest alpha in (0, 1] with x + alpha*dx >= (1 - tau) * x."""
    neg = dx < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, (tau * x[neg] / -dx[neg]).min()))


def solve(problem: NlpProblem, options: SolverOptions | None = None
          ) -> SolveResult:
    """Run the interior-point iteration. Bounds are honoured strictly at
    every iterate; the returned status is ``optimal`` only when all KKT
    norms are at or below the configured tolerance."""
    t_start = time.perf_counter()
    opt = options or SolverOptions()
    ev = _Evaluator(problem)
    n, m_eq, m_in = ev.n, ev.m_eq, ev.m_in

    use_gn = (opt.hessian == "gauss_newton" or
              (opt.hessian == "auto" and problem.residuals is not None))
    if use_gn and problem.residuals is None:
        raise UsageError("gauss_newton requires problem.residuals")

    log = opt.log_fn if opt.log_fn is not None else (
        print if opt.verbose else None)

    # initial point: clip into bounds, push strictly interior
    w = np.clip(problem.x0 / ev.s, ev.lb, ev.ub)
    w = _push_interior(w, ev.lb, ev.ub)

    mu = opt.mu_init
    h0 = ev.h(w)
    slack = np.maximum(-h0, 1e-2) if m_in else np.zeros(0)
    lam = np.zeros(m_eq)
    nu = np.minimum(np.maximum(mu / slack, 1e-8), 1e8) if m_in \
        else np.zeros(0)
    fin_l = np.isfinite(ev.lb)
    fin_u = np.isfinite(ev.ub)
    zl = np.where(fin_l, mu / np.maximum(w - ev.lb, 1e-8), 0.0)
    zu = np.where(fin_u, mu / np.maximum(ev.ub - w, 1e-8), 0.0)

    rho = 1.0
    bfgs_B = np.eye(n) if not use_gn else None
    merit_history = []
    mu_floor = opt.tol * opt.mu_min_factor
    fail_streak = 0
    delta_w_last = 0.0
    # persistent Levenberg-style damping: raised when steps crawl (flat
    # or degenerate directions), relaxed again after healthy steps
    damp = 0.0
    status = STATUS_MAX_ITER
    it = 0

    def barrier_value(w_, s_):
        val = ev.f(w_)
        if not np.isfinite(val):
            return np.inf
        if m_in:
            if np.any(s_ <= 0):
                return np.inf
            val -= mu * np.log(s_).sum()
        gl = (w_ - ev.lb)[fin_l]
        gu = (ev.ub - w_)[fin_u]
        if np.any(gl <= 0) or np.any(gu <= 0):
            return np.inf
        val -= mu * (np.log(gl).sum() + np.log(gu).sum())
        return val

    def merit(w_, s_):
        val = barrier_value(w_, s_)
        if not np.isfinite(val):
            return np.inf
        viol = 0.0
        if m_eq:
            viol += np.abs(ev.g(w_)).sum()
        if m_in:
            viol += np.abs(ev.h(w_) + s_).sum()
        return val + rho * viol

    def kkt_error(w_, s_, lam_, nu_, zl_, zu_, mu_):
        grad = ev.grad(w_)
        r = grad - zl_ + zu_
        if m_eq:
            r = r + ev.jac_g(w_).T @ lam_
        if m_in:
            r = r + ev.jac_h(w_).T @ nu_
        mult_sum = (np.abs(lam_).sum() + np.abs(nu_).sum()
                    + np.abs(zl_).sum() + np.abs(zu_).sum())
        m_tot = max(1, m_eq + m_in + fin_l.sum() + fin_u.sum())
        sd = max(100.0, mult_sum / m_tot) / 100.0
        err = np.abs(r).max() / sd if r.size else 0.0
        if m_eq:
            err = max(err, np.abs(ev.g(w_)).max())
        if m_in:
            err = max(err, np.abs(ev.h(w_) + s_).max())
            err = max(err, np.abs(s_ * nu_ - mu_).max() / sd)
        if fin_l.any():
            err = max(err, np.abs(((w_ - ev.lb) * zl_ - mu_)[fin_l]).max()
                      / sd)
        if fin_u.any():
            err = max(err, np.abs(((ev.ub - w_) * zu_ - mu_)[fin_u]).max()
                      / sd)
        return float(err)

    for it in range(1, opt.max_iter + 1):
        grad = ev.grad(w)
        g = ev.g(w)
        h = ev.h(w)
        Jg = ev.jac_g(w)
        Jh = ev.jac_h(w)
        if not (np.isfinite(grad).all() and np.isfinite(g).all()
                and np.isfinite(h).all()):
            status = STATUS_NUMERIC
            break

        # convergence checks: overall first, then the barrier subproblem
        err_0 = kkt_error(w, slack, lam, nu, zl, zu, 0.0)
        if err_0 <= opt.tol:
            status = STATUS_OPTIMAL
            break
        err_mu = kkt_error(w, slack, lam, nu, zl, zu, mu)
        while err_mu <= opt.kappa_eps * mu and mu > mu_floor:
            mu = max(mu_floor, min(opt.kappa_mu * mu, mu ** opt.theta_mu))
            err_mu = kkt_error(w, slack, lam, nu, zl, zu, mu)

        # curvature model: Gauss-Newton of the residual structure, plus an
        # augmented-Lagrangian boost along the equality normals (changes
        # the Newton step only away from feasibility, but gives
        # constraint-only variables curvature the residuals cannot see)
        if use_gn:
            H = ev.gauss_newton(w)
            if m_eq and opt.aug_weight > 0:
                H = (H + opt.aug_weight * (Jg.T @ Jg)).tocsc()
        else:
            H = bfgs_B

        sigma_l = np.where(fin_l, zl / np.maximum(w - ev.lb, 1e-16), 0.0)
        sigma_u = np.where(fin_u, zu / np.maximum(ev.ub - w, 1e-16), 0.0)
        sigma_s = nu / slack if m_in else np.zeros(0)

        rhs_w = -(grad - np.where(fin_l, mu / np.maximum(w - ev.lb, 1e-16),
                                  0.0)
                  + np.where(fin_u, mu / np.maximum(ev.ub - w, 1e-16), 0.0))
        if m_eq:
            rhs_w -= Jg.T @ lam
        if m_in:
            rhs_w -= Jh.T @ (sigma_s * (h + slack) + mu / slack)

        delta_w_reg = damp
        step = None
        for attempt in range(12):
            try:
                if use_gn:
                    Wmat = (H + sp.diags(sigma_l + sigma_u
                                         + delta_w_reg)).tocsc()
                    if m_in:
                        Wmat = (Wmat + (Jh.T @ sp.diags(sigma_s)
                                        @ Jh)).tocsc()
                    if m_eq:
                        K = sp.bmat([[Wmat, Jg.T],
                                     [Jg, -sp.eye(m_eq) * 1e-10]],
                                    format="csc")
                        rhs = np.concatenate((rhs_w, -g))
                        sol = spla.splu(K, permc_spec="COLAMD").solve(rhs)
                    else:
                        sol = spla.splu(Wmat,
                                        permc_spec="COLAMD").solve(rhs_w)
                else:
                    Wmat = H + np.diag(sigma_l + sigma_u) \
                        + delta_w_reg * np.eye(n)
                    if m_in:
                        Wmat = Wmat + (Jh.T @ sp.diags(sigma_s)
                                       @ Jh).toarray()
                    if m_eq:
                        K = np.zeros((n + m_eq, n + m_eq))
                        K[:n, :n] = Wmat
                        K[:n, n:] = Jg.T.toarray()
                        K[n:, :n] = Jg.toarray()
                        K[n:, n:] = -1e-10 * np.eye(m_eq)
                        rhs = np.concatenate((rhs_w, -g))
                        sol = la.lu_solve(la.lu_factor(K), rhs)
                    else:
                        sol = la.lu_solve(la.lu_factor(Wmat), rhs_w)
            except (RuntimeError, la.LinAlgError, ValueError):
                sol = None
            if sol is not None and np.isfinite(sol).all():
                step = sol
                break
            delta_w_reg = max(1e-8, delta_w_reg * 100 if delta_w_reg
                              else 1e-8)
        if step is None:
            status = STATUS_NUMERIC
            break
        delta_w_last = delta_w_reg

        dw = step[:n]
        dlam = step[n:] if m_eq else np.zeros(0)
        # flat/degenerate directions can blow up; cap and let the damping
        # adaptation below stiffen the model instead
        dw_max = np.abs(dw).max() if n else 0.0
        if dw_max > opt.step_cap:
            shrink = opt.step_cap / dw_max
            dw = dw * shrink
            dlam = dlam * shrink
        ds = -(h + slack) - (Jh @ dw) if m_in else np.zeros(0)
        dnu = (mu / slack - nu + sigma_s * (h + slack)
               + sigma_s * (Jh @ dw)) if m_in else np.zeros(0)
        dzl = np.where(fin_l, mu / np.maximum(w - ev.lb, 1e-16) - zl
                       - sigma_l * dw, 0.0)
        dzu = np.where(fin_u, mu / np.maximum(ev.ub - w, 1e-16) - zu
                       + sigma_u * dw, 0.0)

        # penalty weight must dominate the updated multipliers
        mult_inf = 0.0
        if m_eq:
            mult_inf = max(mult_inf, np.abs(lam + dlam).max())
        if m_in:
            mult_inf = max(mult_inf, np.abs(nu + dnu).max())
        rho = max(rho, 1.5 * mult_inf + 0.1)

        tau = max(opt.tau_min, 1.0 - mu)
        alpha_p = 1.0
        if m_in:
            alpha_p = min(alpha_p, _fraction_to_boundary(slack, ds, tau))
        if fin_l.any():
            alpha_p = min(alpha_p, _fraction_to_boundary(
                (w - ev.lb)[fin_l], dw[fin_l], tau))
        if fin_u.any():
            alpha_p = min(alpha_p, _fraction_to_boundary(
                (ev.ub - w)[fin_u], -dw[fin_u], tau))
        alpha_d = 1.0
        if m_in:
            alpha_d = min(alpha_d, _fraction_to_boundary(nu, dnu, tau))
        if fin_l.any():
            alpha_d = min(alpha_d, _fraction_to_boundary(zl[fin_l],
                                                         dzl[fin_l], tau))
        if fin_u.any():
            alpha_d = min(alpha_d, _fraction_to_boundary(zu[fin_u],
                                                         dzu[fin_u], tau))

        # Armijo backtracking on the exact-penalty merit function
        phi0 = merit(w, slack)
        viol0 = 0.0
        if m_eq:
            viol0 += np.abs(g).sum()
        if m_in:
            viol0 += np.abs(h + slack).sum()
        dphi = grad @ dw
        if m_in:
            dphi -= mu * (ds / slack).sum()
        if fin_l.any():
            dphi -= mu * (dw[fin_l] / (w - ev.lb)[fin_l]).sum()
        if fin_u.any():
            dphi += mu * (dw[fin_u] / (ev.ub - w)[fin_u]).sum()
        dphi -= rho * viol0

        alpha = alpha_p
        accepted = False
        while alpha >= opt.alpha_min:
            w_try = w + alpha * dw
            s_try = slack + alpha * ds if m_in else slack
            phi_try = merit(w_try, s_try)
            if np.isfinite(phi_try) and (
                    phi_try <= phi0 + opt.armijo_eta * alpha * min(dphi, 0.0)
                    or phi_try <= phi0 - 1e-14 * max(1.0, abs(phi0))):
                accepted = True
                break
            alpha *= 0.5

        if not accepted:
            fail_streak += 1
            if fail_streak >= 2:
                # feasibility restoration: Gauss-Newton on the violation
                w, slack, ok = _restore(ev, w, slack, fin_l, fin_u, opt)
                fail_streak = 0
                if not ok:
                    status = STATUS_INFEASIBLE
                    break
                if m_in:
                    h = ev.h(w)
                    slack = np.maximum(np.maximum(-h, 0.5 * slack), 1e-8)
                    nu = np.minimum(np.maximum(mu / slack, 1e-8), 1e8)
                continue
            # stiffen the curvature model and retry
            damp = max(10.0 * damp, 1e-6)
            mu = min(max(mu * 10.0, 1e-4), opt.mu_init)
            continue
        fail_streak = 0
        if alpha < 1e-3:
            damp = max(10.0 * damp, 1e-6)
        elif alpha >= 0.5 and damp > 0.0:
            damp = 0.0 if damp < 1e-8 else damp * 0.2

        if opt.record_merit:
            phi_after = merit(w + alpha * dw,
                              slack + alpha * ds if m_in else slack)
            merit_history.append((mu, rho, phi0, phi_after))

        w_old = w
        w = w + alpha * dw
        if m_in:
            slack = slack + alpha * ds
        lam = lam + alpha_d * dlam
        if m_in:
            nu = np.maximum(nu + alpha_d * dnu, 1e-12)
        zl = np.where(fin_l, np.maximum(zl + alpha_d * dzl, 1e-12), 0.0)
        zu = np.where(fin_u, np.maximum(zu + alpha_d * dzu, 1e-12), 0.0)

        if not use_gn:
            # damped BFGS pair: gradient change at the *new* multipliers
            gl_old = grad.copy()
            gl_new = ev.grad(w)
            if m_eq:
                gl_old += Jg.T @ lam
                gl_new += ev.jac_g(w).T @ lam
            if m_in:
                gl_old += Jh.T @ nu
                gl_new += ev.jac_h(w).T @ nu
            s_step = w - w_old
            y = gl_new - gl_old
            if np.isfinite(y).all() and np.linalg.norm(s_step) > 1e-14:
                Bs = bfgs_B @ s_step
                sBs = s_step @ Bs
                sy = s_step @ y
                if sBs > 1e-16:
                    theta = 1.0 if sy >= 0.2 * sBs else \
                        0.8 * sBs / (sBs - sy)
                    r_vec = theta * y + (1.0 - theta) * Bs
                    sr = s_step @ r_vec
                    if sr > 1e-16:
                        bfgs_B = (bfgs_B
                                  + np.outer(r_vec, r_vec) / sr
                                  - np.outer(Bs, Bs) / sBs)

        # dual safeguarding keeps bound multipliers near the central path
        if fin_l.any():
            gap = np.maximum(w - ev.lb, 1e-16)
            zl = np.where(fin_l, np.clip(zl, mu / (1e10 * gap),
                                         1e10 * mu / gap), 0.0)
        if fin_u.any():
            gap = np.maximum(ev.ub - w, 1e-16)
            zu = np.where(fin_u, np.clip(zu, mu / (1e10 * gap),
                                         1e10 * mu / gap), 0.0)

        if log is not None:
            log(f"iter {it:4d}  f={ev.f(w):.6e}  mu={mu:.1e}  "
                f"alpha={alpha:.2e}  alpha_d={alpha_d:.2e}  "
                f"err0={err_0:.2e}  reg={delta_w_last:g}")

    else:
        it = opt.max_iter

    if status == STATUS_MAX_ITER and \
            kkt_error(w, slack, lam, nu, zl, zu, 0.0) <= opt.tol:
        status = STATUS_OPTIMAL

    x = ev.s * w
    kkt = kkt_residual(problem, x, {"eq": lam, "ineq": nu, "lb": zl,
                                    "ub": zu})
    return SolveResult(
        x=x,
        objective=ev.f(w),
        status=status,
        kkt=kkt,
        iterations=it,
        wall_time=time.perf_counter() - t_start,
        mu=mu,
        multipliers={"eq": lam, "ineq": nu, "lb": zl, "ub": zu},
        merit_history=merit_history,
    )


def _restore(ev: _Evaluator, w, slack, fin_l, fin_u, opt: SolverOptions):
    """Feasibility restoration: damped Gauss-Newton decrease of the
    constraint violation, respecting bounds. Returns (w, slack, ok)."""
    m_in = ev.m_in

    def viol_vec(w_, s_):
        parts = []
        if ev.m_eq:
            parts.append(ev.g(w_))
        if m_in:
            parts.append(ev.h(w_) + s_)
        return np.concatenate(parts) if parts else np.zeros(0)

    r = viol_vec(w, slack)
    if r.size == 0:
        return w, slack, True
    start_norm = np.abs(r).max()
    for _ in range(30):
        r = viol_vec(w, slack)
        if np.abs(r).max() <= max(opt.tol, 1e-10):
            return w, slack, True
        blocks = []
        if ev.m_eq:
            blocks.append([ev.jac_g(w), None])
        if m_in:
            blocks.append([ev.jac_h(w), sp.eye(m_in)])
        if m_in:
            J = sp.bmat([[b[0], b[1] if b[1] is not None
                          else sp.csr_matrix((ev.m_eq, m_in))]
                         for b in blocks], format="csr")
        else:
            J = blocks[0][0]
        JtJ = (J.T @ J).tocsc() + 1e-8 * sp.eye(J.shape[1], format="csc")
        d = spla.splu(JtJ, permc_spec="COLAMD").solve(-(J.T @ r))
        dw = d[:ev.n]
        ds = d[ev.n:] if m_in else np.zeros(0)
        # stay interior
        alpha = 1.0
        if m_in:
            alpha = min(alpha, _fraction_to_boundary(slack, ds, 0.99))
        if fin_l.any():
            alpha = min(alpha, _fraction_to_boundary(
                (w - ev.lb)[fin_l], dw[fin_l], 0.99))
        if fin_u.any():
            alpha = min(alpha, _fraction_to_boundary(
                (ev.ub - w)[fin_u], -dw[fin_u], 0.99))
        base = (r @ r)
        improved = False
        while alpha > 1e-12:
            w_try = w + alpha * dw
            s_try = slack + alpha * ds if m_in else slack
            r_try = viol_vec(w_try, s_try)
            if np.isfinite(r_try).all() and r_try @ r_try < base * (1 - 1e-8):
                w, slack = w_try, s_try
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    final_norm = np.abs(viol_vec(w, slack)).max()
    return w, slack, final_norm <= max(opt.tol * 10, 0.5 * start_norm)
