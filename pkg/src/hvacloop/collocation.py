"""Direct collocation of ODE dynamics on a uniform control grid.

State trajectories are piecewise polynomials of degree d per interval,
pinned at Radau points (right endpoint included, so the scheme is stiffly
accurate of order 2d-1). Transcription turns dx/dt = f(x, u, p, p_tv)
into algebraic equality residuals over a flat decision vector:

    grid states x_0..x_N | collocation states (N x d x nx) |
    inputs (N x nu, piecewise constant) | parameters p

with the exogenous p_tv entering as fixed per-interval data appended
behind the decision variables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import roots_jacobi

from . import autodiff as ad
from .autodiff import Expr, FunctionGraph
from .errors import (DimensionError, ParameterError, RangeError,
                     TranscriptionError)


@dataclass(frozen=True)
class CollocationScheme:
    """Radau nodes plus the Lagrange machinery used at transcription time.

    ``diff_matrix[j, k]`` is the derivative of basis polynomial j (over
    support {0, c_1..c_d}) at node c_k; ``continuity[j]`` evaluates basis
    j at 1; ``quad_weights`` integrate over [0, 1] exactly for
    polynomials of degree <= 2d-2.
    """

    degree: int
    nodes: np.ndarray        # (d,), in (0, 1], nodes[-1] == 1
    diff_matrix: np.ndarray  # (d+1, d)
    quad_weights: np.ndarray  # (d,)
    continuity: np.ndarray   # (d+1,)

    def basis_at(self, tau: float) -> np.ndarray:
        """All d+1 Lagrange basis values at local time tau in [0, 1]."""
        support = np.concatenate(([0.0], self.nodes))
        out = np.empty(support.size)
        for j, tj in enumerate(support):
            num, den = 1.0, 1.0
            for m, tm in enumerate(support):
                if m != j:
                    num *= tau - tm
                    den *= tj - tm
            out[j] = num / den
        return out


def radau_scheme(degree: int) -> CollocationScheme:
    """Build the degree-d Radau collocation scheme from the roots of the
    relevant Jacobi polynomial. d=1 reduces to implicit Euler."""
    if not 1 <= degree <= 9:
        raise ParameterError(f"degree {degree} outside [1, 9]")
    if degree == 1:
        nodes = np.array([1.0])
    else:
        interior, _ = roots_jacobi(degree - 1, 1, 0)
        nodes = np.concatenate(((interior + 1.0) / 2.0, [1.0]))

    support = np.concatenate(([0.0], nodes))
    d = degree
    diff = np.empty((d + 1, d))
    cont = np.empty(d + 1)
    quad = np.empty(d)

    # Lagrange basis over the d+1 support points, via polynomial coeffs
    for j in range(d + 1):
        coeffs = np.array([1.0])
        for m in range(d + 1):
            if m != j:
                coeffs = P.polymul(coeffs, [-support[m], 1.0])
                coeffs = coeffs / (support[j] - support[m])
        dcoeffs = P.polyder(coeffs)
        for k in range(d):
            diff[j, k] = P.polyval(nodes[k], dcoeffs)
        cont[j] = P.polyval(1.0, coeffs)

    # quadrature weights over the collocation nodes only
    for k in range(d):
        coeffs = np.array([1.0])
        for m in range(d):
            if m != k:
                coeffs = P.polymul(coeffs, [-nodes[m], 1.0])
                coeffs = coeffs / (nodes[k] - nodes[m])
        quad[k] = P.polyval(1.0, P.polyint(coeffs))

    return CollocationScheme(degree=d, nodes=nodes, diff_matrix=diff,
                             quad_weights=quad, continuity=cont)


def collocation_equations(scheme: CollocationScheme, x_start, x_nodes,
                          rates, dt: float):
    """Equality residuals tying a degree-d state polynomial to the given
    rates, plus the end-of-interval state expression.

    x_start: nx values at the interval start; x_nodes: [d][nx] values at
    the collocation nodes; rates: [d][nx] right-hand sides evaluated at
    the nodes. Entries may be numbers or expressions.
    """
    d = scheme.degree
    nx = len(x_start)
    if len(x_nodes) != d or len(rates) != d:
        raise TranscriptionError("expected one state/rate set per node")
    support = [x_start] + list(x_nodes)
    residuals = []
    for k in range(d):
        for s in range(nx):
            acc = scheme.diff_matrix[0, k] * support[0][s]
            for j in range(1, d + 1):
                acc = acc + scheme.diff_matrix[j, k] * support[j][s]
            residuals.append(acc - dt * rates[k][s])
    end_state = []
    for s in range(nx):
        acc = scheme.continuity[0] * support[0][s]
        for j in range(1, d + 1):
            acc = acc + scheme.continuity[j] * support[j][s]
        end_state.append(acc)
    return residuals, end_state


@dataclass
class TranscribedDynamics:
    """Collocated dynamics: residual graph plus the variable layout."""

    scheme: CollocationScheme
    intervals: int
    dt: float
    nx: int
    nu: int
    npar: int
    nptv: int
    residuals: FunctionGraph
    layout: dict  # name -> (offset, shape)
    n_dec: int
    n_data: int

    def index(self, name: str, *idx) -> int:
        """Flat index of one entry of a laid-out block."""
        offset, shape = self.layout[name]
        return offset + int(np.ravel_multi_index(idx, shape)) if idx \
            else offset

    def layout_manifest(self) -> dict:
        """JSON-ready description of the decision/data vector layout."""
        return {name: {"offset": off, "shape": list(shape)}
                for name, (off, shape) in self.layout.items()}

    def interpolate(self, solution, t: float) -> np.ndarray:
        """State at continuous time t from a solved decision vector, via
        the per-interval Lagrange polynomial."""
        solution = np.asarray(solution, dtype=np.float64)
        horizon = self.intervals * self.dt
        if not 0.0 <= t <= horizon + 1e-9:
            raise RangeError(f"t={t} outside [0, {horizon}]")
        xg_off, xg_shape = self.layout["x_grid"]

        def grid_state(i):
            base = xg_off + i * self.nx
            return solution[base:base + self.nx]

        i = min(int(t / self.dt), self.intervals - 1)
        tau = (t - i * self.dt) / self.dt
        if tau > 1.0:
            tau = 1.0
        if abs(tau) < 1e-12:
            return grid_state(i).copy()
        if abs(tau - 1.0) < 1e-12:
            return grid_state(i + 1).copy()
        basis = self.scheme.basis_at(tau)
        xc_off, _ = self.layout["x_coll"]
        out = basis[0] * grid_state(i)
        for j in range(self.scheme.degree):
            base = xc_off + (i * self.scheme.degree + j) * self.nx
            out = out + basis[j + 1] * solution[base:base + self.nx]
        return out


def transcribe(rhs: FunctionGraph, scheme: CollocationScheme,
               intervals: int, dt: float, nx: int, nu: int = 0,
               npar: int = 0, nptv: int = 0) -> TranscribedDynamics:
    """Transcribe dx/dt = f(x, u, p, p_tv) into equality residuals.

    ``rhs`` must take its variables in the order [x, u, p, p_tv] and
    produce nx outputs. Inputs are held piecewise constant per interval;
    p_tv values become per-interval data slots behind the decision
    variables.
    """
    if rhs.n_vars != nx + nu + npar + nptv:
        raise TranscriptionError(
            f"rhs has {rhs.n_vars} variables, expected "
            f"{nx}+{nu}+{npar}+{nptv}")
    if rhs.n_outputs != nx:
        raise TranscriptionError(
            f"rhs has {rhs.n_outputs} outputs, expected {nx}")
    if intervals < 1:
        raise TranscriptionError("need at least one interval")

    d = scheme.degree
    N = intervals
    layout = {}
    off = 0
    for name, shape in (("x_grid", (N + 1, nx)), ("x_coll", (N, d, nx)),
                        ("u", (N, nu)), ("p", (npar,))):
        layout[name] = (off, shape)
        off += int(np.prod(shape))
    n_dec = off
    layout["ptv"] = (off, (N, nptv))
    n_data = N * nptv
    n_all = n_dec + n_data

    v = ad.variables(n_all)

    def block(name, *idx):
        o, shape = layout[name]
        return v[o + int(np.ravel_multi_index(idx, shape))]

    residuals = []
    for i in range(N):
        x_start = [block("x_grid", i, s) for s in range(nx)]
        x_nodes = [[block("x_coll", i, k, s) for s in range(nx)]
                   for k in range(d)]
        u_i = [block("u", i, a) for a in range(nu)]
        p = [block("p", a) for a in range(npar)]
        ptv_i = [block("ptv", i, a) for a in range(nptv)]
        rates = [rhs.compose(x_nodes[k] + u_i + p + ptv_i)
                 for k in range(d)]
        res, end_state = collocation_equations(scheme, x_start, x_nodes,
                                               rates, dt)
        residuals.extend(res)
        for s in range(nx):
            residuals.append(block("x_grid", i + 1, s) - end_state[s])

    graph = FunctionGraph(residuals, n_all)
    return TranscribedDynamics(scheme=scheme, intervals=N, dt=dt, nx=nx,
                               nu=nu, npar=npar, nptv=nptv,
                               residuals=graph, layout=layout,
                               n_dec=n_dec, n_data=n_data)
