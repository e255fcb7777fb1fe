"""Shared helpers for the test suite."""

import numpy as np


def solve_transcription(td, x0, data=None, newton_iters=60, tol=1e-13):
    """Solve collocated dynamics for the trajectory given a fixed initial
    state, by Newton iteration on the (square) residual system. The
    residual graph is authoritative; this helper is deliberately dumb."""
    n_all = td.n_dec + td.n_data
    z = np.zeros(n_all)
    xg_off, _ = td.layout["x_grid"]
    z[xg_off:xg_off + td.nx] = x0
    # warm start every state with x0
    for i in range(1, td.intervals + 1):
        z[xg_off + i * td.nx: xg_off + (i + 1) * td.nx] = x0
    xc_off, xc_shape = td.layout["x_coll"]
    for q in range(td.intervals * td.scheme.degree):
        z[xc_off + q * td.nx: xc_off + (q + 1) * td.nx] = x0
    if data is not None:
        z[td.n_dec:] = data

    fixed = set(range(xg_off, xg_off + td.nx))
    fixed |= set(range(td.n_dec, n_all))
    po, ps = td.layout["p"]
    fixed |= set(range(po, po + int(np.prod(ps))))
    uo, us = td.layout["u"]
    fixed |= set(range(uo, uo + int(np.prod(us))))
    unknown = np.array(sorted(set(range(n_all)) - fixed), dtype=int)

    for _ in range(newton_iters):
        res = td.residuals.eval(z)
        if np.abs(res).max() < tol:
            break
        J = td.residuals.jacobian(z).toarray()[:, unknown]
        delta = np.linalg.solve(J, -res)
        z[unknown] += delta
    return z


def rc_matrices(n, seed=0, tau_scale=1000.0):
    """Random stable RC-style system dT/dt = A T + b with A diagonally
    dominant (resistive coupling) and time constants around tau_scale."""
    rng = np.random.default_rng(seed)
    G = rng.uniform(0.2, 1.0, (n, n))
    G = (G + G.T) / 2
    np.fill_diagonal(G, 0.0)
    g_amb = rng.uniform(0.5, 1.5, n)
    C = rng.uniform(0.5, 2.0, n) * tau_scale
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                A[i, j] = G[i, j] / C[i]
        A[i, i] = -(G[i].sum() + g_amb[i]) / C[i]
    b = g_amb / C * 30.0  # ambient at 30 degC
    return A, b
