"""Sliding-window estimator tests.

Oracles: windows generated by the model itself (exact-fit certificates),
an unconstrained re-solve for the constraint-clipping check, and paired
runs for the drift-penalty monotonicity property.
"""

import numpy as np
import pytest

from hvacloop.errors import StateError
from hvacloop.hvac_nn import NeuralNetParams
from hvacloop.mhe import (MheConfig, MheWindow, MovingHorizonEstimator,
                          build_mhe_nlp)
from hvacloop.model import BuildingModel, star_ring_adjacency
from hvacloop.nlp import NlpProblem, SolverOptions, solve
from hvacloop.zone_rc import ZoneRcParams

M = 8  # shorter window keeps module tests quick


def two_zone_model():
    adj = star_ring_adjacency(2)
    return BuildingModel(n_zones=2, adjacency=adj,
                         mass_flow_zone=np.array([0.5, 0.55]),
                         mass_flow_coil=np.array([0.5, 0.55]))


def true_params(model, seed=0):
    rng = np.random.default_rng(seed)
    res = [[0.0] * 3 for _ in range(3)]
    vals = {(0, 1): 0.07, (0, 2): 0.02, (1, 2): 0.025}
    for (i, j) in model.edges:
        res[i][j] = res[j][i] = vals[(i, j)]
    rc = ZoneRcParams([4e6, 5e6], res, [3.0, 2.5], model.adjacency)
    nets = []
    for k, uid in enumerate(model.unit_ids()):
        flat = rng.uniform(-0.3, 0.3, 16)
        flat[15] = 15.0 if k == 0 else 20.0
        nets.append(NeuralNetParams.from_flat(list(flat), uid))
    return model.pack_params(rc, nets)


def make_window(model, p, seed=0, noise=0.0, steps=M):
    """Simulate the model open loop and wrap the result as a window."""
    rng = np.random.default_rng(seed)
    n = model.n_zones
    x0 = np.array([23.0, 24.0, 15.0, 19.5, 20.5])
    k = np.arange(steps + 1)
    u = np.column_stack([15 + 1.5 * np.sin(k * 0.4),
                         22 + 1.5 * np.sin(k * 0.3 + 1),
                         23 + 1.2 * np.sin(k * 0.5 + 2)])
    ptv = np.column_stack([28 + 2 * np.sin(k * 0.2),
                           np.full(steps + 1, 300.0),
                           np.full(steps + 1, 400.0),
                           np.full(steps + 1, 500.0)])
    states = model.simulate_open_loop(p, x0, u[:steps], ptv[:steps],
                                      substeps=30)
    y = states + rng.normal(0.0, noise, states.shape)
    return MheWindow(y=y, u=u, ptv=ptv,
                     band_lo=np.full((steps + 1, n), 5.0),
                     band_hi=np.full((steps + 1, n), 45.0),
                     prior_traj=y.copy(), prior_params=p.copy()), states


class TestExactFit:
    def test_noise_free_window_zero_objective(self):
        model = two_zone_model()
        p = true_params(model)
        window, states = make_window(model, p)
        cfg = MheConfig(model=model, window=M)
        est = MovingHorizonEstimator(cfg)
        traj, params, res = est.step(window)
        assert res.optimal
        assert res.objective < 1e-8
        np.testing.assert_allclose(traj, states, atol=1e-4)

    def test_perturbed_prior_without_drift_penalty(self):
        # +10% on the prior parameters with p_p = 0: the data still fully
        # explains the trajectory, so the optimum stays at zero cost.
        # (p_p = 0 makes the minimizer set a parameter manifold, so only
        # the objective value is asserted, not full KKT convergence.)
        model = two_zone_model()
        p = true_params(model)
        window, _ = make_window(model, p)
        window.prior_params = p * 1.1
        cfg = MheConfig(model=model, window=M, p_p=0.0)
        est = MovingHorizonEstimator(cfg)
        problem = est.build_nlp(window)
        from hvacloop.nlp import SolverOptions, solve as nlp_solve
        res = nlp_solve(problem, SolverOptions(hessian="gauss_newton",
                                               mu_init=1e-2, max_iter=200))
        assert res.objective < 1e-5
        assert res.kkt["eq"] < 1e-6 and res.kkt["ineq"] < 1e-6

    def test_incomplete_window_rejected(self):
        model = two_zone_model()
        p = true_params(model)
        window, _ = make_window(model, p, steps=M - 1)
        cfg = MheConfig(model=model, window=M)
        with pytest.raises(StateError):
            build_mhe_nlp(window, cfg)


class TestConstraintClipping:
    def test_supply_above_mixed_air_clipped(self):
        # corrupt one cooling-supply measurement to sit above mixed air:
        # the unconstrained estimate follows the data, the constrained one
        # is clipped onto the feasible set with the residual absorbed
        model = two_zone_model()
        p = true_params(model)
        window, states = make_window(model, p)
        t_bad = M // 2
        window.y[t_bad, model.ix_supp_c] = 40.0  # far above any t_mix
        cfg = MheConfig(model=model, window=M,
                        supply_c_bounds=(5.0, 45.0))
        est = MovingHorizonEstimator(cfg)
        problem = est.build_nlp(window)

        unconstrained = NlpProblem(
            objective=problem.objective, equality=problem.equality,
            inequality=None, lb=problem.lb, ub=problem.ub,
            x0=problem.x0, scaling=problem.scaling, data=problem.data,
            residuals=problem.residuals,
            residual_weights=problem.residual_weights)
        res_u = solve(unconstrained, SolverOptions(hessian="gauss_newton"))
        res_c = solve(problem, SolverOptions(hessian="gauss_newton"))
        assert res_c.optimal and res_u.optimal

        def t_supp_and_mix(sol):
            traj = sol[est.space.slice("x")].reshape(M + 1, model.nx)
            t_supp = traj[t_bad, model.ix_supp_c]
            zones = traj[t_bad, :2]
            t_mix = model.r_mix * window.ptv[t_bad, 0] \
                + (1 - model.r_mix) * zones.mean()
            return t_supp, t_mix

        supp_u, mix_u = t_supp_and_mix(res_u.x)
        supp_c, mix_c = t_supp_and_mix(res_c.x)
        assert supp_u > mix_u  # the data pulled it infeasible
        assert supp_c <= mix_c + 1e-6  # clipped onto the feasible set
        assert res_c.objective >= res_u.objective - 1e-12


class TestRecursion:
    def test_parameters_fixed_point_on_noise_free_data(self):
        model = two_zone_model()
        p = true_params(model)
        cfg = MheConfig(model=model, window=M)
        est = MovingHorizonEstimator(cfg)
        window, states = make_window(model, p, steps=M + 4)
        p_hat = p.copy()
        prior = None
        estimates = []
        for k in range(4):
            win = MheWindow(
                y=window.y[k:k + M + 1], u=window.u[k:k + M + 1],
                ptv=window.ptv[k:k + M + 1],
                band_lo=window.band_lo[:M + 1],
                band_hi=window.band_hi[:M + 1],
                prior_traj=(window.y[k:k + M + 1] if prior is None
                            else prior),
                prior_params=p_hat)
            traj, p_hat, res = est.step(win)
            assert res.optimal
            prior = np.vstack((traj[1:], traj[-1]))
            estimates.append(p_hat.copy())
        for est_k in estimates:
            np.testing.assert_allclose(est_k, p, atol=1e-5)

    def test_objective_not_worse_than_feasible_prior_point(self):
        # warm start in feasible form: the prior trajectory is the model's
        # own rollout under the prior parameters, so its objective (pure
        # measurement mismatch) is attainable and the solution must not
        # be worse
        model = two_zone_model()
        p = true_params(model)
        window, _ = make_window(model, p, noise=0.2, seed=3)
        p_prior = p * 1.02
        rollout = model.simulate_open_loop(
            p_prior, window.y[0], window.u[:M], window.ptv[:M],
            substeps=30)
        window.prior_traj = rollout
        window.prior_params = p_prior
        cfg = MheConfig(model=model, window=M)
        est = MovingHorizonEstimator(cfg)
        problem = est.build_nlp(window)
        start = np.concatenate((problem.x0, problem.data))
        obj_start = problem.objective.eval(start)[0]
        _, _, res = est.step(window)
        assert res.optimal
        assert obj_start > 0
        assert res.objective <= obj_start * (1 + 1e-9) + 1e-9

    def test_feasible_set_invariant(self):
        # returned samples satisfy the configured bounds and orderings
        model = two_zone_model()
        p = true_params(model)
        window, _ = make_window(model, p, noise=0.3, seed=5)
        cfg = MheConfig(model=model, window=M)
        est = MovingHorizonEstimator(cfg)
        traj, _, res = est.step(window)
        assert res.optimal
        n = model.n_zones
        tol = 1e-6
        for t in range(M + 1):
            assert cfg.supply_c_bounds[0] - tol <= traj[t, n] \
                <= cfg.supply_c_bounds[1] + tol
            t_mix = model.r_mix * window.ptv[t, 0] \
                + (1 - model.r_mix) * traj[t, :n].mean()
            assert traj[t, n] <= t_mix + tol
            for z in range(n):
                assert traj[t, n] <= traj[t, n + 1 + z] + tol
                assert window.band_lo[t, z] - cfg.comfort_margin - tol \
                    <= traj[t, z] \
                    <= window.band_hi[t, z] + cfg.comfort_margin + tol

    def test_drift_penalty_scaling_shrinks_parameter_motion(self):
        model = two_zone_model()
        p = true_params(model)
        moves = {}
        for p_p in (50.0, 5000.0):
            window, _ = make_window(model, p, noise=0.25, seed=9)
            window.prior_params = p * 1.08
            cfg = MheConfig(model=model, window=M, p_p=p_p)
            est = MovingHorizonEstimator(cfg)
            _, params, res = est.step(window)
            assert res.optimal
            moves[p_p] = np.linalg.norm(params - window.prior_params)
        assert moves[5000.0] < moves[50.0]

    def test_degraded_mode_holds_previous_estimates(self):
        model = two_zone_model()
        p = true_params(model)
        window, _ = make_window(model, p, noise=0.2, seed=11)
        cfg = MheConfig(model=model, window=M, max_iter=1)  # forced failure
        est = MovingHorizonEstimator(cfg)
        traj, params, res = est.step(window)
        assert not res.optimal
        assert est.degraded_steps == 1
        np.testing.assert_array_equal(params, window.prior_params)
        np.testing.assert_array_equal(traj[:-1], window.prior_traj[:-1])
        np.testing.assert_array_equal(traj[-1], window.y[-1])


class TestExport:
    def test_history_csv(self, tmp_path):
        model = two_zone_model()
        p = true_params(model)
        window, _ = make_window(model, p)
        cfg = MheConfig(model=model, window=M)
        est = MovingHorizonEstimator(cfg)
        est.step(window)
        out = tmp_path / "history.csv"
        est.export_history_csv(out)
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("step,x_0")
        assert lines[1].endswith("optimal")
