import math

import numpy as np
import pytest

from conftest import impulsive_manifold_closed_form
from kurzmani.funcspace import PiecewisePath
from kurzmani.lp_manifold import (LPContext, NonlinearitySpec, SolutionPath,
                                  bisect_manifold_oracle, classify_initial,
                                  contraction_bound, contraction_estimate,
                                  fixed_point_residual, flow_residual,
                                  invariance_check, lp_operator_apply,
                                  manifold_graph, solve_lp, splitting_bases)


def test_registry_nonlinearities_vanish_at_zero():
    specs = [
        NonlinearitySpec("ide_pointwise", "quadratic",
                         {"mats": [np.eye(2), np.zeros((2, 2))]}, rho=1.0),
        NonlinearitySpec("ide_pointwise", "cubic", {"coef": np.eye(2)}, rho=1.0),
        NonlinearitySpec("ide_pointwise", "saturated_tanh",
                         {"gain": 0.3 * np.eye(2)}, rho=1.0),
    ]
    for spec in specs:
        assert np.allclose(spec.value(0.0, np.zeros(2)), 0.0)


def test_cutoff_truncates_smoothly():
    nl = NonlinearitySpec("ide_pointwise", "quadratic",
                          {"mats": [np.eye(1)]}, rho=0.5)
    inside = nl.value(0.0, np.array([0.4]))
    assert inside[0] == pytest.approx(0.16)
    assert np.allclose(nl.value(0.0, np.array([1.5])), 0.0)


def test_operator_on_zero_path_with_zero_anchor(ctx_planar):
    zeta = np.zeros(2)
    mesh = ctx_planar.mesh(0.0)
    zero = SolutionPath(mesh, np.zeros((len(mesh), 2)))
    out = lp_operator_apply(zero, zeta, 0.0, ctx_planar)
    assert out.sup_norm == 0.0


def test_operator_linear_case_returns_decaying_mode(ctx_planar):
    lin = NonlinearitySpec("ide_pointwise", "zero", {"n": 2}, rho=0.5)
    ctx = LPContext(ctx_planar.fund, ctx_planar.dich, lin, T=ctx_planar.T,
                    tol=1e-10, regularity=ctx_planar.regularity)
    zeta = np.array([0.2, 0.0])
    z0 = ctx.initial_path(zeta, 0.0)
    out = lp_operator_apply(z0, zeta, 0.0, ctx)
    mesh = ctx.mesh(0.0)
    expected = np.stack([0.2 * np.exp(-mesh), np.zeros(len(mesh))], axis=1)
    assert float(np.max(np.abs(out.values - expected))) <= 1e-9


def test_first_iterate_matches_tail_integral(ctx_planar):
    zeta1 = 0.15
    zeta = np.array([zeta1, 0.0])
    z0 = ctx_planar.initial_path(zeta, 0.0)
    z1 = lp_operator_apply(z0, zeta, 0.0, ctx_planar)
    T = ctx_planar.T
    expected = -zeta1 ** 2 / 3.0 * (1.0 - math.exp(-3.0 * T))
    assert z1.values[0][1] == pytest.approx(expected, abs=5e-3 * zeta1 ** 2)


def test_operator_rejects_zeta_off_the_stable_range(ctx_planar):
    mesh = ctx_planar.mesh(0.0)
    zero = SolutionPath(mesh, np.zeros((len(mesh), 2)))
    with pytest.raises(ValueError):
        lp_operator_apply(zero, np.array([0.0, 0.1]), 0.0, ctx_planar)


def test_operator_rejects_foreign_mesh(ctx_planar):
    bad = SolutionPath(np.linspace(0.0, 1.0, 5), np.zeros((5, 2)))
    with pytest.raises(ValueError):
        lp_operator_apply(bad, np.array([0.1, 0.0]), 0.0, ctx_planar)


def test_solution_of_zero_anchor_is_zero(ctx_planar):
    sol = solve_lp(np.zeros(2), 0.0, ctx_planar)
    assert sol.phi.sup_norm == 0.0
    assert np.allclose(sol.m, 0.0)


def test_linear_manifold_is_the_stable_subspace(ctx_planar):
    lin = NonlinearitySpec("ide_pointwise", "zero", {"n": 2}, rho=0.5)
    ctx = LPContext(ctx_planar.fund, ctx_planar.dich, lin, T=ctx_planar.T,
                    tol=1e-10, regularity=ctx_planar.regularity)
    sol = solve_lp(np.array([0.2, 0.0]), 0.0, ctx)
    assert np.allclose(sol.m, 0.0, atol=1e-12)


@pytest.mark.parametrize("zeta1", [-0.2, -0.1, 0.1, 0.2])
def test_planar_graph_value_matches_closed_form(ctx_planar, zeta1):
    sol = solve_lp(np.array([zeta1, 0.0]), 0.0, ctx_planar)
    assert sol.m[0] == pytest.approx(-zeta1 ** 2 / 3.0, abs=5e-3 * zeta1 ** 2)
    assert sol.converged


def test_fixed_point_and_flow_residuals(ctx_planar):
    sol = solve_lp(np.array([0.2, 0.0]), 0.0, ctx_planar)
    assert fixed_point_residual(sol, ctx_planar) <= 2.0 * ctx_planar.tol
    assert flow_residual(sol.phi, 0.0, ctx_planar) <= 1e-5
    assert np.allclose(ctx_planar.P(ctx_planar.span(0.0)[0]) @ sol.phi.values[0],
                       sol.zeta, atol=1e-10)


def test_contraction_bound_hand_arithmetic():
    # printed formula at (C_a, V, K, V_h) = (1, 0.5, 1, 0.01):
    # 2 * 0.01 * (1 + 1 * 3) * 1 * e^{1.5} * 0.25
    expected = 2.0 * 0.01 * 4.0 * math.exp(1.5) * 0.25
    assert contraction_bound(0.01, 1.0, 1.0, 0.5) == pytest.approx(
        expected, rel=1e-15)
    assert contraction_bound(0.0, 1.0, 1.0, 0.5) == 0.0
    assert contraction_bound(0.01, 1.0, 1.0, 0.0) == 0.0


def test_contraction_estimate_reports_conservative_gate(ctx_planar):
    est = contraction_estimate(ctx_planar, s=0.0)
    assert est.L_theory >= 1.0          # the exponential factor is astronomical
    assert est.L_theory_single_window == pytest.approx(est.L_theory / 2.0)
    assert est.h_operator_bound >= 0.0
    sol = solve_lp(np.array([0.2, 0.0]), 0.0, ctx_planar)
    assert sol.L_empirical < 1.0


def test_manifold_graph_collects_lipschitz_data(ctx_planar):
    grid = [np.array([z]) for z in (-0.2, -0.1, 0.0, 0.1, 0.2)]
    graph = manifold_graph(0.0, grid, ctx_planar)
    assert len(graph.ok_samples) == 5
    values = {float(g.zeta_coords[0]): float(g.m_coords[0])
              for g in graph.ok_samples}
    for z, m in values.items():
        assert m == pytest.approx(-z * z / 3.0, abs=5e-3 * max(z * z, 1e-6))
    # max pairwise quotient of the parabola on this grid is (0.2+0.1)/3
    assert graph.lipschitz_estimate == pytest.approx(0.1, abs=5e-3)
    assert graph.lipschitz_estimate <= graph.K_fit / (1.0 - graph.L_empirical)
    assert graph.L_empirical < 1.0


def test_manifold_graph_parallel_matches_serial(ctx_planar):
    grid = [np.array([z]) for z in (-0.1, 0.1)]
    serial = manifold_graph(0.0, grid, ctx_planar, jobs=1)
    threaded = manifold_graph(0.0, grid, ctx_planar, jobs=2)
    for a, b in zip(serial.ok_samples, threaded.ok_samples):
        assert np.allclose(a.m_coords, b.m_coords, atol=1e-14)


def test_manifold_graph_rejects_grid_outside_cutoff(ctx_planar):
    with pytest.raises(ValueError):
        manifold_graph(0.0, [np.array([0.9])], ctx_planar)


def test_invariance_along_the_flow(ctx_planar):
    for t1 in (0.5, 1.0, 2.0):
        resid = invariance_check(0.0, np.array([0.1, 0.0]), t1, ctx_planar)
        assert resid <= 1e-4


def test_invariance_of_zero_solution(ctx_planar):
    assert invariance_check(0.0, np.zeros(2), 1.0, ctx_planar) <= 1e-12


def test_classification_of_zero_initial_state(ctx_planar):
    res = classify_initial(np.zeros(2), 0.0, ctx_planar, bound=1e3)
    assert res.status == "bounded_to_horizon"
    assert res.on_manifold_candidate


def test_classification_escape_time_linear_growth(ctx_planar):
    lin = NonlinearitySpec("ide_pointwise", "zero", {"n": 2}, rho=0.5)
    ctx = LPContext(ctx_planar.fund, ctx_planar.dich, lin, T=ctx_planar.T,
                    tol=1e-10, regularity=ctx_planar.regularity)
    res = classify_initial(np.array([0.0, 0.01]), 0.0, ctx, bound=1e3)
    assert res.status == "escapes"
    assert res.t_escape == pytest.approx(math.log(1e5), abs=1e-3)


def test_classification_off_manifold_offset_escapes(ctx_planar):
    z0 = np.array([0.1, -0.01 / 3.0 + 0.01])
    res = classify_initial(z0, 0.0, ctx_planar, bound=1e3)
    assert res.status == "escapes"
    assert res.t_escape < ctx_planar.T


def test_classification_requires_room_below_the_bound(ctx_planar):
    with pytest.raises(ValueError):
        classify_initial(np.array([10.0, 0.0]), 0.0, ctx_planar, bound=1.0)


def test_bisection_oracle_linear_system(ctx_planar):
    lin = NonlinearitySpec("ide_pointwise", "zero", {"n": 2}, rho=0.5)
    ctx = LPContext(ctx_planar.fund, ctx_planar.dich, lin, T=ctx_planar.T,
                    tol=1e-10, regularity=ctx_planar.regularity)
    eta = bisect_manifold_oracle(np.array([0.1, 0.0]), 0.0, ctx, bound=1e3)
    assert abs(eta) <= 1e-6


def test_bisection_oracle_planar_quadratic(ctx_planar):
    eta = bisect_manifold_oracle(np.array([0.15, 0.0]), 0.0, ctx_planar,
                                 bound=1e3, xtol=1e-7)
    assert eta == pytest.approx(-0.15 ** 2 / 3.0, abs=1e-4)


def test_bisection_oracle_agrees_on_impulsive_saddle(ctx_impulsive):
    for zeta1 in (0.1, 0.2):
        sol = solve_lp(np.array([zeta1, 0.0]), 0.0, ctx_impulsive)
        eta = bisect_manifold_oracle(np.array([zeta1, 0.0]), 0.0,
                                     ctx_impulsive, bound=1e3, xtol=1e-7)
        closed = impulsive_manifold_closed_form(zeta1)
        assert abs(sol.m[0] - eta) <= 1e-4
        assert sol.m[0] == pytest.approx(closed, abs=5e-3 * zeta1 ** 2)


def test_tail_bound_certificate(ctx_planar):
    sol_T = solve_lp(np.array([0.2, 0.0]), 0.0, ctx_planar)
    bound = ctx_planar.tail_bound(0.0)
    # doubling the horizon moves the value far less than the certificate
    from kurzmani.lp_manifold import LPContext
    from kurzmani.linsys import FundamentalOperator
    fund2 = FundamentalOperator(ctx_planar.fund.spec, (0.0, 80.0), base_step=0.1)
    ctx2 = LPContext(fund2, ctx_planar.dich, ctx_planar.nonlin, T=80.0,
                     tol=1e-10, regularity=ctx_planar.regularity)
    sol_2T = solve_lp(np.array([0.2, 0.0]), 0.0, ctx2)
    assert abs(sol_T.m[0] - sol_2T.m[0]) <= max(bound, 1e-6)


def test_scalar_mde_solve_and_residual(ctx_scalar_mde):
    sol = solve_lp(np.array([0.4]), 0.0, ctx_scalar_mde)
    assert sol.converged
    assert sol.L_empirical < 1.0
    assert flow_residual(sol.phi, 0.0, ctx_scalar_mde) <= 1e-9
    assert sol.m.shape == (0,)   # full contraction: no unstable coordinates


def test_splitting_bases_sign_canonical():
    P = np.diag([1.0, 0.0])
    Bs, Bu = splitting_bases(P)
    np.testing.assert_allclose(Bs, [[1.0], [0.0]])
    np.testing.assert_allclose(Bu, [[0.0], [1.0]])


def test_iteration_cap_raises_with_residual(ctx_scalar_mde):
    from kurzmani.lp_manifold import SolveError
    ctx = LPContext(ctx_scalar_mde.fund, ctx_scalar_mde.dich,
                    ctx_scalar_mde.nonlin, T=ctx_scalar_mde.T, tol=1e-12,
                    max_iter=2, regularity=ctx_scalar_mde.regularity)
    with pytest.raises(SolveError) as err:
        solve_lp(np.array([0.4]), 0.0, ctx)
    assert err.value.residual is not None


def test_divergence_detected_with_ratio_history(ctx_planar):
    from kurzmani.lp_manifold import NonContractionError
    # cross-coupled quadratic far outside the contraction regime
    Q1 = np.zeros((2, 2))
    Q1[1, 1] = 1.0
    Q2 = np.zeros((2, 2))
    Q2[0, 0] = 1.0
    blow = NonlinearitySpec("ide_pointwise", "quadratic", {"mats": [Q1, Q2]},
                            rho=50.0)
    ctx = LPContext(ctx_planar.fund, ctx_planar.dich, blow, T=12.0,
                    tol=1e-10, regularity=ctx_planar.regularity)
    with pytest.raises(NonContractionError) as err:
        solve_lp(np.array([6.0, 0.0]), 0.0, ctx)
    assert len(err.value.ratio_history) >= 3
    assert all(r >= 1.0 for r in err.value.ratio_history[-3:])


@pytest.mark.slow
def test_mode_agreement_ide_with_impulse():
    from kurzmani.apps import IdeSpec, ide_to_context
    Q1 = np.zeros((2, 2))
    Q1[1, 1] = 0.1
    Q2 = np.zeros((2, 2))
    Q2[0, 0] = 0.1
    nl = NonlinearitySpec("ide_pointwise", "quadratic", {"mats": [Q1, Q2]},
                          rho=0.5)
    spec = IdeSpec(2, PiecewisePath.constant(np.diag([-1.0, 1.0])),
                   ((1.5, np.diag([0.2, 0.0])),), nl)
    ctx = ide_to_context(spec, s=0.0, T=8.0, tol=1e-10,
                         grid=np.linspace(0.0, 8.0, 17))
    zeta = ctx.P(ctx.span(0.0)[0]) @ np.array([0.2, 0.0])
    z0 = ctx.initial_path(zeta, 0.0)
    fast = lp_operator_apply(z0, zeta, 0.0, ctx, mode="fast")
    ref = lp_operator_apply(z0, zeta, 0.0, ctx, mode="reference")
    agreement = float(np.max(np.linalg.norm(fast.values - ref.values, axis=1)))
    assert agreement <= 1e-5


@pytest.mark.slow
def test_mode_agreement_scalar_mde_with_atom(ctx_scalar_mde):
    zeta = np.array([0.4])
    z0 = ctx_scalar_mde.initial_path(zeta, 0.0)
    fast = lp_operator_apply(z0, zeta, 0.0, ctx_scalar_mde, mode="fast")
    ref = lp_operator_apply(z0, zeta, 0.0, ctx_scalar_mde, mode="reference")
    agreement = float(np.max(np.abs(fast.values - ref.values)))
    assert agreement <= 1e-5
