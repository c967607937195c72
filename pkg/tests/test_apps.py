import math

import numpy as np
import pytest

from conftest import SADDLE, quadratic_forcing
from kurzmani.apps import (HypothesisError, IdeSpec, MdeSpec,
                           check_hypotheses, ide_to_context, mde_to_context)
from kurzmani.funcspace import PiecewisePath, StieltjesMeasure, total_variation
from kurzmani.linsys import accumulated_path
from kurzmani.lp_manifold import NonlinearitySpec, solve_lp


def saddle_path():
    return PiecewisePath.constant(SADDLE)


def test_linear_forcing_gives_zero_modulus():
    f = NonlinearitySpec("ide_pointwise", "zero", {"n": 2}, rho=0.5)
    ctx = ide_to_context(IdeSpec(2, saddle_path(), (), f), s=0.0, T=10.0)
    assert ctx.nonlin.v_h((0.0, 10.0)) == 0.0
    assert ctx.reports["smallness_gate"] == 0.0
    sol = solve_lp(np.array([0.2, 0.0]), 0.0, ctx)
    assert np.allclose(sol.m, 0.0, atol=1e-12)


def test_planar_benchmark_context_construction():
    spec = IdeSpec(2, saddle_path(), (), quadratic_forcing(1.0))
    ctx = ide_to_context(spec, s=0.0, T=40.0, tol=1e-10)
    assert abs(ctx.dich.K - 1.0) <= 0.01
    assert abs(ctx.dich.alpha - 1.0) <= 0.01
    sol = solve_lp(np.array([0.1, 0.0]), 0.0, ctx)
    assert sol.m[0] == pytest.approx(-0.1 ** 2 / 3.0, abs=5e-3 * 0.01)


def test_impulse_variation_arithmetic():
    impulses = tuple((float(k), np.diag([0.1, 0.0])) for k in range(1, 11))
    spec = IdeSpec(2, saddle_path(), impulses, quadratic_forcing(0.05))
    ctx = ide_to_context(spec, s=0.0, T=12.0)
    lam = accumulated_path(ctx.fund.spec)
    # integral of ||A|| plus one 0.1-jump per impulse; the right-jump sitting
    # exactly at the window's right endpoint lies outside [0, 10]
    assert total_variation(lam, (0.0, 10.0)) == pytest.approx(
        10.0 + 9 * 0.1, abs=1e-8)
    assert total_variation(lam, (0.0, 10.5)) == pytest.approx(
        10.5 + 10 * 0.1, abs=1e-8)


def test_ide_window_relative_forcing_bound():
    spec = IdeSpec(2, saddle_path(), (), quadratic_forcing(1.0, rho=0.5))
    rep = check_hypotheses(spec, (0.0, 10.0))
    assert rep.all_passed
    gamma_const = max(spec.f.sup_eff, spec.f.lip_eff)
    assert rep.constants["M_gamma"] == pytest.approx(10.0 * gamma_const)


def test_ide_rejects_singular_jump():
    spec = IdeSpec(2, saddle_path(), ((1.0, -np.eye(2)),), quadratic_forcing(1.0))
    rep = check_hypotheses(spec, (0.0, 5.0))
    assert not rep.items["B3_jump_inverses"].passed
    assert rep.items["B3_jump_inverses"].witness == pytest.approx(1.0)
    with pytest.raises(HypothesisError) as err:
        ide_to_context(spec, T=5.0)
    assert err.value.condition == "B3_jump_inverses"


def test_mde_zero_kernel_is_linear():
    u = StieltjesMeasure.lebesgue()
    H = NonlinearitySpec("mde_kernel", "zero", {"n": 2}, rho=0.5, measure=u)
    spec = MdeSpec(2, saddle_path(), PiecewisePath.constant(np.zeros((2, 2))),
                   u, H)
    ctx = mde_to_context(spec, s=0.0, T=10.0)
    assert ctx.nonlin.v_h((0.0, 10.0)) == 0.0
    assert ctx.reports["realization_gate"] == 0.0


def test_mde_atom_enters_accumulated_variation():
    u = StieltjesMeasure(PiecewisePath.constant(0.0), [(1.0, 0.2)],
                         nondecreasing=True)
    H = NonlinearitySpec("mde_kernel", "zero", {"n": 1}, rho=0.5, measure=u)
    spec = MdeSpec(1, PiecewisePath.constant([[0.0]]),
                   PiecewisePath.constant([[1.0]]), u, H)
    ctx = mde_to_context(spec, s=0.0, T=3.0)
    assert ctx.regularity.V_Lambda == pytest.approx(0.2, abs=1e-10)
    g = accumulated_path(ctx.fund.spec)
    assert g.right(1.0)[0, 0] - g(1.0)[0, 0] == pytest.approx(0.2)


def test_mde_rejects_singular_atom_factor():
    u = StieltjesMeasure(PiecewisePath.constant(0.0), [(1.0, 1.0)],
                         nondecreasing=True)
    H = NonlinearitySpec("mde_kernel", "zero", {"n": 1}, rho=0.5, measure=u)
    spec = MdeSpec(1, PiecewisePath.constant([[0.0]]),
                   PiecewisePath.constant([[-1.0]]), u, H)
    rep = check_hypotheses(spec, (0.0, 3.0))
    assert not rep.items["D6_atom_inverses"].passed
    with pytest.raises(HypothesisError):
        mde_to_context(spec, T=3.0)


def test_mde_flags_non_monotone_driver():
    u = StieltjesMeasure(PiecewisePath.constant(-1.0), [])
    H = NonlinearitySpec("mde_kernel", "zero", {"n": 1}, rho=0.5, measure=u)
    spec = MdeSpec(1, PiecewisePath.constant([[-1.0]]),
                   PiecewisePath.constant([[0.0]]), u, H)
    rep = check_hypotheses(spec, (0.0, 3.0))
    assert not rep.items["b_driver_nondecreasing_bv"].passed
    with pytest.raises(HypothesisError):
        mde_to_context(spec, T=3.0)


def test_mde_smallness_gate_printed_formula():
    u = StieltjesMeasure(PiecewisePath.constant(1.0), [(1.0, 0.3)],
                         nondecreasing=True)
    H = NonlinearitySpec("mde_kernel", "saturated_tanh", {"gain": [[0.2]]},
                         rho=1.0, measure=u)
    spec = MdeSpec(1, PiecewisePath.constant([[-1.0]]),
                   PiecewisePath.constant([[0.0]]), u, H)
    ctx = mde_to_context(spec, s=0.0, T=12.0)
    V_u = u.variation((0.0, 12.0))
    V = ctx.regularity.V_Lambda
    K = ctx.dich.K
    C_g = 1.0
    expected = 2.0 * H.L_H * V_u * (1.0 + K * (1.0 + 2.0 * K)) * C_g ** 3 \
        * math.exp(3.0 * C_g * V) * V ** 2
    assert ctx.reports["realization_gate"] == pytest.approx(expected, rel=1e-12)


def test_round_trip_classical_system_between_front_ends():
    # the same classical system encoded both ways: impulse-free vs
    # Lebesgue-driven; operators and manifold samples must coincide
    f = quadratic_forcing(1.0)
    ide_ctx = ide_to_context(IdeSpec(2, saddle_path(), (), f),
                             s=0.0, T=40.0, tol=1e-10)
    u = StieltjesMeasure.lebesgue()
    H = NonlinearitySpec("mde_kernel", "quadratic",
                         {"mats": [np.zeros((2, 2)),
                                   np.array([[1.0, 0.0], [0.0, 0.0]])]},
                         rho=0.5, measure=u)
    mde_ctx = mde_to_context(
        MdeSpec(2, saddle_path(), PiecewisePath.constant(np.zeros((2, 2))),
                u, H), s=0.0, T=40.0, tol=1e-10)
    ts = np.linspace(0.0, 5.0, 9)
    worst = max(float(np.max(np.abs(ide_ctx.fund.value(t, s)
                                    - mde_ctx.fund.value(t, s))))
                for t in ts for s in ts)
    assert worst <= 1e-8
    for zeta1 in (0.1, 0.2):
        a = solve_lp(np.array([zeta1, 0.0]), 0.0, ide_ctx)
        b = solve_lp(np.array([zeta1, 0.0]), 0.0, mde_ctx)
        assert abs(a.m[0] - b.m[0]) <= 1e-5


def test_context_meshes_contain_kernel_atoms():
    u = StieltjesMeasure(PiecewisePath.constant(1.0), [(1.234, 0.1)],
                         nondecreasing=True)
    H = NonlinearitySpec("mde_kernel", "zero", {"n": 1}, rho=0.5, measure=u)
    spec = MdeSpec(1, PiecewisePath.constant([[-1.0]]),
                   PiecewisePath.constant([[0.0]]), u, H)
    ctx = mde_to_context(spec, s=0.0, T=5.0)
    assert ctx.fund.is_node(1.234)


def test_check_hypotheses_rejects_other_types():
    with pytest.raises(TypeError):
        check_hypotheses(object())
