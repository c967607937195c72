import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kurzmani.funcspace import PiecewisePath, Segment, StieltjesMeasure
from kurzmani.kurzweil import (IntegrationError, PointIntervalFn, cross_check,
                               ks_integral_ref, pinned_division,
                               stieltjes_integral)

# closed form for the 12-term lacunary cosine sum with a = 1/2, b = 3:
# every 3^k is odd, so f(1) - f(0) = sum a^k (cos(3^k pi) - 1) = -2 sum a^k
LACUNARY_INCREMENT = -4.0 + 2.0 ** -10


def lacunary():
    return PiecewisePath.preset("wcos", 1.0, (0.5, 3.0, 12))


def test_node_increment_of_nowhere_smooth_like_sum():
    res = ks_integral_ref(PointIntervalFn.node_function(lacunary()), (0, 1),
                          tol=1e-9)
    assert float(res.value) == pytest.approx(LACUNARY_INCREMENT, abs=1e-9)


def test_scalar_step_integrates_to_its_height():
    step = PiecewisePath.step(0.5, 2.5)
    res = ks_integral_ref(PointIntervalFn.node_function(step), (0, 1), tol=1e-12)
    assert float(res.value) == pytest.approx(2.5, abs=1e-12)


def test_tag_times_node_product_integrates_to_half():
    f = PiecewisePath.polynomial([0.0, 1.0])
    fn = PointIntervalFn.stieltjes_pair(f, StieltjesMeasure.lebesgue())
    res = ks_integral_ref(fn, (0, 1), tol=1e-9)
    assert float(res.value) == pytest.approx(0.5, abs=1e-8)


def test_reference_failure_carries_last_two_sums():
    # Riemann-type sums of (b - a) / tag grow without bound on [0, 1]
    blowup = PointIntervalFn(lambda tau, a, b: (b - a) / max(tau, 1e-300))
    with pytest.raises(IntegrationError) as err:
        ks_integral_ref(blowup, (0.0, 1.0), tol=1e-12, max_rounds=8)
    assert err.value.last_two is not None


def test_pinned_division_tags_atoms():
    div = pinned_division((0.0, 1.0), [0.25, 0.5], radius=0.01, step=0.1)
    assert 0.25 in div.tags and 0.5 in div.tags


def test_matrix_integrator_form():
    # sums (M(t_j) - M(t_{j-1})) w(tag_j) converge to int M'(s) w(s) ds
    def M(t):
        return np.array([[t, 0.0], [0.0, t * t]])

    def w(tau):
        return np.array([1.0, tau])

    fn = PointIntervalFn.matrix_integrator(M, w)
    res = ks_integral_ref(fn, (0.0, 1.0), tol=1e-9)
    np.testing.assert_allclose(res.value, [1.0, 2.0 / 3.0], atol=1e-7)


def test_identity_matrix_against_single_atom():
    f = PiecewisePath.constant(np.eye(3))
    mu = StieltjesMeasure(PiecewisePath.constant(0.0), [(0.0, 0.7)])
    val = stieltjes_integral(f, mu, (-1.0, 1.0))
    np.testing.assert_allclose(val, 0.7 * np.eye(3), atol=1e-14)


def test_linear_density_integral():
    f = PiecewisePath.polynomial([0.0, 1.0])
    val = stieltjes_integral(f, StieltjesMeasure.lebesgue(), (0.0, 1.0))
    assert float(val) == pytest.approx(0.5, abs=1e-12)


def test_exponential_with_mixed_measure():
    f = PiecewisePath.preset("exp", 1.0, (1.0,))
    mu = StieltjesMeasure(PiecewisePath.constant(1.0), [(0.5, 2.0)])
    val = stieltjes_integral(f, mu, (0.0, 1.0))
    expected = (math.e - 1.0) + 2.0 * math.exp(0.5)
    assert float(val) == pytest.approx(expected, abs=1e-10)
    report = cross_check(f, mu, (0.0, 1.0), tol=1e-6)
    assert report.passed


def test_cross_check_passes_on_spec_examples():
    cases = [
        (PiecewisePath.constant(1.0),
         StieltjesMeasure(PiecewisePath.constant(0.0), [(0.0, 0.7)])),
        (PiecewisePath.polynomial([0.0, 1.0]), StieltjesMeasure.lebesgue()),
        (PiecewisePath.preset("exp", 1.0, (1.0,)),
         StieltjesMeasure(PiecewisePath.constant(1.0), [(0.5, 2.0)])),
    ]
    for f, mu in cases:
        assert cross_check(f, mu, (0.0, 1.0), tol=1e-6).passed


def test_shared_jump_uses_stored_value_and_full_jump():
    f = PiecewisePath.from_segments(
        [0.5], [Segment.constant(1.0), Segment.constant(3.0)])
    mu = StieltjesMeasure(PiecewisePath.constant(0.0), [(0.5, 1.0)])
    # hand computation: the pinned tag picks f's stored (left) value 1 and
    # the full two-sided jump of the integrator, which is the atom weight
    assert float(stieltjes_integral(f, mu, (0.0, 1.0))) == pytest.approx(1.0)
    assert cross_check(f, mu, (0.0, 1.0), tol=1e-9).passed


def test_atom_window_accounting_left_closed_right_open():
    mu = StieltjesMeasure(PiecewisePath.constant(0.0), [(0.0, 1.0), (1.0, 5.0)])
    one = PiecewisePath.constant(1.0)
    assert float(stieltjes_integral(one, mu, (0.0, 1.0))) == pytest.approx(1.0)
    # additivity: the atom at the shared endpoint counts exactly once
    total = stieltjes_integral(one, mu, (0.0, 1.0)) + \
        stieltjes_integral(one, mu, (1.0, 2.0))
    assert float(total) == pytest.approx(
        float(stieltjes_integral(one, mu, (0.0, 2.0))), abs=1e-12)
    assert cross_check(one, mu, (0.0, 1.0), tol=1e-9).passed


def test_linearity_in_the_integrand():
    f = PiecewisePath.polynomial([0.0, 1.0])
    g = PiecewisePath.preset("cos", 1.0, (2.0, 0.0))
    mu = StieltjesMeasure(PiecewisePath.constant(1.0), [(0.3, 0.4)])
    lhs = stieltjes_integral(2.0 * f + (-3.0) * g, mu, (0.0, 1.0))
    rhs = 2.0 * stieltjes_integral(f, mu, (0.0, 1.0)) \
        - 3.0 * stieltjes_integral(g, mu, (0.0, 1.0))
    assert float(lhs) == pytest.approx(float(rhs), abs=1e-10)


def test_bounded_integrand_respects_variation_bound():
    # |integral| <= variation of the (nondecreasing) integrator when |f| <= 1
    mu = StieltjesMeasure(PiecewisePath.constant(0.7), [(0.25, 0.5), (0.75, 1.0)],
                          nondecreasing=True)
    f = PiecewisePath.preset("sin", 1.0, (7.0, 0.3))
    val = abs(float(stieltjes_integral(f, mu, (0.0, 1.0))))
    assert val <= mu.variation((0.0, 1.0)) + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_randomized_fast_reference_agreement(seed):
    rng = np.random.default_rng(seed)
    f = PiecewisePath.polynomial(rng.normal(size=rng.integers(1, 4)))
    dens = PiecewisePath.polynomial(rng.normal(size=2))
    n_atoms = int(rng.integers(0, 4))
    times = np.sort(rng.uniform(0.05, 0.95, size=n_atoms))
    while len(set(np.round(times, 5))) < n_atoms:
        times = np.sort(rng.uniform(0.05, 0.95, size=n_atoms))
    atoms = [(float(t), float(rng.normal())) for t in times]
    mu = StieltjesMeasure(dens, atoms)
    report = cross_check(f, mu, (0.0, 1.0), tol=1e-6)
    assert report.passed, report.difference
