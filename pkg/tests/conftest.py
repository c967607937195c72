import numpy as np
import pytest

from kurzmani.apps import IdeSpec, MdeSpec, ide_to_context, mde_to_context
from kurzmani.funcspace import PiecewisePath, StieltjesMeasure
from kurzmani.lp_manifold import NonlinearitySpec

SADDLE = np.diag([-1.0, 1.0])


def quadratic_forcing(eps, rho=0.5):
    """f = (0, eps * x^2): the planar benchmark forcing."""
    Q1 = np.zeros((2, 2))
    Q2 = np.zeros((2, 2))
    Q2[0, 0] = eps
    return NonlinearitySpec("ide_pointwise", "quadratic",
                            {"mats": [Q1, Q2]}, rho=rho)


@pytest.fixture(scope="session")
def ctx_planar():
    """Saddle with f = (0, x^2), cutoff 0.5, horizon 40, tol 1e-10."""
    spec = IdeSpec(2, PiecewisePath.constant(SADDLE), (), quadratic_forcing(1.0))
    return ide_to_context(spec, s=0.0, T=40.0, tol=1e-10,
                          grid=np.linspace(0.0, 10.0, 21))


@pytest.fixture(scope="session")
def ctx_impulsive():
    """Saddle kicked by diag(0.1, 0) at integers, f = (0, 0.05 x^2)."""
    impulses = tuple((float(k), np.diag([0.1, 0.0])) for k in range(1, 40))
    spec = IdeSpec(2, PiecewisePath.constant(SADDLE), impulses,
                   quadratic_forcing(0.05))
    return ide_to_context(spec, s=0.0, T=40.0, tol=1e-10,
                          grid=np.linspace(0.0, 10.0, 21))


@pytest.fixture(scope="session")
def ctx_scalar_mde():
    """Scalar contraction driven by Lebesgue + one atom, tanh kernel."""
    u = StieltjesMeasure(PiecewisePath.constant(1.0), [(1.0, 0.3)],
                         nondecreasing=True)
    H = NonlinearitySpec("mde_kernel", "saturated_tanh", {"gain": [[0.2]]},
                         rho=1.0, measure=u)
    spec = MdeSpec(1, PiecewisePath.constant([[-1.0]]),
                   PiecewisePath.constant([[0.0]]), u, H)
    return mde_to_context(spec, s=0.0, T=12.0, tol=1e-10,
                          grid=np.linspace(0.0, 10.0, 21))


def impulsive_manifold_closed_form(zeta, eps=0.05):
    """Bounded-solution value for the kicked saddle at s = 0.

    The stable coordinate is zeta e^{-t} boosted by 1.1 at each integer, so
    the unstable component of the bounded solution at 0 sums a geometric
    series of per-period integrals of e^{-sigma} x(sigma)^2.
    """
    import math
    q = 1.21 * math.exp(-3.0)
    return -eps * zeta * zeta * (1.0 - math.exp(-3.0)) / (3.0 * (1.0 - q))
