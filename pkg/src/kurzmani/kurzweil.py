"""Two evaluators for gauge-limit (Kurzweil) and Perron-Stieltjes integrals.

``ks_integral_ref`` is the slow reference: it drives Riemann-type sums
K(V, D) = sum_j [V(tag_j, t_j) - V(tag_j, t_{j-1})] through a sequence of
divisions that halve a uniform fineness each round while forcing every known
atom time to be the tag of a shrinking private cell.  ``stieltjes_integral``
is the fast evaluator for the piecewise class: adaptive quadrature of the
density part plus explicit atom terms.  ``cross_check`` runs both on the same
data and is the standing validation that the fast decomposition agrees with
the defining limit.

Atom convention (used consistently everywhere): at a jump time of the
integrator the sum picks up ``f(value_at) * (full two-sided jump)``; with
left-continuous integrators that is the right jump, and an atom at the left
window endpoint counts while one at the right endpoint does not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad_vec

from .funcspace import PiecewisePath, StieltjesMeasure, TaggedDivision, norm

_MAX_CELLS = 1 << 22


class IntegrationError(RuntimeError):
    """The refinement sequence did not settle within the round limit."""

    def __init__(self, message, last_two=None):
        super().__init__(message)
        self.last_two = last_two


@dataclass
class IntegralResult:
    value: np.ndarray
    achieved_tolerance: float
    refinement_rounds: int


class PointIntervalFn:
    """A two-slot integrand V(tag, node) with its known atom times.

    Rather than exposing raw V values, integrands implement the cell term
    V(tag, b) - V(tag, a); the forms below cover everything the solvers use:

    * ``node_function(f)``       V(tag, t) = f(t)
    * ``stieltjes_pair(f, mu)``  V(tag, t) = f(tag) * u(t), u the distribution
      of ``mu``
    * ``accumulation(acc, atoms)``  cell term given directly as
      acc(tag, a, b); used when V(tag, .) is itself a running integral
    * ``matrix_integrator(M, w, jumps)``  cell term (M(b) - M(a)) @ w(tag)
    """

    def __init__(self, cell_term, atom_times=(), batch=None, label=""):
        self._cell_term = cell_term
        self.atom_times = tuple(sorted(float(t) for t in atom_times))
        self._batch = batch
        self.label = label

    @classmethod
    def node_function(cls, f: PiecewisePath):
        def term(tau, a, b):
            return f(b) - f(a)

        def batch(taus, los, his):
            return f.sample(his) - f.sample(los)

        return cls(term, atom_times=[bp.time for bp in f.breakpoints],
                   batch=batch, label="node")

    @classmethod
    def stieltjes_pair(cls, f: PiecewisePath, mu: StieltjesMeasure):
        u = mu.distribution(0.0)

        def term(tau, a, b):
            return f(tau) * (u(b) - u(a))

        def batch(taus, los, his):
            du = u.sample(his) - u.sample(los)
            fv = f.sample(taus)
            return fv * du.reshape(du.shape + (1,) * len(f.shape))

        atoms = [t for t, _ in mu.atoms] + [bp.time for bp in f.breakpoints]
        return cls(term, atom_times=atoms, batch=batch, label="stieltjes")

    @classmethod
    def accumulation(cls, acc, atom_times=()):
        return cls(acc, atom_times=atom_times, label="accumulation")

    @classmethod
    def matrix_integrator(cls, M, w, jump_times=()):
        def term(tau, a, b):
            return (M(b) - M(a)) @ w(tau)

        return cls(term, atom_times=jump_times, label="matrix-integrator")

    def k_sum(self, division: TaggedDivision):
        """The Riemann-type sum of this integrand over a tagged division."""
        if self._batch is not None:
            taus = division.tags
            los = division.nodes[:-1]
            his = division.nodes[1:]
            terms = self._batch(taus, los, his)
            return terms.sum(axis=0)
        total = None
        for tau, a, b in division.cells():
            term = np.asarray(self._cell_term(tau, a, b), dtype=float)
            total = term if total is None else total + term
        return total


def pinned_division(window, atoms, radius, step) -> TaggedDivision:
    """Uniform cells of width <= step with each atom tagging its own cell.

    Every atom inside the window owns the cell [t - r, t + r] (clipped) with
    the atom as tag; the gaps are filled uniformly with midpoint tags.
    """
    c, d = float(window[0]), float(window[1])
    atoms = sorted({t for t in atoms if c <= t <= d})
    if atoms:
        gaps = [b - a for a, b in zip(atoms, atoms[1:])]
        limit = min([d - c] + gaps) / 4.0
        radius = min(radius, limit) if limit > 0 else radius
    pins = []
    for t in atoms:
        pins.append((max(c, t - radius), t, min(d, t + radius)))
    nodes = [c]
    tags = []

    def fill(a, b):
        if b <= a:
            return
        ncells = max(1, int(math.ceil((b - a) / step)))
        edges = np.linspace(a, b, ncells + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            nodes.append(hi)
            tags.append(0.5 * (lo + hi))

    cursor = c
    for lo, t, hi in pins:
        fill(cursor, lo)
        nodes.append(hi)
        tags.append(t)
        cursor = hi
    fill(cursor, d)
    return TaggedDivision(np.array(nodes), np.array(tags))


def ks_integral_ref(V: PointIntervalFn, window, tol=1e-9, max_rounds=18,
                    initial_step=None) -> IntegralResult:
    """Gauge-limit reference evaluation of ``V`` over a window.

    Round k uses uniform fineness ``initial_step / 2**k`` and pins every atom
    of ``V`` as the tag of a private cell whose radius also halves; the
    iteration stops when two successive sums differ by less than ``tol``.
    """
    c, d = float(window[0]), float(window[1])
    if d <= c:
        return IntegralResult(np.asarray(0.0), 0.0, 0)
    if tol <= 0:
        raise ValueError("tol must be positive")
    step = initial_step if initial_step is not None else (d - c) / 8.0
    radius = step / 8.0
    atoms = [t for t in V.atom_times if c <= t <= d]
    previous = None
    for k in range(max_rounds):
        division = pinned_division((c, d), atoms, radius, step)
        if len(division.tags) > _MAX_CELLS:
            raise IntegrationError("division grew past %d cells" % _MAX_CELLS,
                                   last_two=(previous, None))
        current = np.asarray(V.k_sum(division), dtype=float)
        if previous is not None:
            diff = norm(current - previous)
            if diff < tol:
                return IntegralResult(current, diff, k + 1)
        previous = current
        step *= 0.5
        radius *= 0.5
    raise IntegrationError(
        "no convergence within %d rounds (last diff %.3e)"
        % (max_rounds, norm(current - previous) if previous is not None else math.nan),
        last_two=(previous, current))


def stieltjes_integral(f: PiecewisePath, mu: StieltjesMeasure, window,
                       quad_tol=1e-10):
    """Fast Perron-Stieltjes integral of ``f`` against ``d mu`` over [c, d].

    Splits at every breakpoint of ``f`` and of the density and at every atom,
    integrates ``f * density`` adaptively per smooth cell, and adds
    ``f(value_at) * weight`` for each atom in [c, d).
    """
    c, d = float(window[0]), float(window[1])
    if not (math.isfinite(c) and math.isfinite(d)):
        raise ValueError("window endpoints must be finite")
    if d < c:
        return -stieltjes_integral(f, mu, (d, c), quad_tol)
    total = np.zeros(f.shape)
    cuts = {c, d}
    cuts |= {bp.time for bp in f.breakpoints if c < bp.time < d}
    cuts |= {bp.time for bp in mu.density.breakpoints if c < bp.time < d}
    cuts |= {t for t, _ in mu.atoms if c < t < d}
    cuts = sorted(cuts)
    for a, b in zip(cuts, cuts[1:]):
        if b <= a:
            continue

        def integrand(t):
            return f.sample(t) * float(mu.density.sample(t))

        val, err = quad_vec(integrand, a, b, epsabs=quad_tol, epsrel=1e-12)
        if err > max(100 * quad_tol, 1e-8 * (1.0 + norm(val))):
            raise IntegrationError(
                "density quadrature achieved only %.3e on [%g, %g]" % (err, a, b))
        total = total + val
    for t, w in mu.atoms_in(c, d):
        total = total + w * f(t)
    return total


@dataclass
class CrossCheckReport:
    fast_value: np.ndarray
    reference: IntegralResult
    difference: float
    tolerance_used: float
    passed: bool


def cross_check(f: PiecewisePath, mu: StieltjesMeasure, window, tol=1e-6,
                quad_tol=1e-10) -> CrossCheckReport:
    """Run both evaluators on the same data and compare.

    Passes iff the values differ by at most ``max(tol, 10 x achieved
    reference tolerance)``; reference non-convergence propagates.
    """
    fast = np.asarray(stieltjes_integral(f, mu, window, quad_tol=quad_tol))
    ref = ks_integral_ref(PointIntervalFn.stieltjes_pair(f, mu), window,
                          tol=min(tol / 10.0, 1e-8))
    difference = norm(fast - ref.value)
    tolerance = max(tol, 10.0 * ref.achieved_tolerance)
    return CrossCheckReport(fast, ref, difference, tolerance,
                            difference <= tolerance)
