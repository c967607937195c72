"""Linear system data, coefficient paths and the fundamental operator.

A system is a smooth coefficient matrix A(t) plus two optional jump sources:
impulses (t_i, B_i) that reset the state through Id + B_i, and a driving
measure (C, u) whose atoms reset it through Id + C(t) * du({t}) while its
density adds C(t) * density(t) to the smooth generator.

The fundamental operator V(t, s) is realized by the product formula: smooth
propagation between consecutive mesh nodes (matrix exponentials on constant
cells, an adaptive order-8 integrator otherwise) interleaved with the jump
factors.  Solutions are stored left-continuous: the factor at a jump time
applies when propagating past it, so V(t, s) includes the factors at times in
[s, t) and V(t, t) = Id exactly.

Accuracy note: products of cell propagators are exact for the decoupled and
triangular systems this library targets as benchmarks; for strongly coupled
systems the projected kernels lose digits once alpha * horizon approaches the
floating-point range (an intrinsic conditioning limit of hyperbolic
splittings, not of the product formula).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .funcspace import (PiecewisePath, StieltjesMeasure, norm,
                        running_integral, running_stieltjes_integral,
                        total_variation)

_TIME_TOL = 1e-11


class PropagationError(RuntimeError):
    """The smooth one-step integrator missed its local tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


def _as_matrix(value, n):
    m = np.asarray(value, dtype=float)
    if m.shape != (n, n):
        raise ValueError("expected a (%d, %d) matrix, got shape %r" % (n, n, m.shape))
    return m


def _inverse_or_none(m):
    try:
        inv = np.linalg.inv(m)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(inv)):
        return None
    return inv


@dataclass(frozen=True)
class LinearSystemSpec:
    """Coefficients of one linear system.

    ``smooth`` is the matrix path A(t); ``impulses`` are (time, B) with
    strictly increasing times; ``measure_part`` is an optional (C, u) pair.
    Construction verifies every jump factor is invertible.
    """

    n: int
    smooth: PiecewisePath
    impulses: tuple = ()
    measure_part: tuple | None = None
    t0: float = 0.0

    def __post_init__(self):
        if self.smooth.shape != (self.n, self.n):
            raise ValueError("smooth part must be a (%d, %d) matrix path" % (self.n, self.n))
        imp = tuple((float(t), _as_matrix(B, self.n)) for t, B in self.impulses)
        times = [t for t, _ in imp]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("impulse times must be strictly increasing")
        object.__setattr__(self, "impulses", imp)
        for t, B in imp:
            if _inverse_or_none(np.eye(self.n) + B) is None:
                raise ValueError("Id + B is singular at impulse time %g" % t)
        if self.measure_part is not None:
            C, u = self.measure_part
            if C.shape != (self.n, self.n):
                raise ValueError("measure coefficient must be a matrix path")
            if not isinstance(u, StieltjesMeasure):
                raise ValueError("measure_part must be (PiecewisePath, StieltjesMeasure)")
            for t, w in u.atoms:
                if _inverse_or_none(np.eye(self.n) + C(t) * w) is None:
                    raise ValueError("Id + C*du is singular at atom time %g" % t)
            for t, _ in imp:
                if any(abs(t - ta) <= _TIME_TOL for ta, _ in u.atoms):
                    raise ValueError("impulse and measure atom coincide at t=%g" % t)
        object.__setattr__(self, "t0", float(self.t0))

    def jump_events(self):
        """Sorted (time, factor) pairs combining impulses and measure atoms."""
        events = [(t, np.eye(self.n) + B) for t, B in self.impulses]
        if self.measure_part is not None:
            C, u = self.measure_part
            events += [(t, np.eye(self.n) + C(t) * w) for t, w in u.atoms]
        events.sort(key=lambda e: e[0])
        return events

    def generator(self, t):
        """Effective smooth coefficient A(t) (+ C(t) * density(t))."""
        m = self.smooth(t)
        if self.measure_part is not None:
            C, u = self.measure_part
            m = m + C(t) * float(u.density(t))
        return m

    def generator_breakpoints(self):
        times = {bp.time for bp in self.smooth.breakpoints}
        if self.measure_part is not None:
            C, u = self.measure_part
            times |= {bp.time for bp in C.breakpoints}
            times |= {bp.time for bp in u.density.breakpoints}
        return times

    def generator_constant_on(self, lo, hi):
        mid = 0.5 * (lo + hi)

        def seg_const(path):
            return path.segments[path.segment_index(mid)].is_constant

        if not seg_const(self.smooth):
            return False
        if self.measure_part is not None:
            C, u = self.measure_part
            if not (seg_const(C) and seg_const(u.density)):
                return False
        return True


# ---------------------------------------------------------------------------
# coefficient-path builders
# ---------------------------------------------------------------------------

def lambda_from_ide(A: PiecewisePath, impulses, t0) -> PiecewisePath:
    """Accumulated coefficient path of an impulsive system.

    Running integral of A from t0 plus a right-jump of B_i at every impulse
    time; an impulse exactly at t0 is rejected (the accumulated path would
    depend on which side of t0 the jump is attributed to).
    """
    t0 = float(t0)
    for t, _ in impulses:
        if abs(t - t0) <= _TIME_TOL:
            raise ValueError("impulse at the reference time t0=%g is ambiguous" % t0)
    lam = running_integral(A, t0)
    for t, B in impulses:
        B = np.asarray(B, dtype=float)
        # normalized to vanish at t0: accumulation below t0 starts at -B
        base = -B if t < t0 else None
        lam = lam + PiecewisePath.step(t, B, base=base)
    return lam


def lambda_g_from_mde(A: PiecewisePath, C: PiecewisePath, u: StieltjesMeasure,
                      t0) -> tuple:
    """Accumulated coefficient paths (Lambda, G) of a measure-driven system."""
    n = A.shape[0]
    for t, w in u.atoms:
        if _inverse_or_none(np.eye(n) + C(t) * w) is None:
            raise ValueError("Id + C*du is singular at atom time %g" % t)
    lam = running_integral(A, t0)
    g = running_stieltjes_integral(C, u, t0)
    return lam, g


def accumulated_path(spec: LinearSystemSpec) -> PiecewisePath:
    """The full accumulated coefficient path (smooth + all jump sources)."""
    lam = lambda_from_ide(spec.smooth, spec.impulses, spec.t0)
    if spec.measure_part is not None:
        C, u = spec.measure_part
        lam = lam + running_stieltjes_integral(C, u, spec.t0)
    return lam


# ---------------------------------------------------------------------------
# fundamental operator
# ---------------------------------------------------------------------------

@dataclass
class _CellCache:
    phi: np.ndarray          # propagator across the cell
    phi_inv: np.ndarray
    constant: bool
    gen: np.ndarray | None   # generator if constant
    sigma: np.ndarray = None       # quadrature times inside the cell
    weights: np.ndarray = None
    phi_sig: np.ndarray = None     # (Q, n, n): Phi(sigma_q, x_j)
    phi_sig_inv: np.ndarray = None


class FundamentalOperator:
    """Mesh-cached realization of the solution operator V(t, s).

    The mesh contains the window endpoints, a uniform grid at ``base_step``,
    every jump time, every breakpoint of the generator, and the reference
    time t0.  Per-cell propagators and in-cell quadrature samples are built
    lazily and are read-only afterwards, so queries may run concurrently.
    """

    def __init__(self, spec: LinearSystemSpec, window, base_step=0.1,
                 ode_tol=1e-12, quad_nodes=3, extra_times=()):
        self.spec = spec
        self.n = spec.n
        lo, hi = float(window[0]), float(window[1])
        if hi <= lo:
            raise ValueError("window must have positive length")
        if not (lo <= spec.t0 <= hi):
            raise ValueError("reference time t0 must lie inside the window")
        self.window = (lo, hi)
        self.ode_tol = float(ode_tol)
        self.quad_nodes = int(quad_nodes)
        events = spec.jump_events()
        for t, _ in events:
            if not (lo <= t <= hi):
                raise ValueError("jump time %g outside operator window" % t)
        nodes = [lo, hi, spec.t0]
        nodes += list(np.arange(lo, hi, base_step)[1:])
        nodes += [t for t, _ in events]
        nodes += [t for t in spec.generator_breakpoints() if lo < t < hi]
        nodes += [t for t in extra_times if lo <= t <= hi]
        nodes = np.array(sorted(nodes))
        keep = np.concatenate([[True], np.diff(nodes) > _TIME_TOL])
        self.nodes = nodes[keep]
        self._jumps = {}
        for t, J in events:
            i = self.node_index(t)
            self._jumps[i] = (J, np.linalg.inv(J))
        self._cells: dict[int, _CellCache] = {}
        gl_nodes, gl_weights = np.polynomial.legendre.leggauss(self.quad_nodes)
        self._gl = (gl_nodes, gl_weights)
        self.i_t0 = self.node_index(spec.t0)

    # -- mesh helpers -------------------------------------------------------

    def node_index(self, t):
        i = int(np.searchsorted(self.nodes, t))
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(self.nodes) and abs(self.nodes[j] - t) <= _TIME_TOL:
                return j
        raise KeyError("time %g is not a mesh node" % t)

    def is_node(self, t):
        try:
            self.node_index(t)
            return True
        except KeyError:
            return False

    def jump_factor(self, i):
        """(J, J^{-1}) at node i; identity when nothing jumps there."""
        if i in self._jumps:
            return self._jumps[i]
        eye = np.eye(self.n)
        return eye, eye

    # -- smooth propagation -------------------------------------------------

    def _propagate(self, a, b, t_eval=()):
        """Phi(t, a) for t in t_eval plus Phi(b, a), no jumps inside (a, b)."""
        n = self.n
        ts = list(t_eval) + [b]
        if self.spec.generator_constant_on(a, b):
            gen = self.spec.generator(0.5 * (a + b))
            mats = [expm(gen * (t - a)) for t in ts]
            return mats, gen
        gen_mid = None

        def rhs(t, y):
            return (self.spec.generator(t) @ y.reshape(n, n)).ravel()

        sol = solve_ivp(rhs, (a, b), np.eye(n).ravel(), method="DOP853",
                        t_eval=np.asarray(ts), rtol=self.ode_tol,
                        atol=self.ode_tol, dense_output=False)
        if not sol.success:
            raise PropagationError("integrator failed on [%g, %g]: %s"
                                   % (a, b, sol.message))
        mats = [sol.y[:, k].reshape(n, n) for k in range(sol.y.shape[1])]
        return mats, gen_mid

    def cell(self, j) -> _CellCache:
        """Cached data for the cell [x_j, x_{j+1}]."""
        cache = self._cells.get(j)
        if cache is not None:
            return cache
        a, b = self.nodes[j], self.nodes[j + 1]
        gl_nodes, gl_weights = self._gl
        sigma = 0.5 * (a + b) + 0.5 * (b - a) * gl_nodes
        weights = 0.5 * (b - a) * gl_weights
        mats, gen = self._propagate(a, b, t_eval=sigma)
        phi_sig = np.stack(mats[:-1])
        phi = mats[-1]
        cache = _CellCache(
            phi=phi, phi_inv=np.linalg.inv(phi), constant=gen is not None,
            gen=gen, sigma=sigma, weights=weights, phi_sig=phi_sig,
            phi_sig_inv=np.stack([np.linalg.inv(m) for m in phi_sig]))
        self._cells[j] = cache
        return cache

    # -- queries ------------------------------------------------------------

    def __call__(self, t, s):
        return self.value(t, s)

    def value(self, t, s):
        """V(t, s); jump factors at times in [min, max) apply per direction."""
        t, s = float(t), float(s)
        if abs(t - s) <= _TIME_TOL:
            return np.eye(self.n)
        if t > s:
            return self._forward(s, t)
        back = self._forward(t, s)
        inv = _inverse_or_none(back)
        if inv is None:
            raise PropagationError("forward operator is numerically singular")
        return inv

    def _partial(self, a, b):
        """Smooth Phi(b, a) within one cell (no interior jump times)."""
        mats, _ = self._propagate(a, b)
        return mats[0]

    def _forward(self, s, t):
        """Product of factors from s up to t (s < t)."""
        out = np.eye(self.n)
        lo, hi = self.window
        if s < lo - _TIME_TOL or t > hi + _TIME_TOL:
            raise ValueError("query (%g, %g) outside window %r" % (t, s, self.window))
        # left partial cell
        try:
            i = self.node_index(s)
            cursor = i
        except KeyError:
            j = int(np.searchsorted(self.nodes, s)) - 1
            nxt = self.nodes[j + 1]
            if t <= nxt + _TIME_TOL:
                return self._partial(s, t)
            out = self._partial(s, nxt)
            cursor = j + 1
        while True:
            tj = self.nodes[cursor]
            if t <= tj + _TIME_TOL:
                break
            J, _ = self.jump_factor(cursor)
            out = J @ out
            nxt = self.nodes[cursor + 1]
            if t < nxt - _TIME_TOL:
                out = self._partial(tj, t) @ out
                return out
            out = self.cell(cursor).phi @ out
            cursor += 1
        return out

    def bound_on(self, times):
        """sup of ||V(t, s)|| over all ordered pairs from ``times``."""
        worst = 0.0
        for s in times:
            for t in times:
                worst = max(worst, norm(self.value(t, s)))
        return worst


def fundamental(spec: LinearSystemSpec, t, s, base_step=0.1, ode_tol=1e-12):
    """One-shot V(t, s) for a spec (builds a throwaway mesh around [s, t])."""
    lo = min(float(t), float(s), spec.t0)
    hi = max(float(t), float(s), spec.t0)
    if hi - lo < 1e-6:
        hi = lo + 1.0
    op = FundamentalOperator(spec, (lo - 1e-9, hi + 1e-9), base_step=base_step,
                             ode_tol=ode_tol, extra_times=(t, s))
    return op.value(t, s)


# ---------------------------------------------------------------------------
# regularity report
# ---------------------------------------------------------------------------

@dataclass
class CheckItem:
    passed: bool
    value: object = None
    witness: object = None


@dataclass
class RegularityReport:
    C_a: float
    V_Lambda: float
    flags: dict = field(default_factory=dict)

    @property
    def all_passed(self):
        return all(item.passed for item in self.flags.values())


def check_regularity(spec: LinearSystemSpec, window, quad_tol=1e-10) -> RegularityReport:
    """Evaluate the standing hypotheses on the accumulated coefficient path.

    C_a is the worst one-sided inverse-jump norm (at least 1, the value away
    from jumps); V_Lambda the variation of the accumulated path over the
    window.  Flags cover finite variation, invertibility of the one-sided
    jump factors, integrability of the smooth part, and the per-jump factor
    conditions of the impulsive/measure realizations.
    """
    lo, hi = float(window[0]), float(window[1])
    lam = accumulated_path(spec)
    n = spec.n
    eye = np.eye(n)
    flags = {}

    C_a = 1.0
    worst = None
    a2_ok = True
    for bp in lam.breakpoints:
        if not (lo <= bp.time <= hi):
            continue
        for tag, jump in (("right", bp.right_jump), ("left", bp.left_jump)):
            mat = eye + jump if tag == "right" else eye - jump
            inv = _inverse_or_none(mat)
            if inv is None:
                a2_ok = False
                worst = (bp.time, tag)
                continue
            val = norm(inv)
            if val > C_a:
                C_a = val
                worst = (bp.time, tag)
    flags["A2_one_sided_inverses"] = CheckItem(a2_ok, C_a, worst)

    V_L = total_variation(lam, (lo, hi), quad_tol=quad_tol)
    flags["A1_bounded_variation"] = CheckItem(math.isfinite(V_L), V_L)

    m_int = total_variation(running_integral(spec.smooth, lo), (lo, hi),
                            quad_tol=quad_tol)
    flags["B2_smooth_integrable"] = CheckItem(math.isfinite(m_int), m_int)

    if spec.impulses:
        bad = None
        bound = 0.0
        for t, B in spec.impulses:
            inv = _inverse_or_none(eye + B)
            if inv is None:
                bad = t
                break
            bound = max(bound, norm(inv))
        flags["B3_jump_inverses"] = CheckItem(bad is None, bound, bad)

    if spec.measure_part is not None:
        C, u = spec.measure_part
        bad = None
        bound = 0.0
        for t, w in u.atoms:
            inv = _inverse_or_none(eye + C(t) * w)
            if inv is None:
                bad = t
                break
            bound = max(bound, norm(inv))
        flags["D6_atom_inverses"] = CheckItem(bad is None, bound, bad)
        flags["D2_left_continuous_driver"] = CheckItem(True, None)

    return RegularityReport(C_a=C_a, V_Lambda=V_L, flags=flags)
