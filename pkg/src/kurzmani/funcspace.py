"""Piecewise-smooth paths, Stieltjes measures, gauges and tagged divisions.

Every path handled by this library is smooth between finitely many
breakpoints, with explicit one-sided limits stored at each breakpoint.  This
class is closed under the operations the solvers need (sums, running
integrals, variation) and covers exactly what the impulsive and
measure-driven realizations produce.  Smooth segments are polynomials in t
plus a small set of named function families (exp, sin/cos, and lacunary
trigonometric sums), each closed under differentiation and antidifferentiation.

Conventions used throughout:
  * paths are left-continuous at a breakpoint unless a value is overridden,
    so a jump shows up as a right-jump ``right_limit - value_at``;
  * vector norms are Euclidean, matrix norms are the operator 2-norm;
  * a window is a finite closed interval [c, d].
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad


class QuadratureError(RuntimeError):
    """Adaptive quadrature stopped above the requested tolerance."""

    def __init__(self, message, achieved):
        super().__init__(message)
        self.achieved = achieved


class CousinError(RuntimeError):
    """Bisection for a delta-fine division hit the depth limit."""

    def __init__(self, message, interval):
        super().__init__(message)
        self.interval = interval


def norm(value) -> float:
    """Euclidean norm for scalars/vectors, operator 2-norm for matrices."""
    a = np.asarray(value, dtype=float)
    if a.ndim <= 1:
        return float(np.linalg.norm(a))
    return float(np.linalg.norm(a, 2))


def _check_window(window):
    c, d = float(window[0]), float(window[1])
    if not (math.isfinite(c) and math.isfinite(d)):
        raise ValueError("window endpoints must be finite, got %r" % (window,))
    if d < c:
        raise ValueError("window must satisfy c <= d, got %r" % (window,))
    return c, d


# ---------------------------------------------------------------------------
# smooth segments: polynomial part + named preset terms
# ---------------------------------------------------------------------------

_PRESET_KINDS = ("exp", "sin", "cos", "wcos", "wsin")


@dataclass(frozen=True)
class PresetTerm:
    """One named smooth term, ``amp * family(t; params)``.

    Families:
      exp   amp * e^{r t},            params = (r,),  r != 0
      sin   amp * sin(w t + p),       params = (w, p), w != 0
      cos   amp * cos(w t + p),       params = (w, p), w != 0
      wcos  amp * sum_{k<n} a^k cos(b^k pi t),  params = (a, b, n)
      wsin  amp * sum_{k<n} a^k sin(b^k pi t),  params = (a, b, n)

    The lacunary sums (wcos/wsin) give highly oscillatory but smooth test
    integrands; all five families are closed under d/dt and antiderivative.
    """

    kind: str
    amp: np.ndarray
    params: tuple

    def __post_init__(self):
        if self.kind not in _PRESET_KINDS:
            raise ValueError("unknown preset kind %r" % (self.kind,))
        object.__setattr__(self, "amp", np.asarray(self.amp, dtype=float))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind == "exp" and self.params[0] == 0.0:
            raise ValueError("exp preset needs a nonzero rate (use a constant)")
        if self.kind in ("sin", "cos") and self.params[0] == 0.0:
            raise ValueError("trig preset needs a nonzero frequency")

    def _scalar(self, ts):
        if self.kind == "exp":
            return np.exp(self.params[0] * ts)
        if self.kind == "sin":
            return np.sin(self.params[0] * ts + self.params[1])
        if self.kind == "cos":
            return np.cos(self.params[0] * ts + self.params[1])
        a, b, n = self.params
        ks = np.arange(int(n))
        args = np.multiply.outer(b ** ks * math.pi, ts)
        trig = np.cos(args) if self.kind == "wcos" else np.sin(args)
        return np.tensordot(a ** ks, trig, axes=(0, 0))

    def eval(self, ts):
        """Values at an array of times; shape ``ts.shape + amp.shape``."""
        ts = np.asarray(ts, dtype=float)
        return np.multiply.outer(self._scalar(ts), self.amp)

    def scaled(self, c):
        return PresetTerm(self.kind, c * self.amp, self.params)

    def derivative(self):
        if self.kind == "exp":
            r = self.params[0]
            return PresetTerm("exp", r * self.amp, self.params)
        if self.kind == "sin":
            w = self.params[0]
            return PresetTerm("cos", w * self.amp, self.params)
        if self.kind == "cos":
            w = self.params[0]
            return PresetTerm("sin", -w * self.amp, self.params)
        a, b, n = self.params
        if self.kind == "wcos":
            return PresetTerm("wsin", -math.pi * self.amp, (a * b, b, n))
        return PresetTerm("wcos", math.pi * self.amp, (a * b, b, n))

    def antiderivative(self):
        if self.kind == "exp":
            r = self.params[0]
            return PresetTerm("exp", self.amp / r, self.params)
        if self.kind == "sin":
            w = self.params[0]
            return PresetTerm("cos", -self.amp / w, self.params)
        if self.kind == "cos":
            w = self.params[0]
            return PresetTerm("sin", self.amp / w, self.params)
        a, b, n = self.params
        if self.kind == "wcos":
            return PresetTerm("wsin", self.amp / math.pi, (a / b, b, n))
        return PresetTerm("wcos", -self.amp / math.pi, (a / b, b, n))


@dataclass(frozen=True)
class Segment:
    """A smooth map t -> value: polynomial coefficients plus preset terms.

    ``coeffs`` has shape ``(deg+1,) + value_shape`` with value
    ``sum_k coeffs[k] t^k``.
    """

    coeffs: np.ndarray
    terms: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim == 0:
            c = c.reshape(1)
        object.__setattr__(self, "coeffs", c)
        for term in self.terms:
            if term.amp.shape != self.shape:
                raise ValueError("preset term shape %r does not match segment shape %r"
                                 % (term.amp.shape, self.shape))

    @property
    def shape(self):
        return self.coeffs.shape[1:]

    @staticmethod
    def constant(value):
        v = np.asarray(value, dtype=float)
        return Segment(v.reshape((1,) + v.shape))

    @staticmethod
    def polynomial(coeff_list):
        coeffs = np.stack([np.asarray(c, dtype=float) for c in coeff_list])
        return Segment(coeffs)

    @staticmethod
    def preset(kind, amp, params):
        term = PresetTerm(kind, amp, params)
        zero = np.zeros((1,) + term.amp.shape)
        return Segment(zero, (term,))

    def eval(self, ts):
        ts = np.asarray(ts, dtype=float)
        scalar_in = ts.ndim == 0
        ts = np.atleast_1d(ts)
        powers = np.vander(ts, N=self.coeffs.shape[0], increasing=True)
        out = np.tensordot(powers, self.coeffs, axes=(1, 0))
        for term in self.terms:
            out = out + term.eval(ts)
        return out[0] if scalar_in else out

    def value(self, t):
        return self.eval(float(t))

    @property
    def is_constant(self):
        return self.coeffs.shape[0] == 1 and not self.terms

    def derivative(self):
        k = self.coeffs.shape[0]
        if k == 1:
            dcoeffs = np.zeros((1,) + self.shape)
        else:
            scale = np.arange(1, k).reshape((k - 1,) + (1,) * len(self.shape))
            dcoeffs = self.coeffs[1:] * scale
        return Segment(dcoeffs, tuple(t.derivative() for t in self.terms))

    def antiderivative(self):
        k = self.coeffs.shape[0]
        scale = np.arange(1, k + 1).reshape((k,) + (1,) * len(self.shape))
        acoeffs = np.concatenate([np.zeros((1,) + self.shape), self.coeffs / scale])
        return Segment(acoeffs, tuple(t.antiderivative() for t in self.terms))

    def scaled(self, c):
        c = float(c)
        return Segment(c * self.coeffs, tuple(t.scaled(c) for t in self.terms))

    def plus(self, other):
        if other.shape != self.shape:
            raise ValueError("segment shapes differ: %r vs %r" % (self.shape, other.shape))
        ka, kb = self.coeffs.shape[0], other.coeffs.shape[0]
        k = max(ka, kb)
        coeffs = np.zeros((k,) + self.shape)
        coeffs[:ka] += self.coeffs
        coeffs[:kb] += other.coeffs
        return Segment(coeffs, self.terms + other.terms)

    def times_scalar_segment(self, other):
        """Product with a scalar-valued segment.

        Closed only when at least one factor is preset-free (polynomial); a
        preset times a non-constant factor leaves the representable class.
        """
        if other.shape != ():
            raise ValueError("multiplier segment must be scalar-valued")
        if other.is_constant:
            return self.scaled(float(other.coeffs[0]))
        if self.is_constant:
            const = self.coeffs[0]
            coeffs = np.multiply.outer(other.coeffs, const)
            terms = tuple(PresetTerm(t.kind, float(t.amp) * const, t.params)
                          for t in other.terms)
            return Segment(coeffs, terms)
        if self.terms or other.terms:
            raise NotImplementedError(
                "product of preset segments with non-constant factors is not representable")
        conv = np.zeros((self.coeffs.shape[0] + other.coeffs.shape[0] - 1,) + self.shape)
        for i in range(self.coeffs.shape[0]):
            for j in range(other.coeffs.shape[0]):
                conv[i + j] += self.coeffs[i] * float(other.coeffs[j])
        return Segment(conv)


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Breakpoint:
    """A point where the path may jump; all three values have equal shape."""

    time: float
    left_limit: np.ndarray
    value_at: np.ndarray
    right_limit: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "time", float(self.time))
        for name in ("left_limit", "value_at", "right_limit"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.left_limit.shape == self.value_at.shape == self.right_limit.shape):
            raise ValueError("breakpoint limit shapes differ at t=%g" % self.time)

    @property
    def left_jump(self):
        return self.value_at - self.left_limit

    @property
    def right_jump(self):
        return self.right_limit - self.value_at


class PiecewisePath:
    """A regulated, piecewise-smooth path on the whole line.

    ``segments`` has one entry per open interval between consecutive
    breakpoints plus the two unbounded ends (so ``len(segments) ==
    len(breakpoints) + 1``).  One-sided limits exist everywhere by
    construction; evaluation at a breakpoint returns the stored value.
    """

    def __init__(self, segments, breakpoints=(), _skip_checks=False):
        self.segments = tuple(segments)
        self.breakpoints = tuple(breakpoints)
        if len(self.segments) != len(self.breakpoints) + 1:
            raise ValueError("need len(segments) == len(breakpoints) + 1")
        self.shape = self.segments[0].shape
        self.times = np.array([bp.time for bp in self.breakpoints])
        if _skip_checks:
            return
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("breakpoint times must be strictly increasing")
        for seg in self.segments:
            if seg.shape != self.shape:
                raise ValueError("all segments must share one value shape")
        for i, bp in enumerate(self.breakpoints):
            left = self.segments[i].value(bp.time)
            right = self.segments[i + 1].value(bp.time)
            scale = 1.0 + norm(left) + norm(right)
            if norm(left - bp.left_limit) > 1e-9 * scale:
                raise ValueError("segment/left-limit mismatch at t=%g" % bp.time)
            if norm(right - bp.right_limit) > 1e-9 * scale:
                raise ValueError("segment/right-limit mismatch at t=%g" % bp.time)
            if not np.all(np.isfinite(bp.value_at)):
                raise ValueError("non-finite breakpoint value at t=%g" % bp.time)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def constant(value):
        return PiecewisePath([Segment.constant(value)])

    @staticmethod
    def polynomial(coeff_list):
        return PiecewisePath([Segment.polynomial(coeff_list)])

    @staticmethod
    def preset(kind, amp, params):
        return PiecewisePath([Segment.preset(kind, amp, params)])

    @staticmethod
    def from_segments(times, segments, values=None):
        """Stitch explicit segments at the given breakpoint times.

        ``values`` optionally overrides the stored value at each breakpoint
        (default: the left limit, i.e. a left-continuous path).
        """
        segments = [s if isinstance(s, Segment) else Segment.constant(s) for s in segments]
        bps = []
        for i, t in enumerate(times):
            left = segments[i].value(t)
            right = segments[i + 1].value(t)
            val = left if values is None or values[i] is None else np.asarray(values[i], float)
            bps.append(Breakpoint(t, left, val, right))
        return PiecewisePath(segments, bps)

    @staticmethod
    def step(time, jump, base=None):
        """A path equal to ``base`` then ``base + jump`` after ``time``.

        Left-continuous: the stored value at ``time`` is still ``base``.
        """
        jump = np.asarray(jump, dtype=float)
        if base is None:
            base = np.zeros_like(jump)
        lo = Segment.constant(base)
        hi = Segment.constant(np.asarray(base, float) + jump)
        return PiecewisePath.from_segments([time], [lo, hi])

    # -- evaluation ---------------------------------------------------------

    def _bp_index(self, t):
        if len(self.times) == 0:
            return None
        i = bisect_left(self.times.tolist(), t)
        if i < len(self.times) and self.times[i] == t:
            return i
        return None

    def segment_index(self, t, side=0):
        """Index of the segment governing t (side<0 left, >0 right of a bp)."""
        ts = self.times.tolist()
        if side <= 0:
            return bisect_left(ts, t)
        return bisect_right(ts, t)

    def __call__(self, t):
        t = float(t)
        i = self._bp_index(t)
        if i is not None:
            return self.breakpoints[i].value_at
        return self.segments[self.segment_index(t)].value(t)

    def left(self, t):
        t = float(t)
        i = self._bp_index(t)
        if i is not None:
            return self.breakpoints[i].left_limit
        return self.segments[self.segment_index(t, side=-1)].value(t)

    def right(self, t):
        t = float(t)
        i = self._bp_index(t)
        if i is not None:
            return self.breakpoints[i].right_limit
        return self.segments[self.segment_index(t, side=+1)].value(t)

    def sample(self, ts):
        """Batch evaluation; breakpoint times get their stored values."""
        ts = np.asarray(ts, dtype=float)
        flat = np.atleast_1d(ts)
        out = np.empty(flat.shape + self.shape)
        idx = np.searchsorted(self.times, flat, side="left") if len(self.times) else \
            np.zeros(flat.shape, dtype=int)
        for seg_i in np.unique(idx):
            mask = idx == seg_i
            out[mask] = self.segments[seg_i].eval(flat[mask])
        for i, bp in enumerate(self.breakpoints):
            hit = flat == bp.time
            if np.any(hit):
                out[hit] = bp.value_at
        return out.reshape(ts.shape + self.shape)

    def breakpoints_in(self, lo, hi, include_lo=True, include_hi=True):
        for bp in self.breakpoints:
            if (lo < bp.time < hi) or (include_lo and bp.time == lo) or \
                    (include_hi and bp.time == hi):
                yield bp

    # -- algebra ------------------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, PiecewisePath):
            other = PiecewisePath.constant(other)
        if other.shape != self.shape:
            raise ValueError("path shapes differ: %r vs %r" % (self.shape, other.shape))
        times = np.union1d(self.times, other.times)
        segments = []
        bps = []
        for i in range(len(times) + 1):
            lo = -math.inf if i == 0 else times[i - 1]
            hi = math.inf if i == len(times) else times[i]
            probe = _interior_point(lo, hi)
            sa = self.segments[self.segment_index(probe)]
            sb = other.segments[other.segment_index(probe)]
            segments.append(sa.plus(sb))
        for t in times:
            bps.append(Breakpoint(t, self.left(t) + other.left(t),
                                  self(t) + other(t),
                                  self.right(t) + other.right(t)))
        return PiecewisePath(segments, bps)

    def __mul__(self, c):
        c = float(c)
        segments = [s.scaled(c) for s in self.segments]
        bps = [Breakpoint(b.time, c * b.left_limit, c * b.value_at, c * b.right_limit)
               for b in self.breakpoints]
        return PiecewisePath(segments, bps)

    __rmul__ = __mul__

    def __sub__(self, other):
        if not isinstance(other, PiecewisePath):
            other = PiecewisePath.constant(other)
        return self + (-1.0) * other


def _interior_point(lo, hi):
    if math.isinf(lo) and math.isinf(hi):
        return 0.0
    if math.isinf(lo):
        return hi - 1.0
    if math.isinf(hi):
        return lo + 1.0
    return 0.5 * (lo + hi)


def running_integral(path, t0):
    """The continuous path t -> integral of ``path`` from t0 to t.

    Jumps of the integrand contribute nothing; the result has kinks (zero
    jumps) at the integrand's breakpoints.
    """
    t0 = float(t0)
    anti = [seg.antiderivative() for seg in path.segments]
    k = path.segment_index(t0)
    offsets = [np.zeros(path.shape) for _ in anti]
    offsets[k] = -anti[k].value(t0)
    for i in range(k + 1, len(anti)):
        t = path.times[i - 1]
        offsets[i] = offsets[i - 1] + anti[i - 1].value(t) - anti[i].value(t)
    for i in range(k - 1, -1, -1):
        t = path.times[i]
        offsets[i] = offsets[i + 1] + anti[i + 1].value(t) - anti[i].value(t)
    segments = [Segment(a.coeffs.copy(), a.terms).plus(Segment.constant(off))
                for a, off in zip(anti, offsets)]
    bps = []
    for i, t in enumerate(path.times):
        v = segments[i].value(t)
        bps.append(Breakpoint(t, v, v, v))
    return PiecewisePath(segments, bps)


# ---------------------------------------------------------------------------
# Stieltjes measures
# ---------------------------------------------------------------------------

class StieltjesMeasure:
    """A measure with an absolutely continuous density plus finitely many atoms.

    The induced distribution function is left-continuous (every atom is a
    right-jump), so an atom at ``a`` belongs to the window [a, b) and an atom
    at ``b`` does not.
    """

    def __init__(self, density=None, atoms=(), nondecreasing=False):
        if density is None:
            density = PiecewisePath.constant(0.0)
        if not isinstance(density, PiecewisePath):
            density = PiecewisePath.constant(float(density))
        if density.shape != ():
            raise ValueError("measure density must be scalar-valued")
        self.density = density
        atoms = tuple((float(t), float(w)) for t, w in atoms)
        times = [t for t, _ in atoms]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("atom times must be strictly increasing")
        self.atoms = atoms
        self.nondecreasing = bool(nondecreasing)
        if self.nondecreasing:
            if any(w < 0 for _, w in atoms):
                raise ValueError("nondecreasing measure cannot have negative atoms")
            self._check_density_sign()

    def _check_density_sign(self):
        # sampled check per segment; sufficient for the representable class
        cuts = [-1.0, 0.0, 1.0] if len(self.density.times) == 0 else \
            list(self.density.times)
        lo, hi = min(cuts) - 1.0, max(cuts) + 1.0
        grid = np.unique(np.concatenate([np.linspace(lo, hi, 41), np.asarray(cuts)]))
        if np.any(self.density.sample(grid) < -1e-12):
            raise ValueError("nondecreasing measure needs a nonnegative density")

    @staticmethod
    def lebesgue():
        return StieltjesMeasure(PiecewisePath.constant(1.0), (), nondecreasing=True)

    def atoms_in(self, lo, hi):
        """Atoms belonging to the window [lo, hi)."""
        return [(t, w) for t, w in self.atoms if lo <= t < hi]

    def variation(self, window, quad_tol=1e-10):
        c, d = _check_window(window)
        total = 0.0
        cuts = sorted({c, d} | {t for t in self.density.times if c < t < d})
        for a, b in zip(cuts, cuts[1:]):
            if b > a:
                val, _ = _quad_cell(lambda t: abs(float(self.density.sample(t))),
                                    a, b, quad_tol)
                total += val
        total += sum(abs(w) for _, w in self.atoms_in(c, d))
        return total

    def distribution(self, t0=0.0):
        """The left-continuous function u with du equal to this measure.

        Normalized so u(t0) accounts for no atom at t0 itself; only
        differences of u ever matter to the integrals.
        """
        base = running_integral(self.density, t0)
        for t, w in self.atoms:
            base = base + PiecewisePath.step(t, w)
        return base


def running_stieltjes_integral(f, mu, t0):
    """The path t -> integral of f d(mu) from t0 to t (left-continuous).

    Smooth part needs the product ``f * density`` to stay representable
    (polynomial x polynomial, or either factor constant).
    """
    t0 = float(t0)
    times = np.union1d(f.times, mu.density.times)
    segs = []
    for i in range(len(times) + 1):
        lo = -math.inf if i == 0 else times[i - 1]
        hi = math.inf if i == len(times) else times[i]
        probe = _interior_point(lo, hi)
        fs = f.segments[f.segment_index(probe)]
        rs = mu.density.segments[mu.density.segment_index(probe)]
        segs.append(fs.times_scalar_segment(rs))
    smooth = running_integral(PiecewisePath.from_segments(times, segs), t0)
    for t, w in mu.atoms:
        smooth = smooth + PiecewisePath.step(t, w * f(t))
    return smooth


# ---------------------------------------------------------------------------
# gauges and tagged divisions
# ---------------------------------------------------------------------------

class Gauge:
    """A piecewise-constant positive function delta(t) on a window."""

    def __init__(self, nodes, values):
        self.nodes = np.asarray(nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if len(self.nodes) != len(self.values) + 1:
            raise ValueError("need len(nodes) == len(values) + 1")
        if not np.all(np.diff(self.nodes) > 0):
            raise ValueError("gauge nodes must be strictly increasing")
        if np.any(self.values <= 0):
            raise ValueError("gauge must be strictly positive")

    @staticmethod
    def constant(delta, window):
        c, d = _check_window(window)
        return Gauge([c, d], [float(delta)])

    @property
    def window(self):
        return (float(self.nodes[0]), float(self.nodes[-1]))

    def __call__(self, t):
        t = float(t)
        if not (self.nodes[0] <= t <= self.nodes[-1]):
            raise ValueError("t=%g outside gauge window %r" % (t, self.window))
        i = min(int(np.searchsorted(self.nodes, t, side="right")) - 1,
                len(self.values) - 1)
        return float(self.values[max(i, 0)])


@dataclass(frozen=True)
class TaggedDivision:
    """Nodes c = t_0 <= ... <= t_m = d with a tag in every subinterval."""

    nodes: np.ndarray
    tags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "tags", np.asarray(self.tags, dtype=float))
        if len(self.nodes) != len(self.tags) + 1:
            raise ValueError("need len(nodes) == len(tags) + 1")
        if np.any(np.diff(self.nodes) < 0):
            raise ValueError("division nodes must be weakly increasing")
        lo, hi = self.nodes[:-1], self.nodes[1:]
        if np.any(self.tags < lo) or np.any(self.tags > hi):
            raise ValueError("every tag must lie in its subinterval")

    @property
    def window(self):
        return (float(self.nodes[0]), float(self.nodes[-1]))

    def cells(self):
        for j in range(len(self.tags)):
            yield float(self.tags[j]), float(self.nodes[j]), float(self.nodes[j + 1])


def is_delta_fine(division, gauge) -> bool:
    """True iff every cell [t_{j-1}, t_j] sits inside (tag-delta, tag+delta)."""
    dw, gw = division.window, gauge.window
    if abs(dw[0] - gw[0]) > 1e-12 or abs(dw[1] - gw[1]) > 1e-12:
        raise ValueError("division window %r does not match gauge window %r" % (dw, gw))
    for tau, a, b in division.cells():
        delta = gauge(tau)
        if not (tau - delta < a and b < tau + delta):
            return False
    return True


def cousin_division(gauge, window=None, max_depth=64):
    """Construct a delta-fine tagged division by recursive bisection.

    Each candidate subinterval is admitted once some tag inside it covers it;
    positivity of the (piecewise-constant) gauge guarantees termination, and
    the depth limit guards against degenerate inputs.
    """
    if window is None:
        window = gauge.window
    c, d = _check_window(window)
    gw = gauge.window
    if c < gw[0] - 1e-12 or d > gw[1] + 1e-12:
        raise ValueError("window %r not covered by gauge window %r" % ((c, d), gw))
    cells = []

    def admit(a, b):
        for tau in (0.5 * (a + b), a, b):
            delta = gauge(tau)
            if tau - delta < a and b < tau + delta:
                return tau
        return None

    def split(a, b, depth):
        tau = admit(a, b)
        if tau is not None:
            cells.append((tau, a, b))
            return
        if depth >= max_depth:
            raise CousinError("no admissible tag after %d bisections" % depth, (a, b))
        mid = 0.5 * (a + b)
        split(a, mid, depth + 1)
        split(mid, b, depth + 1)

    if c == d:
        return TaggedDivision(np.array([c, d]), np.array([c]))
    split(c, d, 0)
    cells.sort(key=lambda item: item[1])
    nodes = np.array([c] + [b for _, _, b in cells])
    tags = np.array([tau for tau, _, _ in cells])
    return TaggedDivision(nodes, tags)


# ---------------------------------------------------------------------------
# variation
# ---------------------------------------------------------------------------

def _quad_cell(f, a, b, tol):
    val, err = quad(f, a, b, epsabs=tol, epsrel=1e-12, limit=200)
    return val, err


def total_variation(path, window, quad_tol=1e-10):
    """Variation of a piecewise-smooth path over [c, d].

    Exact for this path class up to quadrature tolerance: the smooth part
    contributes the integral of the derivative's norm, a breakpoint inside
    the window contributes its one-sided jump norms (left jumps count on
    (c, d], right jumps on [c, d))."""
    c, d = _check_window(window)
    total = 0.0
    worst_err = 0.0
    cuts = sorted({c, d} | {bp.time for bp in path.breakpoints if c < bp.time < d})
    for a, b in zip(cuts, cuts[1:]):
        if b <= a:
            continue
        dseg = path.segments[path.segment_index(0.5 * (a + b))].derivative()
        val, err = _quad_cell(lambda t: norm(dseg.value(t)), a, b, quad_tol)
        total += val
        worst_err = max(worst_err, err)
    for bp in path.breakpoints:
        if c < bp.time <= d:
            total += norm(bp.left_jump)
        if c <= bp.time < d:
            total += norm(bp.right_jump)
    if worst_err > max(100 * quad_tol, 1e-8 * (1.0 + abs(total))):
        raise QuadratureError(
            "variation quadrature achieved only %.3e" % worst_err, worst_err)
    return total
