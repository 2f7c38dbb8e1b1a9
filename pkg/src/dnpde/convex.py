"""Convex potentials, subdifferential graphs, resolvents and Yosida maps.

Everything here is built around nonnegative convex potentials ``P`` with
``P(0) = 0``.  The subdifferential of such a potential is a maximal monotone
graph through the origin; it is represented only through quantities that are
always single valued: the resolvent ``J_lam = (I + lam*dP)^{-1}``, the Yosida
map ``G_lam(x) = (x - J_lam(x)) / lam``, the Moreau envelope and the convex
conjugate.  Multivalued points never need an arbitrary selection rule.

Scalar potentials act elementwise on arrays.  Vector potentials (radial or
separable) act on arrays whose last axis is the vector dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Potential",
    "PowerPotential",
    "AbsPotential",
    "HuberPotential",
    "ExpCoshPotential",
    "SampledSlopePotential",
    "RadialPotential",
    "SeparablePotential",
    "MonotoneGraph",
    "RootFindError",
    "ConjugateSearchError",
    "make_potential",
    "eval_potential",
    "resolvent",
    "yosida",
    "moreau_envelope",
    "minimal_section",
    "conjugate",
    "fenchel_residual",
    "validate_potential",
    "ValidationReport",
]

ROOT_TOL = 1e-12          # absolute tolerance on resolvent points
BRACKET_CAP = 2.0 ** 60   # maximal bracket half-width before giving up
DOMAIN_SLACK = 1e-9       # roundoff slack on indicator-type conjugate domains


class RootFindError(RuntimeError):
    """Resolvent root search failed (bracket or tolerance)."""


class ConjugateSearchError(RuntimeError):
    """Numerical conjugate ray search exhausted its budget."""


def _as_float_array(x, name="x"):
    a = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite input {name!r}")
    return a


def _match(template, a):
    """Return float for scalar inputs, ndarray otherwise."""
    if np.isscalar(template) or (isinstance(template, np.ndarray) and template.ndim == 0):
        return float(a)
    return a


# ---------------------------------------------------------------------------
# potential catalog
# ---------------------------------------------------------------------------

class Potential:
    """Base class: convex ``P >= 0`` with ``P(0) = 0``.

    Subclasses provide ``value`` and ``minimal_slope`` (the minimal-norm
    subgradient, used as the probing selection and inside the generic
    bisection resolvent) and may provide closed-form resolvents/conjugates.
    """

    kind = "base"
    dim = 1
    is_vector = False
    scale = 1.0
    symmetry_bound = 1e6   # default C_sym when the user states none

    def value(self, x):
        raise NotImplementedError

    def minimal_slope(self, x):
        raise NotImplementedError

    closed_resolvent_available = False

    def closed_resolvent(self, lam, x):
        raise NotImplementedError

    closed_conjugate_available = False

    def closed_conjugate(self, y):
        raise NotImplementedError

    def _key(self):
        """Value identity of the potential (used for config comparisons)."""
        return (type(self).__name__, self.scale)

    def __eq__(self, other):
        return type(other) is type(self) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"{type(self).__name__}(kind={self.kind!r}, scale={self.scale})"


class PowerPotential(Potential):
    """``P(x) = scale * |x|**p / p`` with ``p > 1``.

    The graph is ``x -> scale * |x|**(p-2) * x``; closed-form resolvents exist
    for p in {1.5, 2, 4} (quadratic formula, linear, Cardano).
    """

    kind = "power"

    def __init__(self, p, scale=1.0):
        if not p > 1.0:
            raise ValueError("power potential needs p > 1 (use AbsPotential for p = 1)")
        if not scale > 0.0:
            raise ValueError("scale must be positive")
        self.p = float(p)
        self.scale = float(scale)

    def _key(self):
        return (type(self).__name__, self.p, self.scale)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.scale * np.abs(x) ** self.p / self.p

    def minimal_slope(self, x):
        x = np.asarray(x, dtype=float)
        return self.scale * np.sign(x) * np.abs(x) ** (self.p - 1.0)

    @property
    def closed_resolvent_available(self):
        return self.p in (1.5, 2.0, 4.0)

    def closed_resolvent(self, lam, x):
        x = np.asarray(x, dtype=float)
        c = lam * self.scale
        if self.p == 2.0:
            return x / (1.0 + c)
        a = np.abs(x)
        if self.p == 1.5:
            # r + c*sqrt(r) = a; quadratic in sqrt(r)
            t = 0.5 * (-c + np.sqrt(c * c + 4.0 * a))
            return np.sign(x) * t * t
        if self.p == 4.0:
            # c*r^3 + r = a, unique real root via the stable Cardano form
            pp = 1.0 / c
            disc = np.sqrt((a / (2.0 * c)) ** 2 + (pp / 3.0) ** 3)
            t1 = np.cbrt(a / (2.0 * c) + disc)
            return np.sign(x) * (t1 - pp / (3.0 * t1))
        raise NotImplementedError(f"no closed resolvent for p={self.p}")

    closed_conjugate_available = True

    def closed_conjugate(self, y):
        y = np.asarray(y, dtype=float)
        q = self.p / (self.p - 1.0)
        return self.scale ** (1.0 - q) * np.abs(y) ** q / q


class AbsPotential(Potential):
    """``P(x) = scale * |x|``; the graph is the scaled sign, multivalued at 0."""

    kind = "abs"

    def __init__(self, scale=1.0):
        if not scale > 0.0:
            raise ValueError("scale must be positive")
        self.scale = float(scale)

    def value(self, x):
        return self.scale * np.abs(np.asarray(x, dtype=float))

    def minimal_slope(self, x):
        return self.scale * np.sign(np.asarray(x, dtype=float))

    closed_resolvent_available = True

    def closed_resolvent(self, lam, x):
        # soft threshold
        x = np.asarray(x, dtype=float)
        return np.sign(x) * np.maximum(np.abs(x) - lam * self.scale, 0.0)

    closed_conjugate_available = True

    def closed_conjugate(self, y):
        y = np.asarray(y, dtype=float)
        inside = np.abs(y) <= self.scale * (1.0 + DOMAIN_SLACK)
        return np.where(inside, 0.0, np.inf)


class HuberPotential(Potential):
    """Quadratic inside ``|x| <= delta``, linear outside (scaled)."""

    kind = "huber"

    def __init__(self, delta=1.0, scale=1.0):
        if not delta > 0.0 or not scale > 0.0:
            raise ValueError("delta and scale must be positive")
        self.delta = float(delta)
        self.scale = float(scale)

    def _key(self):
        return (type(self).__name__, self.delta, self.scale)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        a = np.abs(x)
        d = self.delta
        return self.scale * np.where(a <= d, 0.5 * x * x, d * (a - 0.5 * d))

    def minimal_slope(self, x):
        x = np.asarray(x, dtype=float)
        return self.scale * np.clip(x, -self.delta, self.delta)

    closed_resolvent_available = True

    def closed_resolvent(self, lam, x):
        x = np.asarray(x, dtype=float)
        c = lam * self.scale
        inner = np.abs(x) <= self.delta * (1.0 + c)
        return np.where(inner, x / (1.0 + c), x - np.sign(x) * c * self.delta)

    closed_conjugate_available = True

    def closed_conjugate(self, y):
        y = np.asarray(y, dtype=float)
        inside = np.abs(y) <= self.scale * self.delta * (1.0 + DOMAIN_SLACK)
        return np.where(inside, y * y / (2.0 * self.scale), np.inf)


class ExpCoshPotential(Potential):
    """``P(x) = scale * (cosh(x) - 1)``; superlinear, no closed resolvent."""

    kind = "expcosh"

    def __init__(self, scale=1.0):
        if not scale > 0.0:
            raise ValueError("scale must be positive")
        self.scale = float(scale)

    def value(self, x):
        return self.scale * (np.cosh(np.asarray(x, dtype=float)) - 1.0)

    def minimal_slope(self, x):
        return self.scale * np.sinh(np.asarray(x, dtype=float))

    closed_conjugate_available = True

    def closed_conjugate(self, y):
        z = np.abs(np.asarray(y, dtype=float)) / self.scale
        return self.scale * (z * np.arcsinh(z) - np.sqrt(1.0 + z * z) + 1.0)


class SampledSlopePotential(Potential):
    """Potential defined by a piecewise-linear monotone derivative.

    ``xs``/``gs`` are breakpoints of the derivative, which is interpolated
    linearly between them and extended by its end values outside the range.
    The potential itself is the exact integral of the derivative from 0, so
    ``P(0) = 0`` holds exactly.  A breakpoint at the origin with zero slope is
    inserted automatically; construction fails if the given derivative does
    not vanish at 0 (the potential could not attain its minimum there).
    """

    kind = "piecewise"

    def __init__(self, xs, gs, origin_tol=1e-8):
        xs = np.asarray(xs, dtype=float)
        gs = np.asarray(gs, dtype=float)
        if xs.ndim != 1 or xs.shape != gs.shape or xs.size < 2:
            raise ValueError("need matching 1-d breakpoint arrays with >= 2 points")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(np.diff(gs) < -1e-12 * max(1.0, np.abs(gs).max())):
            raise ValueError("derivative samples must be nondecreasing (non-monotone user graph)")
        g0 = float(np.interp(0.0, xs, gs))
        if abs(g0) > origin_tol * max(1.0, np.abs(gs).max()):
            raise ValueError("derivative must vanish at the origin (minimum of the potential)")
        if 0.0 not in xs:
            i = int(np.searchsorted(xs, 0.0))
            xs = np.insert(xs, i, 0.0)
            gs = np.insert(gs, i, 0.0)
        else:
            gs = gs.copy()
            gs[xs == 0.0] = 0.0
        self.xs = xs
        self.gs = gs
        # cumulative exact integral of the piecewise-linear derivative,
        # anchored so that the origin breakpoint carries exactly 0
        seg = np.diff(xs) * 0.5 * (gs[:-1] + gs[1:])
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        self._cum = cum - cum[int(np.searchsorted(xs, 0.0))]

    def _key(self):
        return (type(self).__name__, self.xs.tobytes(), self.gs.tobytes())

    @classmethod
    def from_value_samples(cls, xs, values):
        """Build from samples ``(x, P(x))``: chord slopes placed at midpoints."""
        xs = np.asarray(xs, dtype=float)
        values = np.asarray(values, dtype=float)
        if xs.ndim != 1 or xs.shape != values.shape or xs.size < 3:
            raise ValueError("need >= 3 value samples")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("sample abscissae must be strictly increasing")
        slopes = np.diff(values) / np.diff(xs)
        mids = 0.5 * (xs[:-1] + xs[1:])
        return cls(mids, slopes)

    @classmethod
    def from_file(cls, path):
        data = np.loadtxt(path, dtype=float)
        if data.ndim != 2 or data.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns (x, P(x))")
        return cls.from_value_samples(data[:, 0], data[:, 1])

    def minimal_slope(self, x):
        return np.interp(np.asarray(x, dtype=float), self.xs, self.gs)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        xs, gs, cum = self.xs, self.gs, self._cum
        idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
        x0 = xs[idx]
        rate = (gs[idx + 1] - gs[idx]) / (xs[idx + 1] - xs[idx])
        t = x - x0
        inside = cum[idx] + gs[idx] * t + 0.5 * rate * t * t
        below = cum[0] + gs[0] * (x - xs[0])
        above = cum[-1] + gs[-1] * (x - xs[-1])
        return np.where(x < xs[0], below, np.where(x > xs[-1], above, inside))


class RadialPotential(Potential):
    """``k(x) = profile(|x|)`` on R^d, for even scalar profiles.

    The resolvent of its subdifferential reduces to the scalar resolvent of
    the profile applied to the radius.
    """

    kind = "radial"
    is_vector = True

    def __init__(self, profile: Potential, dim: int):
        if profile.is_vector:
            raise ValueError("radial profile must be a scalar potential")
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.profile = profile
        self.dim = int(dim)
        self.scale = profile.scale
        self.symmetry_bound = profile.symmetry_bound

    def _key(self):
        return (type(self).__name__, self.profile._key(), self.dim)

    def _radius(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ValueError(f"expected last axis of length {self.dim}, got shape {x.shape}")
        return np.sqrt(np.sum(x * x, axis=-1))

    def value(self, x):
        return self.profile.value(self._radius(x))

    def minimal_slope(self, x):
        x = np.asarray(x, dtype=float)
        r = self._radius(x)
        mag = self.profile.minimal_slope(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0.0, x / np.where(r == 0.0, 1.0, r)[..., None], 0.0)
        return mag[..., None] * unit

    @property
    def closed_resolvent_available(self):
        return self.profile.closed_resolvent_available

    def closed_resolvent(self, lam, x):
        x = np.asarray(x, dtype=float)
        r = self._radius(x)
        rho = self.profile.closed_resolvent(lam, r)
        safe = np.where(r == 0.0, 1.0, r)
        return (rho / safe)[..., None] * x

    @property
    def closed_conjugate_available(self):
        return self.profile.closed_conjugate_available

    def closed_conjugate(self, y):
        return self.profile.closed_conjugate(self._radius(y))


class SeparablePotential(Potential):
    """``k(x) = sum_i profile_i(x_i)`` on R^d."""

    kind = "separable"
    is_vector = True

    def __init__(self, profiles):
        profiles = tuple(profiles)
        if not profiles or any(p.is_vector for p in profiles):
            raise ValueError("need a nonempty tuple of scalar profiles")
        self.profiles = profiles
        self.dim = len(profiles)
        self.scale = max(p.scale for p in profiles)
        self.symmetry_bound = max(p.symmetry_bound for p in profiles)

    def _key(self):
        return (type(self).__name__,) + tuple(p._key() for p in self.profiles)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ValueError(f"expected last axis of length {self.dim}, got shape {x.shape}")
        return x

    def value(self, x):
        x = self._check(x)
        return sum(p.value(x[..., i]) for i, p in enumerate(self.profiles))

    def minimal_slope(self, x):
        x = self._check(x)
        return np.stack([p.minimal_slope(x[..., i]) for i, p in enumerate(self.profiles)], axis=-1)

    @property
    def closed_resolvent_available(self):
        return all(p.closed_resolvent_available for p in self.profiles)

    def closed_resolvent(self, lam, x):
        x = self._check(x)
        return np.stack(
            [p.closed_resolvent(lam, x[..., i]) for i, p in enumerate(self.profiles)], axis=-1
        )

    @property
    def closed_conjugate_available(self):
        return all(p.closed_conjugate_available for p in self.profiles)

    def closed_conjugate(self, y):
        y = self._check(y)
        return sum(p.closed_conjugate(y[..., i]) for i, p in enumerate(self.profiles))


_CATALOG = {
    "power": PowerPotential,
    "abs": AbsPotential,
    "huber": HuberPotential,
    "expcosh": ExpCoshPotential,
    "piecewise": SampledSlopePotential,
}


def make_potential(kind, **params):
    """Build a catalog potential from its config name and parameters.

    ``kind='sampled'`` loads a two-column ``(x, P(x))`` text file given by
    ``path=...``; the other kinds forward their keyword parameters.
    """
    if kind == "sampled":
        return SampledSlopePotential.from_file(params["path"])
    try:
        cls = _CATALOG[kind]
    except KeyError:
        raise ValueError(f"unknown potential kind {kind!r}") from None
    return cls(**params)


# ---------------------------------------------------------------------------
# graphs and the resolvent machinery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonotoneGraph:
    """Subdifferential graph of a potential.

    The graph is exposed through its resolvent and Yosida map only; the
    canonical selection at multivalued points is the Yosida value at a small
    regularization, which converges to the minimal-norm element.
    """

    potential: Potential
    selection_hint: str = "minimal-norm"

    def resolvent(self, lam, x, **kw):
        return resolvent(self, lam, x, **kw)

    def yosida(self, lam, x, **kw):
        return yosida(self, lam, x, **kw)

    def selection(self, x, lam=1e-8):
        return yosida(self, lam, x)


def _potential_of(obj):
    return obj.potential if isinstance(obj, MonotoneGraph) else obj


def _bisect_scalar_graph(pot, lam, x, tol=ROOT_TOL):
    """Solve ``r + lam*g(r) = x`` for each entry by safeguarded bisection.

    The residual is nondecreasing in ``r``; since 0 belongs to the graph at 0
    the bracket ``[min(x,0), max(x,0)]`` already straddles the root for
    catalog graphs, but the bracket is expanded by doubling as a safeguard.
    """
    x = np.asarray(x, dtype=float)
    lo = np.minimum(x, 0.0)
    hi = np.maximum(x, 0.0)

    def resid(r):
        return r + lam * np.asarray(pot.minimal_slope(r)) - x

    width = np.maximum(1.0, np.abs(x))
    for _ in range(64):
        bad_lo = resid(lo) > 0.0
        bad_hi = resid(hi) < 0.0
        if not bool(np.any(bad_lo) or np.any(bad_hi)):
            break
        lo = np.where(bad_lo, lo - width, lo)
        hi = np.where(bad_hi, hi + width, hi)
        width = width * 2.0
        if np.any(width > BRACKET_CAP):
            raise RootFindError("bracket expansion failed (non-monotone user graph?)")
    else:
        raise RootFindError("bracket expansion failed (non-monotone user graph?)")

    for _ in range(200):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        neg = resid(mid) < 0.0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    else:
        raise RootFindError(f"bisection did not reach tolerance {tol}")
    return 0.5 * (lo + hi)


def resolvent(graph, lam, x, *, force_bisect=False):
    """Resolvent ``J_lam(x)``: the unique ``r`` with ``r + lam*dP(r) ∋ x``.

    Closed forms are used when the catalog provides them unless
    ``force_bisect`` requests the generic bisection route (the two routes are
    kept independent so they can cross-check each other).
    """
    if not lam > 0.0:
        raise ValueError("lam must be positive")
    pot = _potential_of(graph)
    xa = _as_float_array(x)

    if isinstance(pot, RadialPotential):
        r = pot._radius(xa)
        if pot.profile.closed_resolvent_available and not force_bisect:
            rho = pot.profile.closed_resolvent(lam, r)
        else:
            rho = _bisect_scalar_graph(pot.profile, lam, r)
        safe = np.where(r == 0.0, 1.0, r)
        return _match(x, (rho / safe)[..., None] * xa)
    if isinstance(pot, SeparablePotential):
        xa = pot._check(xa)
        cols = []
        for i, p in enumerate(pot.profiles):
            if p.closed_resolvent_available and not force_bisect:
                cols.append(p.closed_resolvent(lam, xa[..., i]))
            else:
                cols.append(_bisect_scalar_graph(p, lam, xa[..., i]))
        return _match(x, np.stack(cols, axis=-1))

    if pot.closed_resolvent_available and not force_bisect:
        return _match(x, pot.closed_resolvent(lam, xa))
    return _match(x, _bisect_scalar_graph(pot, lam, xa))


def yosida(graph, lam, x, **kw):
    """Yosida map ``G_lam(x) = (x - J_lam(x)) / lam``: monotone, (1/lam)-Lipschitz."""
    xa = _as_float_array(x)
    j = resolvent(graph, lam, xa, **kw)
    return _match(x, (xa - j) / lam)


def minimal_section(graph, x):
    """Minimal-norm element of the graph at ``x`` (catalog closed form)."""
    pot = _potential_of(graph)
    return _match(x, np.asarray(pot.minimal_slope(_as_float_array(x))))


def _sq_dist(pot, x, j):
    d = np.asarray(x) - np.asarray(j)
    if pot.is_vector:
        return np.sum(d * d, axis=-1)
    return d * d


def moreau_envelope(potential, lam, x, **kw):
    """Moreau envelope ``P_lam(x) = min_r P(r) + |x-r|^2/(2 lam)``.

    Evaluated through the resolvent: ``P(J_lam x) + |x - J_lam x|^2/(2 lam)``.
    Its gradient is the Yosida map of the subdifferential.
    """
    pot = _potential_of(potential)
    xa = _as_float_array(x)
    j = resolvent(pot, lam, xa, **kw)
    return _match(x, pot.value(j) + _sq_dist(pot, xa, j) / (2.0 * lam))


# ---------------------------------------------------------------------------
# conjugacy
# ---------------------------------------------------------------------------

def _ray_conjugate_scalar(pot, y, decades=(-10.0, 16.0), per_decade=4, refine_iters=240):
    """sup_x x*y - P(x) by a log-spaced ray scan plus ternary refinement.

    The objective is concave along the ray x = t*sign(y), t >= 0.  Divergence
    is declared when the running sup keeps growing by more than a factor of
    10 across the final two scanned decades.
    """
    y = float(y)
    if y == 0.0:
        return 0.0
    s = math.copysign(1.0, y)
    ay = abs(y)

    def f(t):
        with np.errstate(over="ignore"):
            return t * ay - float(pot.value(s * t))

    ts = np.logspace(decades[0], decades[1], int((decades[1] - decades[0]) * per_decade) + 1)
    vals = np.array([f(t) for t in ts])
    best = int(np.argmax(vals))
    if best >= vals.size - 1:
        tail = vals[-1]
        two_decades_back = vals[-(2 * per_decade + 1)]
        if tail > 0.0 and (two_decades_back <= 0.0 or tail > 10.0 * two_decades_back):
            return math.inf
        raise ConjugateSearchError(
            "ray search budget exhausted without divergence certificate or interior maximum"
        )
    lo = ts[best - 1] if best > 0 else 0.0
    hi = ts[best + 1]
    for _ in range(refine_iters):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if f(m1) < f(m2):
            lo = m1
        else:
            hi = m2
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    t = 0.5 * (lo + hi)
    return max(0.0, f(t))


def conjugate(potential, y):
    """Fenchel conjugate ``P*(y) = sup_x <x,y> - P(x)``.

    Closed form for catalog kinds; otherwise an adaptive ray search whose
    termination is guaranteed by superlinearity.  Returns ``inf`` when the
    supremum diverges (possible for linear-growth scalar potentials).
    """
    pot = _potential_of(potential)
    ya = _as_float_array(y, "y")
    if pot.closed_conjugate_available:
        return _match(y, np.asarray(pot.closed_conjugate(ya)))
    if isinstance(pot, RadialPotential):
        r = pot._radius(ya)
        out = np.array([_ray_conjugate_scalar(pot.profile, v) for v in np.atleast_1d(np.abs(r)).ravel()])
        return _match(y, out.reshape(np.shape(r)))
    if isinstance(pot, SeparablePotential):
        ya = pot._check(ya)
        total = sum(
            np.array([_ray_conjugate_scalar(p, v) for v in np.atleast_1d(ya[..., i]).ravel()]).reshape(
                ya[..., i].shape
            )
            for i, p in enumerate(pot.profiles)
        )
        return _match(y, total)
    flat = np.atleast_1d(ya).ravel()
    out = np.array([_ray_conjugate_scalar(pot, v) for v in flat])
    return _match(y, out.reshape(ya.shape))


def eval_potential(potential, x):
    """Evaluate ``P(x)`` with input validation."""
    pot = _potential_of(potential)
    xa = _as_float_array(x)
    if pot.is_vector and xa.shape[-1:] != (pot.dim,):
        raise ValueError(f"dimension mismatch: expected last axis {pot.dim}, got shape {xa.shape}")
    return _match(x, np.asarray(pot.value(xa)))


def fenchel_residual(potential, x, y):
    """Fenchel-Young residual ``P(x) + P*(y) - <x, y>`` (always >= 0).

    Vanishes exactly when ``y`` is a subgradient of ``P`` at ``x``.
    """
    pot = _potential_of(potential)
    xa = _as_float_array(x)
    ya = _as_float_array(y, "y")
    star = np.asarray(conjugate(pot, ya))
    if np.any(np.isinf(star)):
        raise ValueError("infinite conjugate: y outside dom P*")
    if pot.is_vector:
        pairing = np.sum(xa * ya, axis=-1)
    else:
        pairing = xa * ya
    return _match(x, np.asarray(pot.value(xa)) + star - pairing)


# ---------------------------------------------------------------------------
# validation probes
# ---------------------------------------------------------------------------

@dataclass
class CheckResult:
    passed: bool
    worst: float
    detail: str
    where: object = None   # the offending sample point, when there is one


@dataclass
class ValidationReport:
    checks: dict

    @property
    def all_passed(self):
        return all(c.passed for c in self.checks.values())

    def lines(self):
        out = []
        for name, c in self.checks.items():
            loc = "" if c.where is None else f" at x={np.asarray(c.where)}"
            out.append(
                f"{'PASS' if c.passed else 'FAIL'} {name}: worst={c.worst:.6g}{loc} {c.detail}"
            )
        return out


def _probe_points(pot, probe_radius, sample_count, rng):
    if pot.is_vector:
        d = pot.dim
        dirs = rng.standard_normal((sample_count, d))
        dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-30)
        radii = probe_radius * rng.random(sample_count) ** 0.5
        return dirs * radii[:, None]
    return probe_radius * (2.0 * rng.random(sample_count) - 1.0)


def validate_potential(potential, probe_radius, sample_count, seed=20260809):
    """Finite sampling probe of the standing assumptions on a potential.

    Checks: exact zero at the origin, nonnegativity, convexity on sampled
    triples (1e-12 relative slack), the superlinearity probe (vector
    potentials only) and the symmetry ratio against ``symmetry_bound``.
    Failures are report entries, never exceptions.
    """
    pot = _potential_of(potential)
    if not probe_radius > 0.0:
        raise ValueError("probe_radius must be positive")
    if sample_count < 8:
        raise ValueError("sample_count must be >= 8")
    rng = np.random.default_rng(seed)
    checks = {}

    origin = np.zeros(pot.dim) if pot.is_vector else 0.0
    v0 = float(np.asarray(pot.value(np.asarray(origin))))
    checks["origin"] = CheckResult(v0 == 0.0, v0, "P(0) must be exactly 0")

    xs = _probe_points(pot, probe_radius, sample_count, rng)
    vals = np.asarray(pot.value(xs))
    k = int(np.argmin(vals))
    worst = float(vals[k])
    checks["nonnegative"] = CheckResult(worst >= 0.0, worst, "min sampled value", xs[k])

    ys = _probe_points(pot, probe_radius, sample_count, rng)
    theta = rng.random(sample_count)
    if pot.is_vector:
        mix = theta[:, None] * xs + (1.0 - theta[:, None]) * ys
    else:
        mix = theta * xs + (1.0 - theta) * ys
    lhs = np.asarray(pot.value(mix))
    rhs = theta * vals + (1.0 - theta) * np.asarray(pot.value(ys))
    gap = lhs - rhs - 1e-12 * (1.0 + np.abs(rhs))
    k = int(np.argmax(gap))
    worst = float(gap[k])
    checks["convex"] = CheckResult(worst <= 0.0, worst, "midpoint inequality violation", mix[k])

    if pot.is_vector:
        n_dirs = max(4, sample_count // 8)
        dirs = rng.standard_normal((n_dirs, pot.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = np.geomspace(probe_radius / 64.0, probe_radius, 8)
        ratios = np.asarray(pot.value(radii[:, None, None] * dirs[None, :, :])) / radii[:, None]
        nondecreasing = bool(np.all(np.diff(ratios, axis=0) >= -1e-10 * (1.0 + ratios[:-1])))
        growth = float((ratios[-1] / np.maximum(ratios[0], 1e-300)).min())
        checks["superlinear"] = CheckResult(
            nondecreasing and growth >= 1.5,
            growth,
            "slope growth over the probe range (needs >= 1.5 and monotone)",
        )

    neg_vals = np.asarray(pot.value(-xs))
    mask = neg_vals > 0.0
    if np.any(mask):
        ratios = vals[mask] / neg_vals[mask]
        k = int(np.argmax(ratios))
        ratio = float(ratios[k])
        where = xs[mask][k]
    else:
        ratio, where = 0.0, None
    checks["symmetry"] = CheckResult(
        ratio <= pot.symmetry_bound,
        ratio,
        f"max P(x)/P(-x) vs C_sym={pot.symmetry_bound:g}",
        where,
    )
    return ValidationReport(checks)
