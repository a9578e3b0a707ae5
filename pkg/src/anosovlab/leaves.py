"""Local invariant manifolds, holonomies, angles and the su-loop probe.

Leaf points are computed together with their whole orbit segment by a
Lyapunov-Perron sweep: write y_n = x_n + P xi_n with P the eigenbasis of
the linear part, then integrate contracting components forward from the
past, expanding components backward from the future, and prescribe the
leaf coordinate at time 0. The resulting pairs (x_n, y_n) stay consistent
for 60+ steps in both directions, which plain inversion cannot deliver
because rounding in the stable direction grows under f^-1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .errors import NoIntersection, NonConvergence, ResolutionExceeded
from .splitting import (
    DEFAULT_DEPTH,
    centred_orbit,
    frames_on_orbit,
    linear_eigenvalues,
    linear_eigenvectors,
    one_step_rates,
)
from .torus_maps import TWO_PI, MapModel, lift_delta, wrap

COMPONENT = {"s": 0, "c": 1, "u": 2}
# which end of the orbit segment pins each eigen-component to zero;
# "zero" marks the prescribed leaf coordinates
ANCHORS = {
    "u": ("left", "left", "zero"),
    "cu": ("left", "zero", "zero"),
    "c": ("left", "zero", "right"),
    "cs": ("zero", "zero", "right"),
    "s": ("zero", "right", "right"),
}
# orbit extent needed by each leaf type: (past, future)
EXTENT = {"u": (1, 0), "cu": (1, 0), "c": (1, 1), "cs": (0, 1), "s": (0, 1)}


def _shear_direction(model: MapModel):
    if model.is_linear:
        return np.zeros(3)
    if model.kind == "dissipative":
        return np.array([1.0, 0.0, 0.0])
    return np.array([1.0, 1.0, 0.0])


def perron_sweep(model: MapModel, ref_orbit, n0: int, anchors, values, tol: float = 1e-14,
                 max_sweeps: int = 200):
    """Solve for eigen-coordinates xi_n of y_n - x_n along a reference orbit.

    ``ref_orbit`` is (L, 3) or (B, L, 3) with time 0 at index ``n0``.
    ``values`` (B, 3) holds the prescribed components (those anchored
    "zero"); other entries are ignored. Returns xi with shape (B, L, 3).

    Each sweep freezes the nonlinear term and solves the three scalar
    recurrences in closed form with cumulative sums, so the whole segment
    is updated at once.
    """
    ref = np.asarray(ref_orbit, dtype=float)
    if ref.ndim == 2:
        ref = ref[None]
    values = np.atleast_2d(np.asarray(values, dtype=float))
    nb = max(ref.shape[0], values.shape[0])
    length = ref.shape[1]
    lam = linear_eigenvalues()
    P = linear_eigenvectors()
    kvec = P.T @ _shear_direction(model)
    p1 = P[0]
    amp = model.epsilon / np.pi
    phase = np.broadcast_to(TWO_PI * ref[..., 0], (nb, length))
    times = np.arange(length, dtype=float)
    vals = np.broadcast_to(values, (nb, 3))

    # per component: (forward start, value there) and (backward end, value there)
    plans = []
    for i in range(3):
        if anchors[i] == "left":
            plans.append((i, (0, None), None))
        elif anchors[i] == "right":
            plans.append((i, None, (length - 1, None)))
        else:
            plans.append((i, (n0, vals[:, i]), (n0, vals[:, i])))

    def linear_solve(g):
        out = np.zeros((nb, length, 3))
        for i, fwd, bwd in plans:
            lk = lam[i]
            w = lk ** -(times + 1.0) * g[:, :, i]
            if fwd is not None:
                start, v = fwd
                mask = times >= start
                acc = np.zeros_like(w)
                acc[:, 1:] = np.cumsum(np.where(mask, w, 0.0)[:, :-1], axis=1)
                if v is not None:
                    acc = acc + lk ** -float(start) * v[:, None]
                out[:, :, i] = np.where(mask, lk ** times * acc, out[:, :, i])
            if bwd is not None:
                end, v = bwd
                mask = times < end
                acc = -np.cumsum(np.where(mask, w, 0.0)[:, ::-1], axis=1)[:, ::-1]
                if v is not None:
                    acc = acc + lk ** -float(end) * v[:, None]
                out[:, :, i] = np.where(mask, lk ** times * acc, out[:, :, i])
        return out

    xi = linear_solve(np.zeros((nb, length, 3)))
    if model.is_linear:
        return xi
    last = np.inf
    for _ in range(max_sweeps):
        # F(x_n + d) - F(x_n) - A d, written to keep relative accuracy in d
        d1 = xi @ p1
        g = (amp * np.cos(phase + np.pi * d1) * np.sin(np.pi * d1))[..., None] * kvec
        new = linear_solve(g)
        # relative change per time, floored far below the resolution of the points
        floor = 1e-10 * np.abs(new[:, n0]).max(axis=-1)[:, None, None] + 1e-300
        scale = np.maximum(np.abs(new).max(axis=-1, keepdims=True), floor)
        change = np.abs(new - xi) / scale
        xi = new
        worst = change.max()
        if worst <= tol:
            return xi
        # rounding can leave a two-cycle just above tol; accept a stalled iteration
        if worst <= 1e4 * tol and worst >= 0.5 * last:
            return xi
        last = worst
    raise NonConvergence("leaf orbit sweep did not settle; epsilon may be out of range")


class BaseOrbit:
    """Orbit segment of a base point with bundle frames and one-step rates.

    Times run over -back .. forward around the base; ``index(n)`` converts a
    time to an array index. Frames are trustworthy only ``warmup`` steps
    away from the ends of the stored segment.

    Quantities built from backward orbits (leaves, rho-products) are only
    Holder-continuous in the stable direction, so two double-precision pasts
    of the same point can disagree well above rounding level. Everything that
    has to be compared (charts at x and f(x), charts at points of a leaf of
    x) should therefore share one orbit: use ``shifted`` and ``from_orbit``.
    """

    def __init__(self, model: MapModel, point=None, back: int = DEFAULT_DEPTH + 8,
                 forward: int = DEFAULT_DEPTH + 8, warmup: int = DEFAULT_DEPTH, *, _arrays=None):
        self.model = model
        if _arrays is not None:
            self.points, self.frames, self.rates, self._n0, self.back, self.forward = _arrays
            self.warmup = int(warmup)
        else:
            self.back, self.forward, self.warmup = int(back), int(forward), int(warmup)
            point = wrap(np.asarray(point, dtype=float))
            self.points = centred_orbit(model, point, self.back + self.warmup, self.forward + self.warmup)
            self._n0 = self.back + self.warmup
            self._finish()
        self.point = self.points[self._n0]

    def _finish(self, seeds=None):
        self.frames = frames_on_orbit(self.model, self.points, seeds=seeds)
        if self.model.is_linear:
            lam = linear_eigenvalues()
            self.rates = {k: np.full(self.points.shape[:-1], lam[i]) for i, k in enumerate(("s", "c", "u"))}
        else:
            self.rates = {k: one_step_rates(self.model, self.points, self.frames[k]) for k in ("s", "c", "u")}

    @classmethod
    def from_orbit(cls, model: MapModel, orbit, n0: int, seed_frame=None, forward: int = DEFAULT_DEPTH + 8,
                   warmup: int = DEFAULT_DEPTH):
        """Base whose past is the given orbit segment (time 0 at ``n0``).

        The future is extended by direct iteration to ``forward + warmup``
        steps. ``seed_frame`` (dict of s, c, u vectors at the first point)
        replaces the missing warm-up in the past.
        """
        orbit = wrap(np.asarray(orbit, dtype=float))
        fut = [orbit[-1]]
        have = orbit.shape[0] - 1 - n0
        for _ in range(max(0, forward + warmup - have)):
            fut.append(model.evaluate(fut[-1]))
        pts = np.concatenate([orbit, np.array(fut[1:]).reshape(-1, 3)], axis=0)
        obj = cls.__new__(cls)
        obj.model = model
        obj.points = pts
        obj._n0 = int(n0)
        obj.back = int(n0)
        obj.forward = pts.shape[0] - 1 - n0 - warmup
        obj.warmup = int(warmup)
        seeds = None
        if seed_frame is not None:
            seeds = {"u": seed_frame["u"][None], "cu": (seed_frame["c"][None], seed_frame["u"][None])}
        obj._finish(seeds)
        obj.point = pts[obj._n0]
        return obj

    def shifted(self, k: int) -> "BaseOrbit":
        """The same orbit re-centred at f^k of the base (shares arrays)."""
        n0 = self._n0 + int(k)
        if not 0 <= n0 < self.points.shape[0]:
            raise ValueError("shift leaves the stored orbit segment")
        arrays = (self.points, self.frames, self.rates, n0, self.back + int(k), self.forward - int(k))
        return BaseOrbit(self.model, warmup=self.warmup, _arrays=arrays)

    def index(self, n):
        return self._n0 + np.asarray(n)

    def segment(self, past: int, future: int):
        lo, hi = self.index(-past), self.index(future) + 1
        if lo < 0 or hi > self.points.shape[0]:
            raise ValueError("requested segment exceeds the stored orbit")
        return self.points[lo:hi]

    def frame(self, n: int = 0):
        i = self.index(n)
        return {k: self.frames[k][i] for k in ("s", "c", "u")}

    def rate(self, bundle: str, n: int = 0) -> float:
        return float(self.rates[bundle][self.index(n)])

    def log_rates_back(self, bundle: str, depth: int):
        """log lambda^*_{x_-l} for l = 1..depth."""
        i = int(self.index(0))
        if i - depth < 0:
            raise ValueError("stored past is shorter than the product depth")
        return np.log(self.rates[bundle][i - depth: i][::-1])


class LeafFamily:
    """Points of a local leaf of the base together with their orbit segments.

    ``kind`` is one of u, c, s, cu, cs. Coordinates are eigen-coordinates of
    y - x at time 0 (one number for curves, (c, u) or (s, c) for surfaces).
    Orbits reach ``depth + extra`` steps into the past and/or future.
    """

    def __init__(self, base: BaseOrbit, kind: str, depth: int = DEFAULT_DEPTH, extra: int = 8):
        if kind not in ANCHORS:
            raise ValueError(f"unknown leaf kind {kind!r}")
        self.base, self.kind, self.depth = base, kind, int(depth)
        past, future = EXTENT[kind]
        reach = self.depth + int(extra)
        self.past, self.future = past * reach, future * reach
        self.ref = base.segment(self.past, self.future)
        self.n0 = self.past

    def _values(self, coords):
        coords = np.asarray(coords, dtype=float)
        if self.kind in ("u", "c", "s"):
            coords = np.atleast_1d(coords)
            vals = np.zeros((coords.shape[0], 3))
            vals[:, COMPONENT[self.kind]] = coords
        else:
            coords = np.atleast_2d(coords)
            vals = np.zeros((coords.shape[0], 3))
            if self.kind == "cu":
                vals[:, 1:] = coords
            else:
                vals[:, :2] = coords
        return vals

    def solve(self, coords):
        """Eigen-coordinates xi_n (B, L, 3) of the leaf orbits."""
        return perron_sweep(self.base.model, self.ref, self.n0, ANCHORS[self.kind], self._values(coords))

    def points(self, coords=None, xi=None):
        """Lift points (B, 3) near the base, at time 0."""
        if xi is None:
            xi = self.solve(coords)
        return self.base.point + xi[:, self.n0] @ linear_eigenvectors().T

    def orbits(self, coords=None, xi=None):
        """Lift orbit segments (B, L, 3) of the leaf points, time 0 at ``n0``."""
        if xi is None:
            xi = self.solve(coords)
        return self.ref[None] + xi @ linear_eigenvectors().T

    def base_at(self, coord, xi=None) -> BaseOrbit:
        """A BaseOrbit for one leaf point whose past is consistent with the base."""
        if self.past == 0:
            raise ValueError("leaf orbits carry no past; build a fresh BaseOrbit instead")
        orb = self.orbits(np.atleast_1d(coord) if self.kind in ("u", "c", "s") else np.atleast_2d(coord), xi)[0]
        past = orb[: self.n0 + 1]
        return BaseOrbit.from_orbit(self.base.model, past, self.n0, seed_frame=self.base.frame(-self.past),
                                    warmup=self.base.warmup)

    def rates(self, coords=None, xi=None, depth=None):
        """c and u one-step rates at y_-l, l = 0..depth, plus directions at y."""
        depth = self.depth if depth is None else int(depth)
        if self.past < depth:
            raise ValueError("leaf orbits do not reach the requested depth")
        orbs = self.orbits(coords, xi)
        return leaf_point_rates(self.base, orbs, self.n0, depth)

    def rho(self, bundle: str, coords=None, xi=None, depth=None):
        """rho^*_x(y) for leaf points y, with a geometric tail estimate.

        Returns (rho, tail) arrays. rho^*_x(y) = prod_l lambda^*_{x_-l} / lambda^*_{y_-l}.
        """
        depth = self.depth if depth is None else int(depth)
        rates, _ = self.rates(coords, xi, depth)
        return rho_from_rates(self.base, rates, bundle, depth)


def rho_from_rates(base: BaseOrbit, rates, bundle: str, depth: int):
    terms = base.log_rates_back(bundle, depth)[None] - np.log(rates[bundle][:, 1: depth + 1])
    return np.exp(terms.sum(axis=1)), tail_estimate(terms)


def tail_estimate(terms):
    """Bound for the neglected part of a geometrically decaying log-sum."""
    a = np.abs(terms)
    last = a[:, -1]
    prev = np.maximum(a[:, -6], 1e-300)
    q = np.clip((last / prev) ** 0.2, 0.0, 0.9)
    return last * q / (1.0 - q) + 4.0 * np.finfo(float).eps * a.shape[1]


def leaf_point_rates(base: BaseOrbit, orbits, n0: int, depth: int, extra_future: int = DEFAULT_DEPTH):
    """One-step c and u rates at y_-l (l = 0..depth) for leaf orbits with time 0 at n0.

    The unstable and centre-unstable frames are seeded at y_-depth from the
    base frames there; the centre-stable plane is pulled back from
    ``extra_future`` direct forward iterates of y_0.
    """
    model = base.model
    orbits = np.asarray(orbits, dtype=float)
    nb = orbits.shape[0]
    past = orbits[:, n0 - depth: n0 + 1]
    fut = [past[:, -1]]
    cur = past[:, -1]
    for _ in range(extra_future):
        cur = model.evaluate_lift(cur)
        fut.append(cur)
    full = np.concatenate([past, np.stack(fut[1:], axis=1)], axis=1) if extra_future else past
    full = wrap(full)
    fb = base.frame(-depth)
    seeds = {
        "u": np.broadcast_to(fb["u"], (nb, 3)),
        "cu": (np.broadcast_to(fb["c"], (nb, 3)), np.broadcast_to(fb["u"], (nb, 3))),
    }
    fr = frames_on_orbit(model, full, seeds=seeds, need_stable=False)
    pts = full[:, : depth + 1]
    rates = {k: one_step_rates(model, pts, fr[k][:, : depth + 1])[:, ::-1] for k in ("c", "u")}
    dirs = {k: fr[k][:, depth] for k in ("c", "u")}
    return rates, dirs


# ---------------------------------------------------------------------------
# leaf segments


@dataclass
class LeafSegment:
    """A discretised local leaf, ordered by signed arclength.

    ``arclens`` is the signed arclength from the base (strictly increasing,
    zero at ``base_index``). ``residual`` bounds the distance to the true leaf.
    """

    bundle: str
    base: np.ndarray
    nodes: np.ndarray
    arclens: np.ndarray
    radius: float
    base_index: int
    residual: float = 0.0
    method: str = "perron"

    def __len__(self):
        return self.nodes.shape[0]

    def tangents(self):
        """Unit tangents by finite differences along the node list."""
        d = np.gradient(self.nodes, self.arclens, axis=0)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def at_arclength(self, sigma):
        """Node-interpolated point at signed arclength ``sigma`` (cubic)."""
        from scipy.interpolate import CubicSpline

        return CubicSpline(self.arclens, self.nodes, axis=0)(sigma)


def _arclength_map(family: LeafFamily, reach: float, n: int = 64):
    """Chebyshev fit of signed arclength as a function of the eigen-coordinate."""
    nodes = np.cos(np.pi * np.arange(n + 1) / n)
    pts = family.points(reach * nodes)
    fit = cheb.chebfit(nodes, pts, n)
    speed = np.linalg.norm(cheb.chebval(nodes, cheb.chebder(fit)).T, axis=1) / reach
    speed_fit = cheb.chebfit(nodes, speed, n)
    return cheb.chebint(speed_fit, lbnd=0.0) * reach


def _coordinate_for_arclength(arc, reach, sigma):
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    lo = np.full_like(sigma, -1.0)
    hi = np.full_like(sigma, 1.0)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = cheb.chebval(mid, arc) < sigma
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return reach * 0.5 * (lo + hi)


def leaf_coordinate_at_arclength(base: BaseOrbit, kind: str, sigma, depth: int = DEFAULT_DEPTH):
    """Eigen-coordinates of the points at signed arclength ``sigma`` on a 1D leaf."""
    fam = LeafFamily(base, kind, depth)
    need = float(np.max(np.abs(sigma))) if np.size(sigma) else 0.0
    reach = 1.2 * need + 0.05
    arc = _arclength_map(fam, reach)
    if need > min(-cheb.chebval(-1.0, arc), cheb.chebval(1.0, arc)):
        reach *= 2.0
        arc = _arclength_map(fam, reach)
    return _coordinate_for_arclength(arc, reach, sigma), fam


def _segment_from_family(base: BaseOrbit, kind: str, radius: float, resolution: int, depth: int):
    count = int(np.ceil(resolution * radius))
    sigma = np.linspace(-radius, radius, 2 * count + 1)
    coords, fam = leaf_coordinate_at_arclength(base, kind, sigma, depth)
    pts = fam.points(coords)
    # the same leaf at half the product depth bounds the truncation effect
    half = LeafFamily(base, kind, max(1, depth // 2)).points(coords)
    residual = float(np.max(np.linalg.norm(pts - half, axis=1)))
    return pts, sigma, count, residual


def _push_segment(model: MapModel, start, direction, rate_product, radius, resolution, steps, forward):
    """Iterate a short straight seed ``steps`` times, resampling by arclength each time."""
    from scipy.interpolate import CubicSpline

    step = model.evaluate_lift if forward else model.invert_lift
    half = 1.5 * radius / rate_product
    dense = max(16 * resolution, 1500)
    nodes = start + np.linspace(-half, half, dense)[:, None] * direction
    for _ in range(steps):
        nodes = step(nodes)
        # integer translates commute with the map; keep coordinates small
        nodes = nodes - np.floor(nodes[nodes.shape[0] // 2])
        seg = np.linalg.norm(np.diff(nodes, axis=0), axis=1)
        arcs = np.concatenate([[0.0], np.cumsum(seg)])
        nodes = CubicSpline(arcs, nodes, axis=0)(np.linspace(0.0, arcs[-1], dense))
    return nodes


def grow_leaf(model: MapModel, p, bundle: str, radius: float = 0.5, resolution: int = 64,
              depth: int = DEFAULT_DEPTH, method: str | None = None) -> LeafSegment:
    """Local leaf of ``bundle`` through p, as a LeafSegment of half-length ``radius``.

    ``method="perron"`` computes nodes as exact leaf points via the
    Lyapunov-Perron sweep. ``method="push"`` (u and s only) seeds a short
    straight segment at f^-20 p (or f^20 p) and iterates it back with
    arclength resampling; its residual is measured against the Perron leaf.
    """
    if bundle not in ("s", "c", "u"):
        raise ValueError("grow_leaf builds curves; use leaf_patch for cu and cs")
    if radius <= 0 or radius > 1:
        raise ValueError("radius must lie in (0, 1]")
    if resolution < 8:
        raise ValueError("resolution must be at least 8 nodes per unit arclength")
    if 2 * resolution * radius > 20000:
        raise ResolutionExceeded("node budget exceeded")
    method = method or "perron"
    base = BaseOrbit(model, p)
    pts, sigma, count, residual = _segment_from_family(base, bundle, radius, resolution, depth)
    if method == "push":
        if bundle == "c":
            raise ValueError("the push construction needs a uniformly expanding or contracting bundle")
        sign = -1 if bundle == "u" else 1
        # at most 20 steps, fewer if the seed would shrink below 1e-8 of the radius
        steps, product = 0, 1.0
        while steps < 20:
            j = -(steps + 1) if bundle == "u" else steps
            r = base.rate(bundle, j) if bundle == "u" else 1.0 / base.rate(bundle, j)
            if product * r > 1e8:
                break
            product *= r
            steps += 1
        start = base.points[base.index(sign * steps)]
        direction = base.frames[bundle][base.index(sign * steps)]
        dense = _push_segment(model, start, direction, product, radius, resolution, steps,
                              forward=bundle == "u")
        # move the pushed curve next to the base lift, then locate the base on it
        j0 = int(np.argmin(np.linalg.norm(lift_delta(dense, base.point), axis=1)))
        dense = dense - np.round(dense[j0] - base.point)
        arcs = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
        j0 = min(max(j0, 1), dense.shape[0] - 2)
        tangent = _unit(dense[j0 + 1] - dense[j0 - 1])
        arcs = arcs - arcs[j0] - float((base.point - dense[j0]) @ tangent)
        from scipy.interpolate import CubicSpline

        if arcs[0] > -radius or arcs[-1] < radius:
            raise ResolutionExceeded("pushed seed did not cover the requested radius")
        push_pts = CubicSpline(arcs, dense, axis=0)(sigma)
        orient = np.sign((push_pts[-1] - push_pts[0]) @ (pts[-1] - pts[0]))
        if orient < 0:
            push_pts = push_pts[::-1]
        residual = max(residual, float(np.max(np.linalg.norm(push_pts - pts, axis=1))))
        pts = push_pts
    elif method != "perron":
        raise ValueError(f"unknown method {method!r}")
    pts[count] = base.point
    return LeafSegment(bundle, base.point.copy(), pts, sigma, float(radius), count, residual, method)


def leaf_patch(model: MapModel, p, kind: str, radius: float = 0.5, size: int = 17,
               depth: int = DEFAULT_DEPTH):
    """Grid of points (size, size, 3) on the cu- or cs-leaf of p over eigen-coordinates in [-r, r]^2."""
    if kind not in ("cu", "cs"):
        raise ValueError("leaf_patch builds cu or cs surfaces")
    base = BaseOrbit(model, p)
    fam = LeafFamily(base, kind, depth)
    g = np.linspace(-radius, radius, size)
    aa, bb = np.meshgrid(g, g, indexing="ij")
    return fam.points(np.stack([aa.ravel(), bb.ravel()], axis=1)).reshape(size, size, 3)


# ---------------------------------------------------------------------------
# stable holonomy and the angle function


class CentreUnstablePatch:
    """The cu-leaf of a point as a graph of the s-coordinate over (c, u)."""

    def __init__(self, model: MapModel, y, depth: int = DEFAULT_DEPTH, base: BaseOrbit | None = None):
        self.base = base if base is not None else BaseOrbit(model, y)
        self.point = self.base.point
        self.family = LeafFamily(self.base, "cu", depth)
        self.evecs = linear_eigenvectors()

    def s_offset(self, w):
        """Stable eigen-offset of lift points w from the patch (0 on the leaf)."""
        w = np.atleast_2d(w)
        e = (w - self.point) @ self.evecs
        xi = self.family.solve(e[:, 1:])
        return e[:, 0] - xi[:, self.family.n0, 0]


def _secant(fun, a0, a1, f0, f1, tol, max_iter=40):
    for _ in range(max_iter):
        if f1 == f0 or abs(a1 - a0) < tol:
            break
        a0, a1, f0 = a1, a1 - f1 * (a1 - a0) / (f1 - f0), f1
        f1 = fun(a1)
    return a1, f1


def stable_holonomy(model: MapModel, x, y, z, depth: int = DEFAULT_DEPTH, tol: float = 1e-11,
                    patch: CentreUnstablePatch | None = None, span: float = 0.05):
    """H^s_{x,y}(z): the point of W^cu_loc(y) on the stable leaf of z.

    x and y lie on one stable leaf, z on the cu-leaf of x; y and z are lifts
    near x. Returns a lift near y. The signed s-offset of the stable curve of z from the cu-patch of y is
    scanned for a sign change, bisected and finished by secant steps.
    """
    x = np.asarray(x, dtype=float)
    y_l = np.asarray(y, dtype=float)
    z_l = np.asarray(z, dtype=float)
    patch = patch or CentreUnstablePatch(model, y, depth)
    # the patch's base lift is the wrapped y
    shift = patch.point - y_l
    zbase = BaseOrbit(model, z_l, back=1, forward=depth + 8, warmup=depth)
    zfam = LeafFamily(zbase, "s", depth)
    zshift = (z_l + shift) - zbase.point
    e_s = linear_eigenvectors()[:, 0]
    guess = float((y_l - x) @ e_s)

    def offset(a):
        w = zfam.points(np.atleast_1d(a)) + zshift
        return patch.s_offset(w)

    grid = guess + span * np.linspace(-1.0, 1.0, 9)
    vals = offset(grid)
    sign_change = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    tries = 0
    while sign_change.size == 0:
        tries += 1
        if tries > 4:
            raise NoIntersection("stable curve does not meet the cu-patch; enlarge the patch")
        span *= 4.0
        grid = guess + span * np.linspace(-1.0, 1.0, 9)
        vals = offset(grid)
        sign_change = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    i = sign_change[0]
    lo, hi, flo = grid[i], grid[i + 1], vals[i]
    for _ in range(12):
        mid = 0.5 * (lo + hi)
        fm = float(offset(mid)[0])
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    fhi = float(offset(hi)[0])
    a, _ = _secant(lambda v: float(offset(v)[0]), lo, hi, flo, fhi, tol)
    return (zfam.points(np.atleast_1d(a)) + zshift)[0] - shift


@dataclass
class AngleSample:
    x: np.ndarray
    y: np.ndarray
    alpha: float
    stable_dist: float


ANGLE_FLOOR = 1e-8


def _unit(v):
    return v / np.linalg.norm(v)


def angle_s(model: MapModel, x, y, depth: int = DEFAULT_DEPTH, steps=(1e-3, 5e-4),
            stable_dist: float | None = None) -> AngleSample:
    """Angle between DH^s_{x,y} E^u(x) and E^u(y) for y on the stable leaf of x.

    The holonomy is differenced over points of the unstable leaf of x at
    eigen-coordinates +-h; central differences at two steps are Richardson
    extrapolated. Angles below 1e-8 are reported as 0.
    """
    x = np.asarray(x, dtype=float)
    y_l = np.asarray(y, dtype=float)
    if np.linalg.norm(y_l - x) == 0.0:
        return AngleSample(x, y_l, 0.0, 0.0)
    xbase = BaseOrbit(model, x)
    ybase = BaseOrbit(model, y_l)
    patch = CentreUnstablePatch(model, y_l, depth, base=ybase)
    ufam = LeafFamily(xbase, "u", depth)
    h1, h2 = steps
    zs = ufam.points(np.array([h1, -h1, h2, -h2]))
    img = [stable_holonomy(model, x, y_l, z, depth, patch=patch) for z in zs]
    d1 = (img[0] - img[1]) / (2 * h1)
    d2 = (img[2] - img[3]) / (2 * h2)
    ratio = (h1 / h2) ** 2
    d = (ratio * d2 - d1) / (ratio - 1.0)
    vu = ybase.frame(0)["u"]
    cosang = min(1.0, abs(float(_unit(d) @ vu)))
    alpha = float(np.arccos(cosang))
    # arccos loses accuracy near 0; use the cross product there
    alpha = float(np.arcsin(min(1.0, np.linalg.norm(np.cross(_unit(d), vu))))) if alpha < 1e-3 else alpha
    if alpha < ANGLE_FLOOR:
        alpha = 0.0
    if stable_dist is None:
        stable_dist = float(np.linalg.norm(y_l - x))
    return AngleSample(x, y_l, alpha, float(stable_dist))


def angle_statistics(model: MapModel, x, n_samples: int = 16, max_dist: float = 0.5, bins: int = 18,
                     rng_seed: int = 0, depth: int = DEFAULT_DEPTH):
    """Empirical distribution of alpha^s(x, .) over arclength-uniform points of W^s_loc(x)."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng(rng_seed)
    sigma = rng.uniform(-max_dist, max_dist, n_samples)
    base = BaseOrbit(model, x)
    coords, fam = leaf_coordinate_at_arclength(base, "s", sigma, depth)
    ys = fam.points(coords)
    samples = [angle_s(model, base.point, y, depth, stable_dist=abs(float(d))) for y, d in zip(ys, sigma)]
    alphas = np.array([s.alpha for s in samples])
    counts, edges = np.histogram(alphas, bins=bins, range=(0.0, np.pi / 2))
    return {
        "samples": samples,
        "alphas": alphas,
        "counts": counts,
        "edges": edges,
        "fraction_below_1e-6": float(np.mean(alphas < 1e-6)),
    }


# ---------------------------------------------------------------------------
# joint-integrability probe


def su_loop_defect(model: MapModel, x, delta_s: float, delta_u: float, depth: int = DEFAULT_DEPTH) -> float:
    """Distance between W^u_loc(z) and W^s_loc(y) where y, z are reached from x.

    y lies at arclength delta_u along the unstable leaf of x and z at
    arclength delta_s along its stable leaf. The value is 0 exactly when the
    su-quadrilateral closes.
    """
    from scipy.optimize import least_squares

    if abs(delta_s) > 0.25 or abs(delta_u) > 0.25:
        raise ValueError("loop sides must not exceed 0.25")
    if delta_s == 0 or delta_u == 0:
        return 0.0
    base = BaseOrbit(model, x)
    a_u, ufam = leaf_coordinate_at_arclength(base, "u", [delta_u], depth)
    a_s, sfam = leaf_coordinate_at_arclength(base, "s", [delta_s], depth)
    y = ufam.points(a_u)[0]
    z = sfam.points(a_s)[0]
    ybase = BaseOrbit(model, y)
    zbase = BaseOrbit(model, z)
    ys, zs = y - ybase.point, z - zbase.point
    y_sfam = LeafFamily(ybase, "s", depth)
    z_ufam = LeafFamily(zbase, "u", depth)

    def gap(params):
        a, b = params
        return (z_ufam.points([a])[0] + zs) - (y_sfam.points([b])[0] + ys)

    start = np.array([float(a_u[0]), float(a_s[0])])
    fit = least_squares(gap, start, x_scale=1.0, xtol=1e-15, ftol=1e-15, gtol=1e-15, diff_step=1e-7)
    return float(np.linalg.norm(gap(fit.x)))


def holder_fit(distances, values):
    """Least-squares exponent and constant of values ~ C d^theta (an empirical estimate)."""
    d = np.asarray(distances, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = (d > 0) & (v > 0)
    if keep.sum() < 2:
        return {"theta": float("nan"), "constant": float("nan"), "estimate": True}
    slope, icpt = np.polyfit(np.log(d[keep]), np.log(v[keep]), 1)
    return {"theta": float(slope), "constant": float(np.exp(icpt)), "estimate": True}


def distance_to_curve(points, curve, refine: int = 64):
    """Distance from each point to the curve through the ordered nodes ``curve``.

    The curve is densified with a cubic spline in chord length, then points
    are projected onto the nearest polyline segments.
    """
    from scipy.interpolate import CubicSpline

    curve = np.asarray(curve, dtype=float)
    arcs = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(curve, axis=0), axis=1))])
    dense = CubicSpline(arcs, curve, axis=0)(np.linspace(0.0, arcs[-1], refine * (curve.shape[0] - 1) + 1))
    out = []
    for q in np.atleast_2d(points):
        i = int(np.argmin(np.linalg.norm(dense - q, axis=1)))
        best = np.linalg.norm(dense[i] - q)
        for j in (i - 1, i):
            if 0 <= j < dense.shape[0] - 1:
                a, b = dense[j], dense[j + 1]
                t = np.clip((q - a) @ (b - a) / ((b - a) @ (b - a)), 0.0, 1.0)
                best = min(best, np.linalg.norm(a + t * (b - a) - q))
        out.append(best)
    return np.array(out)
