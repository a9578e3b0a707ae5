"""Non-stationary normal forms on centre, unstable and centre-unstable leaves.

The 1D chart of a leaf through x is H_x(y) = integral of rho_x along the leaf
from x to y. Leaves are parametrised by the eigen-coordinate ``a`` of y - x,
the integrand rho_x(y(a)) |dy/da| is sampled at Chebyshev-Lobatto nodes and
integrated spectrally; the node count doubles until two levels agree.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .errors import OutsidePatch
from .leaves import COMPONENT, BaseOrbit, LeafFamily, rho_from_rates
from .splitting import DEFAULT_DEPTH, linear_eigenvectors
from .torus_maps import MapModel, torus_distance, wrap

QUAD_TOL = 1e-9
MAX_REACH = 8.0


def _lobatto(n):
    return np.cos(np.pi * np.arange(n + 1) / n)


class LeafChart:
    """One-dimensional normal-form chart H^*_x on the c- or u-leaf of a base.

    ``reach`` is the half-width of the eigen-coordinate interval covered.
    """

    def __init__(self, base: BaseOrbit, bundle: str, depth: int = DEFAULT_DEPTH, reach: float = 1.5,
                 tol: float = QUAD_TOL, max_nodes: int = 256):
        if bundle not in ("c", "u"):
            raise ValueError("1D charts exist for the c and u bundles")
        self.base, self.bundle, self.depth = base, bundle, int(depth)
        self.family = LeafFamily(base, bundle, depth)
        self.reach = float(reach)
        self.tol = tol
        self._build(max_nodes)

    # construction -----------------------------------------------------
    def _sample(self, nodes):
        a = self.reach * nodes
        xi = self.family.solve(a)
        rates, dirs = self.family.rates(xi=xi)
        k = COMPONENT[self.bundle]
        speed = 1.0 / np.abs(dirs[self.bundle] @ linear_eigenvectors()[:, k])
        rho, tail = rho_from_rates(self.base, rates, self.bundle, self.depth)
        other = "u" if self.bundle == "c" else "c"
        rho_other, tail_o = rho_from_rates(self.base, rates, other, self.depth)
        return {
            "integrand": rho * speed,
            "rho": rho,
            "rho_other": rho_other,
            "offset": xi[:, self.family.n0] @ linear_eigenvectors().T,
            "tail": np.maximum(tail, tail_o),
        }

    def _fit(self, n, samples):
        nodes = _lobatto(n)
        out = {}
        for key in ("integrand", "rho", "rho_other"):
            out[key] = cheb.chebfit(nodes, samples[key], n)
        out["offset"] = cheb.chebfit(nodes, samples["offset"], n)
        return out

    def _build(self, max_nodes):
        n = 32
        samples = self._sample(_lobatto(n))
        coefs = self._fit(n, samples)
        prev = None
        while True:
            integral = cheb.chebint(coefs["integrand"], lbnd=0.0) * self.reach
            ends = cheb.chebval(np.array([-1.0, 1.0]), integral)
            if prev is not None and np.max(np.abs(ends - prev)) < self.tol:
                break
            if 2 * n > max_nodes:
                self.quadrature_error = float(np.max(np.abs(ends - prev))) if prev is not None else np.inf
                break
            prev = ends
            n2 = 2 * n
            new_nodes = _lobatto(n2)[1::2]
            extra = self._sample(new_nodes)
            merged = {}
            for key in samples:
                arr = np.empty((n2 + 1,) + samples[key].shape[1:])
                arr[0::2] = samples[key]
                arr[1::2] = extra[key]
                merged[key] = arr
            samples, n = merged, n2
            coefs = self._fit(n, samples)
        self.nodes = n
        self.coefs = coefs
        self.integral = integral
        self.quadrature_error = float(np.max(np.abs(ends - prev))) if prev is not None else 0.0
        self.tail_bound = float(np.max(samples["tail"]))
        self.range = (float(ends[0]), float(ends[1]))

    # evaluation ---------------------------------------------------------
    def _u(self, a):
        u = np.asarray(a, dtype=float) / self.reach
        if np.any(np.abs(u) > 1.0 + 1e-12):
            raise OutsidePatch("leaf coordinate outside the chart's reach")
        return u

    def H(self, a):
        """Chart value at the leaf point with eigen-coordinate ``a``."""
        return cheb.chebval(self._u(a), self.integral)

    def dH(self, a):
        return cheb.chebval(self._u(a), self.coefs["integrand"])

    def rho(self, a):
        """rho^*_x(y(a)) interpolated."""
        return cheb.chebval(self._u(a), self.coefs["rho"])

    def rho_other(self, a):
        """rho of the complementary bundle (u for centre charts, c for unstable)."""
        return cheb.chebval(self._u(a), self.coefs["rho_other"])

    def coordinate(self, s):
        """Eigen-coordinate a with H(a) = s, by monotone bisection polished with Newton."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        lo_v, hi_v = self.range
        if np.any(s < lo_v) or np.any(s > hi_v):
            raise OutsidePatch(f"chart value outside covered range {self.range}")
        lo = np.full_like(s, -self.reach)
        hi = np.full_like(s, self.reach)
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            below = self.H(mid) < s
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        a = 0.5 * (lo + hi)
        for _ in range(3):
            a = np.clip(a - (self.H(a) - s) / self.dH(a), -self.reach, self.reach)
        return a

    def point(self, a):
        """Exact leaf points (lifts near the base) for eigen-coordinates ``a``."""
        return self.family.points(np.atleast_1d(a))

    def point_interp(self, a):
        return self.base.point + cheb.chebval(self._u(a), self.coefs["offset"].T).T

    def inverse(self, s):
        """Phi^*_x(s): the leaf point with chart value s."""
        return self.point(self.coordinate(s))

    def coordinate_of(self, y):
        """Eigen-coordinate of a point y (lift near the base) on this leaf."""
        k = COMPONENT[self.bundle]
        return (np.atleast_2d(y) - self.base.point) @ linear_eigenvectors()[:, k]


def chart_for_values(base: BaseOrbit, bundle: str, values, depth: int = DEFAULT_DEPTH, margin: float = 1.2):
    """A LeafChart whose range covers all chart values in ``values``."""
    need = float(np.max(np.abs(values))) if np.size(values) else 0.0
    reach = max(0.25, margin * need + 0.05)
    while True:
        ch = LeafChart(base, bundle, depth, reach)
        lo, hi = ch.range
        if need <= min(-lo, hi):
            return ch
        reach *= 1.5
        if reach > MAX_REACH:
            raise OutsidePatch("requested chart values exceed the working patch")


class NormalChart:
    """Two-dimensional normal form Phi_x(t, s) on the centre-unstable leaf of x.

    Phi_x(t, s) = Phi^u_{Phi^c_x(s)}(beta_x(s) t) where Phi^c, Phi^u invert the
    1D charts and beta_x(s) = rho^u_{Phi^c_x(s)}(x). The chart keeps one base
    orbit; ``at_image`` returns the chart of f(x) built from the same orbit.
    """

    def __init__(self, model: MapModel, base, depth: int = DEFAULT_DEPTH, s_max: float = 1.0,
                 t_max: float = 1.0):
        if isinstance(base, BaseOrbit):
            self.orbit = base
        else:
            self.orbit = BaseOrbit(model, base, back=depth + 16, forward=depth + 16)
        self.model = model
        self.depth = int(depth)
        self.base = self.orbit.point
        self.lambda_u = self.orbit.rate("u", 0)
        self.lambda_c = self.orbit.rate("c", 0)
        self.s_max, self.t_max = float(s_max), float(t_max)
        self.centre = chart_for_values(self.orbit, "c", [s_max], depth)
        self._unstable = {}

    @property
    def tail_bound(self):
        tails = [self.centre.tail_bound] + [c.tail_bound for c in self._unstable.values()]
        return max(tails)

    def at_image(self, k: int = 1, s_max=None, t_max=None):
        """Chart at f^k(x) sharing this chart's orbit."""
        lam_c = abs(np.prod([self.orbit.rate("c", j) for j in range(k)])) if k > 0 else 1.0
        lam_u = abs(np.prod([self.orbit.rate("u", j) for j in range(k)])) if k > 0 else 1.0
        return NormalChart(self.model, self.orbit.shifted(k), self.depth,
                           s_max if s_max is not None else self.s_max * lam_c,
                           t_max if t_max is not None else self.t_max * lam_u)

    # one-dimensional pieces ----------------------------------------------
    def centre_coordinate(self, s):
        return self.centre.coordinate(s)

    def phi_c(self, s):
        """Phi^c_x(s) as lift points near the base."""
        return self.centre.inverse(s)

    def H_c(self, y):
        """H^c_x(y) for y on the centre leaf of x."""
        return self.centre.H(self.centre.coordinate_of(y))

    def beta(self, s):
        """beta_x(s) = rho^u_{Phi^c_x(s)}(x) = 1 / rho^u_x(Phi^c_x(s))."""
        return 1.0 / self.centre.rho_other(self.centre.coordinate(s))

    def unstable_chart(self, s: float) -> LeafChart:
        """1D unstable chart at Phi^c_x(s), built on an orbit consistent with x."""
        key = float(s)
        ch = self._unstable.get(key)
        need = self.t_max * float(self.beta(key)[0])
        if ch is not None and need <= min(-ch.range[0], ch.range[1]):
            return ch
        a = self.centre.coordinate(key)
        zbase = self.centre.family.base_at(a)
        ch = chart_for_values(zbase, "u", [need], self.depth)
        self._unstable[key] = ch
        return ch

    # two-dimensional chart --------------------------------------------------
    def __call__(self, t, s):
        return self.phi(t, s)

    def phi(self, t, s):
        """Phi_x(t, s) for scalar s and scalar or array t; returns lifts (N, 3)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if abs(float(s)) > self.s_max * (1 + 1e-12) or np.any(np.abs(t) > self.t_max * (1 + 1e-12)):
            raise OutsidePatch("(t, s) outside the working rectangle")
        uch = self.unstable_chart(s)
        b = float(self.beta(s)[0])
        pts = uch.inverse(b * t)
        # unstable-chart points are relative to the wrapped centre point
        shift = self.centre.point(self.centre.coordinate(s))[0] - uch.base.point
        return pts + shift

    def phi_grid(self, ts, ss):
        """Phi_x over a tensor grid; returns array (len(ss), len(ts), 3)."""
        return np.stack([self.phi(ts, s) for s in np.atleast_1d(ss)])

    def inverse(self, p):
        """(t, s) with Phi_x(t, s) = p for p on the cu-leaf of x (lift near the base).

        p is slid along its unstable leaf onto the centre leaf of x; s is the
        centre chart value there and t the unstable chart value of p divided
        by beta_x(s).
        """
        p = np.atleast_2d(np.asarray(p, dtype=float))
        out = np.empty((p.shape[0], 2))
        for i, q in enumerate(p):
            a_c = self._slide_to_centre(q)
            s = float(self.centre.H(a_c))
            a_c_arr = np.atleast_1d(a_c)
            zbase = self.centre.family.base_at(a_c_arr)
            zpt = self.centre.point(a_c_arr)[0]
            du = (q - zpt) @ linear_eigenvectors()[:, 2]
            uch = LeafChart(zbase, "u", self.depth, reach=abs(du) * 1.3 + 0.05)
            tval = float(uch.H(du)) / float(self.beta(s)[0])
            out[i] = (tval, s)
        return out

    def _slide_to_centre(self, q):
        """Centre eigen-coordinate of W^u(q) meet W^c(x)."""
        pb = BaseOrbit(self.model, wrap(q), back=self.depth + 16, forward=8, warmup=self.depth)
        shift = q - pb.point
        fam = LeafFamily(pb, "u", self.depth)
        evec = linear_eigenvectors()
        cdir, udir = evec[:, 1], evec[:, 2]

        def mismatch(a):
            # u-offset between the point of W^u(q) at coordinate a and W^c(x)
            y = fam.points(np.atleast_1d(a))[0] + shift
            ac = (y - self.base) @ cdir
            z = self.centre.point(np.atleast_1d(ac))[0]
            return (y - z) @ udir, ac

        a0 = -((q - self.base) @ udir)
        f0, _ = mismatch(a0)
        a1 = a0 - f0
        f1, ac = mismatch(a1)
        for _ in range(30):
            if abs(f1) < 1e-14 or f1 == f0:
                break
            a0, a1, f0 = a1, a1 - f1 * (a1 - a0) / (f1 - f0), f1
            f1, ac = mismatch(a1)
        return float(ac)


# ---------------------------------------------------------------------------
# functional interface


def _base(model: MapModel, x, depth: int) -> BaseOrbit:
    if isinstance(x, BaseOrbit):
        return x
    return BaseOrbit(model, x, back=depth + 16, forward=depth + 16)


def rho(model: MapModel, bundle: str, x, y, depth: int = DEFAULT_DEPTH, orbit: BaseOrbit | None = None):
    """rho^*_x(y) for y on the cu-leaf of x, truncated at ``depth``.

    Returns (value, tail_bound). y is read through its (c, u) eigen-offset
    from x. Pass ``orbit`` to reuse a base orbit of x; values computed on
    different orbits of the same point agree only to the Holder noise of
    the backward orbit.
    """
    if bundle not in ("c", "u"):
        raise ValueError("rho is defined for the c and u bundles")
    base = orbit if orbit is not None else _base(model, x, depth)
    y = np.asarray(y, dtype=float)
    e = (base.point + lift_offset(base.point, y)) - base.point
    coords = (e @ linear_eigenvectors())[1:]
    fam = LeafFamily(base, "cu", depth)
    val, tail = fam.rho(bundle, coords[None], depth=depth)
    return float(val[0]), float(tail[0])


def lift_offset(ref, y):
    """Displacement from ref to the nearest lift of y."""
    d = np.asarray(y, dtype=float) - np.asarray(ref, dtype=float)
    return d - np.round(d)


def reciprocity(model: MapModel, bundle: str, x, y_coord: float, leaf: str = "u",
                depth: int = DEFAULT_DEPTH):
    """rho^*_y(x) * rho^*_x(y) for y at eigen-coordinate ``y_coord`` on the ``leaf`` of x.

    Both products are formed on one shared orbit. Returns (product, tail).
    """
    base = _base(model, x, depth)
    fam = LeafFamily(base, leaf, depth)
    xi = fam.solve(np.atleast_1d(y_coord))
    r_xy, t1 = fam.rho(bundle, xi=xi, depth=depth)
    ybase = fam.base_at(np.atleast_1d(y_coord), xi=xi)
    back = LeafFamily(ybase, leaf, depth)
    x_coord = (base.point - ybase.point) @ linear_eigenvectors()[:, COMPONENT[leaf]]
    r_yx, t2 = back.rho(bundle, np.atleast_1d(x_coord), depth=depth)
    return float(r_xy[0] * r_yx[0]), float(t1[0] + t2[0])


def chart_1d(model: MapModel, bundle: str, x, y, depth: int = DEFAULT_DEPTH, orbit: BaseOrbit | None = None):
    """H^*_x(y) for y on the c- or u-leaf of x (within radius 1)."""
    base = orbit if orbit is not None else _base(model, x, depth)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    a = (lift_offset(base.point, y)) @ linear_eigenvectors()[:, COMPONENT[bundle]]
    reach = max(0.25, 1.2 * float(np.max(np.abs(a))) + 0.05)
    ch = LeafChart(base, bundle, depth, reach)
    return ch.H(a)


def beta(model: MapModel, x, s, depth: int = DEFAULT_DEPTH):
    """beta_x(s) = rho^u_{Phi^c_x(s)}(x)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    ch = NormalChart(model, x, depth, s_max=max(1e-3, float(np.max(np.abs(s)))))
    return ch.beta(s)


def chart_2d(model: MapModel, x, t, s, depth: int = DEFAULT_DEPTH):
    """Phi_x(t, s) as a lift near x."""
    ch = NormalChart(model, x, depth, s_max=max(1e-3, abs(float(s))), t_max=max(1e-3, float(np.max(np.abs(t)))))
    return ch.phi(t, s)


def chart_2d_inverse(model: MapModel, x, p, depth: int = DEFAULT_DEPTH, s_max: float = 1.0):
    """(t, s) with Phi_x(t, s) = p for p on the cu-leaf of x."""
    ch = NormalChart(model, x, depth, s_max=s_max)
    return ch.inverse(p)


# ---------------------------------------------------------------------------
# change of charts


@dataclass
class ChartChange:
    """Evaluations of H_{x,y} = H_y o Phi_x on a grid plus the structural residuals."""

    case: str
    ts: np.ndarray
    ss: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    rho_u: float
    rho_c: float
    intercept: float
    residuals: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "case": self.case,
            "ts": self.ts.tolist(),
            "ss": self.ss.tolist(),
            "h1": self.h1.tolist(),
            "h2": self.h2.tolist(),
            "rho_u": self.rho_u,
            "rho_c": self.rho_c,
            "intercept": self.intercept,
            "residuals": dict(self.residuals),
        }


def change_of_charts(model: MapModel, x, y_coord: float, case: str = "c", ts=None, ss=None,
                     depth: int = DEFAULT_DEPTH) -> ChartChange:
    """H_{x,y} for y at eigen-coordinate ``y_coord`` on W^c(x) (case "c") or W^u(x) (case "u").

    Residuals: ``horizontal`` (spread of h2 in t), ``h1_linear`` (h1 minus
    rho^u_y(x) t, centre case: absolute, unstable case: spread in t),
    ``h2_affine`` (h2 minus rho^c_y(x) s minus the intercept), and
    ``h2_slope_fit`` (fitted slope of h2 minus rho^c_y(x)).
    """
    if case not in ("c", "u"):
        raise ValueError("case must be 'c' or 'u'")
    ts = np.linspace(-0.5, 0.5, 5) if ts is None else np.asarray(ts, dtype=float)
    ss = np.linspace(-0.5, 0.5, 5) if ss is None else np.asarray(ss, dtype=float)
    xchart = NormalChart(model, x, depth, s_max=float(np.max(np.abs(ss))), t_max=float(np.max(np.abs(ts))))
    xb = xchart.orbit
    fam = xchart.centre.family if case == "c" else LeafFamily(xb, "u", depth)
    ybase = fam.base_at(np.atleast_1d(y_coord))
    shift = fam.points(np.atleast_1d(y_coord))[0] - ybase.point
    # y's chart must cover the images; its rectangle is sized generously
    ychart = NormalChart(model, ybase, depth, s_max=1.0, t_max=1.0)

    # cocycle values on the shared orbit: rho^*_y(x)
    yfam = LeafFamily(ybase, "cu", depth)
    e = (xb.point - (ybase.point + shift)) @ linear_eigenvectors()
    r_u, _ = yfam.rho("u", e[None, 1:], depth=depth)
    r_c, _ = yfam.rho("c", e[None, 1:], depth=depth)
    rho_u, rho_c = float(r_u[0]), float(r_c[0])
    intercept = float(ychart.H_c(xb.point - shift)[0]) if case == "c" else 0.0

    h1 = np.empty((ss.size, ts.size))
    h2 = np.empty((ss.size, ts.size))
    for i, s in enumerate(ss):
        pts = xchart.phi(ts, s) - shift
        inv = ychart.inverse(pts)
        h1[i], h2[i] = inv[:, 0], inv[:, 1]

    res = {"horizontal": float(np.max(h2.max(axis=1) - h2.min(axis=1)))}
    lin = h1 - rho_u * ts[None, :]
    if case == "c":
        res["h1_linear"] = float(np.max(np.abs(lin)))
    else:
        res["h1_linear"] = float(np.max(lin.max(axis=1) - lin.min(axis=1)))
    h2s = h2.mean(axis=1)
    if case == "c":
        res["h2_affine"] = float(np.max(np.abs(h2s - rho_c * ss - intercept)))
    else:
        res["h2_affine"] = float(np.max(np.abs(h2s - rho_c * ss)))
    slope = np.polyfit(ss, h2s, 1)[0]
    res["h2_slope_fit"] = float(abs(slope - rho_c))
    return ChartChange(case, ts, ss, h1, h2, rho_u, rho_c, intercept, res)


def affine_law_residual(model: MapModel, bundle: str, x, y_coord: float, ss=None, depth: int = DEFAULT_DEPTH):
    """Max over s of |H_y(Phi_x(s)) - H_y(x) - rho_y(x) s| for y on the 1D leaf of x.

    Both charts and the cocycle share x's orbit.
    """
    ss = np.linspace(-0.5, 0.5, 9) if ss is None else np.asarray(ss, dtype=float)
    base = _base(model, x, depth)
    xch = chart_for_values(base, bundle, ss, depth)
    fam = xch.family
    ybase = fam.base_at(np.atleast_1d(y_coord))
    shift = fam.points(np.atleast_1d(y_coord))[0] - ybase.point
    k = COMPONENT[bundle]
    ev = linear_eigenvectors()[:, k]
    x_in_y = float((base.point - shift - ybase.point) @ ev)
    # points Phi_x(s) expressed as coordinates on y's leaf
    a_x = xch.coordinate(ss)
    pts = fam.points(a_x) - shift
    a_y = (pts - ybase.point) @ ev
    need = max(float(np.max(np.abs(a_y))), abs(x_in_y))
    ych = LeafChart(ybase, bundle, depth, reach=1.2 * need + 0.05)
    # rho_y(x) from the y-chart's interpolant at x
    r = float(ych.rho(x_in_y))
    vals = ych.H(a_y) - ych.H(x_in_y) - r * ss
    return float(np.max(np.abs(vals))), r


def conjugacy_residual(model: MapModel, x, n: int = 9, extent: float = 1.0, depth: int = DEFAULT_DEPTH):
    """max over an n x n grid of d(f(Phi_x(t, s)), Phi_{f(x)}(lambda^u t, lambda^c s)).

    Returns (residual, tail_bound); both charts share one base orbit.
    """
    ch = NormalChart(model, x, depth, s_max=extent, t_max=extent)
    image = ch.at_image(1)
    ts = np.linspace(-extent, extent, n)
    worst = 0.0
    for s in np.linspace(-extent, extent, n):
        p = ch.phi(ts, s)
        q = image.phi(ch.lambda_u * ts, ch.lambda_c * s)
        worst = max(worst, float(torus_distance(model.evaluate_lift(p), q).max()))
    return worst, max(ch.tail_bound, image.tail_bound)
