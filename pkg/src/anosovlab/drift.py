"""Stopping times, Y-configurations, quadrilaterals and the drift estimates.

The past ratio d^l_x is the product over the l steps before x of
lambda^c / lambda^u. The stopping time tau is the first n with
d^l_x * lambda^c_{x_u}(n) >= eps, and t is the first n at which the centre
expansion of x catches up with that of x_u over tau steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .errors import BudgetExceeded, NoCandidate, OutsidePatch
from .leaves import (
    BaseOrbit,
    LeafFamily,
    _arclength_map,
    angle_s,
    leaf_coordinate_at_arclength,
    stable_holonomy,
)
from .normal_forms import LeafChart
from .splitting import DEFAULT_DEPTH, linear_eigenvectors
from .torus_maps import MapModel, lift_delta, torus_distance

TAU_CAP = 10_000
DEFAULT_EPSILONS = (0.1, 0.03, 0.01)


def _orbit(model: MapModel, p, back: int = DEFAULT_DEPTH + 8, forward: int = DEFAULT_DEPTH + 8) -> BaseOrbit:
    if isinstance(p, BaseOrbit):
        return p
    return BaseOrbit(model, p, back=back, forward=forward)


def past_log_ratio(base: BaseOrbit, ell: int) -> float:
    """log d^l_x: sum over j = 1..l of log lambda^c(x_-j) - log lambda^u(x_-j)."""
    if ell == 0:
        return 0.0
    return float(np.sum(base.log_rates_back("c", ell) - base.log_rates_back("u", ell)))


def past_ratio(base: BaseOrbit, ell: int) -> float:
    return float(np.exp(past_log_ratio(base, ell)))


def _centre_log_sums(model: MapModel, p, needed: int, cap: int):
    """Cumulative log lambda^c along the forward orbit, index n = sum over j < n."""
    count = max(64, needed)
    while True:
        base = _orbit(model, p, back=8, forward=count) if not isinstance(p, BaseOrbit) else p
        avail = base.forward
        logs = np.log(base.rates["c"][base.index(0): base.index(0) + avail])
        sums = np.concatenate([[0.0], np.cumsum(logs)])
        if avail >= needed or isinstance(p, BaseOrbit) or count >= cap:
            return sums
        count = min(2 * count, cap)


def _first_crossing(sums, level):
    hit = np.nonzero(sums >= level)[0]
    return int(hit[0]) if hit.size else None


def stopping_times(model: MapModel, x, x_u, epsilon: float, ell: int, cap: int = TAU_CAP):
    """(tau, t) for the pair (x, x_u); x and x_u may be points or BaseOrbits."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if ell < 0:
        raise ValueError("ell must be non-negative")
    xb = _orbit(model, x, back=max(DEFAULT_DEPTH + 8, ell + 8))
    log_d = past_log_ratio(xb, ell)
    level = np.log(epsilon) - log_d
    need = 64
    while True:
        su = _centre_log_sums(model, x_u, need, cap)
        tau = _first_crossing(su, level)
        if tau is not None:
            break
        if isinstance(x_u, BaseOrbit) or need >= cap:
            raise BudgetExceeded("tau exceeds the configured cap")
        need = min(4 * need, cap)
    target = su[tau]
    need = max(64, tau + 16)
    while True:
        sx = _centre_log_sums(model, xb if xb.forward >= need else xb.point, need, cap)
        t = _first_crossing(sx - target, 0.0)
        if t is not None:
            break
        if need >= cap:
            raise BudgetExceeded("t exceeds the configured cap")
        need = min(4 * need, cap)
    return tau, t


@dataclass
class YConfig:
    x: np.ndarray
    x_u: np.ndarray
    ell: int
    epsilon: float
    tau: int
    t: int
    x_past: np.ndarray
    x_u_tau: np.ndarray
    x_t: np.ndarray
    log_past_ratio: float = 0.0

    def as_dict(self):
        return {
            "x": self.x.tolist(), "x_u": self.x_u.tolist(), "ell": self.ell, "epsilon": self.epsilon,
            "tau": self.tau, "t": self.t, "x_past": self.x_past.tolist(),
            "x_u_tau": self.x_u_tau.tolist(), "x_t": self.x_t.tolist(),
        }


def build_y_config(model: MapModel, x, x_u, epsilon: float, ell: int, cap: int = TAU_CAP) -> YConfig:
    xb = _orbit(model, x, back=max(DEFAULT_DEPTH + 8, ell + 8))
    tau, t = stopping_times(model, xb, x_u, epsilon, ell, cap)
    x_u = np.asarray(x_u.point if isinstance(x_u, BaseOrbit) else x_u, dtype=float)
    return YConfig(
        x=xb.point.copy(),
        x_u=x_u.copy(),
        ell=int(ell),
        epsilon=float(epsilon),
        tau=tau,
        t=t,
        x_past=xb.points[xb.index(-ell)].copy(),
        x_u_tau=model.orbit(x_u, tau)[-1],
        x_t=model.orbit(xb.point, t)[-1],
        log_past_ratio=past_log_ratio(xb, ell),
    )


def unstable_partner(model: MapModel, x, arclength: float, depth: int = DEFAULT_DEPTH):
    """The point at signed arclength ``arclength`` on the unstable leaf of x (lift near x)."""
    base = _orbit(model, x)
    coords, fam = leaf_coordinate_at_arclength(base, "u", [arclength], depth)
    return fam.points(coords)[0]


# ---------------------------------------------------------------------------
# quadrilaterals


@dataclass
class Quadrilateral:
    x: np.ndarray
    x_u: np.ndarray
    y: np.ndarray
    y_u: np.ndarray
    z_u: np.ndarray
    C: float
    ell: int
    past_distance: float = 0.0
    past_angle: float = 0.0
    unstable_distance: float = 0.0
    centre_offset: float = 0.0

    def invariants(self):
        inv_c = 1.0 / self.C
        return {
            "past_distance": inv_c < self.past_distance < 1.0,
            "past_angle": inv_c < self.past_angle,
            "unstable_distance": inv_c < self.unstable_distance < self.C,
        }

    def as_dict(self):
        return {
            "x": self.x.tolist(), "x_u": self.x_u.tolist(), "y": self.y.tolist(), "y_u": self.y_u.tolist(),
            "z_u": self.z_u.tolist(), "C": self.C, "ell": self.ell, "past_distance": self.past_distance,
            "past_angle": self.past_angle, "unstable_distance": self.unstable_distance,
        }


def _secant_root(fun, a0, a1, tol=1e-14, max_iter=40):
    f0, f1 = fun(a0), fun(a1)
    for _ in range(max_iter):
        if abs(f1) < tol or f1 == f0:
            break
        a0, a1, f0 = a1, a1 - f1 * (a1 - a0) / (f1 - f0), f1
        f1 = fun(a1)
    return a1


def centre_to_unstable(model: MapModel, z, y, depth: int = DEFAULT_DEPTH):
    """The point of W^c(z) on W^u(y), for z on the cu-leaf of y (lifts, z near y)."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    zb = BaseOrbit(model, z)
    yb = BaseOrbit(model, y, back=depth + 8, forward=1)
    cfam = LeafFamily(zb, "c", depth)
    ufam = LeafFamily(yb, "u", depth)
    zs, ys = z - zb.point, y - yb.point
    ev = linear_eigenvectors()
    e_c, e_u = ev[:, 1], ev[:, 2]

    def point(a):
        return cfam.points(np.atleast_1d(a))[0] + zs

    def mismatch(a):
        w = point(a)
        v = ufam.points(np.atleast_1d((w - y) @ e_u))[0] + ys
        return float((w - v) @ e_c)

    a0 = -float((z - y) @ e_c)
    a = _secant_root(mismatch, 0.0, a0)
    return point(a), a


def _stable_point_at_distance(model: MapModel, base: BaseOrbit, target: float, sign: float, depth: int):
    """Stable eigen-coordinate of the point of W^s(base) at torus distance ``target``."""
    fam = LeafFamily(base, "s", depth)

    def dist(a):
        return float(np.linalg.norm(fam.points(np.atleast_1d(a))[0] - base.point))

    lo, hi = 0.0, sign * 0.25
    while dist(hi) < target:
        hi *= 2.0
        if abs(hi) > 8.0:
            raise NoCandidate("stable leaf does not reach the requested distance")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if dist(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), fam


def build_quadrilateral(model: MapModel, x, x_u, C: float = 10.0, ell: int = 8,
                        targets=(0.5, 0.7, 0.9, 0.3), depth: int = DEFAULT_DEPTH) -> Quadrilateral:
    """Quadrilateral (x, x_u, y, y_u, z_u) with y on W^s(x) chosen at time -ell.

    y_-ell is searched on the stable leaf of x_-ell at the distances in
    ``targets`` (both orientations); among the candidates meeting the
    distance and angle conditions the one with the largest angle is kept.
    """
    x = np.asarray(x, dtype=float)
    xb = BaseOrbit(model, x, back=ell + depth + 16, forward=depth + 16)
    x_l = xb.point
    # x_u is a lift near x; carry it along with the wrapped base
    x_u = np.asarray(x_u, dtype=float) + (x_l - x)
    dxu = float(np.linalg.norm(x_u - x_l))
    xp = xb.shifted(-ell)
    found = None
    # keep the admissible candidate with the largest angle
    for target in targets:
        for sign in (1.0, -1.0):
            a, fam = _stable_point_at_distance(model, xp, target, sign, depth)
            orb = fam.orbits(np.atleast_1d(a))[0]
            y_past = orb[fam.n0]
            dist = float(torus_distance(xp.point, y_past))
            alpha = angle_s(model, xp.point, y_past, depth).alpha
            if 1.0 / C < dist < 1.0 and alpha > 1.0 / C and (found is None or alpha > found[2]):
                found = (orb[fam.n0 + ell], dist, alpha)
    if found is None:
        raise NoCandidate("angle condition fails for every sampled y")
    y, dist, alpha = found
    y = x_l + lift_delta(x_l, y)
    z_u = stable_holonomy(model, x_l, y, x_u, depth)
    y_u, offset = centre_to_unstable(model, z_u, y, depth)
    return Quadrilateral(x_l.copy(), x_u, y, y_u, z_u, float(C), int(ell), dist, alpha, dxu, float(offset))


# ---------------------------------------------------------------------------
# dynamical balls


@dataclass
class DynamicalBall:
    centre: np.ndarray
    tau: int
    coords: tuple
    arclengths: tuple
    endpoints: np.ndarray
    orbit: BaseOrbit = field(repr=False, default=None)

    @property
    def length(self):
        return self.arclengths[1] - self.arclengths[0]

    def contains_centre(self):
        return self.arclengths[0] < 0.0 < self.arclengths[1]


def ball_from_tau(model: MapModel, x_u, tau: int, depth: int = DEFAULT_DEPTH) -> DynamicalBall:
    """f^-tau of the unit unstable ball around f^tau(x_u), as an arclength interval on W^u(x_u)."""
    deep = max(depth, tau)
    ub = BaseOrbit(model, x_u, back=deep + 16, forward=tau + depth + 16)
    top = ub.shifted(tau)
    coords, fam = leaf_coordinate_at_arclength(top, "u", [-1.0, 1.0], deep)
    xi = fam.solve(coords)
    ends = fam.orbits(xi=xi)[:, fam.n0 - tau]
    shift = np.asarray(x_u, dtype=float) - ub.point
    a = xi[:, fam.n0 - tau, 2]
    reach = 1.2 * float(np.max(np.abs(a))) + 1e-12
    arc = _arclength_map(LeafFamily(ub, "u", depth), reach)
    sig = cheb.chebval(a / reach, arc)
    return DynamicalBall(ub.point + shift, int(tau), (float(a[0]), float(a[1])),
                         (float(sig[0]), float(sig[1])), ends + shift, ub)


def dynamical_ball(model: MapModel, x, x_u, epsilon: float, ell: int, depth: int = DEFAULT_DEPTH):
    tau, _ = stopping_times(model, x, x_u, epsilon, ell)
    return ball_from_tau(model, x_u, tau, depth)


def _u_arclength(model: MapModel, ub: BaseOrbit, coords, j: int, depth: int = DEFAULT_DEPTH):
    """Signed u-arclength from f^j(x_u) to f^j of the leaf points with coordinates ``coords``."""
    fam0 = LeafFamily(ub, "u", depth)
    pts = fam0.points(np.atleast_1d(coords))
    ref = ub.point.copy()
    for _ in range(j):
        pts = model.evaluate_lift(pts)
        ref = model.evaluate_lift(ref)
    bj = ub.shifted(j)
    cj = (pts - ref) @ linear_eigenvectors()[:, 2]
    reach = 1.2 * float(np.max(np.abs(cj))) + 1e-12
    arc = _arclength_map(LeafFamily(bj, "u", depth), reach)
    return cheb.chebval(cj / reach, arc)


def ball_unstable_spread(model: MapModel, ball: DynamicalBall, n_samples: int = 64, rng_seed: int = 0,
                         depth: int = DEFAULT_DEPTH):
    """max over sampled a in the ball and 0 <= j <= tau of d_u(f^j x_u, f^j a)."""
    rng = np.random.default_rng(rng_seed)
    a = rng.uniform(ball.coords[0], ball.coords[1], n_samples)
    return max(float(np.max(np.abs(_u_arclength(model, ball.orbit, a, j, depth))))
               for j in range(ball.tau + 1))


def ball_image_lengths(model: MapModel, ball: DynamicalBall, steps: int, depth: int = DEFAULT_DEPTH):
    """Arclength of f^j(J) for j = 0..steps."""
    out = []
    for j in range(steps + 1):
        lo, hi = _u_arclength(model, ball.orbit, np.array(ball.coords), j, depth)
        out.append(float(hi - lo))
    return np.array(out)


# ---------------------------------------------------------------------------
# estimates


def quasi_isometry_probe(model: MapModel, x, x_u, epsilon: float, ell_max: int = 30):
    """tau(l), t(l) for l = 0..ell_max and the envelope (Theta, A) fitted to each."""
    if ell_max < 10:
        raise ValueError("ell_max must be at least 10")
    xb = BaseOrbit(model, x, back=ell_max + DEFAULT_DEPTH + 8)
    ub = BaseOrbit(model, x_u, back=8, forward=4 * ell_max + 200)
    taus, ts = [], []
    for ell in range(ell_max + 1):
        tau, t = stopping_times(model, xb, ub, epsilon, ell)
        taus.append(tau)
        ts.append(t)
    return {
        "ells": list(range(ell_max + 1)),
        "tau": taus,
        "t": ts,
        "tau_fit": envelope_fit(taus),
        "t_fit": envelope_fit(ts),
    }


def envelope_fit(values):
    """(Theta, A) with Theta^-1 m - A < v(l+m) - v(l) < Theta m + A for all pairs.

    Theta is taken from the least-squares slope s as max(s, 1/s); A is the
    smallest constant making both strict inequalities hold.
    """
    v = np.asarray(values, dtype=float)
    # tau is pinned at 0 while the past ratio alone exceeds eps; fit past that
    start = int(np.argmax(v > 0)) if np.any(v > 0) else 0
    start = max(0, start - 1)
    v = v[start:]
    ells = np.arange(v.size)
    slope = float(np.polyfit(ells, v, 1)[0])
    theta = max(slope, 1.0 / slope) if slope > 0 else float("inf")
    i, j = np.triu_indices(v.size, k=1)
    m = (j - i).astype(float)
    diff = v[j] - v[i]
    a_up = np.max(diff - theta * m)
    a_lo = np.max(m / theta - diff)
    amp = max(a_up, a_lo, 0.0)
    return {"theta": theta, "A": float(amp) + 1e-12, "slope": slope, "start": start}


def synchronization_check(model: MapModel, q: Quadrilateral, epsilon: float, n_ball: int = 4,
                          rng_seed: int = 0):
    """Stopping-time gaps between (x, x_u) and (y, y_u), and for points of J(x_u)."""
    ell = q.ell
    tau, t = stopping_times(model, q.x, q.x_u, epsilon, ell)
    tau2, t2 = stopping_times(model, q.y, q.y_u, epsilon, ell)
    out = {"tau": (tau, tau2), "t": (t, t2), "tau_gap": abs(tau - tau2), "t_gap": abs(t - t2)}
    if n_ball:
        ball = ball_from_tau(model, q.x_u, tau)
        rng = np.random.default_rng(rng_seed)
        fam = LeafFamily(ball.orbit, "u")
        a = rng.uniform(ball.coords[0], ball.coords[1], n_ball)
        pts = fam.points(a) + (q.x_u - ball.orbit.point)
        xb = BaseOrbit(model, q.x, back=ell + DEFAULT_DEPTH + 8)
        gaps = []
        for p in pts:
            ta, tt = stopping_times(model, xb, p, epsilon, ell)
            gaps.append(max(abs(ta - tau), abs(tt - t)))
        out["ball_gap"] = int(max(gaps))
    return out


def drift_gap(model: MapModel, q: Quadrilateral, epsilon: float, tau: int | None = None,
              depth: int = DEFAULT_DEPTH) -> float:
    """|H^c_{f^tau(z_u)}(f^tau(y_u))|, the centre displacement after tau steps."""
    if tau is None:
        tau, _ = stopping_times(model, q.x, q.x_u, epsilon, q.ell)
    zb = BaseOrbit(model, q.z_u, back=depth + 16, forward=tau + depth + 16)
    a0 = float((q.y_u - q.z_u) @ linear_eigenvectors()[:, 1])
    if a0 == 0.0:
        return 0.0
    fam = LeafFamily(zb, "c", max(depth, tau))
    xi = fam.solve(np.atleast_1d(a0))
    a_tau = float(xi[0, fam.n0 + tau, 1])
    top = zb.shifted(tau)
    reach = 1.3 * abs(a_tau) + 1e-3
    for _ in range(2):
        try:
            chart = LeafChart(top, "c", depth, reach=reach)
            return float(abs(chart.H(a_tau)))
        except OutsidePatch:
            reach *= 2.0
    chart = LeafChart(top, "c", depth, reach=reach)
    return float(abs(chart.H(a_tau)))


def matched_ball_distortion(model: MapModel, q: Quadrilateral, epsilon: float, n_pairs: int = 8,
                            rng_seed: int = 0):
    """Max deviation from 1 (as max(r, 1/r)) of rate ratios and ball-length ratios.

    Pairs a in J(x_u), b in J(y_u) are matched by relative position in
    their balls; ratios are taken for 0 <= j <= max(tau, tau').
    """
    tau, _ = stopping_times(model, q.x, q.x_u, epsilon, q.ell)
    tau2, _ = stopping_times(model, q.y, q.y_u, epsilon, q.ell)
    steps = max(tau, tau2)
    bx = ball_from_tau(model, q.x_u, tau)
    by = ball_from_tau(model, q.y_u, tau2)
    rng = np.random.default_rng(rng_seed)
    pos = rng.uniform(0.0, 1.0, n_pairs)
    fx, fy = LeafFamily(bx.orbit, "u"), LeafFamily(by.orbit, "u")
    a = fx.points(bx.coords[0] + pos * (bx.coords[1] - bx.coords[0]))
    b = fy.points(by.coords[0] + pos * (by.coords[1] - by.coords[0]))
    worst = {"c": 1.0, "u": 1.0, "length": 1.0}
    for pa, pb in zip(a, b):
        oa = BaseOrbit(model, pa, back=DEFAULT_DEPTH + 8, forward=steps + 8)
        ob = BaseOrbit(model, pb, back=DEFAULT_DEPTH + 8, forward=steps + 8)
        for bundle in ("c", "u"):
            la = np.concatenate([[0.0], np.cumsum(np.log(oa.rates[bundle][oa.index(0): oa.index(steps)]))])
            lb = np.concatenate([[0.0], np.cumsum(np.log(ob.rates[bundle][ob.index(0): ob.index(steps)]))])
            worst[bundle] = max(worst[bundle], float(np.exp(np.max(np.abs(lb - la)))))
    lx = ball_image_lengths(model, bx, steps)
    ly = ball_image_lengths(model, by, steps)
    worst["length"] = float(np.exp(np.max(np.abs(np.log(ly) - np.log(lx)))))
    worst["steps"] = steps
    return worst
