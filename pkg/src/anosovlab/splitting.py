"""Invariant splitting E^s + E^c + E^u, one-step rates and cocycles.

Bundles are computed by power iteration along orbits: the unstable line and
the centre-unstable plane are pushed forward from the distant past, the
centre-stable plane is pulled back from the distant future, and the centre
line is the intersection of the two planes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateFrame
from .torus_maps import MATRIX, MapModel, wrap

BUNDLES = ("s", "c", "u")
DEFAULT_DEPTH = 60


@lru_cache(maxsize=1)
def _linear_eigensystem():
    vals, vecs = np.linalg.eigh(MATRIX)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    # orientation convention: first coordinate positive
    vecs = vecs * np.sign(vecs[0])
    return vals, vecs


def linear_eigenvalues():
    """Eigenvalues of the linear part, ascending (stable, centre, unstable)."""
    return _linear_eigensystem()[0].copy()


def linear_eigenvectors():
    """Columns are the oriented unit eigenvectors (e_s, e_c, e_u)."""
    return _linear_eigensystem()[1].copy()


@dataclass
class Frame:
    v_s: np.ndarray
    v_c: np.ndarray
    v_u: np.ndarray
    depth: int
    residual: float

    def as_matrix(self):
        return np.stack([self.v_s, self.v_c, self.v_u], axis=-1)


def _normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _orthonormal_pair(a, b):
    a = _normalize(a)
    b = b - (a * b).sum(-1, keepdims=True) * a
    return a, _normalize(b)


def _orient(v, ref):
    sign = np.sign((v * ref).sum(-1, keepdims=True))
    sign[sign == 0] = 1.0
    return v * sign


def frames_on_orbit(model: MapModel, orbit, seeds=None, need_stable=True):
    """Bundle directions at every point of a batch of orbit segments.

    ``orbit`` has shape (B, L, 3) (or (L, 3)) and must be an orbit of the
    model. Directions near the ends of the segment are only as good as the
    warm-up available: unstable and centre need past, stable and centre need
    future. ``seeds`` may override the initial vectors (dict with keys
    ``u``, ``cu`` (pair), ``cs`` (pair), ``s``), each of shape (B, 3).

    Returns a dict with arrays ``s``, ``c``, ``u`` of shape (B, L, 3).
    """
    orbit = np.asarray(orbit, dtype=float)
    squeeze = orbit.ndim == 2
    if squeeze:
        orbit = orbit[None]
    nb, length, _ = orbit.shape
    evecs = linear_eigenvectors()
    e_s, e_c, e_u = (np.broadcast_to(evecs[:, k], (nb, 3)) for k in range(3))
    seeds = dict(seeds or {})
    jac = model.differential(orbit)

    u = np.array(seeds.get("u", e_u), dtype=float)
    cu1, cu2 = seeds.get("cu", (e_c, e_u))
    cu1, cu2 = _orthonormal_pair(np.array(cu1, dtype=float), np.array(cu2, dtype=float))
    out_u = np.empty_like(orbit)
    n_cu = np.empty_like(orbit)
    out_u[:, 0] = _normalize(u)
    n_cu[:, 0] = _normalize(np.cross(cu1, cu2))
    u = out_u[:, 0]
    for k in range(length - 1):
        m = jac[:, k]
        u = _normalize(np.einsum("bij,bj->bi", m, u))
        cu1, cu2 = _orthonormal_pair(np.einsum("bij,bj->bi", m, cu1), np.einsum("bij,bj->bi", m, cu2))
        out_u[:, k + 1] = u
        n_cu[:, k + 1] = _normalize(np.cross(cu1, cu2))

    cs1, cs2 = seeds.get("cs", (e_s, e_c))
    cs1, cs2 = _orthonormal_pair(np.array(cs1, dtype=float), np.array(cs2, dtype=float))
    s = np.array(seeds.get("s", e_s), dtype=float)
    n_cs = np.empty_like(orbit)
    out_s = np.empty_like(orbit)
    n_cs[:, -1] = _normalize(np.cross(cs1, cs2))
    out_s[:, -1] = _normalize(s)
    s = out_s[:, -1]
    for k in range(length - 1, 0, -1):
        m = jac[:, k - 1]
        cs1 = np.linalg.solve(m, cs1[..., None])[..., 0]
        cs2 = np.linalg.solve(m, cs2[..., None])[..., 0]
        cs1, cs2 = _orthonormal_pair(cs1, cs2)
        n_cs[:, k - 1] = _normalize(np.cross(cs1, cs2))
        if need_stable:
            s = _normalize(np.linalg.solve(m, s[..., None])[..., 0])
            out_s[:, k - 1] = s

    c = np.cross(n_cu, n_cs)
    norm = np.linalg.norm(c, axis=-1)
    if np.any(norm < 1e-8):
        raise DegenerateFrame("centre-unstable and centre-stable planes coincide")
    out_c = c / norm[..., None]
    res = {
        "s": _orient(out_s, evecs[:, 0]),
        "c": _orient(out_c, evecs[:, 1]),
        "u": _orient(out_u, evecs[:, 2]),
    }
    if squeeze:
        res = {k: v[0] for k, v in res.items()}
    return res


def one_step_rates(model: MapModel, points, directions):
    """lambda^*_p = |Df(p) v^*(p)| for unit vectors ``directions``."""
    jac = model.differential(points)
    return np.linalg.norm(np.einsum("...ij,...j->...i", jac, directions), axis=-1)


def centred_orbit(model: MapModel, p, back: int, forward: int):
    """Wrapped orbit of ``p`` from f^-back(p) to f^forward(p); shape (back+forward+1, 3)."""
    p = wrap(np.asarray(p, dtype=float))
    past = model.orbit(p, -back)[::-1] if back else p[None]
    future = model.orbit(p, forward) if forward else p[None]
    return np.concatenate([past, future[1:]], axis=0)


def _batch_centred_orbit(model, pts, back, forward):
    pts = wrap(np.atleast_2d(np.asarray(pts, dtype=float)))
    past = [pts]
    cur = pts
    for _ in range(back):
        cur = wrap(model.invert_lift(cur))
        past.append(cur)
    fut = []
    cur = pts
    for _ in range(forward):
        cur = model.evaluate(cur)
        fut.append(cur)
    return np.stack(past[::-1] + fut, axis=1)


def _frame_residual(model, orbit, frames, centre):
    """Largest invariance defect |Df v(x) - lambda v(f x)| at the centre index."""
    worst = 0.0
    p = orbit[..., centre, :]
    jac = model.differential(p)
    for key in BUNDLES:
        img = np.einsum("...ij,...j->...i", jac, frames[key][..., centre, :])
        lam = np.linalg.norm(img, axis=-1, keepdims=True)
        defect = np.linalg.norm(img - lam * frames[key][..., centre + 1, :], axis=-1)
        worst = max(worst, float(np.max(defect)))
    return worst


def _seed_spread(model, orbit, fr, centre):
    """Disagreement with frames grown from rotated seeds (a convergence proxy)."""
    nb = orbit.shape[0] if orbit.ndim == 3 else 1
    evecs = linear_eigenvectors()
    # rotate every seed towards a neighbouring bundle by a fixed angle
    mix = np.cos(0.3) * evecs + np.sin(0.3) * np.roll(evecs, 1, axis=1)
    b = lambda k: np.broadcast_to(mix[:, k], (nb, 3))
    alt = frames_on_orbit(model, orbit, seeds={"u": b(2), "s": b(0), "cu": (b(1), b(2)), "cs": (b(0), b(1))})
    spread = 0.0
    for key in BUNDLES:
        d = fr[key][..., centre, :] - alt[key][..., centre, :]
        spread = np.maximum(spread, np.linalg.norm(d, axis=-1))
    return spread


def compute_splitting(model: MapModel, p, depth: int = DEFAULT_DEPTH, rng_seed: int = 0) -> Frame:
    """Frame (v_s, v_c, v_u) at ``p`` from a 2*depth orbit segment around it.

    The residual is the larger of the invariance defect and the spread
    against frames grown from rotated seeds.
    """
    depth = int(depth)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    orbit = centred_orbit(model, p, depth, depth + 1)
    rng = np.random.default_rng(rng_seed)
    seeds = None
    for _ in range(4):
        try:
            fr = frames_on_orbit(model, orbit, seeds=seeds)
            mat = np.stack([fr["s"][depth], fr["c"][depth], fr["u"][depth]], axis=-1)
            if abs(np.linalg.det(mat)) < 1e-6:
                raise DegenerateFrame("frame vectors nearly dependent")
            break
        except DegenerateFrame:
            # generic random seeds for the next attempt
            seeds = {"u": rng.normal(size=(1, 3)), "s": rng.normal(size=(1, 3)),
                     "cu": tuple(rng.normal(size=(2, 1, 3))), "cs": tuple(rng.normal(size=(2, 1, 3)))}
    else:
        raise DegenerateFrame("seed vectors kept aligning with a complementary bundle")
    residual = max(_frame_residual(model, orbit, fr, depth), float(_seed_spread(model, orbit, fr, depth)))
    return Frame(fr["s"][depth], fr["c"][depth], fr["u"][depth], depth, residual)


def compute_splittings(model: MapModel, points, depth: int = DEFAULT_DEPTH):
    """Vectorised frames at many points; returns dict of (N, 3) arrays and residuals."""
    orbit = _batch_centred_orbit(model, points, depth, depth + 1)
    fr = frames_on_orbit(model, orbit)
    jac = model.differential(orbit[:, depth])
    res = np.zeros(orbit.shape[0])
    for key in BUNDLES:
        img = np.einsum("bij,bj->bi", jac, fr[key][:, depth])
        lam = np.linalg.norm(img, axis=-1, keepdims=True)
        res = np.maximum(res, np.linalg.norm(img - lam * fr[key][:, depth + 1], axis=-1))
    res = np.maximum(res, _seed_spread(model, orbit, fr, depth))
    out = {k: fr[k][:, depth] for k in BUNDLES}
    out["residual"] = res
    return out


def _bundle_index(bundle):
    if bundle not in BUNDLES:
        raise ValueError(f"bundle must be one of {BUNDLES}, got {bundle!r}")
    return bundle


def orbit_rates(model: MapModel, p, back: int, forward: int, depth: int = DEFAULT_DEPTH):
    """One-step rates at f^k(p), k = -back..forward-1, for all three bundles.

    Returns (ks, rates) with rates[key][i] the rate at f^{ks[i]}(p).
    """
    orbit = centred_orbit(model, p, back + depth, forward + depth)
    fr = frames_on_orbit(model, orbit)
    sl = slice(depth, depth + back + forward)
    ks = np.arange(-back, forward)
    rates = {k: one_step_rates(model, orbit[sl], fr[k][sl]) for k in BUNDLES}
    return ks, rates


def cocycle_rate(model: MapModel, p, bundle: str, n: int, depth: int = DEFAULT_DEPTH) -> float:
    """lambda^*_p(n): product of one-step rates along the orbit (inverse product for n < 0)."""
    _bundle_index(bundle)
    n = int(n)
    if n == 0:
        return 1.0
    if n > 0:
        _, rates = orbit_rates(model, p, 0, n, depth)
        return float(np.exp(np.log(rates[bundle]).sum()))
    _, rates = orbit_rates(model, p, -n, 0, depth)
    return float(np.exp(-np.log(rates[bundle]).sum()))


def domination_ratio(model: MapModel, p, ell: int, depth: int = DEFAULT_DEPTH) -> float:
    """d^ell_p = lambda^c(ell) / lambda^u(ell) measured from f^-ell(p)."""
    ell = int(ell)
    if ell < 0:
        raise ValueError("ell must be >= 0")
    if ell == 0:
        return 1.0
    _, rates = orbit_rates(model, p, ell, 0, depth)
    return float(np.exp(np.log(rates["c"]).sum() - np.log(rates["u"]).sum()))


@dataclass
class HyperbolicityEstimate:
    chi_1_s: float
    chi_2_s: float
    chi_1_c: float
    chi_2_c: float
    chi_1_u: float
    chi_2_u: float
    chi_1_d: float
    chi_2_d: float
    raw: dict

    def as_dict(self):
        return {k: getattr(self, k) for k in (
            "chi_1_s", "chi_2_s", "chi_1_c", "chi_2_c", "chi_1_u", "chi_2_u", "chi_1_d", "chi_2_d")}


def _sample_rates(model, sample_size, horizon, rng_seed, depth):
    rng = np.random.default_rng(rng_seed)
    pts = rng.random((int(sample_size), 3))
    orbit = _batch_centred_orbit(model, pts, depth, horizon + depth)
    fr = frames_on_orbit(model, orbit)
    sl = slice(depth, depth + horizon)
    return {k: one_step_rates(model, orbit[:, sl], fr[k][:, sl]) for k in BUNDLES}


def lyapunov_exponents(model: MapModel, sample_size: int = 64, horizon: int = 200, rng_seed: int = 0,
                       depth: int = DEFAULT_DEPTH):
    """Birkhoff averages of log lambda^s, log lambda^c, log lambda^u along random orbits.

    Returns (exponents, spread) where spread is the standard error over the
    sampled orbits.
    """
    rates = _sample_rates(model, sample_size, horizon, rng_seed, depth)
    per_orbit = np.stack([np.log(rates[k]).mean(axis=1) for k in BUNDLES], axis=1)
    spread = per_orbit.std(axis=0) / np.sqrt(per_orbit.shape[0])
    return per_orbit.mean(axis=0), spread


def estimate_chi(model: MapModel, sample_size: int = 64, horizon: int = 20, rng_seed: int = 0,
                 margin: float = 0.05, depth: int = DEFAULT_DEPTH) -> HyperbolicityEstimate:
    """Empirical exponential bounds for the rates and the domination ratio.

    For each bundle the extreme values of (1/l) log lambda(l) over random
    points and 1 <= l <= horizon are taken, then widened by ``margin``
    (relative) on both sides.
    """
    if sample_size < 1:
        raise ValueError("sample_size must be >= 1")
    rates = _sample_rates(model, sample_size, horizon, rng_seed, depth)
    ell = np.arange(1, horizon + 1)
    raw = {}
    for key in BUNDLES:
        avg = np.cumsum(np.log(rates[key]), axis=1) / ell
        raw[key] = (float(avg.min()), float(avg.max()))
    d = np.cumsum(np.log(rates["c"]) - np.log(rates["u"]), axis=1) / ell
    raw["d"] = (float(d.min()), float(d.max()))

    def widen(lo, hi):
        return lo - margin * abs(lo), hi + margin * abs(hi)

    out = {}
    for key in ("s", "c", "u", "d"):
        lo, hi = widen(*raw[key])
        if key in ("s", "d"):
            # contracting quantities: chi_1 is the most negative
            out[f"chi_1_{key}"], out[f"chi_2_{key}"] = lo, hi
        else:
            out[f"chi_1_{key}"], out[f"chi_2_{key}"] = hi, lo
    return HyperbolicityEstimate(raw=raw, **out)


def check_bunching(model: MapModel, sample_size: int = 64, n: int = 1, rng_seed: int = 0,
                   depth: int = DEFAULT_DEPTH):
    """Test lambda^s(n) < lambda^c(n) / lambda^u(n) at random points.

    Returns (holds, worst_margin) where the margin is the smallest value of
    lambda^c(n)/lambda^u(n) - lambda^s(n) seen.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rates = _sample_rates(model, sample_size, n, rng_seed, depth)
    logs = {k: np.log(rates[k]).sum(axis=1) for k in BUNDLES}
    margin = np.exp(logs["c"] - logs["u"]) - np.exp(logs["s"])
    worst = float(margin.min())
    return worst > 0.0, worst
