"""Empirical u-Gibbs clouds and leaf-wise quotient measures in normal-form coordinates.

A cloud point enters the quotient at x when one of its lifts lies in the
slab q = Phi_x(t, s) + sigma e_s, |sigma| < slab. Ambient volume in the
coordinates (t, s, sigma) has density J(t, s) = |det(e_s, dPhi/dt, dPhi/ds)|,
so each point is weighted by 1/J: the weighted (t, s) histogram then
estimates the measure's density in normal coordinates.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy import stats

from .errors import EmptyWindow
from .leaves import LeafSegment, grow_leaf
from .normal_forms import NormalChart
from .splitting import DEFAULT_DEPTH, linear_eigenvalues, linear_eigenvectors, one_step_rates
from .torus_maps import MapModel, wrap

DEFAULT_WINDOW = (-0.5, 0.5)
DEFAULT_BINS = 64
KS_CONSISTENT = 0.05
KS_VIOLATING = 0.2


def sample_u_gibbs(model: MapModel, seed: LeafSegment, n_iter: int = 50, n_points: int = 100_000,
                   rng_seed: int = 0, chunk: int = 50_000):
    """f^n_iter of arclength-uniform points of an unstable seed segment, wrapped to [0,1)^3."""
    if seed.bundle != "u":
        raise ValueError("the seed must be an unstable segment")
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    rng = np.random.default_rng(rng_seed)
    sigma = rng.uniform(seed.arclens[0], seed.arclens[-1], n_points)
    out = np.empty((n_points, 3))
    # chunks only bound memory; every point is iterated independently
    for lo in range(0, n_points, chunk):
        pts = wrap(seed.at_arclength(sigma[lo: lo + chunk]))
        for _ in range(n_iter):
            pts = model.evaluate(pts)
        out[lo: lo + chunk] = pts
    return out


def birkhoff_log_unstable(model: MapModel, cloud):
    """Average of log lambda^u over the cloud (frames by power iteration per point)."""
    if model.is_linear:
        return float(np.log(linear_eigenvalues()[2]))
    from .splitting import compute_splittings

    frames = compute_splittings(model, cloud, depth=20)
    return float(np.mean(np.log(one_step_rates(model, cloud, frames["u"]))))


def marginal_discrepancy(cloud):
    """Largest KS distance of a coordinate marginal from the uniform law on [0, 1)."""
    return float(max(stats.kstest(cloud[:, k], "uniform").statistic for k in range(3)))


# ---------------------------------------------------------------------------
# interpolated chart


def _cheb_nodes(n):
    return np.cos(np.pi * np.arange(n + 1) / n)


class PatchCoordinates:
    """Tensor Chebyshev interpolant of Phi_x over [-t_max, t_max] x [-s_max, s_max].

    ``locate`` solves Phi_x(t, s) + sigma e_s = q for (t, s, sigma) by
    Newton steps on the interpolant, vectorised over many points.
    """

    def __init__(self, model: MapModel, x, t_max: float = 0.6, s_max: float = 1.1, nt: int = 16,
                 ns: int = 32, depth: int = DEFAULT_DEPTH, chart: NormalChart | None = None):
        self.model = model
        self.t_max, self.s_max = float(t_max), float(s_max)
        self.chart = chart or NormalChart(model, x, depth, s_max=s_max, t_max=t_max)
        self.base = self.chart.base
        tn, sn = _cheb_nodes(nt), _cheb_nodes(ns)
        grid = self.chart.phi_grid(self.t_max * tn, self.s_max * sn)  # (ns+1, nt+1, 3)
        vals = np.transpose(grid - self.base, (1, 0, 2))  # (t, s, 3)
        coef = cheb.chebfit(tn, vals.reshape(nt + 1, -1), nt).reshape(nt + 1, ns + 1, 3)
        coef = np.transpose(cheb.chebfit(sn, np.transpose(coef, (1, 0, 2)).reshape(ns + 1, -1), ns)
                            .reshape(ns + 1, nt + 1, 3), (1, 0, 2))
        self.coef = coef
        self.d_t = cheb.chebder(coef, axis=0) / self.t_max
        self.d_s = cheb.chebder(coef, axis=1) / self.s_max
        self.e_s = linear_eigenvectors()[:, 0]
        # how far the patch bends away from its tangent plane along e_s
        self.bend = float(np.max(np.abs(vals @ self.e_s)))

    def _eval(self, c, t, s):
        t, s = np.asarray(t, float), np.asarray(s, float)
        shape = np.broadcast(t, s).shape
        vt = cheb.chebvander(np.broadcast_to(t / self.t_max, shape).ravel(), c.shape[0] - 1)
        vs = cheb.chebvander(np.broadcast_to(s / self.s_max, shape).ravel(), c.shape[1] - 1)
        out = np.einsum("njk,nj->nk", (vt @ c.reshape(c.shape[0], -1)).reshape(len(vt), c.shape[1], 3), vs)
        return out.reshape(shape + (3,))

    def forward(self, t, s):
        """Phi_x(t, s) as lifts near the base."""
        return self.base + self._eval(self.coef, np.asarray(t, float), np.asarray(s, float))

    def volume_jacobian(self, t, s):
        a = self._eval(self.d_t, t, s)
        b = self._eval(self.d_s, t, s)
        return np.abs(np.einsum("i,...i->...", self.e_s, np.cross(a, b)))

    def locate(self, q, iters: int = 8):
        """(t, s, sigma) per lift q (N, 3); NaN where Newton leaves the patch."""
        q = np.atleast_2d(q) - self.base
        ev = linear_eigenvectors()
        t = q @ ev[:, 2]
        s = q @ ev[:, 1]
        sig = q @ ev[:, 0]
        for _ in range(iters):
            ts, ss = np.clip(t, -self.t_max, self.t_max), np.clip(s, -self.s_max, self.s_max)
            res = self._eval(self.coef, ts, ss) + sig[:, None] * self.e_s - q
            jac = np.stack([self._eval(self.d_t, ts, ss), self._eval(self.d_s, ts, ss),
                            np.broadcast_to(self.e_s, res.shape)], axis=-1)
            step = np.linalg.solve(jac, res[..., None])[..., 0]
            t, s, sig = t - step[:, 0], s - step[:, 1], sig - step[:, 2]
        bad = (np.abs(t) > self.t_max) | (np.abs(s) > self.s_max)
        out = np.stack([t, s, sig], axis=1)
        out[bad] = np.nan
        return out


_TRANSLATES = np.array(list(itertools.product(range(-2, 3), repeat=3)), dtype=float)


def slab_coordinates(patch: PatchCoordinates, cloud, slab: float = 0.1):
    """(t, s, weight) for every lift of every cloud point inside the slab over the patch."""
    ev = linear_eigenvectors()
    base = patch.base
    cloud = wrap(np.asarray(cloud, dtype=float))
    d0 = cloud - base
    found = []
    # generous eigen-coordinate box around the patch to prefilter lifts
    box_t, box_s = 1.5 * patch.t_max + 0.1, 1.5 * patch.s_max + 0.1
    box_sig = patch.bend + 2 * slab
    for k in _TRANSLATES:
        d = d0 + k
        e = d @ ev
        keep = (np.abs(e[:, 2]) < box_t) & (np.abs(e[:, 1]) < box_s) & (np.abs(e[:, 0]) < box_sig)
        if np.any(keep):
            found.append(d[keep] + base)
    if not found:
        return np.empty((0, 3))
    lifts = np.concatenate(found)
    loc = patch.locate(lifts)
    ok = np.isfinite(loc[:, 0]) & (np.abs(loc[:, 2]) < slab)
    t, s = loc[ok, 0], loc[ok, 1]
    w = 1.0 / patch.volume_jacobian(t, s)
    return np.stack([t, s, w], axis=1)


# ---------------------------------------------------------------------------
# quotient measures


@dataclass
class EmpiricalLeafMeasure:
    """Binned s-marginal of the cloud restricted to I x [-R, R] in normal coordinates."""

    base: np.ndarray
    interval: tuple
    edges: np.ndarray
    bins: np.ndarray
    mass: np.ndarray
    u_window: tuple
    n_samples: int
    samples: np.ndarray = field(repr=False, default=None)
    weights: np.ndarray = field(repr=False, default=None)

    @property
    def density(self):
        """Normalised weighted density per unit s over [-R, R]."""
        total = self.mass.sum()
        return self.mass / total / np.diff(self.edges)

    def mass_on(self, lo=-1.0, hi=1.0):
        m = self.mass / self.mass.sum()
        centres = 0.5 * (self.edges[:-1] + self.edges[1:])
        return float(m[(centres > lo) & (centres < hi)].sum())

    def as_dict(self):
        return {
            "base": self.base.tolist(), "interval": list(self.interval), "edges": self.edges.tolist(),
            "bins": self.bins.tolist(), "mass": self.mass.tolist(), "u_window": list(self.u_window),
            "n_samples": self.n_samples,
        }


def quotient_from_coordinates(coords, base=None, window=DEFAULT_WINDOW, bins: int = DEFAULT_BINS,
                              radius: float = 1.0) -> EmpiricalLeafMeasure:
    """Quotient measure from (t, s[, weight]) samples."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    w = coords[:, 2] if coords.shape[1] > 2 else np.ones(coords.shape[0])
    lo, hi = window
    sel = (coords[:, 0] >= lo) & (coords[:, 0] <= hi) & (np.abs(coords[:, 1]) <= radius)
    if not np.any(sel):
        raise EmptyWindow("no cloud point lands in the window; sample more points")
    s, w = coords[sel, 1], w[sel]
    edges = np.linspace(-radius, radius, bins + 1)
    counts, _ = np.histogram(s, bins=edges)
    mass, _ = np.histogram(s, bins=edges, weights=w)
    base = np.zeros(3) if base is None else np.asarray(base, dtype=float)
    return EmpiricalLeafMeasure(base, (-radius, radius), edges, counts, mass / mass.sum(), (lo, hi),
                                int(sel.sum()), s, w)


def leafwise_quotient(model: MapModel, x, cloud, window=DEFAULT_WINDOW, bins: int = DEFAULT_BINS,
                      slab: float = 0.1, patch: PatchCoordinates | None = None) -> EmpiricalLeafMeasure:
    """nu-hat^c_x from a cloud: slab-project onto the cu-patch of x, keep t in the window, bin s."""
    lo, hi = window
    if patch is None:
        patch = PatchCoordinates(model, x, t_max=max(abs(lo), abs(hi)) * 1.2)
    coords = slab_coordinates(patch, cloud, slab)
    return quotient_from_coordinates(coords, patch.base, window, bins)


def uniformity_test(m: EmpiricalLeafMeasure) -> float:
    """KS distance between the (weighted) empirical CDF on [-R, R] and the uniform CDF."""
    if m.samples is None:
        # bins only: compare the CDF at bin edges
        cdf = np.concatenate([[0.0], np.cumsum(m.mass / m.mass.sum())])
        uni = (m.edges - m.edges[0]) / (m.edges[-1] - m.edges[0])
        return float(np.max(np.abs(cdf - uni)))
    order = np.argsort(m.samples)
    s, w = m.samples[order], m.weights[order]
    w = w / w.sum()
    lo, hi = m.interval
    uni = (s - lo) / (hi - lo)
    cdf_hi = np.cumsum(w)
    cdf_lo = cdf_hi - w
    return float(max(np.max(np.abs(cdf_hi - uni)), np.max(np.abs(cdf_lo - uni))))


def total_variation(a: EmpiricalLeafMeasure, b: EmpiricalLeafMeasure, coarsen: int = 1) -> float:
    """Total variation between two quotients on common bins, optionally merging ``coarsen`` bins."""
    pa = a.mass / a.mass.sum()
    pb = b.mass / b.mass.sum()
    if coarsen > 1:
        pa = pa.reshape(-1, coarsen).sum(axis=1)
        pb = pb.reshape(-1, coarsen).sum(axis=1)
    return float(0.5 * np.abs(pa - pb).sum())


def verdict_from_ks(ks: float, consistent: float = KS_CONSISTENT, violating: float = KS_VIOLATING) -> str:
    if ks < consistent:
        return "consistent"
    if ks > violating:
        return "violating"
    return "inconclusive"


def unstable_density_residual(model: MapModel, x, cloud, s_band=(-0.1, 0.1), window=DEFAULT_WINDOW,
                              bins: int = 16, slab: float = 0.1, patch: PatchCoordinates | None = None,
                              coords=None):
    """Chi-square statistic of the t-histogram in an s-band against the volume-weighted expectation.

    Expected bin probabilities are proportional to the integral of J over
    each bin, which is what a measure with t-uniform density in normal
    coordinates produces in the slab. Returns a dict with the statistic,
    degrees of freedom and the chi-square quantiles.
    """
    lo, hi = window
    if coords is None:
        if patch is None:
            patch = PatchCoordinates(model, x, t_max=max(abs(lo), abs(hi)) * 1.2)
        coords = slab_coordinates(patch, cloud, slab)
    coords = np.atleast_2d(coords)
    sel = (coords[:, 1] >= s_band[0]) & (coords[:, 1] <= s_band[1]) & (coords[:, 0] >= lo) & (coords[:, 0] <= hi)
    if sel.sum() < bins:
        raise EmptyWindow("too few cloud points in the s-band")
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(coords[sel, 0], bins=edges)
    if patch is not None:
        tt = np.linspace(lo, hi, 16 * bins + 1)
        ss = np.linspace(s_band[0], s_band[1], 9)
        tg, sg = np.meshgrid(0.5 * (tt[:-1] + tt[1:]), ss, indexing="ij")
        jac = patch.volume_jacobian(tg, sg).mean(axis=1).reshape(bins, 16).mean(axis=1)
        expected = jac / jac.sum()
    else:
        expected = np.full(bins, 1.0 / bins)
    n = counts.sum()
    stat = float(np.sum((counts - n * expected) ** 2 / (n * expected)))
    dof = bins - 1
    return {
        "statistic": stat,
        "dof": dof,
        "n": int(n),
        "q95": float(stats.chi2.ppf(0.95, dof)),
        "q99": float(stats.chi2.ppf(0.99, dof)),
        "q999": float(stats.chi2.ppf(0.999, dof)),
        "p_value": float(stats.chi2.sf(stat, dof)),
    }


def srb_verdict(model: MapModel, n_points: int = 100_000, rng_seed: int = 0, n_iter: int = 50,
                x=(0.1, 0.2, 0.3), seed_point=(0.3, 0.6, 0.1), window=DEFAULT_WINDOW, bins: int = DEFAULT_BINS,
                slab: float = 0.1, ks_consistent: float = KS_CONSISTENT, ks_violating: float = KS_VIOLATING):
    """Sample a u-Gibbs cloud, build nu-hat^c at x and classify the KS distance."""
    seed = grow_leaf(model, np.asarray(seed_point, dtype=float), "u", 0.5, 64)
    cloud = sample_u_gibbs(model, seed, n_iter, n_points, rng_seed)
    patch = PatchCoordinates(model, np.asarray(x, dtype=float), t_max=max(abs(window[0]), abs(window[1])) * 1.2)
    coords = slab_coordinates(patch, cloud, slab)
    q = quotient_from_coordinates(coords, patch.base, window, bins)
    ks = uniformity_test(q)
    return {
        "verdict": verdict_from_ks(ks, ks_consistent, ks_violating),
        "ks": ks,
        "n_window": q.n_samples,
        "bins": q.bins.tolist(),
        "edges": q.edges.tolist(),
        "density": q.density.tolist(),
        "n_points": int(n_points),
        "n_iter": int(n_iter),
    }


def basic_move_dynamics(model: MapModel, x, cloud, window=DEFAULT_WINDOW, bins: int = DEFAULT_BINS,
                        slab: float = 0.1, coarsen: int = 8, patch: PatchCoordinates | None = None):
    """Total variation between nu-hat^c at f(x) from the pushed cloud and the
    pushforward of nu-hat^c at x under s -> lambda^c_x s, both renormalised on [-1, 1].

    Histograms are compared after merging ``coarsen`` neighbouring bins.
    """
    lo, hi = window
    t_max = max(abs(lo), abs(hi)) * 1.2
    if patch is None:
        patch = PatchCoordinates(model, x, t_max=t_max)
    image_chart = patch.chart.at_image(1, s_max=patch.s_max, t_max=t_max)
    image_patch = PatchCoordinates(model, None, t_max=t_max, chart=image_chart)
    here = slab_coordinates(patch, cloud, slab)
    there = slab_coordinates(image_patch, model.evaluate(wrap(np.asarray(cloud, float))), slab)
    moved = here.copy()
    moved[:, 1] *= patch.chart.lambda_c
    a = quotient_from_coordinates(moved, image_patch.base, window, bins)
    b = quotient_from_coordinates(there, image_patch.base, window, bins)
    return total_variation(a, b, coarsen)
