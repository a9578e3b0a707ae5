"""Torus arithmetic and the three model diffeomorphisms of T^3.

All maps act on the universal cover R^3 as well (``*_lift`` functions), which
is what the leaf and chart code uses to avoid wrap-around seams.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonConvergence

MATRIX = np.array([[2, 1, 0], [1, 2, 1], [0, 1, 1]], dtype=float)
# adjugate of MATRIX (det = 1)
MATRIX_INV = np.array([[1, -1, 1], [-1, 2, -2], [1, -2, 3]], dtype=float)

KINDS = ("linear", "dissipative", "conservative")
EPSILON_MAX = 0.3
TWO_PI = 2.0 * np.pi

_TRANSLATES = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=float)


def wrap(p):
    """Reduce coordinates into [0, 1)."""
    q = np.mod(np.asarray(p, dtype=float), 1.0)
    # mod can return exactly 1.0 for tiny negative inputs
    return np.where(q >= 1.0, 0.0, q)


def lift_delta(p, q):
    """Shortest displacement q - p on the torus, as a vector in R^3."""
    d = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
    return d - np.round(d)


def torus_distance(p, q):
    """Minimum Euclidean distance over the 27 neighbouring integer translates."""
    d = wrap(q) - wrap(p)
    d = np.asarray(d)[..., None, :] + _TRANSLATES
    return np.sqrt((d * d).sum(-1)).min(-1)


@dataclass(frozen=True)
class MapModel:
    """A model map: linear automorphism, dissipative or conservative family.

    ``epsilon`` is the perturbation size; it must be 0 for the linear kind
    and satisfy ``|epsilon| <= 0.3`` otherwise.
    """

    kind: str = "linear"
    epsilon: float = 0.0

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in KINDS:
            raise ConfigError(f"unknown map kind {self.kind!r}; expected one of {KINDS}")
        eps = float(self.epsilon)
        if not np.isfinite(eps):
            raise ConfigError("epsilon must be finite")
        if kind == "linear" and eps != 0.0:
            raise ConfigError("the linear map takes epsilon = 0")
        if abs(eps) > EPSILON_MAX:
            raise ConfigError(f"|epsilon| = {abs(eps)} exceeds the valid range {EPSILON_MAX}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "epsilon", eps)

    @property
    def matrix(self):
        return MATRIX.copy()

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear" or self.epsilon == 0.0

    # perturbation pieces -------------------------------------------------
    def _shear(self, p):
        x = p[..., 0]
        amp = self.epsilon / TWO_PI * np.sin(TWO_PI * x)
        out = np.zeros_like(p)
        if self.kind == "dissipative":
            out[..., 0] = amp
        elif self.kind == "conservative":
            out[..., 0] = amp
            out[..., 1] = amp
        return out

    def _shear_gradient(self, p):
        """Derivative of the perturbation with respect to x, per component."""
        x = np.asarray(p, dtype=float)[..., 0]
        c = self.epsilon * np.cos(TWO_PI * x)
        col = np.zeros(np.shape(p))
        if self.kind == "dissipative":
            col[..., 0] = c
        elif self.kind == "conservative":
            col[..., 0] = c
            col[..., 1] = c
        return col

    # public API ------------------------------------------------------------
    def evaluate_lift(self, p):
        p = np.asarray(p, dtype=float)
        out = p @ MATRIX.T
        if not self.is_linear:
            out = out + self._shear(p)
        return out

    def evaluate(self, p):
        return wrap(self.evaluate_lift(p))

    def differential(self, p):
        """Jacobian Df(p); broadcasts over leading axes of ``p``."""
        p = np.asarray(p, dtype=float)
        jac = np.broadcast_to(MATRIX, p.shape[:-1] + (3, 3)).copy()
        if not self.is_linear:
            jac[..., :, 0] += self._shear_gradient(p)
        return jac

    def invert_lift(self, q, tol: float = 1e-13, max_iter: int = 50):
        """Solve F(p) = q on R^3 by damped Newton seeded with A^-1 q."""
        q = np.asarray(q, dtype=float)
        p = q @ MATRIX_INV.T
        if self.is_linear:
            return p
        p = p.reshape(-1, 3).copy()
        qq = q.reshape(-1, 3)
        # absolute tolerance near the fundamental domain, relative far away
        tol = tol * np.maximum(1.0, np.abs(qq).max(axis=1))
        r = self.evaluate_lift(p) - qq
        rn = np.linalg.norm(r, axis=1)
        for _ in range(max_iter):
            active = rn >= tol
            if not active.any():
                break
            step = np.linalg.solve(self.differential(p[active]), r[active][..., None])[..., 0]
            lam = np.ones(step.shape[0])
            pa, ra = p[active], rn[active]
            while True:
                trial = pa - lam[:, None] * step
                tr = self.evaluate_lift(trial) - qq[active]
                tn = np.linalg.norm(tr, axis=1)
                bad = (tn >= ra) & (lam >= 1e-4)
                if not bad.any():
                    break
                lam = np.where(bad, 0.5 * lam, lam)
            p[active], r[active], rn[active] = trial, tr, tn
        if (rn >= tol).any():
            raise NonConvergence(f"inverse did not converge: residual {rn.max():.3e}")
        # one polishing step takes the residual to rounding level
        r = self.evaluate_lift(p) - qq
        p = p - np.linalg.solve(self.differential(p), r[..., None])[..., 0]
        return p.reshape(q.shape)

    def invert(self, q):
        return wrap(self.invert_lift(wrap(q)))

    def orbit(self, p, n: int, lift: bool = False):
        """Return the n+1 iterates (p, f(p), ..., f^n(p)); backward when n < 0."""
        p = np.asarray(p, dtype=float)
        n = int(n)
        step = self.evaluate_lift if n >= 0 else self.invert_lift
        pts = [p if lift else wrap(p)]
        cur = pts[0]
        for _ in range(abs(n)):
            cur = step(cur)
            if not lift:
                cur = wrap(cur)
            pts.append(cur)
        return np.array(pts)

    def iterate_lift(self, p, n: int):
        p = np.asarray(p, dtype=float)
        step = self.evaluate_lift if n >= 0 else self.invert_lift
        for _ in range(abs(int(n))):
            p = step(p)
        return p


LINEAR = MapModel("linear", 0.0)


def make_map(kind: str, epsilon: float = 0.0) -> MapModel:
    """Build a model; epsilon = 0 for any kind is accepted and acts linearly."""
    if str(kind).lower() == "linear":
        return MapModel("linear", 0.0) if float(epsilon) == 0.0 else MapModel("linear", epsilon)
    return MapModel(kind, epsilon)


def evaluate(model: MapModel, p):
    return model.evaluate(p)


def differential(model: MapModel, p):
    return model.differential(p)


def invert(model: MapModel, q):
    return model.invert(q)


def orbit(model: MapModel, p, n: int):
    return model.orbit(p, n)
