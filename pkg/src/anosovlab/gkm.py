"""Fixed-point spectra of the two families and the accessibility verdict.

Both perturbations vanish at the origin together with sin, so 0 stays fixed
and the centre eigenvalue there can be tracked in epsilon. A centre
eigenvalue at a periodic point that differs from the linear one rules out
joint integrability of E^s + E^u for these systems.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, RootSplitFailure
from .torus_maps import EPSILON_MAX, MapModel

FAMILIES = ("dissipative", "conservative")
LINEAR_ROOTS_SEED = (0.2, 1.55, 3.25)


def _family(name: str) -> str:
    key = str(name).lower()
    aliases = {"d": "dissipative", "c": "conservative"}
    key = aliases.get(key, key)
    if key not in FAMILIES:
        raise ConfigError(f"unknown family {name!r}")
    return key


@dataclass(frozen=True)
class CharPoly:
    """Characteristic polynomial of Df at the fixed point 0, leading coefficient -1."""

    family: str
    epsilon: float

    @property
    def coeffs(self):
        e = self.epsilon
        if self.family == "dissipative":
            return (-1.0, 5.0 + e, -(6.0 + 3.0 * e), 1.0 + e)
        return (-1.0, 5.0 + e, -(6.0 + 2.0 * e), 1.0)

    def __call__(self, x):
        a, b, c, d = self.coeffs
        return ((a * x + b) * x + c) * x + d

    def derivative(self, x):
        a, b, c, _ = self.coeffs
        return (3.0 * a * x + 2.0 * b) * x + c

    def d_epsilon(self, x):
        """Partial derivative in epsilon."""
        if self.family == "dissipative":
            return x * x - 3.0 * x + 1.0
        return x * x - 2.0 * x


def char_poly(family: str, epsilon: float) -> CharPoly:
    return CharPoly(_family(family), float(epsilon))


def _safeguarded_newton(poly: CharPoly, lo: float, hi: float, x0: float, tol: float = 1e-15,
                        max_iter: int = 100) -> float:
    flo, fhi = poly(lo), poly(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise RootSplitFailure("bracket does not isolate a root")
    x = min(max(x0, lo), hi)
    for _ in range(max_iter):
        fx = poly(x)
        if fx == 0.0:
            return x
        if np.sign(fx) == np.sign(flo):
            lo, flo = x, fx
        else:
            hi = x
        d = poly.derivative(x)
        step = x - fx / d if d != 0.0 else 0.5 * (lo + hi)
        # fall back to bisection whenever Newton leaves the bracket
        x_new = step if lo < step < hi else 0.5 * (lo + hi)
        if abs(x_new - x) <= tol * max(1.0, abs(x)):
            return x_new
        x = x_new
    return x


def char_poly_roots(family: str, epsilon: float, seeds=LINEAR_ROOTS_SEED):
    """(l1, l2, l3), l1 < l2 < l3, the fixed-point eigenvalues of the family.

    Roots are bracketed by the critical points of the cubic and polished by
    Newton steps safeguarded with bisection, started from ``seeds``.
    """
    if abs(epsilon) > EPSILON_MAX:
        raise ConfigError(f"|epsilon| must not exceed {EPSILON_MAX}")
    poly = char_poly(family, epsilon)
    a, b, c, _ = poly.coeffs
    disc = (2 * b) ** 2 - 4 * (3 * a) * c
    if disc <= 0:
        raise RootSplitFailure("cubic is monotone; roots are not real and distinct")
    crit = np.sort([(-2 * b + sgn * np.sqrt(disc)) / (6 * a) for sgn in (1.0, -1.0)])
    # the cubic tends to -inf on the right, so a large bound brackets the outer roots
    big = 1.0 + max(abs(b), abs(c), abs(poly.coeffs[3]))
    brackets = [(-big, crit[0]), (crit[0], crit[1]), (crit[1], big)]
    roots = []
    for (lo, hi), x0 in zip(brackets, seeds):
        if np.sign(poly(lo)) == np.sign(poly(hi)):
            raise RootSplitFailure("roots are not real and distinct at this epsilon")
        roots.append(_safeguarded_newton(poly, lo, hi, x0))
    return tuple(float(r) for r in roots)


def root_relations(family: str, epsilon: float):
    """Residuals of the symmetric-function identities for the roots."""
    fam = _family(family)
    l1, l2, l3 = char_poly_roots(fam, epsilon)
    e = float(epsilon)
    pair = 6.0 + (3.0 if fam == "dissipative" else 2.0) * e
    prod = 1.0 + e if fam == "dissipative" else 1.0
    return {
        "sum": abs(l1 + l2 + l3 - (5.0 + e)),
        "pairwise": abs(l1 * l2 + l1 * l3 + l2 * l3 - pair),
        "product": abs(l1 * l2 * l3 - prod),
    }


def lambda2_derivative(family: str) -> float:
    """d lambda_2 / d epsilon at 0 by implicit differentiation."""
    poly = char_poly(family, 0.0)
    x = char_poly_roots(family, 0.0)[1]
    return float(-poly.d_epsilon(x) / poly.derivative(x))


def lambda2_finite_difference(family: str, h: float = 0.01) -> float:
    return (char_poly_roots(family, h)[1] - char_poly_roots(family, -h)[1]) / (2.0 * h)


def accessibility_verdict(family: str, epsilon: float) -> str:
    """accessible / jointly_integrable / inconclusive from the centre eigenvalue at 0."""
    if epsilon == 0:
        return "jointly_integrable"
    base = np.log(char_poly_roots(family, 0.0)[1])
    now = np.log(char_poly_roots(family, epsilon)[1])
    band = 10.0 * np.finfo(float).eps * abs(base)
    return "accessible" if abs(now - base) > band else "inconclusive"


def centre_sum_check(family: str = "dissipative"):
    """lambda_2 + 1/lambda_2 at epsilon 0; a symmetric su-structure would force 3."""
    l2 = char_poly_roots(family, 0.0)[1]
    return float(l2 + 1.0 / l2)


def dichotomy_report(model: MapModel, n_points: int = 100_000, rng_seed: int = 0, loop_side: float = 0.1,
                     skip_measure: bool = False) -> dict:
    """Accessibility verdict, su-loop defect and SRB test in one record.

    The consistency flag is False only when the map is not jointly
    integrable, the u-Gibbs sample is complete, and the SRB test rejects.
    """
    from .leaves import su_loop_defect
    from .measures import srb_verdict

    if model.is_linear:
        verdict = "jointly_integrable"
    else:
        verdict = accessibility_verdict(model.kind, model.epsilon)
    defect = su_loop_defect(model, np.zeros(3) + 0.05, loop_side, loop_side)
    report = {
        "map": {"kind": model.kind, "epsilon": model.epsilon},
        "accessibility": verdict,
        "loop_defect": defect,
    }
    if model.is_linear:
        report["srb"] = {"verdict": "consistent", "reason": "volume is invariant and SRB"}
    elif skip_measure:
        report["srb"] = {"verdict": "skipped"}
    else:
        report["srb"] = srb_verdict(model, n_points=n_points, rng_seed=rng_seed)
    srb = report["srb"]["verdict"]
    report["consistent"] = not (verdict == "accessible" and srb == "violating")
    return report
