import numpy as np
import pytest

from anosovlab.errors import ConfigError
from anosovlab.gkm import (accessibility_verdict, centre_sum_check, char_poly, char_poly_roots,
                           lambda2_derivative, lambda2_finite_difference, root_relations)
from anosovlab.splitting import linear_eigenvalues
from anosovlab.torus_maps import MapModel

ROOTS0 = (0.19806226419516176, 1.5549581320873713, 3.2469796037174667)


@pytest.mark.parametrize("family", ["dissipative", "conservative"])
def test_roots_at_zero(family):
    assert np.allclose(char_poly_roots(family, 0.0), ROOTS0, atol=1e-12)


def test_roots_match_splitting_eigenvalues():
    assert np.allclose(char_poly_roots("dissipative", 0.0), linear_eigenvalues(), atol=1e-10)


@pytest.mark.parametrize("family", ["dissipative", "conservative"])
@pytest.mark.parametrize("eps", np.linspace(-0.3, 0.3, 13))
def test_roots_are_fixed_point_eigenvalues(family, eps):
    m = MapModel(family, float(eps))
    eig = np.sort(np.linalg.eigvals(m.differential(np.zeros(3))).real)
    assert np.allclose(char_poly_roots(family, eps), eig, atol=1e-10)
    rel = root_relations(family, eps)
    assert max(rel.values()) < 1e-10


def test_coefficients():
    assert char_poly("dissipative", 0.1).coeffs == pytest.approx((-1, 5.1, -6.3, 1.1))
    assert char_poly("conservative", 0.1).coeffs == pytest.approx((-1, 5.1, -6.2, 1.0))


def test_products():
    assert np.prod(char_poly_roots("dissipative", 0.1)) == pytest.approx(1.1, abs=1e-12)
    assert np.prod(char_poly_roots("conservative", 0.2)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("family,value", [("dissipative", 0.54313), ("conservative", 0.30142)])
def test_lambda2_derivative(family, value):
    d = lambda2_derivative(family)
    assert d == pytest.approx(value, abs=5e-6)
    assert abs(d - lambda2_finite_difference(family, 0.01)) < 1e-3


def test_verdicts():
    assert accessibility_verdict("dissipative", 0.1) == "accessible"
    assert accessibility_verdict("conservative", 0.05) == "accessible"
    assert accessibility_verdict("dissipative", 0.0) == "jointly_integrable"
    for eps in (-0.3, -0.01, 1e-4, 0.3):
        assert accessibility_verdict("conservative", eps) == "accessible"


def test_verdict_stable_under_seed_perturbation():
    a = char_poly_roots("dissipative", 0.1)
    b = char_poly_roots("dissipative", 0.1, seeds=(0.1, 1.4, 3.4))
    assert np.allclose(a, b, atol=1e-14)


def test_centre_sum():
    assert centre_sum_check("dissipative") == pytest.approx(2.198062, abs=1e-6)


def test_out_of_range():
    with pytest.raises(ConfigError):
        char_poly_roots("dissipative", 0.5)
