import numpy as np
import pytest

from anosovlab.normal_forms import (NormalChart, affine_law_residual, beta, change_of_charts, chart_1d,
                                    conjugacy_residual, reciprocity, rho)
from anosovlab.splitting import linear_eigenvalues, linear_eigenvectors


def test_linear_charts_are_eigen_coordinates(linear, base_point):
    ev = linear_eigenvectors()
    y = base_point + 0.3 * ev[:, 2]
    assert float(chart_1d(linear, "u", base_point, y)[0]) == pytest.approx(0.3, abs=1e-12)
    value, tail = rho(linear, "c", base_point, base_point + 0.2 * ev[:, 1])
    assert value == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(beta(linear, base_point, [0.0, 0.5]), 1.0)


def test_rho_at_base_is_one(dissipative, base_point):
    for bundle in "cu":
        value, tail = rho(dissipative, bundle, base_point, base_point)
        assert value == pytest.approx(1.0, abs=1e-12)
        assert tail < 1e-10


@pytest.mark.parametrize("bundle,leaf", [("c", "u"), ("u", "c"), ("u", "u"), ("c", "c")])
def test_reciprocity(dissipative, base_point, bundle, leaf):
    product, tail = reciprocity(dissipative, bundle, base_point, 0.3, leaf)
    assert product == pytest.approx(1.0, abs=1e-10)
    assert tail < 1e-10


def test_chart_round_trip(conservative, base_point):
    ch = NormalChart(conservative, base_point, s_max=0.5, t_max=0.5)
    p = ch.phi([0.4], -0.3)
    t, s = ch.inverse(p)[0]
    assert t == pytest.approx(0.4, abs=1e-9) and s == pytest.approx(-0.3, abs=1e-9)
    # Phi(0, 0) is the base point
    assert np.allclose(ch.phi([0.0], 0.0)[0], ch.base, atol=1e-12)


def test_chart_derivative_at_base_is_unit_speed(dissipative, base_point):
    ch = NormalChart(dissipative, base_point, s_max=0.1, t_max=0.1)
    h = 1e-5
    dt = (ch.phi([h], 0.0)[0] - ch.phi([-h], 0.0)[0]) / (2 * h)
    assert np.linalg.norm(dt) == pytest.approx(1.0, abs=1e-6)


def test_linear_conjugacy_exact(linear, base_point):
    residual, _ = conjugacy_residual(linear, base_point, n=3)
    assert residual < 1e-12
    ch = NormalChart(linear, base_point)
    assert ch.lambda_u == pytest.approx(linear_eigenvalues()[2], rel=1e-14)


def test_conjugacy_single_point(dissipative):
    residual, tail = conjugacy_residual(dissipative, np.array([0.7, 0.1, 0.4]), n=5)
    assert residual < 1e-6 and tail < 1e-9


@pytest.mark.parametrize("bundle", ["c", "u"])
def test_affine_law(dissipative, base_point, bundle):
    residual, r = affine_law_residual(dissipative, bundle, base_point, 0.3)
    assert residual < 1e-5
    assert 0.5 < r < 2.0


def test_change_of_charts_rejects_bad_case(dissipative, base_point):
    with pytest.raises(ValueError):
        change_of_charts(dissipative, base_point, 0.3, case="s")
