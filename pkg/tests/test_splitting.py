import numpy as np
import pytest

from anosovlab.splitting import (check_bunching, cocycle_rate, compute_splitting, compute_splittings,
                                 domination_ratio, estimate_chi, linear_eigenvalues, linear_eigenvectors,
                                 lyapunov_exponents)

# logs of the roots of X^3 - 5X^2 + 6X - 1, computed independently
LOG_EIGS = np.log([0.19806226419516176, 1.5549581320873713, 3.2469796037174667])


def test_linear_eigensystem():
    vals = linear_eigenvalues()
    assert np.allclose(np.log(vals), LOG_EIGS, atol=1e-12)
    vecs = linear_eigenvectors()
    a = np.array([[2, 1, 0], [1, 2, 1], [0, 1, 1]], dtype=float)
    assert np.allclose(a @ vecs, vecs * vals, atol=1e-12)


def test_linear_splitting_matches_eigenvectors(linear, base_point):
    frame = compute_splitting(linear, base_point)
    vecs = linear_eigenvectors()
    for k, v in enumerate((frame.v_s, frame.v_c, frame.v_u)):
        assert abs(abs(v @ vecs[:, k]) - 1.0) < 1e-12
    assert frame.residual < 1e-10


@pytest.mark.parametrize("kind", ["dissipative", "conservative"])
def test_frames_are_invariant(kind):
    from anosovlab.torus_maps import MapModel

    m = MapModel(kind, 0.1)
    pts = np.random.default_rng(2).random((8, 3))
    here = compute_splittings(m, pts)
    there = compute_splittings(m, m.evaluate(pts))
    jac = m.differential(pts)
    for key in ("s", "c", "u"):
        img = np.einsum("bij,bj->bi", jac, here[key])
        img /= np.linalg.norm(img, axis=1, keepdims=True)
        assert np.max(1 - np.abs(np.sum(img * there[key], axis=1))) < 1e-9
    assert np.max(here["residual"]) < 1e-6


def test_cocycle_rates_linear(linear, base_point):
    for k, key in enumerate("scu"):
        assert np.log(cocycle_rate(linear, base_point, key, 5)) == pytest.approx(5 * LOG_EIGS[k], abs=1e-10)
        assert np.log(cocycle_rate(linear, base_point, key, -3)) == pytest.approx(-3 * LOG_EIGS[k], abs=1e-10)
    assert cocycle_rate(linear, base_point, "c", 0) == 1.0


def test_cocycle_rate_is_multiplicative(dissipative, base_point):
    a = cocycle_rate(dissipative, base_point, "c", 3)
    b = cocycle_rate(dissipative, dissipative.orbit(base_point, 3)[-1], "c", 4)
    assert a * b == pytest.approx(cocycle_rate(dissipative, base_point, "c", 7), rel=1e-8)


def test_domination_ratio(linear, dissipative, base_point):
    assert np.log(domination_ratio(linear, base_point, 8)) == pytest.approx(8 * (LOG_EIGS[1] - LOG_EIGS[2]), abs=1e-10)
    assert domination_ratio(dissipative, base_point, 10) < 1


def test_exponents(linear, conservative):
    exps, err = lyapunov_exponents(linear, 4, 20)
    assert np.allclose(exps, LOG_EIGS, atol=1e-12)
    exps, err = lyapunov_exponents(conservative, 32, 200)
    # volume preserving: exponents sum to zero
    assert abs(exps.sum()) < 5 * err.max() + 1e-3


def test_chi_and_bunching(dissipative):
    est = estimate_chi(dissipative, 16, 10)
    assert est.chi_1_s < est.chi_2_s < 0 < est.chi_2_c < est.chi_1_c
    assert est.chi_2_u > est.chi_1_c
    ok, margin = check_bunching(dissipative, 16, 1)
    assert ok and margin > 0


def test_invalid_depth(linear, base_point):
    with pytest.raises(ValueError):
        compute_splitting(linear, base_point, depth=0)
