import numpy as np
import pytest

from anosovlab.errors import EmptyWindow
from anosovlab.leaves import grow_leaf
from anosovlab.measures import (EmpiricalLeafMeasure, PatchCoordinates, birkhoff_log_unstable,
                                marginal_discrepancy, quotient_from_coordinates, sample_u_gibbs,
                                slab_coordinates, total_variation, uniformity_test, unstable_density_residual,
                                verdict_from_ks)


@pytest.fixture(scope="module")
def linear_seed():
    from anosovlab.torus_maps import MapModel

    return grow_leaf(MapModel("linear", 0.0), np.array([0.3, 0.6, 0.1]), "u", 0.5, 32)


@pytest.fixture(scope="module")
def conservative_patch():
    from anosovlab.torus_maps import MapModel

    return PatchCoordinates(MapModel("conservative", 0.1), np.array([0.1, 0.2, 0.3]), t_max=0.6, s_max=1.1,
                            nt=8, ns=16)


def _measure_from_masses(mass):
    edges = np.linspace(-1, 1, len(mass) + 1)
    counts = np.round(np.asarray(mass) * 1000).astype(int)
    return EmpiricalLeafMeasure(np.zeros(3), (-1.0, 1.0), edges, counts, np.asarray(mass, float),
                                (-0.5, 0.5), int(counts.sum()))


def test_cloud_on_torus_and_deterministic(linear, linear_seed):
    a = sample_u_gibbs(linear, linear_seed, 10, 2000, rng_seed=5)
    b = sample_u_gibbs(linear, linear_seed, 10, 2000, rng_seed=5)
    assert np.all((a >= 0) & (a < 1))
    assert np.array_equal(a, b)
    # chunking must not change the result
    assert np.array_equal(a, sample_u_gibbs(linear, linear_seed, 10, 2000, rng_seed=5, chunk=300))


def test_sampler_rejects_bad_input(linear, base_point):
    stable = grow_leaf(linear, base_point, "s", 0.2, 8)
    with pytest.raises(ValueError):
        sample_u_gibbs(linear, stable, 5, 10)


def test_linear_birkhoff_average(linear, linear_seed):
    cloud = sample_u_gibbs(linear, linear_seed, 20, 1000)
    assert birkhoff_log_unstable(linear, cloud) == pytest.approx(1.17776, abs=1e-3)


def test_uniform_bins_give_zero_ks():
    assert uniformity_test(_measure_from_masses(np.full(64, 1 / 64))) == pytest.approx(0.0, abs=1e-14)


def test_linear_density_ks_is_quarter():
    edges = np.linspace(-1, 1, 65)
    # mass of density (1 + s)/2 on each bin
    cdf = (edges + 1) ** 2 / 4
    assert uniformity_test(_measure_from_masses(np.diff(cdf))) == pytest.approx(0.25, abs=1e-12)


def test_synthetic_uniform_quotient():
    rng = np.random.default_rng(0)
    n = 40000
    coords = np.column_stack([rng.uniform(-0.6, 0.6, n), rng.uniform(-1.0, 1.0, n)])
    q = quotient_from_coordinates(coords)
    assert q.bins.sum() == q.n_samples
    assert q.bins.dtype.kind == "i" and np.all(q.bins >= 0)
    assert q.mass_on(-1, 1) == pytest.approx(1.0, abs=1 / np.sqrt(q.n_samples))
    p = 1 / 64
    band = 3 * np.sqrt(q.n_samples * p * (1 - p))
    assert np.all(np.abs(q.bins - q.n_samples * p) < band)
    assert uniformity_test(q) < 1.63 / np.sqrt(q.n_samples)


def test_window_independence_synthetic():
    rng = np.random.default_rng(1)
    coords = np.column_stack([rng.uniform(-0.6, 0.6, 100000), rng.uniform(-1.0, 1.0, 100000)])
    a = quotient_from_coordinates(coords, window=(-0.5, 0.5))
    b = quotient_from_coordinates(coords, window=(-0.25, 0.25))
    assert total_variation(a, b, coarsen=8) < 0.05


def test_empty_window():
    with pytest.raises(EmptyWindow):
        quotient_from_coordinates(np.array([[0.9, 0.0], [0.0, 1.5]]))


def test_density_residual_synthetic():
    rng = np.random.default_rng(2)
    uniform = np.column_stack([rng.uniform(-0.5, 0.5, 5000), rng.uniform(-0.1, 0.1, 5000)])
    r = unstable_density_residual(None, None, None, coords=uniform)
    assert r["statistic"] < r["q95"]
    spike = np.column_stack([np.full(500, 0.1), rng.uniform(-0.1, 0.1, 500)])
    r = unstable_density_residual(None, None, None, coords=spike)
    assert r["statistic"] > r["q999"]


def test_verdicts():
    assert verdict_from_ks(0.01) == "consistent"
    assert verdict_from_ks(0.1) == "inconclusive"
    assert verdict_from_ks(0.3) == "violating"


def test_patch_locate_inverts_forward(conservative_patch):
    rng = np.random.default_rng(3)
    t, s, sig = rng.uniform(-0.5, 0.5, 50), rng.uniform(-1, 1, 50), rng.uniform(-0.05, 0.05, 50)
    q = conservative_patch.forward(t, s) + sig[:, None] * conservative_patch.e_s
    loc = conservative_patch.locate(q)
    assert np.allclose(loc, np.column_stack([t, s, sig]), atol=1e-10)


def test_patch_interpolant_matches_chart(conservative_patch):
    exact = conservative_patch.chart.phi([0.2], 0.45)[0]
    assert np.linalg.norm(conservative_patch.forward(0.2, 0.45) - exact) < 1e-3


def test_slab_counts_every_lift(conservative_patch):
    # a point of the patch seen through a shifted representative
    q = conservative_patch.forward(np.array([0.1]), np.array([0.2]))
    coords = slab_coordinates(conservative_patch, q + np.array([1.0, -1.0, 0.0]), slab=0.05)
    assert coords.shape[0] == 1
    assert coords[0, :2] == pytest.approx([0.1, 0.2], abs=1e-10)
    assert coords[0, 2] > 0


def test_volume_cloud_marginals():
    cloud = np.random.default_rng(4).random((20000, 3))
    assert marginal_discrepancy(cloud) < 0.02
