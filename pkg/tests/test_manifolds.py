import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from ganlab import diffcore as dc
from ganlab.manifolds import (
    GridCoverageError, GridDensity, ManifoldDistribution as MD, NoiseSpec,
    SingularDensityError, UnsupportedKindError, convolved_density, density,
    grid_spec, log_convolved_density_tensor, make_rng, parallel_pair, rasterize,
    sample, support_gap,
)


def segment_line_integral(a, b, noise_sigma, x):
    """Quadrature of the Gaussian kernel along the segment, the density oracle."""
    a, b, x = map(np.asarray, (a, b, x))
    d = len(x)
    norm = (2 * math.pi * noise_sigma ** 2) ** (-d / 2)

    def integrand(t):
        y = a + t * (b - a)
        return norm * math.exp(-np.sum((x - y) ** 2) / (2 * noise_sigma ** 2))

    val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=0, epsrel=1e-12, limit=200)
    return val


class TestSample:
    def test_single_atom(self):
        pts = sample(MD.point_cloud([[1.0, 1.0]]), 50, make_rng(0))
        assert np.all(pts == 1.0)

    def test_segment_mean(self):
        n = 100_000
        pts = sample(MD.segment([0, 0], [1, 0]), n, make_rng(1))
        sd = 1 / math.sqrt(12)
        assert abs(pts[:, 0].mean() - 0.5) < 3 * sd / math.sqrt(n)
        assert np.all(pts[:, 1] == 0.0)

    def test_circle_radius(self):
        pts = sample(MD.circle([0, 0], 1.0), 100_000, make_rng(2))
        assert abs(np.linalg.norm(pts, axis=1).mean() - 1.0) < 1e-3

    def test_pushforward_applies_generator(self):
        gen = dc.Mlp.from_arrays([np.array([[2.0, 0.0]])], [np.array([0.0, 1.0])], ["identity"])
        dist = MD.pushforward(gen, MD.box_uniform([0.0], [1.0]))
        pts = sample(dist, 1000, make_rng(3))
        assert np.all(pts[:, 1] == 1.0) and 0 <= pts[:, 0].min() and pts[:, 0].max() <= 2.0
        assert dist.as_segment() is not None

    def test_streams_are_reproducible_and_distinct(self):
        a = sample(MD.circle([0, 0], 1.0), 10, make_rng(5, 1))
        b = sample(MD.circle([0, 0], 1.0), 10, make_rng(5, 1))
        c = sample(MD.circle([0, 0], 1.0), 10, make_rng(5, 2))
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_invalid(self):
        with pytest.raises(ValueError):
            MD.point_cloud([[0, 0], [1, 1]], [0.7, 0.7])
        with pytest.raises(ValueError):
            MD.circle([0, 0], 0.0)
        with pytest.raises(ValueError):
            sample(MD.circle([0, 0], 1.0), 0, make_rng(0))


class TestNoise:
    def test_clipped_samples_inside_ball(self):
        noise = NoiseSpec.clipped(0.1, 2)
        eps = noise.sample(10_000, make_rng(0))
        assert np.linalg.norm(eps, axis=1).max() <= 0.4

    def test_clipped_density_normalized(self):
        noise = NoiseSpec.clipped(0.5, 2, clip_sigmas=1.5)
        # radial integral over the clip disc; the density is isotropic
        val, _ = integrate.quad(lambda r: 2 * math.pi * r * float(noise.pdf([[r, 0.0]])[0]), 0.0, 0.75)
        assert val == pytest.approx(1.0, abs=1e-10)
        assert noise.pdf([[0.76, 0.0]])[0] == 0.0

    def test_second_moments(self):
        assert NoiseSpec.iso(0.1, 2).second_moment() == pytest.approx(0.02)
        assert NoiseSpec.full([[0.5, 0.1], [0.1, 0.25]]).second_moment() == pytest.approx(0.75)

    def test_invalid(self):
        with pytest.raises(ValueError):
            NoiseSpec("gaussian_iso", 2, sigma2=0.0)
        with pytest.raises(ValueError):
            NoiseSpec.full([[1.0, 2.0], [0.0, 1.0]])


class TestConvolvedDensity:
    def test_point_mass_is_gaussian(self):
        noise = NoiseSpec.iso(0.7, 2)
        x = np.array([[0.3, -1.1]])
        expected = stats.multivariate_normal(np.zeros(2), 0.49 * np.eye(2)).pdf(x[0])
        assert convolved_density(MD.point_cloud([[0.0, 0.0]]), noise, x)[0] == pytest.approx(expected, rel=1e-14)

    def test_two_atoms(self):
        noise = NoiseSpec.iso(1.0, 2)
        pair = MD.point_cloud([[1.0, 0.0], [-1.0, 0.0]])
        n = lambda m: stats.multivariate_normal(m, np.eye(2)).pdf([0.0, 0.0])
        expected = 0.5 * (n([1.0, 0.0]) + n([-1.0, 0.0]))
        assert convolved_density(pair, noise, [0.0, 0.0])[0] == pytest.approx(expected, rel=1e-14)

    def test_segment_monte_carlo_vs_quadrature(self):
        seg = MD.segment([0, 0], [1, 0])
        mc = convolved_density(seg, NoiseSpec.iso(0.1, 2), [0.5, 0.0], mc_samples=1_000_000,
                               rng=make_rng(7), method="mc")[0]
        oracle = segment_line_integral([0, 0], [1, 0], 0.1, [0.5, 0.0])
        assert abs(mc - oracle) / oracle < 1e-2

    @pytest.mark.parametrize("x", [[0.5, 0.0], [1.2, 0.3], [-0.4, -0.2], [0.99, 0.05], [3.0, 0.5]])
    def test_segment_closed_form_vs_quadrature(self, x):
        a, b = np.array([-0.2, 0.1]), np.array([0.8, -0.3])
        exact = convolved_density(MD.segment(a, b), NoiseSpec.iso(0.25, 2), x)[0]
        assert exact == pytest.approx(segment_line_integral(a, b, 0.25, x), rel=1e-9)

    def test_segment_clipped_closed_form_vs_monte_carlo(self):
        seg = MD.segment([0, 0], [1, 0])
        noise = NoiseSpec.clipped(0.2, 2, clip_sigmas=2.0)
        x = np.array([[0.5, 0.1], [1.1, 0.2], [-0.3, 0.05]])
        exact = convolved_density(seg, noise, x)
        mc = convolved_density(seg, noise, x, mc_samples=1_000_000, rng=make_rng(8), method="mc")
        np.testing.assert_allclose(exact, mc, rtol=1e-2)

    def test_tensor_route_matches_numpy_and_differentiates(self):
        dist = MD.parallel_segments(0.6)
        noise = NoiseSpec.iso(0.15, 2)
        x0 = np.array([[0.1, 0.2], [0.9, -0.1], [-2.0, 1.5], [0.3, 0.31]])
        leaf = dc.Tensor(x0, requires_grad=True)
        logp = log_convolved_density_tensor(dist, noise, leaf)
        np.testing.assert_allclose(np.exp(logp.data), convolved_density(dist, noise, x0), rtol=1e-12)
        g = dc.backward(logp.sum())[leaf]
        h = 1e-6
        for i in range(len(x0)):
            for j in range(2):
                xp, xm = x0.copy(), x0.copy()
                xp[i, j] += h
                xm[i, j] -= h
                fd = (np.log(convolved_density(dist, noise, xp[i]))[0] - np.log(convolved_density(dist, noise, xm[i]))[0]) / (2 * h)
                assert g[i, j] == pytest.approx(fd, rel=1e-6, abs=1e-6)

    def test_far_points_stay_finite_in_log_space(self):
        dist = MD.segment([0, 0], [1, 0])
        logp = log_convolved_density_tensor(dist, NoiseSpec.iso(0.05, 2), dc.Tensor([[9.0, 0.0], [0.5, 4.0]]))
        assert np.all(np.isfinite(logp.data))

    def test_zero_mc_samples(self):
        with pytest.raises(ValueError):
            convolved_density(MD.circle([0, 0], 1), NoiseSpec.iso(0.1, 2), [0, 0], mc_samples=0, rng=make_rng(0))

    def test_monte_carlo_variance_halves(self):
        circ = MD.circle([0, 0], 1.0)
        noise = NoiseSpec.iso(0.3, 2)
        sizes = [500, 1000, 2000, 4000]
        var = []
        for k, n in enumerate(sizes):
            vals = [convolved_density(circ, noise, [0.8, 0.3], mc_samples=n, rng=make_rng(k, r), method="mc")[0]
                    for r in range(30)]
            var.append(np.var(vals, ddof=1))
        slope = np.polyfit(np.log(sizes), np.log(var), 1)[0]
        assert -1.35 < slope < -0.65

    def test_singular_density_is_undefined(self):
        with pytest.raises(SingularDensityError):
            density(MD.segment([0, 0], [1, 0]), [0.5, 0])
        assert density(MD.box_uniform([0, 0], [2, 1]), [[1.0, 0.5]])[0] == 0.5


class TestRasterize:
    def test_point_mass_at_cell_center(self):
        bounds, res = grid_spec(2, 6.0, 6)
        g = rasterize(MD.point_cloud([[0.5, -1.5]]), None, bounds, res)
        assert g.masses.max() == 1.0 and np.count_nonzero(g.masses) == 1
        i, j = np.unravel_index(g.masses.argmax(), res)
        assert (g.axes()[0][i], g.axes()[1][j]) == (0.5, -1.5)

    def test_box_on_grid_bounds_is_uniform(self):
        g = rasterize(MD.box_uniform([-1, 0], [1, 3]), None, [[-1, 1], [0, 3]], (8, 12))
        np.testing.assert_allclose(g.masses, 1 / 96, rtol=1e-13)

    def test_noisy_segment_coverage(self):
        bounds, res = grid_spec(2, 6.0, 200)
        g = rasterize(MD.segment([-0.5, 0], [0.5, 0]), NoiseSpec.iso(0.1, 2), bounds, res)
        assert 1.0 - g.meta["leak"] >= 0.999

    def test_coverage_error_reports_leak(self):
        with pytest.raises(GridCoverageError) as err:
            rasterize(MD.segment([0, 0], [4, 0]), NoiseSpec.iso(0.1, 2), [[-1, 2], [-1, 1]], (60, 40))
        assert err.value.leak == pytest.approx(0.5, abs=0.02)

    def test_noisy_density_integrates_to_one(self):
        dist = MD.segment([-0.5, -0.2], [0.6, 0.4])
        bounds, res = grid_spec(2, 6.0, 200)
        g = rasterize(dist, NoiseSpec.iso(0.2, 2), bounds, res)
        xs, ys = g.axes()
        dens = convolved_density(dist, NoiseSpec.iso(0.2, 2), g.cell_centers()).reshape(res)
        total = np.trapezoid(np.trapezoid(dens, ys, axis=1), xs)
        assert total == pytest.approx(1.0, abs=1e-3)

    def test_monte_carlo_route_for_circles(self):
        bounds, res = grid_spec(2, 6.0, 60)
        g = rasterize(MD.circle([0, 0], 1.0), NoiseSpec.iso(0.2, 2), bounds, res, rng=make_rng(0))
        assert g.meta["mc_samples"] > 0 and g.masses.sum() == pytest.approx(1.0, abs=1e-12)

    def test_pushforward_histogram_concentrates(self):
        rng = make_rng(11)
        gen = dc.Mlp.init([1, 16, 2], ["tanh", "identity"], rng)
        dist = MD.pushforward(gen, MD.box_uniform([-1.0], [1.0]))
        pts = sample(dist, 1, rng)
        center = pts[0]
        fractions = []
        for res in (25, 50, 100, 200, 400):
            g = rasterize(dist, None, *grid_spec(2, 12.0, res, center=center), rng=make_rng(12), n_samples=200_000)
            fractions.append(np.count_nonzero(g.masses) / g.masses.size)
        assert all(b < a for a, b in zip(fractions, fractions[1:]))
        assert fractions[-1] < 0.01

    def test_csv_roundtrip(self, tmp_path):
        g = rasterize(MD.point_cloud([[0.1, 0.2], [1.0, -1.0]], [0.25, 0.75]), None, [[-2, 2], [-2, 2]], (4, 5))
        path, sidecar = g.to_csv(tmp_path / "grid.csv")
        back = GridDensity.from_csv(path)
        assert back.same_lattice(g) and np.array_equal(back.masses, g.masses)
        assert sidecar.exists() and path.read_text().startswith("i0,i1,mass")

    def test_one_dimensional_gaussian(self):
        g = rasterize(MD.gaussian([0.0], [[1.0]]), None, [[-8.0, 8.0]], 400)
        assert g.dim == 1 and g.meta["leak"] < 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), noisy=st.booleans(), kind=st.sampled_from(["segment", "point_cloud", "circle"]))
def test_property_rasterize_is_valid_grid(seed, noisy, kind):
    rng = make_rng(seed)
    if kind == "segment":
        dist = MD.segment(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))
    elif kind == "point_cloud":
        w = rng.dirichlet(np.ones(5))
        dist = MD.point_cloud(rng.uniform(-1, 1, (5, 2)), w / w.sum())
    else:
        dist = MD.circle(rng.uniform(-0.5, 0.5, 2), rng.uniform(0.1, 1.0))
    noise = NoiseSpec.iso(rng.uniform(0.1, 0.3), 2) if noisy else None
    g = rasterize(dist, noise, *grid_spec(2, 6.0, 40), rng=rng, n_samples=5000, mc_samples=500)
    assert abs(g.masses.sum() - 1.0) <= 1e-12 and np.all(g.masses >= 0)


class TestSupportGap:
    def test_parallel_segments(self):
        assert support_gap(*parallel_pair(0.5)) == pytest.approx(0.5)

    def test_identical_segments(self):
        s = MD.segment([0, 0], [1, 0])
        assert support_gap(s, s) == 0.0

    def test_segment_point(self):
        assert support_gap(MD.segment([0, 0], [1, 0]), MD.point_cloud([[2.0, 0.0]])) == pytest.approx(1.0)

    def test_crossing_segments(self):
        assert support_gap(MD.segment([-1, -1], [1, 1]), MD.segment([-1, 1], [1, -1])) == pytest.approx(0.0, abs=1e-15)

    def test_circles(self):
        assert support_gap(MD.circle([0, 0], 1), MD.circle([3, 0], 1)) == pytest.approx(1.0)
        assert support_gap(MD.circle([0, 0], 2), MD.circle([0.5, 0], 1)) == pytest.approx(0.5)
        assert support_gap(MD.circle([0, 0], 1), MD.segment([-2, 0], [2, 0])) == 0.0
        assert support_gap(MD.circle([0, 0], 1), MD.segment([2, -1], [2, 1])) == pytest.approx(1.0)

    def test_pushforward_unsupported(self):
        gen = dc.Mlp.init([1, 2], "identity", make_rng(0))
        with pytest.raises(UnsupportedKindError):
            support_gap(MD.pushforward(gen, MD.box_uniform([0.0], [1.0])), MD.segment([0, 0], [1, 0]))

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_segment_gap_vs_dense_sampling(self, seed):
        rng = make_rng(seed)
        a = MD.segment(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3))
        b = MD.segment(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3))
        t = np.linspace(0, 1, 801)[:, None]
        pa = a.params["start"] + t * (a.params["end"] - a.params["start"])
        pb = b.params["start"] + t * (b.params["end"] - b.params["start"])
        brute = np.min(np.linalg.norm(pa[:, None] - pb[None], axis=2))
        gap = support_gap(a, b)
        assert gap <= brute + 1e-12 and brute - gap < 5e-3
