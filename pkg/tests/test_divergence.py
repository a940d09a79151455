import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from ganlab import _ot
from ganlab.divergence import (
    LOG2,
    BoundDomainError,
    DivergenceValue,
    EmpiricalMeasure,
    GridMismatchError,
    InfiniteDivergenceError,
    jsd_bound_check,
    jsd_grid,
    kl_grid,
    noise_lemma_check,
    noise_wasserstein_bound,
    optimal_discriminator,
    singular_jsd,
    singular_kl,
    tv_grid,
    wasserstein,
    wasserstein_exact,
    wasserstein_jsd_bound,
    write_bound_checks,
)
from ganlab.manifolds import (
    GridDensity,
    ManifoldDistribution,
    NoiseSpec,
    UnsupportedKindError,
    make_rng,
    parallel_pair,
)

BACKENDS = sorted(_ot.BACKENDS)

# sqrt(E|e|^2) for 2-D Gaussian noise, sigma = 0.1, clipped at 4 sigma: mean of
# 1e7 accepted squared radii from numpy PCG64(20240101) rejection sampling
CLIPPED_V_SQRT_MC = 0.14125287018150942
CLIPPED_V_SQRT_SE = 2.3e-5


def grid1d(masses, lo=0.0, hi=1.0):
    m = np.asarray(masses, float)
    return GridDensity([[lo, hi]], (m.size,), m)


def random_grid(rng, shape=(6, 5), sparsity=0.0):
    m = rng.random(shape)
    if sparsity:
        m[rng.random(shape) < sparsity] = 0.0
        if m.sum() == 0:
            m.flat[0] = 1.0
    return GridDensity([[0.0, 1.0]] * len(shape), shape, m / m.sum())


def brute_force_w1(x, y):
    c = cdist(x, y)
    n = len(x)
    return min(c[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n))) / n


def linprog_w1(x, a, y, b):
    c = cdist(x, y)
    n, m = c.shape
    rows = np.zeros((n + m, n * m))
    for i in range(n):
        rows[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        rows[n + j, j::m] = 1.0
    res = linprog(c.reshape(-1), A_eq=rows, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    return res.fun


class TestDivergenceValue:
    def test_infinity_cannot_become_float(self):
        inf = DivergenceValue.infinity("kl_grid")
        with pytest.raises(InfiniteDivergenceError):
            float(inf)
        assert inf.format() == "inf"

    def test_finite_rejects_bad_values(self):
        with pytest.raises(ValueError):
            DivergenceValue.finite(-0.1, "x")
        with pytest.raises(ValueError):
            DivergenceValue.finite(math.inf, "x")

    def test_format_full_precision(self):
        assert DivergenceValue.finite(LOG2, "jsd").format() == "0.69314718055994529"


class TestGridDivergences:
    P = [0.5, 0.5]
    Q = [0.25, 0.75]

    def test_kl_identical_is_zero(self):
        assert float(kl_grid(grid1d(self.P), grid1d(self.P))) == 0.0

    def test_kl_disjoint_is_infinite(self):
        assert kl_grid(grid1d([1, 0]), grid1d([0, 1])).infinite

    def test_kl_two_cell(self):
        expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
        assert float(kl_grid(grid1d(self.P), grid1d(self.Q))) == pytest.approx(expected, abs=1e-15)

    def test_kl_zero_log_zero(self):
        assert float(kl_grid(grid1d([1, 0]), grid1d(self.P))) == pytest.approx(math.log(2), abs=1e-15)

    def test_kl_asymmetric(self):
        assert float(kl_grid(grid1d(self.P), grid1d(self.Q))) != pytest.approx(
            float(kl_grid(grid1d(self.Q), grid1d(self.P))), abs=1e-6)

    def test_jsd_identical_is_zero(self):
        assert float(jsd_grid(grid1d(self.Q), grid1d(self.Q))) == 0.0

    def test_jsd_disjoint_is_log2_exactly(self):
        rng = np.random.default_rng(3)
        a = np.zeros(50)
        b = np.zeros(50)
        a[:20] = rng.random(20)
        b[25:] = rng.random(25)
        assert float(jsd_grid(grid1d(a / a.sum()), grid1d(b / b.sum()))) == LOG2

    def test_jsd_two_cell(self):
        def kl(p, q):
            return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0)
        expected = 0.5 * kl([1, 0], [0.75, 0.25]) + 0.5 * kl([0.5, 0.5], [0.75, 0.25])
        assert float(jsd_grid(grid1d([1, 0]), grid1d(self.P))) == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("p, q, expected", [
        ([0.5, 0.5], [0.5, 0.5], 0.0),
        ([1.0, 0.0], [0.0, 1.0], 1.0),
        ([0.5, 0.5], [0.25, 0.75], 0.25),
    ])
    def test_tv(self, p, q, expected):
        assert float(tv_grid(grid1d(p), grid1d(q))) == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("fn", [kl_grid, jsd_grid, tv_grid])
    def test_grid_mismatch(self, fn):
        with pytest.raises(GridMismatchError):
            fn(grid1d(self.P), grid1d([0.2, 0.3, 0.5]))
        with pytest.raises(GridMismatchError):
            fn(grid1d(self.P), grid1d(self.P, hi=2.0))


class TestGridProperties:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.6))
    def test_jsd_bounded_and_symmetric(self, seed, sparsity):
        rng = np.random.default_rng(seed)
        p, q = random_grid(rng, sparsity=sparsity), random_grid(rng, sparsity=sparsity)
        v = float(jsd_grid(p, q))
        assert 0.0 <= v <= LOG2
        assert v == pytest.approx(float(jsd_grid(q, p)), abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_gibbs(self, seed):
        rng = np.random.default_rng(seed)
        p, q = random_grid(rng), random_grid(rng)
        assert float(kl_grid(p, q)) > 0.0
        assert float(kl_grid(p, p)) == 0.0

    def test_pinsker_against_mixture(self):
        rng = np.random.default_rng(11)
        for _ in range(120):
            p, q = random_grid(rng, sparsity=0.3), random_grid(rng, sparsity=0.3)
            m = GridDensity(p.bounds, p.resolution, 0.5 * (p.masses + q.masses))
            assert float(tv_grid(p, m)) <= math.sqrt(0.5 * float(kl_grid(p, m))) + 1e-12

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_w1_below_diameter_times_tv(self, backend):
        rng = np.random.default_rng(12)
        for _ in range(100):
            p, q = random_grid(rng, (5, 4), 0.4), random_grid(rng, (5, 4), 0.4)
            centers = p.cell_centers()
            C = cdist(centers, centers).max()
            w = float(wasserstein_exact(EmpiricalMeasure(centers, p.masses.reshape(-1)),
                                        EmpiricalMeasure(centers, q.masses.reshape(-1)), backend=backend)[0])
            assert w <= C * float(tv_grid(p, q)) + 1e-9


class TestSingularSaturation:
    def test_disjoint_segments(self):
        real, fake = parallel_pair(offset=0.5)
        assert float(singular_jsd(real, fake, cell=0.03)) == LOG2
        assert singular_kl(real, fake, cell=0.03).infinite
        assert singular_kl(fake, real, cell=0.03).infinite

    def test_overlapping_supports_refused(self):
        real, fake = parallel_pair(offset=0.02)
        with pytest.raises(UnsupportedKindError):
            singular_jsd(real, fake, cell=0.03)


class TestOptimalDiscriminator:
    def test_equal_densities_half(self):
        g = grid1d([0.2, 0.3, 0.5])
        np.testing.assert_array_equal(optimal_discriminator(g, g), 0.5)

    def test_zero_fake_density_gives_one(self):
        assert optimal_discriminator(np.array([0.3]), np.array([0.0]))[0] == 1.0

    def test_both_zero_gives_half(self):
        assert optimal_discriminator(np.array([0.0]), np.array([0.0]))[0] == 0.5

    def test_gaussian_midpoint(self):
        from scipy.stats import norm

        d = optimal_discriminator(lambda x: norm.pdf(x[:, 0]), lambda x: norm.pdf(x[:, 0] - 1.0), [[0.5]])
        assert d[0] == pytest.approx(0.5, abs=1e-15)

    def test_grid_lookup(self):
        p, q = grid1d([0.5, 0.5, 0.0]), grid1d([0.0, 0.5, 0.5])
        np.testing.assert_allclose(optimal_discriminator(p, q, [[0.1], [0.5], [0.9]]), [1.0, 0.5, 0.0])


class TestWassersteinExact:
    @pytest.mark.parametrize("backend", BACKENDS)
    def test_identical_measures(self, backend):
        x = np.random.default_rng(0).normal(size=(9, 3))
        w, plan = wasserstein_exact(EmpiricalMeasure.uniform(x), EmpiricalMeasure.uniform(x), backend=backend)
        assert float(w) == 0.0

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_single_pair(self, backend):
        w, _ = wasserstein_exact(EmpiricalMeasure.uniform([[0.0, 0.0]]),
                                 EmpiricalMeasure.uniform([[3.0, 4.0]]), backend=backend)
        assert float(w) == 5.0

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_six_points_match_all_permutations(self, backend):
        rng = np.random.default_rng(6)
        x, y = rng.random((6, 2)), rng.random((6, 2))
        w = float(wasserstein_exact(EmpiricalMeasure.uniform(x), EmpiricalMeasure.uniform(y), backend=backend)[0])
        assert abs(w - brute_force_w1(x, y)) <= 1e-9

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_brute_force_200_instances(self, backend):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(1, 8))
            d = int(rng.integers(1, 4))
            x, y = rng.normal(size=(n, d)), rng.normal(size=(n, d))
            w = float(wasserstein_exact(EmpiricalMeasure.uniform(x), EmpiricalMeasure.uniform(y), backend=backend)[0])
            assert abs(w - brute_force_w1(x, y)) <= 1e-9

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_weighted_against_linprog(self, backend):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n, m = rng.integers(1, 9, size=2)
            x, y = rng.random((n, 2)), rng.random((m, 2))
            a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
            w, plan = wasserstein_exact(EmpiricalMeasure(x, a), EmpiricalMeasure(y, b), backend=backend)
            assert float(w) == pytest.approx(linprog_w1(x, a, y, b), abs=1e-8)
            np.testing.assert_allclose(plan.row_sums(), a, atol=1e-9)
            np.testing.assert_allclose(plan.col_sums(), b, atol=1e-9)
            assert np.all(plan.mass >= 0)
            assert plan.cost(cdist(x, y)) == pytest.approx(float(w), abs=1e-12)

    def test_backends_agree(self):
        if len(BACKENDS) < 2:
            pytest.skip("compiled backend not built")
        rng = np.random.default_rng(9)
        cost = rng.integers(0, 10**9, size=(40, 30))
        sup = rng.integers(1, 1000, 40)
        dem = rng.integers(1, 1000, 30)
        dem[0] += sup.sum() - dem.sum()
        if dem[0] <= 0:
            sup[0] += 1 - dem[0]
            dem[0] = 1
        outs = [_ot.BACKENDS[b](cost, sup, dem) for b in BACKENDS]
        for k in range(3):
            np.testing.assert_array_equal(outs[0][k], outs[1][k])
        assert outs[0][3] == outs[1][3]

    def test_triangle_inequality(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            sets = [rng.normal(size=(int(rng.integers(3, 12)), 2)) for _ in range(3)]
            ab, bc, ac = wasserstein(sets[0], sets[1]), wasserstein(sets[1], sets[2]), wasserstein(sets[0], sets[2])
            assert ac <= ab + bc + 1e-7

    def test_zero_weight_atoms_ignored(self):
        x = np.array([[0.0], [5.0], [1.0]])
        w, plan = wasserstein_exact(EmpiricalMeasure(x, [0.5, 0.0, 0.5]), EmpiricalMeasure.uniform([[0.0], [1.0]]))
        assert float(w) == 0.0
        assert plan.row_sums()[1] == 0.0

    def test_far_points_rescale_costs(self):
        x = np.array([[0.0], [1e12]])
        w, _ = wasserstein_exact(EmpiricalMeasure.uniform(x), EmpiricalMeasure.uniform(x + 1.0))
        assert float(w) == pytest.approx(1.0, rel=1e-6)

    @pytest.mark.parametrize("weights", [[0.5, 0.6], [-0.1, 1.1], [math.nan, 1.0]])
    def test_degenerate_weights(self, weights):
        with pytest.raises(ValueError):
            EmpiricalMeasure([[0.0], [1.0]], weights)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            wasserstein_exact(EmpiricalMeasure.uniform([[0.0]]), EmpiricalMeasure.uniform([[0.0, 1.0]]))

    def test_moderate_size_matches_assignment(self):
        from scipy.optimize import linear_sum_assignment

        rng = np.random.default_rng(13)
        x, y = rng.random((300, 2)), rng.random((300, 2))
        r, c = linear_sum_assignment(cdist(x, y))
        assert wasserstein(x, y) == pytest.approx(cdist(x, y)[r, c].mean(), abs=1e-9)


class TestBounds:
    def test_iso_closed_form(self):
        assert noise_wasserstein_bound(NoiseSpec.iso(0.1, 2)) == pytest.approx(math.sqrt(0.02), rel=1e-15)

    def test_vanishing_noise(self):
        assert noise_wasserstein_bound(NoiseSpec.iso(1e-12, 2)) == pytest.approx(0.0, abs=1e-11)

    def test_full_covariance_trace(self):
        assert noise_wasserstein_bound(NoiseSpec.full([[0.03, 0.01], [0.01, 0.06]])) == pytest.approx(0.3)

    def test_clipped_matches_monte_carlo_oracle(self):
        v = noise_wasserstein_bound(NoiseSpec.clipped(0.1, 2, clip_sigmas=4))
        assert v <= math.sqrt(0.02)
        assert abs(v - CLIPPED_V_SQRT_MC) < 5 * CLIPPED_V_SQRT_SE

    def test_jsd_bound_examples(self):
        assert wasserstein_jsd_bound(0.0, 6.0, 0.0) == 0.0
        assert wasserstein_jsd_bound(0.01, 6.0, LOG2) == pytest.approx(0.2 + 12 * math.sqrt(LOG2), rel=1e-15)
        assert wasserstein_jsd_bound(0.01, 6.0, DivergenceValue.finite(LOG2, "jsd")) > 0

    def test_jsd_above_log2_rejected(self):
        with pytest.raises(BoundDomainError):
            wasserstein_jsd_bound(0.01, 6.0, LOG2 + 1e-6)
        with pytest.raises(BoundDomainError):
            wasserstein_jsd_bound(-1.0, 6.0, 0.1)

    def test_noise_lemma_holds(self):
        rng = make_rng(0, 1)
        for k in range(20):
            a = rng.uniform(-1, 1, 2)
            dist = ManifoldDistribution.segment(a, a + rng.uniform(-1, 1, 2))
            check = noise_lemma_check(dist, NoiseSpec.iso(float(rng.uniform(0.01, 0.3)), 2), 128, rng)
            assert check.holds == 1

    def test_jsd_bound_holds_and_csv(self, tmp_path):
        rng = make_rng(0, 2)
        checks = []
        for k in range(5):
            segs = [ManifoldDistribution.segment(*rng.uniform(-0.7, 0.7, (2, 2))) for _ in range(2)]
            checks.append(jsd_bound_check(segs[0], segs[1], NoiseSpec.clipped(0.1, 2), 128, rng,
                                          resolution=120, config_id=f"c{k}", seed=0))
        assert all(c.holds == 1 for c in checks)
        path = write_bound_checks(tmp_path / "bounds.csv", checks)
        lines = path.read_text().splitlines()
        assert lines[0] == "config_id,seed,W_exact,slack,V_sqrt,C,jsd_noisy,rhs,holds"
        assert len(lines) == 6
        assert lines[1].startswith("c0,0,")
