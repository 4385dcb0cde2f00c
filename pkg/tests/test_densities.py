import math
import threading

import numpy as np
import pytest
from scipy import stats

from mixest.densities import (
    CauchyLoc,
    CauchyLocScale,
    DensityError,
    GaussianLoc,
    GaussianLocScale,
    NumericalConvolution,
    QuadratureGrid,
    Sample,
    ShiftMixture,
    SkewNormal,
    SmoothingKernel,
    StudentT,
    build_grid,
    convolve,
    eval_density,
    make_family,
    mixture_density,
    norm_cdf,
    psi_integral,
    read_sample,
    sample,
    smoothed_empirical,
    write_sample,
)
from mixest.measures import MixingMeasure, dirac
from oracles import quad_convolution, skewnorm_pdf

PHI0 = 1 / math.sqrt(2 * math.pi)


class TestEval:
    def test_gaussian_mode(self):
        assert eval_density(GaussianLocScale(), (0, 1), 0.0) == pytest.approx(PHI0, rel=1e-15)

    def test_cauchy_mode(self):
        assert eval_density(CauchyLocScale(), (0, 1), 0.0) == pytest.approx(1 / math.pi, rel=1e-15)

    def test_skewnormal_zero_shape(self):
        assert eval_density(SkewNormal(), (0, 1, 0), 0.0) == pytest.approx(PHI0, rel=1e-15)

    def test_skewnormal_matches_scipy(self):
        x = np.linspace(-5, 5, 41)
        for theta in [(0.3, 1.5, 2.0), (-1.0, 0.7, -4.0)]:
            np.testing.assert_allclose(eval_density(SkewNormal(), theta, x), skewnorm_pdf(x, *theta),
                                       rtol=1e-12, atol=1e-300)

    def test_skewnormal_zero_shape_equals_gaussian_on_grid(self):
        grid = QuadratureGrid.uniform(-10, 10, 1025)
        a = SkewNormal().pdf(grid.points, [[0.5, 1.3, 0.0]])
        b = GaussianLocScale().pdf(grid.points, [[0.5, 1.3]])
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_student_t_matches_scipy(self):
        x = np.linspace(-6, 6, 25)
        np.testing.assert_allclose(eval_density(StudentT(3.0), (1.0, 2.0), x),
                                   stats.t.pdf(x, 3.0, loc=1.0, scale=2.0), rtol=1e-12)

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(DensityError):
            eval_density(GaussianLocScale(), (0, 0.0), 0.0)
        with pytest.raises(DensityError):
            eval_density(CauchyLocScale(), (0, -1.0), 0.0)

    def test_norm_cdf_precision(self):
        # the CDF's relative condition number grows like z^2 in the lower tail,
        # so the bound is 1e-15 scaled by that conditioning
        import mpmath

        mpmath.mp.dps = 40
        for z in np.linspace(-30, 8, 77):
            exact = float(mpmath.ncdf(z))
            assert abs(norm_cdf(np.array([z]))[0] - exact) <= 1e-15 * (1 + z * z) * exact

    def test_dimensions(self):
        assert (GaussianLocScale().dim, GaussianLoc().dim, SkewNormal().dim) == (2, 1, 3)
        assert make_family("cauchy-loc").dim == 1

    def test_unknown_family(self):
        with pytest.raises(DensityError):
            make_family("laplace")

    @pytest.mark.parametrize("fam,theta", [
        (GaussianLocScale(), (0.3, 0.8)), (CauchyLocScale(), (0.0, 0.5)), (GaussianLoc(), (1.0,)),
        (SkewNormal(), (0.0, 1.2, 5.0)), (StudentT(4.0), (0.0, 1.0)),
        (ShiftMixture(GaussianLocScale(), 2.0), (0.0, 1.0)),
    ])
    def test_integrates_to_one(self, fam, theta):
        grid = QuadratureGrid.uniform(-60, 60, 16385)
        mass = grid.integrate(fam.pdf(grid.points, [theta])[0])
        tol = 1e-2 if "cauchy" in fam.tag else 1e-4
        assert mass == pytest.approx(1.0, abs=tol)


def _fd_grad(fam, x, theta, h=1e-6):
    out = []
    for d in range(len(theta)):
        tp, tm = np.array(theta, float), np.array(theta, float)
        tp[d] += h
        tm[d] -= h
        out.append((fam.pdf(x, [tp])[0] - fam.pdf(x, [tm])[0]) / (2 * h))
    return np.array(out)


@pytest.mark.parametrize("fam,theta", [
    (GaussianLocScale(0.7), (0.3, 0.8)), (GaussianLoc(1.5, 1.0), (0.4,)),
    (CauchyLocScale(1.0), (0.0, 0.5)), (CauchyLoc(1.0, 1.0), (0.2,)),
    (SkewNormal(1.0), (0.1, 1.2, 3.0)), (SkewNormal(0.0), (0.1, 0.9, -2.0)),
    (ShiftMixture(GaussianLocScale(), 2.0), (0.0, 1.0)),
])
def test_analytic_parameter_gradients(fam, theta):
    x = np.linspace(-6, 6, 97)
    _, dF = fam.pdf_and_grad(x, [theta])
    ref = _fd_grad(fam, x, theta)
    assert np.max(np.abs(dF[0] - ref)) <= 1e-6 * max(1.0, np.max(np.abs(ref)))


class TestConvolution:
    def test_gaussian_closed_form(self):
        fam = convolve(GaussianLocScale(), SmoothingKernel("gaussian", 1.0))
        x = np.linspace(-5, 5, 11)
        ref = stats.norm.pdf(x, 0.5, math.sqrt(2.0**2 + 1.0))
        np.testing.assert_allclose(fam.pdf(x, [[0.5, 2.0]])[0], ref, rtol=1e-13)

    def test_identity(self):
        fam = GaussianLocScale()
        assert convolve(fam, SmoothingKernel("gaussian", 0.0)) is fam

    def test_cauchy_scale_additivity(self):
        fam = convolve(CauchyLocScale(), SmoothingKernel("cauchy", 1.0))
        val = eval_density(fam, (0, 1), 0.0)
        assert val == pytest.approx(1 / (2 * math.pi), rel=1e-14)
        direct = quad_convolution(lambda y: 1 / (math.pi * (1 + y * y)),
                                  SmoothingKernel("cauchy", 1.0).pdf, 0.0)
        assert val == pytest.approx(direct, abs=1e-9)

    def test_no_numerical_fallback(self):
        with pytest.raises(DensityError):
            convolve(StudentT(3.0), SmoothingKernel("gaussian", 1.0), allow_numerical=False)
        assert isinstance(convolve(StudentT(3.0), SmoothingKernel("gaussian", 1.0)), NumericalConvolution)

    def test_random_closed_forms_match_quadrature(self):
        rng = np.random.default_rng(0)
        x = np.linspace(-8, 8, 33)
        worst = 0.0
        for _ in range(20):
            eta, tau, sig = rng.uniform(-1, 1), rng.uniform(0.2, 3), rng.uniform(0.1, 2)
            cases = [
                (GaussianLocScale(), (eta, tau), "gaussian", lambda y: stats.norm.pdf(y, eta, tau)),
                (CauchyLocScale(), (eta, tau), "cauchy", lambda y: stats.cauchy.pdf(y, eta, tau)),
            ]
            for fam, theta, kind, base in cases:
                K = SmoothingKernel(kind, sig)
                closed = convolve(fam, K, allow_numerical=False).pdf(x, [theta])[0]
                direct = np.array([quad_convolution(base, K.pdf, xi, (eta,)) for xi in x])
                worst = max(worst, float(np.max(np.abs(closed - direct))))
        assert worst <= 1e-5

    def test_skewnormal_closed_form_matches_quadrature_and_fft(self):
        rng = np.random.default_rng(1)
        grid = QuadratureGrid.uniform(-15, 15, 4097)
        xs = np.linspace(-6, 6, 25)
        for _ in range(10):
            theta = (rng.uniform(-1, 1), rng.uniform(0.3, 2.5), rng.uniform(-8, 8))
            K = SmoothingKernel("gaussian", rng.uniform(0.2, 1.5))
            closed = convolve(SkewNormal(), K)
            direct = np.array([quad_convolution(lambda y: skewnorm_pdf(y, *theta), K.pdf, xi, theta[:1])
                               for xi in xs])
            assert np.max(np.abs(closed.pdf(xs, [theta])[0] - direct)) <= 1e-5
            fft = NumericalConvolution(SkewNormal(), K).pdf(grid.points, [theta])[0]
            assert np.max(np.abs(closed.pdf(grid.points, [theta])[0] - fft)) <= 1e-5

    def test_numerical_convolution_threadsafe_and_cached(self):
        fam = NumericalConvolution(StudentT(3.0), SmoothingKernel("gaussian", 1.0))
        grid = QuadratureGrid.uniform(-20, 20, 1025)
        thetas = [[0.0, 1.0], [1.0, 2.0], [-1.0, 0.5]]
        ref = fam.pdf(grid.points, thetas)
        out = [None] * 8

        def work(i):
            out[i] = fam.pdf(grid.points, thetas)

        threads = [threading.Thread(target=work, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for o in out:
            np.testing.assert_array_equal(o, ref)
        assert grid.integrate(ref[0]) == pytest.approx(1.0, abs=5e-3)

    def test_numerical_convolution_not_samplable(self):
        fam = NumericalConvolution(StudentT(3.0), SmoothingKernel("gaussian", 1.0))
        with pytest.raises(DensityError):
            sample(MixingMeasure([[0.0, 1.0]], [1.0]), fam, 10, 0)


class TestMixtureDensity:
    def test_single_component(self):
        grid = QuadratureGrid.uniform(-8, 8, 257)
        np.testing.assert_allclose(mixture_density(dirac([0.0, 1.0]), GaussianLocScale(), grid),
                                   stats.norm.pdf(grid.points), rtol=1e-14)

    def test_case_one_value_at_zero(self):
        G0 = MixingMeasure([[0.0, math.sqrt(10)], [-0.3, math.sqrt(0.05)], [0.3, math.sqrt(0.05)]],
                           [0.5, 0.25, 0.25])
        ref = (0.5 * stats.norm.pdf(0, 0, math.sqrt(10)) + 0.25 * stats.norm.pdf(0, -0.3, math.sqrt(0.05))
               + 0.25 * stats.norm.pdf(0, 0.3, math.sqrt(0.05)))
        assert mixture_density(G0, GaussianLocScale(), [0.0])[0] == pytest.approx(ref, rel=1e-14)

    def test_duplicate_components(self):
        x = np.linspace(-4, 4, 9)
        a = mixture_density(MixingMeasure([[0.2, 1.0], [0.2 + 1e-3, 1.0]], [0.5, 0.5]), GaussianLocScale(), x)
        b = 0.5 * (stats.norm.pdf(x, 0.2, 1.0) + stats.norm.pdf(x, 0.2 + 1e-3, 1.0))
        np.testing.assert_allclose(a, b, rtol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(DensityError):
            mixture_density(dirac([0.0]), GaussianLocScale(), [0.0])


class TestKDE:
    def test_single_point(self):
        grid = QuadratureGrid.uniform(-8, 8, 257)
        kde = smoothed_empirical([0.0], SmoothingKernel("gaussian", 1.0), grid)
        np.testing.assert_allclose(kde, stats.norm.pdf(grid.points), rtol=1e-14)

    def test_two_points_at_zero(self):
        grid = QuadratureGrid.uniform(-8, 8, 257)
        kde = smoothed_empirical([-1.0, 1.0], SmoothingKernel("gaussian", 1.0), grid)
        assert kde[128] == pytest.approx(stats.norm.pdf(1.0), rel=1e-14)
        assert kde[128] == pytest.approx(0.241971, abs=1e-6)

    def test_normalization(self):
        rng = np.random.default_rng(0)
        data = rng.normal(size=500)
        grid = build_grid(data, 1.0, 1.0)
        kde = smoothed_empirical(data, SmoothingKernel("gaussian", 1.0), grid)
        assert grid.integrate(kde) >= 0.999

    def test_linearity(self):
        rng = np.random.default_rng(1)
        A, B = rng.normal(size=37), rng.normal(2, 1, size=91)
        grid = QuadratureGrid.uniform(-10, 12, 1025)
        K = SmoothingKernel("gaussian", 0.7)
        both = smoothed_empirical(np.concatenate([A, B]), K, grid)
        mix = (A.size * smoothed_empirical(A, K, grid) + B.size * smoothed_empirical(B, K, grid)) / (A.size + B.size)
        assert np.max(np.abs(both - mix)) <= 1e-12

    def test_order_invariance(self):
        rng = np.random.default_rng(2)
        data = rng.normal(size=700)
        grid = QuadratureGrid.uniform(-10, 10, 1025)
        K = SmoothingKernel("gaussian", 1.0)
        np.testing.assert_array_equal(smoothed_empirical(data, K, grid),
                                      smoothed_empirical(rng.permutation(data), K, grid))

    def test_identity_kernel_rejected(self):
        with pytest.raises(DensityError):
            smoothed_empirical([0.0], SmoothingKernel("gaussian", 0.0), QuadratureGrid.uniform(-1, 1, 257))

    def test_empty_sample_rejected(self):
        with pytest.raises(DensityError):
            Sample(np.array([]))


class TestSampling:
    def test_moments(self):
        s = sample(dirac([0.0, 1.0]), GaussianLocScale(), 100_000, 42).observations
        assert abs(s.mean()) < 0.02 and abs(s.std() - 1) < 0.02

    def test_deterministic(self):
        G = MixingMeasure([[0.0, 1.0], [3.0, 0.5]], [0.3, 0.7])
        a = sample(G, GaussianLocScale(), 100, 5).observations
        b = sample(G, GaussianLocScale(), 100, 5).observations
        assert a.tobytes() == b.tobytes()

    def test_degenerate_weights(self):
        G = MixingMeasure([[-50.0, 1.0], [50.0, 1.0]], [1.0, 0.0])
        assert np.all(sample(G, GaussianLocScale(), 1000, 1).observations < 0)

    def test_skewnormal_sampler_moments(self):
        theta = (0.5, 2.0, 4.0)
        s = sample(MixingMeasure([list(theta)], [1.0]), SkewNormal(), 200_000, 3).observations
        assert s.mean() == pytest.approx(stats.skewnorm.mean(4.0, loc=0.5, scale=2.0), abs=0.02)
        assert s.std() == pytest.approx(stats.skewnorm.std(4.0, loc=0.5, scale=2.0), abs=0.02)

    def test_shift_mixture_sampler(self):
        s = sample(MixingMeasure([[0.0, 1.0]], [1.0]), ShiftMixture(GaussianLocScale(), 2.0), 100_000, 4)
        assert s.observations.mean() == pytest.approx(0.0, abs=0.03)
        assert s.observations.var() == pytest.approx(5.0, abs=0.1)

    def test_file_round_trip(self, tmp_path):
        s = sample(dirac([0.0, 1.0]), GaussianLocScale(), 50, 9)
        path = tmp_path / "x.txt"
        write_sample(s, path)
        assert read_sample(path).observations.tobytes() == s.observations.tobytes()

    def test_read_rejects_text(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1.0\nabc\n")
        with pytest.raises(DensityError, match="abc"):
            read_sample(path)


class TestGrid:
    def test_invariants(self):
        g = QuadratureGrid.uniform(-1, 1, 257)
        assert g.n % 2 == 1 and g.n >= 257
        assert np.max(np.abs(np.diff(g.points) - g.spacing)) < 1e-12

    @pytest.mark.parametrize("n", [256, 255, 100])
    def test_bad_sizes(self, n):
        with pytest.raises(DensityError):
            QuadratureGrid.uniform(-1, 1, n)

    def test_extent_formula(self):
        data = np.linspace(-3, 3, 1001)
        g = build_grid(data, math.sqrt(10), 1.0)
        pad = 6 * (math.sqrt(10) + 1)
        lo, hi = np.quantile(data, [0.001, 0.999])
        assert g.points[0] == pytest.approx(lo - pad) and g.points[-1] == pytest.approx(hi + pad)
        assert g.n == 4097

    def test_degenerate_data(self):
        g = build_grid(np.full(10, 5.0), 1.0, 1.0)
        assert g.points[0] <= 4.0 - 12 and g.points[-1] >= 6.0 + 12
        assert g.n == 4097

    def test_simpson_accuracy(self):
        g = build_grid(np.random.default_rng(0).normal(size=1000), 1.0, 0.0)
        assert g.integrate(stats.norm.pdf(g.points)) == pytest.approx(1.0, abs=1e-6)

    def test_outlier_does_not_stretch_grid(self):
        # one huge Cauchy draw must not coarsen the grid past the component scale
        data = np.concatenate([np.random.default_rng(3).standard_cauchy(199), [82031.0]])
        g = build_grid(data, 1.0, 1.0)
        assert g.spacing < 0.5
        assert g.points[0] < np.quantile(data, 0.25) and g.points[-1] > np.quantile(data, 0.75)
        assert g.integrate(stats.cauchy.pdf(g.points, 0, 2)) > 0.9

    def test_csv(self):
        g = QuadratureGrid.uniform(0, 1, 257)
        lines = g.to_csv().strip().splitlines()
        assert lines[0] == "x,weight" and len(lines) == 258
        assert float(lines[-1].split(",")[0]) == 1.0


class TestPsi:
    @pytest.mark.parametrize("tau,sigma", [(1.0, 1.0), (0.5, 2.0), (math.sqrt(10), 1.0)])
    def test_single_gaussian_closed_form(self, tau, sigma):
        # K^2 is N(0, sigma^2/2) / (2 sqrt(pi) sigma), so the integrand is a ratio of two
        # centred normals with variances tau^2 + sigma^2/2 and tau^2 + sigma^2;
        # integrating it gives (tau^2 + sigma^2) / sigma^2
        K = SmoothingKernel("gaussian", sigma)
        grid = QuadratureGrid.uniform(-40 * (tau + sigma), 40 * (tau + sigma), 8193)
        val = psi_integral(dirac([0.0, tau]), GaussianLocScale(), K, grid)
        assert val == pytest.approx((tau**2 + sigma**2) / sigma**2, rel=1e-6)

    def test_needs_positive_bandwidth(self):
        with pytest.raises(DensityError):
            psi_integral(dirac([0.0, 1.0]), GaussianLocScale(), SmoothingKernel("gaussian", 0.0),
                         QuadratureGrid.uniform(-5, 5, 257))
