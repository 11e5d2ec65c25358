import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lssstream.model import (
    Covariate, DimensionError, LagEmbedder, NoiseSpec, NonStationaryError, NotPositiveDefiniteError,
    SeasonalVarxSpec, StreamPoint, VarxSpec, companion_matrix, embed_covariate,
    generate_random_stable_coefficients, generate_random_stable_seasonal, lagged_design,
    read_stream_csv, sample_elliptical, simulate, simulate_arrays, spec_from_dict, spectral_radius,
    stream_residuals, symmetric_sqrt, validate_spec, write_stream_csv,
)


def ar1(phi=0.5):
    return VarxSpec(K=1, p1=1, p2=0, phi=[[[phi]]], psi=[], omega=[[1.0]])


class TestValidateSpec:
    def test_scalar_ar1_is_valid(self):
        spec = validate_spec(ar1(0.5))
        assert spectral_radius(spec) == pytest.approx(0.5)

    def test_unit_root_rejected(self):
        with pytest.raises(NonStationaryError):
            validate_spec(ar1(1.0))

    def test_random_k2_p2_matches_direct_eigenvalues(self):
        spec = generate_random_stable_coefficients(2, 2, 0, 0.7, seed=3)
        big = np.zeros((4, 4))
        big[:2, :2], big[:2, 2:] = spec.phi
        big[2:, :2] = np.eye(2)
        assert spectral_radius(spec) == pytest.approx(np.abs(np.linalg.eigvals(big)).max(), abs=1e-12)
        validate_spec(spec)

    def test_dimension_mismatch(self):
        spec = VarxSpec(K=2, p1=1, p2=0, phi=[np.eye(3) * 0.1], psi=[], omega=np.eye(2))
        with pytest.raises(DimensionError):
            validate_spec(spec)

    def test_wrong_number_of_matrices(self):
        spec = VarxSpec(K=2, p1=2, p2=0, phi=[np.eye(2) * 0.1], psi=[], omega=np.eye(2))
        with pytest.raises(DimensionError):
            validate_spec(spec)

    def test_non_symmetric_omega(self):
        spec = VarxSpec(K=2, p1=1, p2=0, phi=[np.eye(2) * 0.1], psi=[], omega=[[1, 0.5], [0, 1]])
        with pytest.raises(NotPositiveDefiniteError):
            validate_spec(spec)

    def test_indefinite_omega(self):
        spec = VarxSpec(K=2, p1=1, p2=0, phi=[np.eye(2) * 0.1], psi=[], omega=[[1, 2], [2, 1]])
        with pytest.raises(NotPositiveDefiniteError):
            validate_spec(spec)

    def test_errors_are_distinct(self):
        assert len({DimensionError, NotPositiveDefiniteError, NonStationaryError}) == 3
        assert not issubclass(NonStationaryError, DimensionError)

    def test_seasonal_lag_enters_companion(self):
        # y_t = 0.99 y_{t-24} alone is stationary with radius 0.99^(1/24)
        spec = SeasonalVarxSpec(K=1, p1=1, p2_seasonal=1, phi=[[[0.0]]], theta=[[[0.99]]],
                                omega=[[1.0]], period=24)
        assert spectral_radius(spec) == pytest.approx(0.99 ** (1 / 24), rel=1e-9)
        bad = SeasonalVarxSpec(K=1, p1=1, p2_seasonal=1, phi=[[[0.5]]], theta=[[[0.6]]],
                               omega=[[1.0]], period=24)
        with pytest.raises(NonStationaryError):
            validate_spec(bad)


class TestGenerators:
    def test_target_radius(self):
        spec = generate_random_stable_coefficients(10, 1, 1, 0.8, seed=7)
        assert spectral_radius(spec) <= 0.8 + 1e-9
        assert spec.p == 20
        assert np.allclose(spec.omega, spec.omega.T)
        assert np.linalg.eigvalsh(spec.omega).min() >= 0.1 - 1e-9

    @pytest.mark.parametrize("r", [0.0, 1.0, -0.2])
    def test_radius_out_of_range(self, r):
        with pytest.raises(ValueError):
            generate_random_stable_coefficients(2, 1, 1, r, seed=1)

    def test_deterministic(self):
        a = generate_random_stable_coefficients(3, 2, 1, 0.6, seed=11)
        b = generate_random_stable_coefficients(3, 2, 1, 0.6, seed=11)
        assert a.to_dict() == b.to_dict()

    @settings(max_examples=25, deadline=None)
    @given(K=st.integers(1, 4), p1=st.integers(1, 3), p2=st.integers(0, 2),
           r=st.floats(0.05, 0.95), seed=st.integers(0, 2**31))
    def test_radius_property(self, K, p1, p2, r, seed):
        spec = generate_random_stable_coefficients(K, p1, p2, r, seed)
        assert spectral_radius(spec) <= r + 1e-9

    def test_seasonal_generator(self):
        spec = generate_random_stable_seasonal(4, 2, 1, 24, 0.98, seed=0)
        assert spectral_radius(spec) <= 0.98 + 1e-9
        assert spec.p == 12
        assert spec.max_lag == 24

    def test_spec_dict_round_trip(self):
        for spec in (generate_random_stable_coefficients(2, 1, 1, 0.5, 1),
                     generate_random_stable_seasonal(2, 1, 1, 24, 0.9, 1)):
            again = spec_from_dict(spec.to_dict())
            assert again.to_dict() == spec.to_dict()
            assert np.array_equal(again.B, spec.B)


class TestElliptical:
    def test_gaussian_covariance(self):
        rng = np.random.default_rng(0)
        z = sample_elliptical(np.zeros(3), np.eye(3), "gaussian", rng, size=100_000)
        assert np.abs(np.cov(z.T) - np.eye(3)).max() < 0.05

    def test_student_t_covariance(self):
        rng = np.random.default_rng(1)
        z = sample_elliptical(np.zeros(3), np.eye(3), "student_t", rng, size=100_000, df=3)
        assert np.abs(np.cov(z.T) - 3 * np.eye(3)).max() < 0.3

    def test_negative_eigenvalue(self):
        with pytest.raises(NotPositiveDefiniteError):
            sample_elliptical(np.zeros(2), np.diag([1.0, -1.0]), "gaussian", np.random.default_rng(0))

    def test_single_draw_shape(self):
        x = sample_elliptical(np.ones(4), np.eye(4), "gaussian", np.random.default_rng(0))
        assert x.shape == (4,)

    def test_symmetric_sqrt(self):
        a = np.array([[2.0, 0.5], [0.5, 1.0]])
        r = symmetric_sqrt(a)
        assert np.allclose(r, r.T)
        assert np.allclose(r @ r, a, atol=1e-12)

    def test_df_must_exceed_two(self):
        with pytest.raises(ValueError):
            NoiseSpec("student_t", df=2)


class TestSimulate:
    def test_white_noise_mean(self):
        spec = VarxSpec(K=3, p1=1, p2=1, phi=[np.zeros((3, 3))], psi=[np.zeros((3, 3))], omega=np.eye(3))
        sim = simulate_arrays(spec, n=10_000, seed=4)
        assert np.abs(sim.y.mean(axis=0)).max() < 0.05

    def test_ar1_autocorrelation(self):
        sim = simulate_arrays(ar1(0.5), n=100_000, seed=5)
        y = sim.y[:, 0] - sim.y[:, 0].mean()
        assert y[1:] @ y[:-1] / (y @ y) == pytest.approx(0.5, abs=0.02)

    def test_n_zero(self):
        with pytest.raises(ValueError):
            simulate(ar1(), n=0)

    def test_burn_in_below_max_lag(self):
        spec = generate_random_stable_coefficients(1, 3, 0, 0.5, 0)
        with pytest.raises(ValueError):
            simulate(spec, n=10, burn_in=2)

    def test_zero_coefficients_is_noise_plus_mean(self):
        spec = VarxSpec(K=2, p1=1, p2=0, phi=[np.zeros((2, 2))], psi=[], omega=np.eye(2),
                        mu_y=[3.0, -1.0])
        sim = simulate_arrays(spec, n=500, seed=6)
        assert np.array_equal(sim.y, sim.e + spec.mu_y)

    def test_centered_form_reproduces_recursion(self):
        spec = generate_random_stable_coefficients(3, 2, 2, 0.8, seed=8)
        spec.mu_y = np.array([1.0, 2.0, 3.0])
        spec.mu_v = np.array([-1.0, 0.5, 0.0])
        sim = simulate_arrays(spec, n=2000, seed=9)
        resid = stream_residuals(sim.y, sim.v, spec)
        assert np.abs(resid - sim.e[spec.max_lag:]).max() < 1e-10

    def test_seasonal_centered_form(self):
        spec = generate_random_stable_seasonal(2, 2, 1, 24, 0.95, seed=2, mu_y=[10.0, 20.0])
        sim = simulate_arrays(spec, n=600, seed=3)
        resid = stream_residuals(sim.y, None, spec)
        assert np.abs(resid - sim.e[24:]).max() < 1e-10

    def test_deterministic(self):
        spec = generate_random_stable_coefficients(2, 1, 1, 0.5, 0)
        a = simulate_arrays(spec, n=100, seed=1)
        b = simulate_arrays(spec, n=100, seed=1)
        assert np.array_equal(a.y, b.y) and np.array_equal(a.v, b.v)

    def test_student_t_path(self):
        spec = generate_random_stable_coefficients(3, 1, 1, 0.8, 0)
        pts = simulate(spec, NoiseSpec("student_t", df=3), n=200, seed=2)
        assert len(pts) == 200 and pts[0].v.shape == (3,)
        assert all(np.all(np.isfinite(p.y)) for p in pts)

    @pytest.mark.slow
    def test_long_stream_finite(self):
        spec = generate_random_stable_coefficients(2, 1, 0, 0.9, 0)
        sim = simulate_arrays(spec, n=1_000_000, seed=0)
        assert np.all(np.isfinite(sim.y))


class TestEmbedding:
    def test_stacking_order(self):
        spec = VarxSpec(K=2, p1=1, p2=1, phi=[np.zeros((2, 2))], psi=[np.zeros((2, 2))], omega=np.eye(2))
        cov = embed_covariate([StreamPoint(0, np.array([1.0, 2.0]), np.array([3.0, 4.0]))], spec)
        assert np.array_equal(cov.x, [1, 2, 3, 4])
        assert cov.t == 1

    def test_seasonal_third_entry(self):
        spec = SeasonalVarxSpec(K=1, p1=2, p2_seasonal=1, phi=[[[0]], [[0]]], theta=[[[0]]],
                                omega=[[1]], period=24)
        history = [StreamPoint(t, np.array([float(t)])) for t in range(30)]
        cov = embed_covariate(history, spec)
        assert cov.x.shape == (3,)
        # t = 30: lags 1, 2 and 24
        assert np.array_equal(cov.x, [29.0, 28.0, 6.0])

    def test_insufficient_history(self):
        spec = generate_random_stable_coefficients(1, 3, 0, 0.5, 0)
        with pytest.raises(ValueError):
            embed_covariate([StreamPoint(0, np.zeros(1)), StreamPoint(1, np.zeros(1))], spec)

    def test_pure_function(self):
        spec = generate_random_stable_coefficients(2, 2, 1, 0.5, 0)
        pts = simulate(spec, n=10, seed=0)
        a = embed_covariate(pts, spec)
        b = embed_covariate(pts, spec)
        assert np.array_equal(a.x, b.x)

    def test_lagged_design_matches_pointwise(self):
        spec = generate_random_stable_coefficients(2, 2, 2, 0.5, 0)
        sim = simulate_arrays(spec, n=50, seed=0)
        X, Y = lagged_design(sim.y, sim.v, spec)
        pts = sim.points()
        for i, t in enumerate(range(spec.max_lag, 50)):
            assert np.array_equal(X[i], embed_covariate(pts[:t], spec).x)
            assert np.array_equal(Y[i], sim.y[t])

    def test_lag_embedder_transformer(self):
        spec = generate_random_stable_coefficients(2, 2, 1, 0.5, 0)
        sim = simulate_arrays(spec, n=60, seed=1)
        Z = np.hstack([sim.y, sim.v])
        emb = LagEmbedder(p1=2, p2=1).fit(Z)
        X, Y = lagged_design(sim.y, sim.v, spec)
        assert np.array_equal(emb.transform(Z), X)
        assert np.array_equal(emb.targets(Z), Y)
        assert emb.get_params() == {"p1": 2, "p2": 1, "period": None, "p2_seasonal": 0}

    def test_covariate_type(self):
        c = Covariate(x=np.ones(3), t=4)
        assert c.t == 4


def test_companion_matrix_shape():
    C = companion_matrix(2, {1: np.eye(2) * 0.5, 3: np.eye(2) * 0.1})
    assert C.shape == (6, 6)


def test_stream_csv_round_trip(tmp_path):
    spec = generate_random_stable_coefficients(3, 1, 1, 0.5, 0)
    sim = simulate_arrays(spec, n=40, seed=2)
    path = tmp_path / "s.csv"
    write_stream_csv(path, sim.y, sim.v)
    assert path.read_text().splitlines()[0] == "t,y1,y2,y3,v1,v2,v3"
    t, y, v = read_stream_csv(path)
    assert np.array_equal(t, np.arange(40))
    assert np.array_equal(y, sim.y) and np.array_equal(v, sim.v)
