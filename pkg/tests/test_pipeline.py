import numpy as np
import pytest
from sklearn.base import clone

from lssstream.bench import BenchConfig, derive_seed, run_bench, run_replicate
from lssstream.estimator import batch_ls
from lssstream.model import generate_random_stable_coefficients, lagged_design, simulate_arrays
from lssstream.pipeline import OnlineLSSRegressor, run_stream
from lssstream.samplers import realized_rate


@pytest.fixture(scope="module")
def varx_rows():
    spec = generate_random_stable_coefficients(4, 1, 1, 0.8, seed=2)
    sim = simulate_arrays(spec, n=3000, seed=3)
    X, Y = lagged_design(sim.y, sim.v, spec)
    return spec, X, Y


class TestRegressor:
    def test_params_round_trip(self):
        m = OnlineLSSRegressor(mode="lss", q=0.2, u=0.5)
        assert clone(m).get_params() == m.get_params()
        assert m.set_params(q=0.3).q == 0.3

    def test_fit_predict_shapes(self, varx_rows):
        _, X, Y = varx_rows
        m = OnlineLSSRegressor(random_state=0).fit(X, Y)
        assert m.predict(X[:5]).shape == (5, 4)
        assert m.coef_.shape == (4, 8)
        assert m.intercept_.shape == (4,)
        assert len(m.decisions_) == len(X) - m.n_pilot

    def test_univariate_target(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((400, 3))
        y = X @ [1.0, -1.0, 0.5] + 0.1 * rng.standard_normal(400)
        m = OnlineLSSRegressor(n_pilot=50, random_state=0).fit(X, y)
        assert m.predict(X[:3]).shape == (3,)
        assert m.score(X, y) > 0.9

    def test_predict_feature_mismatch(self, varx_rows):
        _, X, Y = varx_rows
        m = OnlineLSSRegressor(random_state=0).fit(X, Y)
        with pytest.raises(ValueError):
            m.predict(X[:, :3])

    def test_too_short(self):
        with pytest.raises(ValueError):
            OnlineLSSRegressor(n_pilot=100).fit(np.zeros((50, 2)), np.zeros(50))

    def test_partial_fit_equals_fit(self, varx_rows):
        _, X, Y = varx_rows
        a = OnlineLSSRegressor(random_state=4).fit(X, Y)
        b = OnlineLSSRegressor(random_state=4).fit(X[:1500], Y[:1500])
        b.partial_fit(X[1500:], Y[1500:])
        assert np.array_equal(a.B_, b.B_)

    def test_seeded_determinism(self, varx_rows):
        _, X, Y = varx_rows
        a = OnlineLSSRegressor(mode="lss", random_state=9).fit(X, Y)
        b = OnlineLSSRegressor(mode="lss", random_state=9).fit(X, Y)
        assert a.decisions_ == b.decisions_

    def test_b_hat_tracks_a_inv_c(self, varx_rows):
        _, X, Y = varx_rows
        m = OnlineLSSRegressor(random_state=1).fit(X, Y)
        rls = m.rls_state_
        assert np.linalg.norm(rls.b_hat - rls.a_inv @ rls.c) / np.linalg.norm(rls.b_hat) < 1e-8


class TestReductions:
    def test_relaxed_full_base_is_bernoulli(self, varx_rows):
        _, X, Y = varx_rows
        a = OnlineLSSRegressor(mode="relaxed", q=0.1, q0=0.1, random_state=5).fit(X, Y)
        b = OnlineLSSRegressor(mode="bernoulli", q=0.1, random_state=5).fit(X, Y)
        assert a.decisions_ == b.decisions_
        assert np.array_equal(a.B_, b.B_)

    def test_relaxed_zero_base_is_lss(self, varx_rows):
        _, X, Y = varx_rows
        a = OnlineLSSRegressor(mode="relaxed", q=0.1, q0=0.0, random_state=6).fit(X, Y)
        b = OnlineLSSRegressor(mode="lss", q=0.1, q0=0.05, random_state=6).fit(X, Y)
        assert a.decisions_ == b.decisions_

    def test_lss_never_uses_base_branch(self, varx_rows):
        _, X, Y = varx_rows
        m = OnlineLSSRegressor(mode="lss", q=0.1, random_state=7).fit(X, Y)
        assert not any(d.branch == "base" for d in m.decisions_)

    def test_full_rate_matches_batch(self, varx_rows):
        _, X, Y = varx_rows
        n0 = 100
        m = OnlineLSSRegressor(mode="relaxed", q=1.0, q0=1.0, n_pilot=n0, random_state=8).fit(X, Y)
        assert realized_rate(m.decisions_) == 1.0
        # rows centered exactly as the stream saw them: pilot means, then the running means
        cx = [X[:n0] - X[:n0].mean(0)] + [X[i] - X[:i + 1].mean(0) for i in range(n0, len(X))]
        cy = [Y[:n0] - Y[:n0].mean(0)] + [Y[i] - Y[:i + 1].mean(0) for i in range(n0, len(Y))]
        ref = batch_ls(np.vstack(cx), np.vstack(cy), ridge=m.rls_state_.ridge)
        assert np.linalg.norm(m.B_ - ref) / np.linalg.norm(ref) < 1e-6
        full = batch_ls(X - X.mean(0), Y - Y.mean(0))
        assert np.linalg.norm(m.B_ - full) / np.linalg.norm(full) < 1e-2


class TestRunStream:
    def test_update_cadence(self, varx_rows):
        spec, X, Y = varx_rows
        m = OnlineLSSRegressor(mode="bernoulli", q=0.1, random_state=0)
        recs = run_stream(m, X, Y, b_ref=spec.B)
        assert recs[0].tau == 0 and np.isnan(recs[0].pred_error)
        assert [r.tau for r in recs] == list(range(len(recs)))
        assert recs[-1].n_selected == m.n_selected_
        assert recs[-1].est_error < recs[0].est_error
        assert abs(realized_rate(m.decisions_) - 0.1) < 0.02

    def test_step_cadence(self, varx_rows):
        _, X, Y = varx_rows
        m = OnlineLSSRegressor(random_state=0)
        recs = run_stream(m, X, Y, cadence="step")
        assert len(recs) == len(X) - 100
        assert np.isnan(recs[0].est_error)
        assert all(r.pred_error >= 0 for r in recs)

    def test_bad_cadence(self, varx_rows):
        _, X, Y = varx_rows
        with pytest.raises(ValueError):
            run_stream(OnlineLSSRegressor(), X, Y, cadence="hourly")

    def test_prediction_uses_previous_state(self, varx_rows):
        _, X, Y = varx_rows
        m = OnlineLSSRegressor(mode="relaxed", q=1.0, q0=1.0, random_state=0)
        m.init_pilot(X[:100], Y[:100])
        expected = m.predict(X[100:101])[0]
        _, y_pred = m.step(X[100], Y[100])
        assert np.array_equal(y_pred, expected)


class TestBench:
    def test_seed_derivation(self):
        a = derive_seed(1, 2, "noise").generate_state(2)
        b = derive_seed(1, 2, "u").generate_state(2)
        c = derive_seed(1, 3, "noise").generate_state(2)
        assert not np.array_equal(a, b) and not np.array_equal(a, c)
        assert np.array_equal(a, derive_seed(1, 2, "noise").generate_state(2))

    def test_small_bench(self):
        cfg = BenchConfig(K=3, n=800, n0=40)
        res = run_bench(cfg, 3, master_seed=5)
        lines = res.table_csv().splitlines()
        assert lines[0] == "tau,bernoulli_mean,bernoulli_sd,lss_mean,lss_sd,relaxed_mean,relaxed_sd"
        assert len(lines) == res.common_tau + 2
        s = res.final_summary()
        assert s["n_replicates"] == 3 and "gap_bernoulli_minus_lss_se" in s

    def test_one_replicate_rejected(self):
        with pytest.raises(ValueError):
            run_bench(BenchConfig(), 1)

    def test_parallel_identical(self):
        cfg = BenchConfig(K=2, n=500, n0=30)
        assert run_bench(cfg, 4, 1, parallelism=1).table_csv() == run_bench(cfg, 4, 1, parallelism=3).table_csv()

    def test_modes_share_pilot(self):
        errors, _ = run_replicate(BenchConfig(K=2, n=400, n0=30), 0, 0)
        assert errors["bernoulli"][0] == errors["lss"][0] == errors["relaxed"][0]


def test_rejected_steps_are_cheaper():
    import time
    rng = np.random.default_rng(0)
    p = 60
    X = rng.standard_normal((2200, p))
    Y = rng.standard_normal((2200, 3))

    def per_step(q0):
        m = OnlineLSSRegressor(mode="relaxed", q=q0 if q0 else 1e-9, q0=q0, u=0.0, n_pilot=200,
                               record_decisions=False, random_state=0)
        m.init_pilot(X[:200], Y[:200])
        m.sampler_state_.r_hat = np.inf
        m.config_.refresh_every = 10**9
        times = []
        for x, y in zip(X[200:], Y[200:]):
            t0 = time.perf_counter()
            m.step(x, y)
            times.append(time.perf_counter() - t0)
        return np.median(times), m.n_selected_

    off, n_off = per_step(0.0)
    on, n_on = per_step(1.0)
    assert n_off == 0 and n_on == 2000
    assert off < on
