"""Sampler-assisted online estimation as a scikit-learn style regressor.

Each incoming row goes through: one-step-ahead prediction, mean update,
leverage score, selection decision, (if selected) centered RLS and
residual-covariance update, threshold refresh, and a sparse precision update.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .diagnostics import MetricRecord, estimation_error, prediction_error
from .model import as_seed_sequence
from .estimator import init_estimator, rls_update, update_omega
from .samplers import (SamplerConfig, decide, leverage, observe_score, pilot_fit,
                       sparse_precision_update, update_means)


class OnlineLSSRegressor(RegressorMixin, BaseEstimator):
    """Streaming least squares that only updates on rows chosen by a leverage-score sampler.

    Parameters
    ----------
    mode : {"bernoulli", "lss", "relaxed"}
    q : float
        Target sampling rate.
    q0 : float
        Base rate of the relaxed sampler (ignored by the other modes).
    u : float
        Probability of absorbing a row into the precision estimate.
    n_pilot : int
        Leading rows of ``fit`` used to initialize everything.
    quantile_window : int
        Keep only the newest leverage scores for the threshold (0 keeps all).
    refresh_every : int
        Threshold recomputation cadence in steps.
    debias_precision : bool
        Scale the precision by M - p - 1 instead of M (unbiased inverse scatter).
    ridge : float or None
        Ridge added to the pilot Gram matrix (None: 1e-6 * trace / p).
    random_state : int, SeedSequence, (seed, seed) pair or None
        Seeds the uniform draws and the precision-update draws; a pair seeds
        them separately.
    record_decisions : bool
        Keep every Decision in ``decisions_``.
    """

    def __init__(self, mode="relaxed", q=0.1, q0=0.05, u=0.1, n_pilot=100, quantile_window=0,
                 refresh_every=1, debias_precision=True, ridge=None, random_state=None,
                 record_decisions=True):
        self.mode = mode
        self.q = q
        self.q0 = q0
        self.u = u
        self.n_pilot = n_pilot
        self.quantile_window = quantile_window
        self.refresh_every = refresh_every
        self.debias_precision = debias_precision
        self.ridge = ridge
        self.random_state = random_state
        self.record_decisions = record_decisions

    def _config(self) -> SamplerConfig:
        return SamplerConfig(mode=self.mode, q=self.q, q0=self.q0, u=self.u, n0=self.n_pilot,
                             quantile_window=self.quantile_window, refresh_every=self.refresh_every,
                             debias_precision=self.debias_precision)

    def _sampler_rngs(self):
        if isinstance(self.random_state, tuple):
            u_ss, j_ss = self.random_state
        else:
            u_ss, j_ss = as_seed_sequence(self.random_state).spawn(2)
        return np.random.default_rng(u_ss), np.random.default_rng(j_ss)

    def init_pilot(self, X, y):
        """Initialize from pilot rows only (no streaming)."""
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        self._y_1d = y.ndim == 1
        Y = y[:, None] if self._y_1d else y
        self.config_ = self._config()
        self.sampler_state_ = pilot_fit(X, Y, self.config_, seed=self._sampler_rngs())
        st = self.sampler_state_
        self.rls_state_ = init_estimator(X - st.mu_x_hat, Y - st.mu_y_hat, ridge=self.ridge)
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        self.decisions_ = []
        self.n_seen_ = 0
        return self

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        if X.shape[0] < self.n_pilot:
            raise ValueError(f"need at least n_pilot={self.n_pilot} rows, got {X.shape[0]}")
        self.init_pilot(X[:self.n_pilot], y[:self.n_pilot])
        return self.partial_fit(X[self.n_pilot:], y[self.n_pilot:])

    def partial_fit(self, X, y):
        if not hasattr(self, "rls_state_"):
            return self.fit(X, y)
        if len(X) == 0:
            return self
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        Y = y[:, None] if y.ndim == 1 else y
        for x_row, y_row in zip(X, Y):
            self.step(x_row, y_row)
        return self

    def step(self, x, y, t=None):
        """Process one row; returns (Decision, one-step-ahead prediction made before the update)."""
        st, rls, cfg = self.sampler_state_, self.rls_state_, self.config_
        t = self.n_seen_ if t is None else t
        y_pred = st.mu_y_hat + (x - st.mu_x_hat) @ rls.b_hat
        update_means(st, y, x)
        lev = leverage(st, x)
        dec = decide(st, cfg, x, t, lev)
        if dec.selected:
            xc = x - st.mu_x_hat
            yc = y - st.mu_y_hat
            resid = yc - xc @ rls.b_hat
            rls_update(rls, xc, yc)
            update_omega(rls, resid)
        observe_score(st, cfg, lev)
        sparse_precision_update(st, x, cfg)
        self.n_seen_ += 1
        if self.record_decisions:
            self.decisions_.append(dec)
        return dec, y_pred

    @property
    def B_(self) -> np.ndarray:
        check_is_fitted(self, "rls_state_")
        return self.rls_state_.b_hat

    @property
    def coef_(self) -> np.ndarray:
        return self.B_.T

    @property
    def intercept_(self) -> np.ndarray:
        st = self.sampler_state_
        return st.mu_y_hat - st.mu_x_hat @ self.B_

    @property
    def n_selected_(self) -> int:
        check_is_fitted(self, "rls_state_")
        return self.rls_state_.n_selected

    def predict(self, X):
        check_is_fitted(self, "rls_state_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        st = self.sampler_state_
        out = st.mu_y_hat + (X - st.mu_x_hat) @ self.rls_state_.b_hat
        return out[:, 0] if self._y_1d else out


def run_stream(model: OnlineLSSRegressor, X, Y, b_ref=None, cadence: str = "update",
               times=None, n_pilot: int | None = None) -> list:
    """Fit ``model`` on the pilot rows, then stream the rest while recording metrics.

    ``cadence="update"`` records the pilot estimate (tau=0) and one record per
    selected row; ``"step"`` records every row.  ``est_error`` is NaN without ``b_ref``.
    """
    if cadence not in ("update", "step"):
        raise ValueError("cadence must be 'update' or 'step'")
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n0 = model.n_pilot if n_pilot is None else n_pilot
    if X.shape[0] <= n0:
        raise ValueError(f"stream of {X.shape[0]} rows is not longer than the pilot ({n0})")
    times = np.arange(X.shape[0]) if times is None else np.asarray(times)
    model.init_pilot(X[:n0], Y[:n0])
    rls = model.rls_state_

    def est_err():
        return float("nan") if b_ref is None else estimation_error(rls.b_hat, b_ref)

    records = []
    if cadence == "update":
        records.append(MetricRecord(0, int(times[n0 - 1]), est_err(), float("nan"), 0))
    for i in range(n0, X.shape[0]):
        dec, y_pred = model.step(X[i], Y[i], int(times[i]))
        if cadence == "step" or dec.selected:
            try:
                pe = prediction_error(y_pred, Y[i])
            except ValueError:
                pe = float("nan")
            records.append(MetricRecord(rls.n_selected, int(times[i]), est_err(), pe, rls.n_selected))
    return records
