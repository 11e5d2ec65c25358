"""Recursive least squares on selected, mean-centered rows."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

SINGULAR_TOL = 1e-12


@dataclass
class RlsState:
    a_inv: np.ndarray
    c: np.ndarray
    b_hat: np.ndarray
    omega_hat: np.ndarray
    n_selected: int = 0
    n_pilot: int = 0
    ridge: float = 0.0
    skipped_updates: int = 0

    @property
    def p(self) -> int:
        return self.a_inv.shape[0]

    @property
    def K(self) -> int:
        return self.c.shape[1]

    def snapshot(self, tau: int | None = None) -> dict:
        return {"tau": self.n_selected if tau is None else tau, "n_selected": self.n_selected,
                "b_hat": self.b_hat.tolist(), "omega_hat": self.omega_hat.tolist()}


def _as_2d_rows(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def init_estimator(pilot_x, pilot_y, ridge: float | None = None) -> RlsState:
    """Initialize from centered pilot rows; ``ridge=None`` means 1e-6 * trace(X'X) / p."""
    X = _as_2d_rows(pilot_x)
    Y = _as_2d_rows(pilot_y)
    n, p = X.shape
    if Y.shape[0] != n:
        raise ValueError("pilot x and y lengths differ")
    G = X.T @ X
    if ridge is None:
        ridge = 1e-6 * np.trace(G) / p
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    A = G + ridge * np.eye(p)
    if np.linalg.matrix_rank(A) < p:
        raise np.linalg.LinAlgError("pilot Gram matrix is singular")
    a_inv = scipy.linalg.inv(A, check_finite=True)
    a_inv = (a_inv + a_inv.T) / 2
    c = X.T @ Y
    b_hat = a_inv @ c
    resid = Y - X @ b_hat
    omega = resid.T @ resid / max(1, n - p)
    return RlsState(a_inv=a_inv, c=c, b_hat=b_hat, omega_hat=(omega + omega.T) / 2,
                    n_selected=0, n_pilot=n, ridge=float(ridge))


def rls_update(state: RlsState, x, y) -> RlsState:
    """Absorb one centered row (x, y) via a Sherman-Morrison update of the inverse Gram."""
    x = np.asarray(x, dtype=float)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    a = state.a_inv @ x
    denom = 1.0 + x @ a
    if denom < SINGULAR_TOL:
        state.skipped_updates += 1
        return state
    gain = a / denom
    err = y - x @ state.b_hat
    state.b_hat = state.b_hat + np.outer(gain, err)
    inv = state.a_inv - np.outer(gain, a)
    state.a_inv = (inv + inv.T) / 2
    state.c = state.c + np.outer(x, y)
    state.n_selected += 1
    return state


def batch_ls(x, y, ridge: float = 0.0) -> np.ndarray:
    """Direct least squares (X'X + ridge I)^{-1} X'Y by Cholesky."""
    X = _as_2d_rows(x)
    Y = _as_2d_rows(y)
    G = X.T @ X + ridge * np.eye(X.shape[1])
    try:
        cf = scipy.linalg.cho_factor(G)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Gram matrix is singular") from exc
    if np.linalg.cond(G) > 1e14:
        raise np.linalg.LinAlgError("Gram matrix is singular")
    return scipy.linalg.cho_solve(cf, X.T @ Y)


def update_omega(state: RlsState, residual) -> RlsState:
    """Running mean of residual outer products over pilot plus selected rows."""
    r = np.asarray(residual, dtype=float)
    w = max(1, state.n_pilot + state.n_selected)
    state.omega_hat = state.omega_hat + (np.outer(r, r) - state.omega_hat) / w
    return state


def predict(state: RlsState | None, mu_x_hat, mu_y_hat, x_next) -> np.ndarray:
    if state is None:
        raise ValueError("estimator is not initialized")
    return np.asarray(mu_y_hat) + (np.asarray(x_next) - np.asarray(mu_x_hat)) @ state.b_hat


def write_snapshot(path, state: RlsState, tau: int | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(state.snapshot(tau), fh, indent=1)
