"""Online sample selection: Bernoulli, leverage-score (LSS) and relaxed-LSS samplers.

A sampler carries its own auxiliary estimates: running means, a sparsely
updated precision matrix used for leverage scores, and an empirical
upper-tail threshold over the leverage scores seen so far.
"""
from __future__ import annotations

import bisect
import csv
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaincc

MODES = ("bernoulli", "lss", "relaxed")
SINGULAR_TOL = 1e-12


@dataclass
class SamplerConfig:
    mode: str = "relaxed"
    q: float = 0.1
    q0: float = 0.05
    u: float = 0.1
    n0: int = 100
    quantile_window: int = 0
    refresh_every: int = 1
    debias_precision: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 < self.q <= 1:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if self.mode == "relaxed" and not 0 <= self.q0 <= self.q:
            raise ValueError(f"need 0 <= q0 <= q, got q0={self.q0}, q={self.q}")
        if not 0 <= self.u <= 1:
            raise ValueError(f"u must lie in [0, 1], got {self.u}")
        if self.quantile_window < 0:
            raise ValueError("quantile_window must be >= 0")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")

    @property
    def base_rate(self) -> float:
        """Effective q0: 0 for LSS, q for Bernoulli."""
        if self.mode == "lss":
            return 0.0
        if self.mode == "bernoulli":
            return self.q
        return self.q0

    @property
    def tail(self) -> float:
        """Target exceedance probability (q - q0) / (1 - q0) of the leverage rule."""
        q0 = self.base_rate
        if q0 >= self.q:
            return 0.0
        return (self.q - q0) / (1 - q0)


class QuantileTracker:
    """Exact sorted store of leverage scores, optionally limited to the newest ``window``."""

    def __init__(self, window: int = 0):
        self.window = window
        self._sorted: list = []
        self._order: deque = deque()

    def __len__(self):
        return len(self._sorted)

    def add(self, score: float) -> None:
        if self.window:
            if len(self._order) == self.window:
                old = self._order.popleft()
                del self._sorted[bisect.bisect_left(self._sorted, old)]
            self._order.append(score)
        bisect.insort(self._sorted, score)

    def extend(self, scores) -> None:
        for s in scores:
            self.add(float(s))

    def upper_quantile(self, tail: float) -> float:
        """Smallest retained score r with (#scores > r) / n <= tail.

        ``tail <= 0`` gives +inf (nothing can exceed), ``tail >= 1`` gives 0.
        """
        n = len(self._sorted)
        if n == 0:
            raise ValueError("no leverage scores retained")
        if tail <= 0:
            return math.inf
        m = math.floor(tail * n + 1e-9)
        if m >= n:
            return 0.0
        return self._sorted[n - 1 - m]


@dataclass
class Decision:
    t: int
    selected: bool
    leverage: float
    threshold: float
    s_hat: float
    uniform_draw: float
    branch: str


@dataclass
class SamplerState:
    mu_x_hat: np.ndarray
    mu_y_hat: np.ndarray
    count: int
    precision: np.ndarray
    scatter_inv: np.ndarray
    precision_count: float
    r_hat: float
    leverage_scores: QuantileTracker
    u_rng: np.random.Generator
    j_rng: np.random.Generator
    skipped_precision_updates: int = 0
    steps_since_refresh: int = 0


def _precision_scale(M: float, p: int, debias: bool) -> float:
    """Multiplier on (running scatter)^{-1}: M, or M - p - 1 for the unbiased inverse."""
    if not debias:
        return M
    return max(M - p - 1.0, 1.0)


def chi_square_threshold(p: int, tail: float) -> float:
    """r with P(chi2_p > r) = tail, by root-finding on the regularized upper gamma."""
    if not 0 < tail < 1:
        raise ValueError(f"tail must lie in (0, 1), got {tail}")
    if p <= 0:
        raise ValueError("p must be positive")
    k = p / 2.0

    def f(r):
        return gammaincc(k, r / 2.0) - tail

    hi = max(1.0, float(p))
    while f(hi) > 0:
        hi *= 2.0
    return brentq(f, 0.0, hi, xtol=1e-10, rtol=4 * np.finfo(float).eps, maxiter=500)


def _rngs(seed):
    if isinstance(seed, tuple):
        return seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    u_ss, j_ss = ss.spawn(2)
    return np.random.default_rng(u_ss), np.random.default_rng(j_ss)


def pilot_fit(pilot_x, pilot_y, config: SamplerConfig, seed=None) -> SamplerState:
    """Initialize means, precision, threshold and the score store from a pilot sample.

    ``seed`` is an int / SeedSequence, or a ``(u_rng, j_rng)`` pair of generators.
    """
    X = np.atleast_2d(np.asarray(pilot_x, dtype=float))
    Y = np.asarray(pilot_y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, p = X.shape
    if Y.shape[0] != n:
        raise ValueError("pilot x and y lengths differ")
    if config.n0 < p + 1:
        raise ValueError(f"pilot size n0={config.n0} must be at least p+1={p + 1}")
    if n < config.n0:
        raise ValueError(f"pilot has {n} rows, fewer than n0={config.n0}")
    mu_x = X.mean(axis=0)
    mu_y = Y.mean(axis=0)
    Xc = X - mu_x
    S = Xc.T @ Xc / (n - 1)
    lam = 1e-6 * np.trace(S) / p
    S_reg = S + lam * np.eye(p)
    if not np.all(np.isfinite(S_reg)) or np.linalg.cond(S_reg) > 1e12:
        raise np.linalg.LinAlgError("pilot covariance is numerically singular")
    scatter_inv = np.linalg.inv(S_reg) / (n - 1)
    scatter_inv = (scatter_inv + scatter_inv.T) / 2
    M = float(n - 1)
    precision = _precision_scale(M, p, config.debias_precision) * scatter_inv
    tail = config.tail
    if tail <= 0:
        r0 = math.inf
    elif tail >= 1:
        r0 = 0.0
    else:
        r0 = chi_square_threshold(p, tail)
    tracker = QuantileTracker(config.quantile_window)
    tracker.extend(np.einsum("ij,jk,ik->i", Xc, precision, Xc))
    u_rng, j_rng = _rngs(seed)
    return SamplerState(mu_x_hat=mu_x, mu_y_hat=mu_y, count=n, precision=precision,
                        scatter_inv=scatter_inv, precision_count=M, r_hat=r0,
                        leverage_scores=tracker, u_rng=u_rng, j_rng=j_rng)


def update_means(state: SamplerState, y, x) -> SamplerState:
    state.count += 1
    state.mu_x_hat = state.mu_x_hat + (np.asarray(x, dtype=float) - state.mu_x_hat) / state.count
    state.mu_y_hat = state.mu_y_hat + (np.asarray(y, dtype=float) - state.mu_y_hat) / state.count
    return state


def leverage(state: SamplerState, x) -> float:
    d = np.asarray(x, dtype=float) - state.mu_x_hat
    if d.shape != state.mu_x_hat.shape:
        raise ValueError(f"covariate has shape {d.shape}, expected {state.mu_x_hat.shape}")
    return float(d @ (state.precision @ d))


def update_threshold(state: SamplerState, config: SamplerConfig) -> SamplerState:
    state.r_hat = state.leverage_scores.upper_quantile(config.tail)
    return state


def sparse_precision_update(state: SamplerState, x, config: SamplerConfig) -> SamplerState:
    """With probability u absorb (x - mu)(x - mu)' into the running scatter via Sherman-Morrison.

    The precision is M * scatter^{-1}, or (M - p - 1) * scatter^{-1} with
    ``debias_precision`` (removes the upward drift of early leverage scores).
    """
    if not state.j_rng.random() < config.u:
        return state
    d = np.asarray(x, dtype=float) - state.mu_x_hat
    a = state.scatter_inv @ d
    denom = 1.0 + d @ a
    if abs(denom) < SINGULAR_TOL:
        state.skipped_precision_updates += 1
        return state
    inv = state.scatter_inv - np.outer(a, a) / denom
    state.scatter_inv = (inv + inv.T) / 2
    state.precision_count += 1
    scale = _precision_scale(state.precision_count, len(d), config.debias_precision)
    state.precision = scale * state.scatter_inv
    return state


def decide(state: SamplerState, config: SamplerConfig, x, t: int = -1,
           lev: float | None = None) -> Decision:
    """Draw U_t and select iff U_t <= s_hat = q0 + (1 - q0) 1{leverage > threshold}."""
    u = float(state.u_rng.random())
    lev = leverage(state, x) if lev is None else lev
    r = state.r_hat
    if config.mode == "bernoulli":
        s_hat = config.q
        selected = u <= s_hat
        branch = "base" if selected else "rejected"
        return Decision(t, selected, lev, r, s_hat, u, branch)
    q0 = config.base_rate
    s_hat = 1.0 if lev > r else q0
    if q0 > 0 and u <= q0:
        branch = "base"
    elif lev > r:
        branch = "leverage"
    else:
        branch = "rejected"
    return Decision(t, u <= s_hat, lev, r, s_hat, u, branch)


def observe_score(state: SamplerState, config: SamplerConfig, lev: float) -> SamplerState:
    """Record a leverage score and refresh the threshold on the configured cadence."""
    state.leverage_scores.add(lev)
    state.steps_since_refresh += 1
    if state.steps_since_refresh >= config.refresh_every:
        update_threshold(state, config)
        state.steps_since_refresh = 0
    return state


def realized_rate(decisions) -> float:
    decisions = list(decisions)
    if not decisions:
        raise ValueError("no decisions")
    return sum(d.selected for d in decisions) / len(decisions)


DECISION_FIELDS = ("t", "selected", "branch", "leverage", "threshold", "s_hat", "uniform_draw")


def write_decisions(path, decisions) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DECISION_FIELDS)
        for d in decisions:
            w.writerow([d.t, int(d.selected), d.branch, repr(d.leverage), repr(d.threshold),
                        repr(d.s_hat), repr(d.uniform_draw)])


def read_decisions(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(Decision(t=int(row["t"]), selected=row["selected"] == "1",
                                leverage=float(row["leverage"]), threshold=float(row["threshold"]),
                                s_hat=float(row["s_hat"]), uniform_draw=float(row["uniform_draw"]),
                                branch=row["branch"]))
    return out
