"""VARX / seasonal-VARX model specifications, simulation and lag embedding.

The centered form used throughout the package is

    y_t - mu_y = B' (x_t - mu_x) + e_t,

where ``x_t`` stacks lagged responses (and lagged exogenous inputs for VARX,
or seasonal lags for the seasonal model) and ``B`` is the ``p x K`` stack of
the transposed coefficient matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

EIGEN_FLOOR = 1e-12


class SpecError(ValueError):
    """Base class for invalid model specifications."""


class DimensionError(SpecError):
    pass


class NotPositiveDefiniteError(SpecError):
    pass


class NonStationaryError(SpecError):
    pass


@dataclass
class VarxSpec:
    K: int
    p1: int
    p2: int
    phi: list
    psi: list
    omega: np.ndarray
    mu_y: np.ndarray | None = None
    mu_v: np.ndarray | None = None

    def __post_init__(self):
        self.phi = [np.atleast_2d(np.asarray(m, dtype=float)) for m in self.phi]
        self.psi = [np.atleast_2d(np.asarray(m, dtype=float)) for m in self.psi]
        self.omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        self.mu_y = np.zeros(self.K) if self.mu_y is None else np.asarray(self.mu_y, dtype=float).ravel()
        self.mu_v = np.zeros(self.K) if self.mu_v is None else np.asarray(self.mu_v, dtype=float).ravel()

    @property
    def p(self) -> int:
        return self.K * (self.p1 + self.p2)

    @property
    def max_lag(self) -> int:
        return max(self.p1, self.p2, 1)

    @property
    def has_exog(self) -> bool:
        return self.p2 > 0

    def ar_lags(self) -> dict:
        """Map lag -> K x K coefficient of the autoregressive part."""
        return {i + 1: m for i, m in enumerate(self.phi)}

    @property
    def mu_x(self) -> np.ndarray:
        return np.concatenate([np.tile(self.mu_y, self.p1), np.tile(self.mu_v, self.p2)])

    @property
    def B(self) -> np.ndarray:
        """The p x K coefficient stack with y_t - mu_y = B'(x_t - mu_x) + e_t."""
        return np.hstack(list(self.phi) + list(self.psi)).T.copy()

    def to_dict(self) -> dict:
        return {
            "kind": "varx", "K": self.K, "p1": self.p1, "p2": self.p2,
            "phi": [m.tolist() for m in self.phi], "psi": [m.tolist() for m in self.psi],
            "omega": self.omega.tolist(), "mu_y": self.mu_y.tolist(), "mu_v": self.mu_v.tolist(),
        }


@dataclass
class SeasonalVarxSpec:
    K: int
    p1: int
    p2_seasonal: int
    phi: list
    theta: list
    omega: np.ndarray
    period: int = 24
    mu_y: np.ndarray | None = None

    def __post_init__(self):
        self.phi = [np.atleast_2d(np.asarray(m, dtype=float)) for m in self.phi]
        self.theta = [np.atleast_2d(np.asarray(m, dtype=float)) for m in self.theta]
        self.omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        self.mu_y = np.zeros(self.K) if self.mu_y is None else np.asarray(self.mu_y, dtype=float).ravel()

    @property
    def p(self) -> int:
        return self.K * (self.p1 + self.p2_seasonal)

    @property
    def max_lag(self) -> int:
        return max(self.p1, self.period * self.p2_seasonal, 1)

    @property
    def has_exog(self) -> bool:
        return False

    def ar_lags(self) -> dict:
        lags: dict = {}
        for i, m in enumerate(self.phi):
            lags[i + 1] = lags.get(i + 1, 0) + m
        for i, m in enumerate(self.theta):
            lag = self.period * (i + 1)
            lags[lag] = lags.get(lag, 0) + m
        return lags

    @property
    def mu_x(self) -> np.ndarray:
        return np.tile(self.mu_y, self.p1 + self.p2_seasonal)

    @property
    def B(self) -> np.ndarray:
        return np.hstack(list(self.phi) + list(self.theta)).T.copy()

    def to_dict(self) -> dict:
        return {
            "kind": "seasonal", "K": self.K, "p1": self.p1, "p2_seasonal": self.p2_seasonal,
            "period": self.period, "phi": [m.tolist() for m in self.phi],
            "theta": [m.tolist() for m in self.theta], "omega": self.omega.tolist(),
            "mu_y": self.mu_y.tolist(),
        }


def spec_from_dict(d: dict):
    if d.get("kind", "varx") == "seasonal":
        return SeasonalVarxSpec(
            K=int(d["K"]), p1=int(d["p1"]), p2_seasonal=int(d["p2_seasonal"]),
            period=int(d["period"]), phi=d["phi"], theta=d["theta"], omega=d["omega"],
            mu_y=d.get("mu_y"),
        )
    return VarxSpec(
        K=int(d["K"]), p1=int(d["p1"]), p2=int(d["p2"]), phi=d["phi"], psi=d["psi"],
        omega=d["omega"], mu_y=d.get("mu_y"), mu_v=d.get("mu_v"),
    )


@dataclass
class NoiseSpec:
    family: str = "gaussian"
    df: float | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in ("gaussian", "student_t"):
            raise SpecError(f"unknown noise family {self.family!r}")
        if self.family == "student_t":
            if self.df is None or not self.df > 2:
                raise SpecError("student_t noise needs df > 2")
        if self.scale is not None:
            self.scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
            _check_spd(self.scale, "scale")


@dataclass(frozen=True)
class StreamPoint:
    t: int
    y: np.ndarray
    v: np.ndarray | None = None


@dataclass(frozen=True)
class Covariate:
    x: np.ndarray
    t: int


def _check_spd(m: np.ndarray, name: str) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")
    if not np.allclose(m, m.T, atol=1e-10, rtol=1e-10):
        raise NotPositiveDefiniteError(f"{name} is not symmetric")
    if not np.all(np.isfinite(m)) or np.linalg.eigvalsh(m).min() <= 0:
        raise NotPositiveDefiniteError(f"{name} is not positive definite")


def companion_matrix(K: int, lags: dict) -> np.ndarray:
    """Companion matrix of y_t = sum_l A_l y_{t-l} (lags absent from ``lags`` are zero)."""
    L = max(lags) if lags else 1
    comp = np.zeros((K * L, K * L))
    for lag, m in lags.items():
        comp[:K, (lag - 1) * K:lag * K] = m
    if L > 1:
        comp[K:, :-K] = np.eye(K * (L - 1))
    return comp


def spectral_radius(spec) -> float:
    lags = spec.ar_lags()
    if not lags:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(spec.K, lags)))))


def validate_spec(spec):
    """Return ``spec`` unchanged if it is dimensionally sound, PD and stationary."""
    K = spec.K
    if not isinstance(K, (int, np.integer)) or K <= 0:
        raise DimensionError(f"K must be a positive integer, got {K!r}")
    if isinstance(spec, SeasonalVarxSpec):
        groups = (("phi", spec.phi, spec.p1), ("theta", spec.theta, spec.p2_seasonal))
        if spec.period <= 0:
            raise DimensionError("period must be positive")
    else:
        groups = (("phi", spec.phi, spec.p1), ("psi", spec.psi, spec.p2))
        if spec.mu_v.shape != (K,):
            raise DimensionError(f"mu_v must have length {K}")
    for name, mats, order in groups:
        if order < 0 or len(mats) != order:
            raise DimensionError(f"expected {order} {name} matrices, got {len(mats)}")
        for m in mats:
            if m.shape != (K, K):
                raise DimensionError(f"{name} matrix has shape {m.shape}, expected {(K, K)}")
            if not np.all(np.isfinite(m)):
                raise DimensionError(f"{name} matrix has non-finite entries")
    if spec.mu_y.shape != (K,):
        raise DimensionError(f"mu_y must have length {K}")
    if spec.omega.shape != (K, K):
        raise DimensionError(f"omega has shape {spec.omega.shape}, expected {(K, K)}")
    _check_spd(spec.omega, "omega")
    rho = spectral_radius(spec)
    if rho >= 1:
        raise NonStationaryError(f"companion spectral radius {rho:.6g} >= 1")
    return spec


def _random_omega(K: int, rng: np.random.Generator, eps: float = 0.1) -> np.ndarray:
    a = rng.standard_normal((K, K))
    omega = a @ a.T + eps * np.eye(K)
    return (omega + omega.T) / 2


def generate_random_stable_coefficients(K: int, p1: int, p2: int, target_radius: float,
                                        seed: int) -> VarxSpec:
    """Seeded random stationary VARX spec with companion radius <= ``target_radius``.

    Entries are i.i.d. N(0, 1) (Psi scaled by 1/sqrt(K)).  The lag-i
    autoregressive matrix is multiplied by c**i with c = target/radius, which
    scales every companion eigenvalue by exactly c.
    """
    if not 0 < target_radius < 1:
        raise ValueError("target_radius must lie in (0, 1)")
    if K <= 0 or p1 < 0 or p2 < 0:
        raise ValueError("K must be positive and orders non-negative")
    rng = np.random.default_rng(seed)
    phi = [rng.standard_normal((K, K)) for _ in range(p1)]
    psi = [rng.standard_normal((K, K)) / np.sqrt(K) for _ in range(p2)]
    omega = _random_omega(K, rng)
    spec = VarxSpec(K=K, p1=p1, p2=p2, phi=phi, psi=psi, omega=omega)
    rho = spectral_radius(spec)
    if rho > 0:
        c = target_radius / rho
        spec.phi = [m * c ** (i + 1) for i, m in enumerate(spec.phi)]
        while spectral_radius(spec) > target_radius + 1e-9:
            spec.phi = [m * (1 - 1e-9) ** (i + 1) for i, m in enumerate(spec.phi)]
    return validate_spec(spec)


def generate_random_stable_seasonal(K: int, p1: int, p2_seasonal: int, period: int,
                                    target_radius: float, seed: int,
                                    mu_y=None) -> SeasonalVarxSpec:
    """Seeded random stationary seasonal spec.

    All coefficient matrices share one scale factor, found by bisection so the
    companion radius lands just below ``target_radius`` (seasonal roots sit
    close to the unit circle, so a lag-power rescaling would wipe them out).
    """
    if not 0 < target_radius < 1:
        raise ValueError("target_radius must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    phi = [rng.standard_normal((K, K)) / np.sqrt(K) for _ in range(p1)]
    theta = [rng.standard_normal((K, K)) / np.sqrt(K) for _ in range(p2_seasonal)]
    omega = _random_omega(K, rng)
    base = SeasonalVarxSpec(K=K, p1=p1, p2_seasonal=p2_seasonal, phi=phi, theta=theta,
                            omega=omega, period=period, mu_y=mu_y)

    def scaled(s):
        return SeasonalVarxSpec(K=K, p1=p1, p2_seasonal=p2_seasonal, period=period,
                                phi=[s * m for m in phi], theta=[s * m for m in theta],
                                omega=omega, mu_y=base.mu_y)

    lo, hi = 0.0, 1.0
    while spectral_radius(scaled(hi)) < target_radius:
        hi *= 2
    for _ in range(60):
        mid = (lo + hi) / 2
        if spectral_radius(scaled(mid)) <= target_radius:
            lo = mid
        else:
            hi = mid
    return validate_spec(scaled(lo))


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


_SQRT_CACHE: dict = {}


def symmetric_sqrt(sigma: np.ndarray) -> np.ndarray:
    """Symmetric square root via eigendecomposition, cached per distinct matrix."""
    sigma = np.asarray(sigma, dtype=float)
    key = (sigma.shape, sigma.tobytes())
    root = _SQRT_CACHE.get(key)
    if root is None:
        _check_spd(sigma, "sigma")
        w, v = np.linalg.eigh(sigma)
        root = (v * np.sqrt(np.maximum(w, EIGEN_FLOOR))) @ v.T
        if len(_SQRT_CACHE) > 256:
            _SQRT_CACHE.clear()
        _SQRT_CACHE[key] = root
    return root


def sample_elliptical(mu, sigma, generating: str | NoiseSpec = "gaussian", rng=None,
                      size: int | None = None, df: float | None = None) -> np.ndarray:
    """Draw from EC_p(mu, sigma, nu) for the Gaussian or multivariate-t generator.

    Returns a p-vector when ``size`` is None, otherwise a ``size x p`` array.
    ``rng`` may be a Generator or an integer seed.
    """
    if isinstance(generating, NoiseSpec):
        family, df = generating.family, generating.df
    else:
        family = generating
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    root = symmetric_sqrt(sigma)
    if root.shape[0] != mu.shape[0]:
        raise DimensionError("mu and sigma dimensions differ")
    rng = np.random.default_rng(rng)
    n = 1 if size is None else size
    z = rng.standard_normal((n, mu.shape[0])) @ root
    if family == "student_t":
        if df is None or df <= 2:
            raise SpecError("student_t needs df > 2")
        z /= np.sqrt(rng.chisquare(df, n) / df)[:, None]
    elif family != "gaussian":
        raise SpecError(f"unknown family {family!r}")
    out = mu + z
    return out[0] if size is None else out


@dataclass
class SimulatedStream:
    """Raw arrays behind a simulated stream (rows indexed by t = 0..n-1)."""
    y: np.ndarray
    v: np.ndarray | None
    e: np.ndarray
    spec: object = field(repr=False)

    def points(self) -> list:
        if self.v is None:
            return [StreamPoint(t, self.y[t]) for t in range(len(self.y))]
        return [StreamPoint(t, self.y[t], self.v[t]) for t in range(len(self.y))]


def simulate_arrays(spec, noise: NoiseSpec | None = None, n: int = 1000,
                    burn_in: int | None = None, seed=None) -> SimulatedStream:
    """Simulate the recursion and return the kept arrays including the injected noise."""
    if n <= 0:
        raise ValueError("n must be positive")
    validate_spec(spec)
    noise = NoiseSpec() if noise is None else noise
    K, L = spec.K, spec.max_lag
    burn_in = 10 * L if burn_in is None else burn_in
    if burn_in < L:
        raise ValueError(f"burn_in must be at least the maximum lag {L}")
    total = n + burn_in
    scale = spec.omega if noise.scale is None else noise.scale
    e_rng, v_rng = (np.random.default_rng(s) for s in as_seed_sequence(seed).spawn(2))
    e = sample_elliptical(np.zeros(K), scale, noise.family, e_rng, size=total, df=noise.df)
    lags = sorted(spec.ar_lags().items())
    z = np.zeros((total, K))
    if spec.has_exog:
        vc = sample_elliptical(np.zeros(K), np.eye(K), noise.family, v_rng, size=total, df=noise.df)
        exog = [(j + 1, m) for j, m in enumerate(spec.psi)]
    else:
        vc, exog = None, []
    for t in range(total):
        acc = e[t].copy()
        for lag, m in lags:
            if t - lag >= 0:
                acc += m @ z[t - lag]
        for lag, m in exog:
            if t - lag >= 0:
                acc += m @ vc[t - lag]
        z[t] = acc
    y = z[burn_in:] + spec.mu_y
    v = None if vc is None else vc[burn_in:] + spec.mu_v
    return SimulatedStream(y=y, v=v, e=e[burn_in:], spec=spec)


def simulate(spec, noise: NoiseSpec | None = None, n: int = 1000, burn_in: int | None = None,
             seed=None) -> list:
    """Simulate ``n`` stream points after discarding ``burn_in`` (default 10 x max lag)."""
    return simulate_arrays(spec, noise, n, burn_in, seed).points()


def write_stream_csv(path, y, v=None) -> None:
    """Header ``t,y1..yK[,v1..vK]``; floats written with repr (round-trip exact)."""
    y = np.asarray(y, dtype=float)
    K = y.shape[1]
    header = ["t"] + [f"y{k + 1}" for k in range(K)]
    if v is not None:
        v = np.asarray(v, dtype=float)
        header += [f"v{k + 1}" for k in range(v.shape[1])]
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for t in range(y.shape[0]):
            row = y[t] if v is None else np.concatenate([y[t], v[t]])
            fh.write(",".join([str(t)] + [repr(float(a)) for a in row]) + "\n")


def read_stream_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Inverse of write_stream_csv: returns (t, y, v or None)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "t":
            raise ValueError(f"{path}: first column must be 't'")
        ycols = [i for i, h in enumerate(header) if h.startswith("y")]
        vcols = [i for i, h in enumerate(header) if h.startswith("v")]
        if not ycols or len(ycols) + len(vcols) + 1 != len(header):
            raise ValueError(f"{path}: unexpected header {header}")
        if vcols and len(vcols) != len(ycols):
            raise ValueError(f"{path}: {len(ycols)} response columns but {len(vcols)} exogenous")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[0] == 0 or data.shape[1] != len(header):
        raise ValueError(f"{path}: no rows or ragged rows")
    t = data[:, 0].astype(int)
    if np.any(np.diff(t) <= 0):
        raise ValueError(f"{path}: t is not strictly increasing")
    return t, data[:, ycols], (data[:, vcols] if vcols else None)


def covariate_lags(spec) -> tuple[list, list]:
    """Response lags and exogenous lags stacked into x_t, in stacking order."""
    if isinstance(spec, SeasonalVarxSpec):
        ylags = list(range(1, spec.p1 + 1)) + [spec.period * (i + 1) for i in range(spec.p2_seasonal)]
        return ylags, []
    return list(range(1, spec.p1 + 1)), list(range(1, spec.p2 + 1))


def embed_covariate(history: Sequence[StreamPoint], spec) -> Covariate:
    """Stack lagged responses (then exogenous inputs or seasonal lags) into x_t.

    ``history[-1]`` is the point at time t-1.
    """
    ylags, vlags = covariate_lags(spec)
    need = max(ylags + vlags + [1])
    if len(history) < need:
        raise ValueError(f"need {need} points of history, got {len(history)}")
    parts = [np.asarray(history[-lag].y, dtype=float) for lag in ylags]
    for lag in vlags:
        v = history[-lag].v
        if v is None:
            raise ValueError("exogenous input missing from history")
        parts.append(np.asarray(v, dtype=float))
    x = np.concatenate(parts) if parts else np.zeros(0)
    return Covariate(x=x, t=int(history[-1].t) + 1)


def lagged_design(y, v, spec) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized embedding: covariates X and aligned responses Y for t >= max lag."""
    y = np.asarray(y, dtype=float)
    ylags, vlags = covariate_lags(spec)
    L = max(ylags + vlags + [1])
    n = y.shape[0]
    if n <= L:
        raise ValueError(f"series of length {n} too short for maximum lag {L}")
    blocks = [y[L - lag:n - lag] for lag in ylags]
    if vlags:
        v = np.asarray(v, dtype=float)
        blocks += [v[L - lag:n - lag] for lag in vlags]
    return np.hstack(blocks), y[L:]


def stream_residuals(y, v, spec) -> np.ndarray:
    """e_t = y_t - mu_y - B'(x_t - mu_x) for t >= max lag."""
    X, Y = lagged_design(y, v, spec)
    return (Y - spec.mu_y) - (X - spec.mu_x) @ spec.B


class LagEmbedder(TransformerMixin, BaseEstimator):
    """Turn a response matrix (optionally with exogenous columns appended) into lagged covariates.

    ``transform`` returns one covariate row per input row from the maximum lag on.
    """

    def __init__(self, p1=1, p2=0, period=None, p2_seasonal=0):
        self.p1 = p1
        self.p2 = p2
        self.period = period
        self.p2_seasonal = p2_seasonal

    def _spec_stub(self, K):
        if self.period:
            return SeasonalVarxSpec(K=K, p1=self.p1, p2_seasonal=self.p2_seasonal,
                                    period=self.period, phi=[], theta=[], omega=np.eye(K))
        return VarxSpec(K=K, p1=self.p1, p2=self.p2, phi=[], psi=[], omega=np.eye(K))

    def fit(self, Z, y=None):
        Z = check_array(Z)
        K = Z.shape[1] // 2 if (self.p2 and not self.period) else Z.shape[1]
        if self.p2 and not self.period and Z.shape[1] != 2 * K:
            raise ValueError("with exogenous lags, pass [y, v] with equal widths")
        self.n_outputs_ = K
        self.max_lag_ = self._spec_stub(K).max_lag
        self.n_features_in_ = Z.shape[1]
        return self

    def transform(self, Z):
        check_is_fitted(self, "n_outputs_")
        Z = check_array(Z)
        if Z.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {Z.shape[1]}")
        K = self.n_outputs_
        v = Z[:, K:] if Z.shape[1] > K else None
        X, _ = lagged_design(Z[:, :K], v, self._spec_stub(K))
        return X

    def targets(self, Z) -> np.ndarray:
        """Responses aligned with the rows of ``transform(Z)``."""
        check_is_fitted(self, "n_outputs_")
        Z = check_array(Z)
        return Z[self.max_lag_:, :self.n_outputs_]
