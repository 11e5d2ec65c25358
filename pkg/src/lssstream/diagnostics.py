"""Design-matrix diagnostics: Monte-Carlo Gamma(s), asymptotic precision, D-optimality ranking,
asymptotic-normality checks and the relative error metrics."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .model import sample_elliptical
from .samplers import chi_square_threshold

N_BATCHES = 20


@dataclass
class DesignSummary:
    gamma_hat: np.ndarray
    q_hat: float
    det_gamma: float
    n_mc: int
    det_se: float = float("nan")
    batch_dets: np.ndarray = field(default=None, repr=False)

    def to_kv(self) -> str:
        return "\n".join([
            f"q_hat = {self.q_hat!r}", f"det_gamma = {self.det_gamma!r}",
            f"det_se = {self.det_se!r}", f"n_mc = {self.n_mc}",
            f"gamma_hat = {json.dumps(self.gamma_hat.tolist())}",
        ])


@dataclass
class MetricRecord:
    tau: int
    t: int
    est_error: float
    pred_error: float
    n_selected: int


def _batched(n: int, n_batches: int = N_BATCHES):
    edges = np.linspace(0, n, min(n_batches, n) + 1).astype(int)
    return list(zip(edges[:-1], edges[1:]))


def _gamma_from(s: np.ndarray, d: np.ndarray):
    """Full-sample Gamma estimate plus the per-batch determinants."""
    n = len(s)
    gamma = (d * s[:, None]).T @ d / n
    dets = []
    for lo, hi in _batched(n):
        g = (d[lo:hi] * s[lo:hi, None]).T @ d[lo:hi] / (hi - lo)
        dets.append(np.linalg.det(g))
    dets = np.asarray(dets)
    se = float(dets.std(ddof=1) / np.sqrt(len(dets))) if len(dets) > 1 else float("nan")
    return (gamma + gamma.T) / 2, dets, se


def estimate_gamma(sampling_fn: Callable, covariate_sampler: Callable, mu_x, n_mc: int,
                   seed=None) -> DesignSummary:
    """Monte-Carlo E[s(x - mu)(x - mu)(x - mu)'] with 20-fold batched standard error of det.

    ``sampling_fn`` maps an (n, p) array of centered covariates to n values in [0, 1];
    ``covariate_sampler(n, rng)`` returns an (n, p) array of draws.
    """
    if n_mc <= 0:
        raise ValueError("n_mc must be positive")
    rng = np.random.default_rng(seed)
    d = np.asarray(covariate_sampler(n_mc, rng), dtype=float) - np.asarray(mu_x, dtype=float)
    s = np.broadcast_to(np.asarray(sampling_fn(d), dtype=float), (n_mc,))
    gamma, dets, se = _gamma_from(s, d)
    return DesignSummary(gamma_hat=gamma, q_hat=float(s.mean()), det_gamma=float(np.linalg.det(gamma)),
                         n_mc=n_mc, det_se=se, batch_dets=dets)


def precision_matrix(omega, gamma, q: float) -> np.ndarray:
    """Omega^{-1} kron (Gamma / q), for vec() stacking the columns of B left to right."""
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    if q <= 0:
        raise ValueError("q must be positive")
    for name, m in (("omega", omega), ("gamma", gamma)):
        if np.linalg.matrix_rank(m) < m.shape[0]:
            raise np.linalg.LinAlgError(f"{name} is singular")
    return np.kron(np.linalg.inv(omega), gamma / q)


def vec(b) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(b).reshape(-1, order="F")


# Leverage distributions for the built-in covariate families (standard scatter).
def leverage_quantile(p: int, prob_exceed: float, family: str = "gaussian", df=None) -> float:
    """r with P(leverage > r) = prob_exceed for EC_p(0, I) covariates."""
    if prob_exceed >= 1:
        return 0.0
    if prob_exceed <= 0:
        return np.inf
    if family == "gaussian":
        return chi_square_threshold(p, prob_exceed)
    if family == "student_t":
        return p * stats.f.isf(prob_exceed, p, df)
    raise ValueError(f"unknown family {family!r}")


def covariate_sampler_for(p: int, family: str = "gaussian", df=None, sigma=None):
    sigma = np.eye(p) if sigma is None else np.asarray(sigma, dtype=float)

    def draw(n, rng):
        return sample_elliptical(np.zeros(p), sigma, family, rng, size=n, df=df)
    return draw


@dataclass
class Candidate:
    name: str
    fn: Callable
    constrained: bool = True


def builtin_candidates(p: int, q: float, q0: float = 0.0, family: str = "gaussian", df=None,
                       sigma=None) -> list:
    """Sampling functions calibrated to rate q.

    Leverage-shaped candidates are mixed with the base rate: s = q0 + (1 - q0) 1_A
    with P(A) = (q - q0) / (1 - q0).  ``upper`` is the D-optimal solution.  When
    q0 > 0 the unconstrained LSS rule is added as a reference (``constrained=False``).
    """
    if not 0 < q <= 1 or not 0 <= q0 <= q:
        raise ValueError(f"invalid rates q={q}, q0={q0}")
    prec = np.linalg.inv(np.eye(p) if sigma is None else np.asarray(sigma, dtype=float))
    tail = 0.0 if q0 >= q else (q - q0) / (1 - q0)

    def lev(d):
        return np.einsum("ij,jk,ik->i", d, prec, d)

    def quant(prob):
        return leverage_quantile(p, prob, family, df)

    r_up = quant(tail)
    r_low = quant(1 - tail)
    band_lo, band_hi = quant((1 + tail) / 2), quant((1 - tail) / 2)

    def mix(ind):
        return lambda d: q0 + (1 - q0) * ind(lev(d))

    cands = [
        Candidate("upper", mix(lambda l: (l > r_up).astype(float))),
        Candidate("bernoulli", lambda d: np.full(len(d), q)),
        Candidate("band", mix(lambda l: ((l > band_lo) & (l <= band_hi)).astype(float))),
        Candidate("lower", mix(lambda l: (l <= r_low).astype(float))),
    ]
    if q0 > 0:
        r_lss = quant(q)
        cands.append(Candidate("lss", lambda d: (lev(d) > r_lss).astype(float), constrained=False))
    return cands


@dataclass
class RankedCandidate:
    name: str
    det_gamma: float
    det_se: float
    q_hat: float
    constrained: bool
    batch_dets: np.ndarray = field(repr=False, default=None)


def d_optimality_oracle(q: float, q0: float, covariate_sampler: Callable, candidates, n_mc: int,
                        seed=None, rate_tol: float = 0.01) -> list:
    """Evaluate det Gamma(s) for each candidate on common draws; sorted descending."""
    if not 0 < q <= 1 or not 0 <= q0 <= q:
        raise ValueError(f"invalid rates q={q}, q0={q0}")
    if n_mc <= 0:
        raise ValueError("n_mc must be positive")
    rng = np.random.default_rng(seed)
    d = np.asarray(covariate_sampler(n_mc, rng), dtype=float)
    out = []
    for cand in candidates:
        s = np.broadcast_to(np.asarray(cand.fn(d), dtype=float), (n_mc,))
        if abs(s.mean() - q) > rate_tol:
            raise ValueError(f"candidate {cand.name!r} has rate {s.mean():.4f}, expected {q}")
        gamma, dets, se = _gamma_from(s, d)
        out.append(RankedCandidate(cand.name, float(np.linalg.det(gamma)), se, float(s.mean()),
                                   cand.constrained, dets))
    out.sort(key=lambda c: (-c.det_gamma, c.name))
    return out


def paired_gap_se(a: RankedCandidate, b: RankedCandidate) -> float:
    """Batched standard error of det(a) - det(b) on common draws."""
    diff = a.batch_dets - b.batch_dets
    return float(diff.std(ddof=1) / np.sqrt(len(diff)))


@dataclass
class NormalityReport:
    n_replicates: int
    empirical_cov: np.ndarray
    target_cov: np.ndarray
    rel_frobenius: float
    variance_ratios: np.ndarray

    def to_kv(self) -> str:
        return "\n".join([
            f"n_replicates = {self.n_replicates}", f"rel_frobenius = {self.rel_frobenius!r}",
            f"variance_ratios = {json.dumps(self.variance_ratios.tolist())}",
        ])


def normality_check(replicate_estimates, b_true, precision, min_replicates: int = 50) -> NormalityReport:
    """Compare the spread of sqrt(N) vec(B_hat - B) across replicates with P^{-1}."""
    reps = list(replicate_estimates)
    if len(reps) < min_replicates:
        raise ValueError(f"need at least {min_replicates} replicates, got {len(reps)}")
    b_true = np.asarray(b_true, dtype=float)
    z = np.array([np.sqrt(n) * vec(np.asarray(b) - b_true) for b, n in reps])
    emp = z.T @ z / len(reps)
    target = np.linalg.inv(np.asarray(precision, dtype=float))
    rel = float(np.linalg.norm(emp - target) / np.linalg.norm(target))
    return NormalityReport(len(reps), emp, target, rel, np.diag(emp) / np.diag(target))


def estimation_error(b_hat, b_ref) -> float:
    b_ref = np.asarray(b_ref, dtype=float)
    denom = np.linalg.norm(b_ref)
    if denom == 0:
        raise ValueError("reference coefficients are all zero")
    return float(np.linalg.norm(np.asarray(b_hat) - b_ref) / denom)


def prediction_error(y_hat, y) -> float:
    y = np.asarray(y, dtype=float)
    denom = np.linalg.norm(y)
    if denom == 0:
        raise ValueError("observed response is all zero")
    return float(np.linalg.norm(np.asarray(y_hat) - y) / denom)


METRIC_FIELDS = ("tau", "t", "est_error", "pred_error", "n_selected")


def write_metrics(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in records:
            w.writerow([r.tau, r.t, repr(r.est_error), repr(r.pred_error), r.n_selected])


def summary_json(obj) -> str:
    d = asdict(obj)
    return json.dumps({k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()},
                      indent=1)
