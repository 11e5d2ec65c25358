"""Replicate benchmark: paired Bernoulli / LSS / relaxed-LSS runs on common simulated streams.

Seeds are split as master -> replicate -> purpose with
``SeedSequence(master, spawn_key=(replicate, purpose_index))``, so every mode
in a replicate sees the same stream and the same uniform / precision draws,
and results do not depend on how replicates are scheduled.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .model import NoiseSpec, generate_random_stable_coefficients, lagged_design, simulate_arrays
from .pipeline import OnlineLSSRegressor, run_stream

PURPOSES = {"noise": 0, "u": 1, "j": 2, "spec": 3}
MODES = ("bernoulli", "lss", "relaxed")


def derive_seed(master: int, replicate: int, purpose: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(replicate, PURPOSES[purpose]))


@dataclass
class BenchConfig:
    K: int = 10
    p1: int = 1
    p2: int = 1
    target_radius: float = 0.8
    spec_seed: int | None = None
    noise: str = "gaussian"
    df: float = 3.0
    n: int = 5000
    n0: int = 100
    q: float = 0.1
    q0: float = 0.05
    u: float = 0.1
    burn_in: int | None = None
    modes: tuple = MODES


@dataclass
class BenchResult:
    config: BenchConfig
    errors: dict = field(repr=False)   # mode -> list of per-replicate est_error arrays by tau
    n_selected: dict = field(repr=False)

    @property
    def modes(self):
        return list(self.config.modes)

    @property
    def common_tau(self) -> int:
        """Largest update index reached by every replicate of every mode."""
        return min(len(e) for m in self.modes for e in self.errors[m]) - 1

    def matrix(self, mode: str) -> np.ndarray:
        T = self.common_tau + 1
        return np.array([e[:T] for e in self.errors[mode]])

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau"] + [f"{m}_{s}" for m in self.modes for s in ("mean", "sd")])
        mats = {m: self.matrix(m) for m in self.modes}
        for tau in range(self.common_tau + 1):
            row = [tau]
            for m in self.modes:
                col = mats[m][:, tau]
                row += [repr(float(col.mean())), repr(float(col.std(ddof=1)))]
            w.writerow(row)
        return buf.getvalue()

    def final_summary(self) -> dict:
        """Mean / sd per mode at the final common tau, plus paired differences vs Bernoulli."""
        tau = self.common_tau
        out = {"tau": tau, "n_replicates": len(self.errors[self.modes[0]])}
        finals = {m: self.matrix(m)[:, tau] for m in self.modes}
        for m, v in finals.items():
            out[f"{m}_mean"] = float(v.mean())
            out[f"{m}_sd"] = float(v.std(ddof=1))
        if "bernoulli" in finals:
            for m in self.modes:
                if m == "bernoulli":
                    continue
                d = finals["bernoulli"] - finals[m]
                out[f"gap_bernoulli_minus_{m}"] = float(d.mean())
                out[f"gap_bernoulli_minus_{m}_se"] = float(d.std(ddof=1) / np.sqrt(len(d)))
        return out


def bench_spec(cfg: BenchConfig, master_seed: int):
    seed = cfg.spec_seed
    if seed is None:
        seed = int(derive_seed(master_seed, 0, "spec").generate_state(1)[0])
    return generate_random_stable_coefficients(cfg.K, cfg.p1, cfg.p2, cfg.target_radius, seed)


def run_replicate(cfg: BenchConfig, master_seed: int, rep: int, spec=None):
    spec = bench_spec(cfg, master_seed) if spec is None else spec
    noise = NoiseSpec(cfg.noise, df=cfg.df if cfg.noise == "student_t" else None)
    sim = simulate_arrays(spec, noise, n=cfg.n + spec.max_lag, burn_in=cfg.burn_in,
                          seed=derive_seed(master_seed, rep, "noise"))
    X, Y = lagged_design(sim.y, sim.v, spec)
    B = spec.B
    errors, counts = {}, {}
    for mode in cfg.modes:
        seeds = (derive_seed(master_seed, rep, "u"), derive_seed(master_seed, rep, "j"))
        model = OnlineLSSRegressor(mode=mode, q=cfg.q, q0=cfg.q0, u=cfg.u, n_pilot=cfg.n0,
                                   random_state=seeds, record_decisions=False)
        recs = run_stream(model, X, Y, b_ref=B, cadence="update")
        errors[mode] = np.array([r.est_error for r in recs])
        counts[mode] = model.n_selected_
    return errors, counts


def _run_one(args):
    cfg, master_seed, rep = args
    return run_replicate(cfg, master_seed, rep)


def run_bench(cfg: BenchConfig, n_replicates: int, master_seed: int = 0,
              parallelism: int = 1) -> BenchResult:
    if n_replicates < 2:
        raise ValueError("need at least 2 replicates")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    cfg = replace(cfg, modes=tuple(cfg.modes))
    jobs = [(cfg, master_seed, rep) for rep in range(n_replicates)]
    if parallelism == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as ex:
            results = list(ex.map(_run_one, jobs, chunksize=max(1, n_replicates // (4 * parallelism))))
    errors = {m: [r[0][m] for r in results] for m in cfg.modes}
    counts = {m: [r[1][m] for r in results] for m in cfg.modes}
    return BenchResult(cfg, errors, counts)
