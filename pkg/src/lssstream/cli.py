"""Command-line driver: simulate, run, bench, power, doptcheck.

Settings resolve as built-in defaults, then ``--config`` (a ``key = value``
file), then command-line flags.  Every config key has a flag of the same name.

Exit codes: 0 success, 1 validation error, 2 data error, 3 doptcheck ranking failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .bench import BenchConfig, derive_seed, run_bench
from .diagnostics import (builtin_candidates, covariate_sampler_for, d_optimality_oracle,
                          paired_gap_se, write_metrics)
from .estimator import batch_ls
from .ingest import IngestError, parse_wide_csv, replay_arrays, table_from_array, write_wide_csv
from .kvfile import format_kv, parse_value, read_kv, write_kv
from .model import (NoiseSpec, SeasonalVarxSpec, SpecError, VarxSpec, generate_random_stable_coefficients,
                    generate_random_stable_seasonal, lagged_design, read_stream_csv, simulate_arrays,
                    spec_from_dict, validate_spec, write_stream_csv)
from .pipeline import OnlineLSSRegressor, run_stream
from .samplers import realized_rate, write_decisions

EXIT_OK, EXIT_VALIDATION, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class DataError(Exception):
    """Input data inconsistent with the requested model."""


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text in (None, "", "none", "None") else int(text)


def _opt_float(text):
    return None if text in (None, "", "none", "None") else float(text)


def _columns(text):
    if isinstance(text, list):
        return [str(c) for c in text]
    text = str(text).strip()
    if text.startswith("["):
        return [str(c) for c in json.loads(text)]
    return [c.strip() for c in text.split(",") if c.strip()]


GLOBAL_KEYS = {"seed": (int, 0), "out": (str, "."), "parallelism": (int, 1)}

MODEL_KEYS = {
    "model": (str, "varx"),
    "K": (int, 10),
    "p1": (int, 1),
    "p2": (int, 1),
    "p2_seasonal": (int, 1),
    "period": (int, 24),
    "target_radius": (_opt_float, None),
    "spec_seed": (_opt_int, None),
    "spec_file": (str, ""),
    "noise": (str, "gaussian"),
    "df": (float, 3.0),
    "burn_in": (_opt_int, None),
    "mu_y": (str, ""),
}

SAMPLER_KEYS = {
    "mode": (str, "relaxed"),
    "q": (float, 0.1),
    "q0": (float, 0.05),
    "u": (float, 0.1),
    "n0": (int, 100),
    "quantile_window": (int, 0),
    "refresh_every": (int, 1),
    "debias_precision": (_bool, True),
    "ridge": (_opt_float, None),
}

COMMAND_KEYS = {
    "simulate": {**MODEL_KEYS, "n": (int, 25000), "format": (str, "stream")},
    "run": {**MODEL_KEYS, **SAMPLER_KEYS, "n": (int, 25000), "stream": (str, ""),
            "cadence": (str, "update"), "reference": (str, "")},
    "bench": {
        "K": (int, 10), "p1": (int, 1), "p2": (int, 1), "target_radius": (float, 0.8),
        "spec_seed": (_opt_int, None), "noise": (str, "gaussian"), "df": (float, 3.0),
        "n": (int, 5000), "n0": (int, 100), "q": (float, 0.1), "q0": (float, 0.05),
        "u": (float, 0.1), "burn_in": (_opt_int, None), "n_replicates": (int, 50),
    },
    "power": {**SAMPLER_KEYS, "csv": (str, ""), "columns": (_columns, None),
              "timestamp_column": (str, "utc_timestamp"), "missing": (str, "forward_fill"),
              "p1": (int, 2), "p2_seasonal": (int, 1), "period": (int, 24),
              "q": (float, 0.05), "q0": (float, 0.025), "u": (float, 0.025), "n0": (int, 500),
              "cadence": (str, "step")},
    "doptcheck": {"p": (int, 2), "q": (float, 0.5), "q0": (float, 0.0),
                  "distribution": (str, "gaussian"), "df": (float, 3.0), "n_mc": (int, 100000)},
}

HELP = {
    "simulate": "simulate a VARX or seasonal stream to CSV",
    "run": "run sampler-assisted online estimation on a stream",
    "bench": "paired replicate benchmark of the three samplers",
    "power": "replay a wide hourly load CSV through the seasonal pipeline",
    "doptcheck": "rank sampling functions by Monte-Carlo det(Gamma)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lssstream", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMAND_KEYS.items():
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", default=None, help="key = value settings file")
        for key, (conv, _) in {**GLOBAL_KEYS, **keys}.items():
            sp.add_argument(f"--{key}", dest=key, type=conv, default=None)
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    keys = {**GLOBAL_KEYS, **COMMAND_KEYS[command]}
    cfg = {k: default for k, (_, default) in keys.items()}
    if args.config:
        for k, v in read_kv(args.config).items():
            if k not in keys:
                raise ValueError(f"unknown config key {k!r} for {command}")
            conv = keys[k][0]
            cfg[k] = conv(v) if v is not None else None
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: str, command: str, cfg: dict, inputs) -> None:
    manifest = {
        "tool": "lssstream",
        "version": __version__,
        "command": command,
        # where results land does not change them
        "config": {k: v for k, v in cfg.items() if k != "out"},
        "inputs": {p: sha256_file(p) for p in inputs if p},
    }
    write_kv(os.path.join(out, "manifest.txt"), manifest)


def _mu_y(cfg, K):
    if not cfg["mu_y"]:
        return None
    mu = parse_value(cfg["mu_y"]) if isinstance(cfg["mu_y"], str) else cfg["mu_y"]
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (K,))
    return mu.copy()


def build_spec(cfg: dict):
    if cfg["spec_file"]:
        with open(cfg["spec_file"], encoding="utf-8") as fh:
            return validate_spec(spec_from_dict(json.load(fh)))
    seed = cfg["spec_seed"]
    if seed is None:
        seed = int(derive_seed(cfg["seed"], 0, "spec").generate_state(1)[0])
    K = cfg["K"]
    if cfg["model"] == "seasonal":
        radius = 0.98 if cfg["target_radius"] is None else cfg["target_radius"]
        return generate_random_stable_seasonal(K, cfg["p1"], cfg["p2_seasonal"], cfg["period"],
                                               radius, seed, mu_y=_mu_y(cfg, K))
    if cfg["model"] != "varx":
        raise ValueError(f"model must be 'varx' or 'seasonal', got {cfg['model']!r}")
    radius = 0.8 if cfg["target_radius"] is None else cfg["target_radius"]
    spec = generate_random_stable_coefficients(K, cfg["p1"], cfg["p2"], radius, seed)
    mu = _mu_y(cfg, K)
    if mu is not None:
        spec.mu_y = mu
    return spec


def _noise(cfg) -> NoiseSpec:
    return NoiseSpec(cfg["noise"], df=cfg["df"] if cfg["noise"] == "student_t" else None)


def _simulate(cfg, spec):
    return simulate_arrays(spec, _noise(cfg), n=cfg["n"], burn_in=cfg["burn_in"],
                           seed=derive_seed(cfg["seed"], 0, "noise"))


def cmd_simulate(cfg: dict) -> int:
    if cfg["n"] <= 0:
        raise ValueError("n must be positive")
    spec = build_spec(cfg)
    sim = _simulate(cfg, spec)
    out = cfg["out"]
    if cfg["format"] == "wide":
        path = os.path.join(out, "load.csv")
        write_wide_csv(path, table_from_array(sim.y))
    elif cfg["format"] == "stream":
        path = os.path.join(out, "stream.csv")
        write_stream_csv(path, sim.y, sim.v)
    else:
        raise ValueError(f"format must be 'stream' or 'wide', got {cfg['format']!r}")
    write_kv(path + ".meta", {"seed": cfg["seed"], "noise": cfg["noise"], "df": cfg["df"],
                              "n": cfg["n"], "spec": spec.to_dict()})
    write_manifest(out, "simulate", cfg, [cfg["spec_file"]])
    print(f"wrote {path} ({sim.y.shape[0]} rows, K={spec.K}, p={spec.p})")
    return EXIT_OK


def _model(cfg, random_state) -> OnlineLSSRegressor:
    return OnlineLSSRegressor(mode=cfg["mode"], q=cfg["q"], q0=cfg["q0"], u=cfg["u"],
                              n_pilot=cfg["n0"], quantile_window=cfg["quantile_window"],
                              refresh_every=cfg["refresh_every"],
                              debias_precision=cfg["debias_precision"], ridge=cfg["ridge"],
                              random_state=random_state)


def full_sample_reference(X, Y) -> np.ndarray:
    """Batch least squares on all rows, centered by the full-sample means."""
    return batch_ls(X - X.mean(axis=0), Y - Y.mean(axis=0))


def _finish_run(cfg, model, recs, b_ref, command, inputs) -> None:
    out = cfg["out"]
    write_metrics(os.path.join(out, "metrics.csv"), recs)
    write_decisions(os.path.join(out, "decisions.csv"), model.decisions_)
    snap = model.rls_state_.snapshot()
    snap["reference_b"] = np.asarray(b_ref).tolist()
    snap["realized_rate"] = realized_rate(model.decisions_)
    with open(os.path.join(out, "snapshot.json"), "w", encoding="utf-8") as fh:
        json.dump(snap, fh, indent=1)
    write_manifest(out, command, cfg, inputs)
    last = recs[-1]
    print(f"mode={cfg['mode']} steps={len(model.decisions_)} selected={model.n_selected_} "
          f"rate={snap['realized_rate']:.4f} est_error={last.est_error:.6g}")


def _sampler_seeds(cfg):
    return derive_seed(cfg["seed"], 0, "u"), derive_seed(cfg["seed"], 0, "j")


def cmd_run(cfg: dict) -> int:
    spec = None
    if cfg["stream"]:
        t, y, v = read_stream_csv(cfg["stream"])
        meta_path = cfg["stream"] + ".meta"
        if cfg["spec_file"]:
            spec = build_spec(cfg)
        elif os.path.exists(meta_path):
            spec = validate_spec(spec_from_dict(read_kv(meta_path)["spec"]))
        if spec is None:
            K = y.shape[1]
            if cfg["model"] == "seasonal":
                spec = SeasonalVarxSpec(K=K, p1=cfg["p1"], p2_seasonal=cfg["p2_seasonal"],
                                        period=cfg["period"], phi=[], theta=[], omega=np.eye(K))
            else:
                spec = VarxSpec(K=K, p1=cfg["p1"], p2=cfg["p2"] if v is not None else 0,
                                phi=[], psi=[], omega=np.eye(K))
            known = False
        else:
            known = True
        if y.shape[1] != spec.K or (spec.has_exog and (v is None or v.shape[1] != spec.K)):
            raise DataError(f"stream has {y.shape[1]} response columns, spec expects K={spec.K}"
                            + (" plus exogenous columns" if spec.has_exog else ""))
        X, Y = lagged_design(y, v, spec)
        times = t[spec.max_lag:]
        inputs = [cfg["stream"], meta_path if os.path.exists(meta_path) else "", cfg["spec_file"]]
    else:
        spec = build_spec(cfg)
        sim = _simulate(cfg, spec)
        X, Y = lagged_design(sim.y, sim.v, spec)
        times = np.arange(spec.max_lag, sim.y.shape[0])
        known = True
        inputs = [cfg["spec_file"]]
    reference = cfg["reference"] or ("true" if known else "full_sample")
    if reference == "true":
        if not known:
            raise ValueError("reference=true needs a spec (stream .meta sidecar or spec_file)")
        b_ref = spec.B
    elif reference == "full_sample":
        b_ref = full_sample_reference(X, Y)
    else:
        raise ValueError(f"reference must be 'true' or 'full_sample', got {reference!r}")
    if X.shape[0] <= cfg["n0"]:
        raise ValueError(f"{X.shape[0]} usable rows, need more than the pilot size {cfg['n0']}")
    model = _model(cfg, _sampler_seeds(cfg))
    recs = run_stream(model, X, Y, b_ref=b_ref, cadence=cfg["cadence"], times=times)
    _finish_run(cfg, model, recs, b_ref, "run", inputs)
    return EXIT_OK


def cmd_bench(cfg: dict) -> int:
    bc = BenchConfig(K=cfg["K"], p1=cfg["p1"], p2=cfg["p2"], target_radius=cfg["target_radius"],
                     spec_seed=cfg["spec_seed"], noise=cfg["noise"], df=cfg["df"], n=cfg["n"],
                     n0=cfg["n0"], q=cfg["q"], q0=cfg["q0"], u=cfg["u"], burn_in=cfg["burn_in"])
    res = run_bench(bc, cfg["n_replicates"], master_seed=cfg["seed"], parallelism=cfg["parallelism"])
    out = cfg["out"]
    with open(os.path.join(out, "bench.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(res.table_csv())
    summary = res.final_summary()
    for m in res.modes:
        summary[f"{m}_mean_rate"] = float(np.mean(res.n_selected[m])) / (bc.n - bc.n0)
    write_kv(os.path.join(out, "bench_summary.txt"), summary)
    write_manifest(out, "bench", {k: v for k, v in cfg.items() if k != "parallelism"}, [])
    print(format_kv(summary), end="")
    return EXIT_OK


def cmd_power(cfg: dict) -> int:
    if not cfg["csv"]:
        raise ValueError("power needs --csv")
    table = parse_wide_csv(cfg["csv"], cfg["timestamp_column"], cfg["columns"], cfg["missing"])
    for event in table.events:
        print(event, file=sys.stderr)
    K = table.values.shape[1]
    spec = SeasonalVarxSpec(K=K, p1=cfg["p1"], p2_seasonal=cfg["p2_seasonal"], period=cfg["period"],
                            phi=[], theta=[], omega=np.eye(K))
    X, Y, times = replay_arrays(table, spec)
    if X.shape[0] <= cfg["n0"]:
        raise DataError(f"{X.shape[0]} rows after warm-up, need more than the pilot size {cfg['n0']}")
    b_ref = full_sample_reference(X, Y)
    model = _model(cfg, _sampler_seeds(cfg))
    recs = run_stream(model, X, Y, b_ref=b_ref, cadence=cfg["cadence"], times=times)
    _finish_run(cfg, model, recs, b_ref, "power", [cfg["csv"]])
    return EXIT_OK


def doptcheck_report(cfg: dict):
    """Ranked candidates plus (passed, gap, gap_se) for the upper-tail rule vs its best rival."""
    p, q, q0 = cfg["p"], cfg["q"], cfg["q0"]
    dist = cfg["distribution"]
    df = cfg["df"] if dist == "student_t" else None
    cands = builtin_candidates(p, q, q0, dist, df)
    ranked = d_optimality_oracle(q, q0, covariate_sampler_for(p, dist, df), cands, cfg["n_mc"],
                                 seed=derive_seed(cfg["seed"], 0, "noise"))
    constrained = [c for c in ranked if c.constrained]
    best = constrained[0]
    rival = constrained[1]
    gap = best.det_gamma - rival.det_gamma
    se = paired_gap_se(best, rival)
    passed = best.name == "upper" and gap > 3 * se
    return ranked, passed, gap, se, rival.name


def cmd_doptcheck(cfg: dict) -> int:
    ranked, passed, gap, se, rival = doptcheck_report(cfg)
    lines = [f"# p={cfg['p']} q={cfg['q']} q0={cfg['q0']} distribution={cfg['distribution']} "
             f"n_mc={cfg['n_mc']}", "rank,name,det_gamma,det_se,q_hat,constrained"]
    for i, c in enumerate(ranked, 1):
        lines.append(f"{i},{c.name},{c.det_gamma!r},{c.det_se!r},{c.q_hat!r},{int(c.constrained)}")
    lines.append(f"# upper vs {rival}: gap={gap!r} se={se!r} passed={passed}")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(cfg["out"], "doptcheck.txt"), "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    write_manifest(cfg["out"], "doptcheck", cfg, [])
    print(text, end="")
    return EXIT_OK if passed else EXIT_CHECK


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "bench": cmd_bench, "power": cmd_power,
            "doptcheck": cmd_doptcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args.command, args)
        os.makedirs(cfg["out"], exist_ok=True)
        return COMMANDS[args.command](cfg)
    except (IngestError, DataError, np.linalg.LinAlgError, FileNotFoundError) as exc:
        print(f"lssstream {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SpecError, ValueError, KeyError) as exc:
        print(f"lssstream {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
