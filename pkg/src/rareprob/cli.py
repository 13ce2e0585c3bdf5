"""Experiment harness: run methods over problems and repetitions, and emit results.

Subcommands
-----------
run     Execute methods x repetitions on one problem. Writes `runs.csv` (one
        row per method per repetition) and `summary.json` (medians, IQRs,
        band-containment rates against the reference failure probability,
        and a reproducibility hash) into the output directory.
oracle  Brute-force Monte Carlo estimate of the true failure probability of
        an analytic problem; prints alpha +- sigma and writes `oracle.json`.
trace   Per-check Stage-1 stopping trace for one seed: n, alpha, sigma,
        successive difference, and decision, as `trace.csv`.

Configuration is a JSON object; command-line flags override file values.
Recognized keys (all optional unless noted):

    problem        name ("herbie", "ishigami", "hartmann6", "plateau4") or
                   an object for an external line-protocol simulator:
                   {"command": [...], "dim": d, "t": thr,
                    "orientation": "FAIL_ABOVE"|"FAIL_BELOW",
                    "lower": [...], "upper": [...],
                    "marginals": [{"type": "uniform", "a":, "b":} |
                                  {"type": "truncated_normal", "mu":,
                                   "sigma":, "a":, "b":}, ...],
                    "alpha_ref": optional reference alpha}
    methods        list of tags from {HYBRID_MC, EXHAUSTIVE_CL,
                   TWO_STAGE_PROX, SIIS, SIIS_UCB, SURR_MC, BRUTE_MC},
                   or the string "all" for the five compared designs
    reps           repetitions (default 1); repetition r uses seed
                   base_seed XOR r, so adding reps never reshuffles earlier
                   ones
    base_seed      64-bit base seed (default 0)
    M              Monte Carlo pool size (default: problem table value)
    n0, N, check_interval, min_failures, min_n_factor, stage2_batch
                   budget/stopping overrides (defaults: problem table)
    reading        "sd" | "variance" distribution-parameter reading
                   (default: the calibrated choice)
    oracle_M       sample size for the oracle subcommand
    output_dir     where result files go (default "results")
    workers        parallel repetition workers (default 1); numerics are
                   worker-count invariant

CSV schema (fixed order): problem, method, rep, seed, n0, n_chosen, B,
sim_evals, alpha_hat, sigma_hat, stop_reason, status, wall_ms. A simulator
fault yields rows with status FAULT and blank numeric fields. Re-running an
identical configuration reproduces all result files byte-for-byte except
the wall_ms column, which is excluded from the reproducibility hash.

Exit codes: 0 success, 2 configuration error, 3 simulator fault.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .controller import BudgetConfig, run_method_suite, run_stage1, _init_run
from .estimators import Method, mc_std_err
from .rng import RngStream
from .testbed import (
    PROBLEM_NAMES,
    BenchmarkProblem,
    ExternalSimulator,
    SimulatorFault,
    make_problem,
    oracle_alpha,
)
from .distributions import BoxDomain, InputDistribution, TruncatedNormal, Uniform

CSV_COLUMNS = (
    "problem", "method", "rep", "seed", "n0", "n_chosen", "B",
    "sim_evals", "alpha_hat", "sigma_hat", "stop_reason", "status", "wall_ms",
)

COMPARED_METHODS = ("HYBRID_MC", "EXHAUSTIVE_CL", "TWO_STAGE_PROX", "SIIS", "SIIS_UCB")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAULT = 3


class ConfigError(ValueError):
    """Invalid configuration; `field` names the offending key."""

    def __init__(self, fld: str, msg: str):
        super().__init__(f"config field '{fld}': {msg}")
        self.field = fld


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as err:
        raise ConfigError("config", f"cannot read {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError("config", f"{path} is not valid JSON: {err}") from err
    if not isinstance(obj, dict):
        raise ConfigError("config", "top level must be a JSON object")
    return obj


def _as_int(cfg: dict, fld: str, minimum=None):
    v = cfg.get(fld)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(fld, f"must be an integer, got {v!r}")
    v = int(v)
    if minimum is not None and v < minimum:
        raise ConfigError(fld, f"must be >= {minimum}, got {v}")
    return v


def normalize_config(cfg: dict) -> dict:
    """Validate and fill defaults; returns a plain dict safe to pickle."""
    known = {
        "problem", "methods", "reps", "base_seed", "M", "n0", "N",
        "check_interval", "min_failures", "min_n_factor", "stage2_batch",
        "reading", "oracle_M", "output_dir", "workers",
    }
    for key in cfg:
        if key not in known:
            raise ConfigError(key, "unknown configuration key")

    out = dict(cfg)
    problem = cfg.get("problem")
    if problem is None:
        raise ConfigError("problem", "required")
    if isinstance(problem, str):
        if problem.upper() not in PROBLEM_NAMES:
            raise ConfigError(
                "problem", f"unknown name {problem!r}; choose from {PROBLEM_NAMES}"
            )
        out["problem"] = problem.upper()
    elif isinstance(problem, dict):
        for req in ("command", "dim", "t", "lower", "upper", "marginals"):
            if req not in problem:
                raise ConfigError("problem", f"external simulator needs '{req}'")
        if len(problem["lower"]) != problem["dim"] or len(problem["upper"]) != problem["dim"]:
            raise ConfigError("problem", "lower/upper must have length dim")
        if len(problem["marginals"]) != problem["dim"]:
            raise ConfigError("problem", "marginals must have length dim")
        problem.setdefault("orientation", "FAIL_ABOVE")
        if problem["orientation"] not in ("FAIL_ABOVE", "FAIL_BELOW"):
            raise ConfigError("problem", "orientation must be FAIL_ABOVE or FAIL_BELOW")
    else:
        raise ConfigError("problem", "must be a name or an external-simulator object")

    methods = cfg.get("methods", list(COMPARED_METHODS))
    if methods == "all":
        methods = list(COMPARED_METHODS)
    if not isinstance(methods, (list, tuple)) or not methods:
        raise ConfigError("methods", "must be a nonempty list of method tags")
    valid = {m.value for m in Method}
    for tag in methods:
        if tag not in valid:
            raise ConfigError("methods", f"unknown method tag {tag!r}; choose from {sorted(valid)}")
    out["methods"] = list(methods)

    out["reps"] = _as_int(cfg, "reps", minimum=1) or 1
    base_seed = _as_int(cfg, "base_seed", minimum=0)
    out["base_seed"] = 0 if base_seed is None else base_seed
    if out["base_seed"] >= 2**63:
        raise ConfigError("base_seed", "must fit in 63 bits")
    for fld, lo in (
        ("M", 1), ("n0", 2), ("N", 3), ("check_interval", 1),
        ("min_failures", 0), ("min_n_factor", 1), ("stage2_batch", 1),
        ("oracle_M", 1),
    ):
        out[fld] = _as_int(cfg, fld, minimum=lo)
    reading = cfg.get("reading")
    if reading is not None and reading not in ("sd", "variance"):
        raise ConfigError("reading", "must be 'sd' or 'variance'")
    out["reading"] = reading
    out["output_dir"] = str(cfg.get("output_dir", "results"))
    out["workers"] = _as_int(cfg, "workers", minimum=1) or 1
    if isinstance(out["problem"], dict) and out["workers"] > 1:
        raise ConfigError("workers", "external simulators run with workers = 1")
    return out


def build_problem(cfg: dict) -> BenchmarkProblem:
    spec = cfg["problem"]
    if isinstance(spec, str):
        return make_problem(spec, reading=cfg.get("reading"))
    marginals = []
    for i, m in enumerate(spec["marginals"]):
        kind = m.get("type")
        try:
            if kind == "uniform":
                marginals.append(Uniform(float(m["a"]), float(m["b"])))
            elif kind == "truncated_normal":
                marginals.append(
                    TruncatedNormal(
                        float(m["mu"]), float(m["sigma"]), float(m["a"]), float(m["b"])
                    )
                )
            else:
                raise ConfigError(
                    "problem", f"marginal {i}: unknown type {kind!r}"
                )
        except (KeyError, TypeError, ValueError) as err:
            if isinstance(err, ConfigError):
                raise
            raise ConfigError("problem", f"marginal {i}: {err}") from err
    domain = BoxDomain(
        np.asarray(spec["lower"], dtype=float), np.asarray(spec["upper"], dtype=float)
    )
    dist = InputDistribution(tuple(marginals))
    dist.check_within(domain)
    if cfg.get("N") is None or cfg.get("n0") is None or cfg.get("M") is None:
        raise ConfigError("N", "external problems need explicit n0, N, and M")
    return BenchmarkProblem(
        name="EXTERNAL",
        f=ExternalSimulator(spec["command"], int(spec["dim"])),
        t=float(spec["t"]),
        orientation=spec["orientation"],
        domain=domain,
        dist=dist,
        table_alpha=float(spec.get("alpha_ref", math.nan)),
        table_M=int(cfg["M"]),
        table_N=int(cfg["N"]),
        table_n0=int(cfg["n0"]),
        calibration={"reading": "explicit", "adopted_reading": True,
                     "response": "external"},
    )


def budget_from_config(cfg: dict, problem: BenchmarkProblem) -> BudgetConfig:
    kwargs = dict(
        n0=cfg.get("n0") or problem.table_n0,
        N=cfg.get("N") or problem.table_N,
    )
    for fld in ("check_interval", "min_failures", "min_n_factor", "stage2_batch"):
        if cfg.get(fld) is not None:
            kwargs[fld] = cfg[fld]
    try:
        return BudgetConfig(**kwargs)
    except ValueError as err:
        raise ConfigError("N", str(err)) from err


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_single_rep(cfg: dict, rep: int) -> list[dict]:
    """All methods for one repetition; one CSV row dict per method."""
    seed = cfg["base_seed"] ^ rep
    problem = build_problem(cfg)
    budget = budget_from_config(cfg, problem)
    m_pool = cfg.get("M") or problem.table_M
    rng = RngStream(seed, 0)
    t0 = time.perf_counter()
    rows = []
    try:
        results = run_method_suite(problem, budget, cfg["methods"], rng, m=m_pool)
        wall_ms = int(round((time.perf_counter() - t0) * 1000))
        for tag in cfg["methods"]:
            est, trace = results[Method(tag)]
            rows.append(dict(
                problem=problem.name, method=tag, rep=rep, seed=seed,
                n0=budget.n0, n_chosen=trace.n_chosen, B=est.b_estimation,
                sim_evals=est.sim_evals_total, alpha_hat=float(est.alpha_hat),
                sigma_hat=float(est.sigma_hat), stop_reason=trace.stop_reason,
                status="OK", wall_ms=wall_ms,
            ))
    except SimulatorFault:
        wall_ms = int(round((time.perf_counter() - t0) * 1000))
        for tag in cfg["methods"]:
            rows.append(dict(
                problem=problem.name, method=tag, rep=rep, seed=seed,
                n0=budget.n0, n_chosen=None, B=None, sim_evals=None,
                alpha_hat=None, sigma_hat=None, stop_reason=None,
                status="FAULT", wall_ms=wall_ms,
            ))
    finally:
        sim = problem.f
        if isinstance(sim, ExternalSimulator):
            sim.close()
    return rows


def _rep_worker(payload):
    cfg, rep = payload
    return run_single_rep(cfg, rep)


def _csv_text(rows: list[dict]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(r[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def reproducibility_hash(csv_text: str) -> str:
    """SHA-256 of the CSV with the wall_ms column removed."""
    wall_idx = CSV_COLUMNS.index("wall_ms")
    kept = []
    for line in csv_text.splitlines():
        parts = line.split(",")
        del parts[wall_idx]
        kept.append(",".join(parts))
    digest = hashlib.sha256("\n".join(kept).encode()).hexdigest()
    return f"sha256:{digest}"


def _quantile(vals: list[float], q: float) -> float:
    return float(np.quantile(np.asarray(vals, dtype=float), q))


def summarize(cfg: dict, problem: BenchmarkProblem, budget: BudgetConfig,
              rows: list[dict], csv_text: str) -> dict:
    m_pool = cfg.get("M") or problem.table_M
    alpha_ref = problem.table_alpha
    have_ref = math.isfinite(alpha_ref)
    sigma_alpha = mc_std_err(alpha_ref, m_pool) if have_ref else None
    per_method = {}
    for tag in cfg["methods"]:
        sub = [r for r in rows if r["method"] == tag]
        ok = [r for r in sub if r["status"] == "OK"]
        entry = {"reps": len(sub), "n_fault": len(sub) - len(ok)}
        if ok:
            alphas = [r["alpha_hat"] for r in ok]
            entry["median_alpha"] = _quantile(alphas, 0.5)
            entry["iqr_alpha"] = _quantile(alphas, 0.75) - _quantile(alphas, 0.25)
            entry["median_n_chosen"] = _quantile([r["n_chosen"] for r in ok], 0.5)
            stopped = [
                r for r in ok
                if r["stop_reason"] == "CRITERION_MET" and r["method"] != "BRUTE_MC"
            ]
            entry["stopped_early_rate"] = len(stopped) / len(ok)
            if have_ref:
                entry["median_abs_err"] = _quantile(
                    [abs(a - alpha_ref) for a in alphas], 0.5
                )
                lo, hi = alpha_ref - 2 * sigma_alpha, alpha_ref + 2 * sigma_alpha
                entry["band_containment"] = (
                    sum(1 for a in alphas if lo <= a <= hi) / len(alphas)
                )
        per_method[tag] = entry
    return {
        "problem": problem.name,
        "methods": per_method,
        "reps": cfg["reps"],
        "base_seed": cfg["base_seed"],
        "m_pool": m_pool,
        "n0": budget.n0,
        "N": budget.N,
        "alpha_ref": alpha_ref if have_ref else None,
        "sigma_alpha": sigma_alpha,
        "band_2sigma": [alpha_ref - 2 * sigma_alpha, alpha_ref + 2 * sigma_alpha]
        if have_ref else None,
        "reproducibility_hash": reproducibility_hash(csv_text),
    }


def cmd_run(cfg: dict) -> int:
    cfg = normalize_config(cfg)
    problem = build_problem(cfg)
    budget = budget_from_config(cfg, problem)
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    payloads = [(cfg, rep) for rep in range(cfg["reps"])]
    if cfg["workers"] > 1 and cfg["reps"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            per_rep = list(pool.map(_rep_worker, payloads))
    else:
        per_rep = [run_single_rep(cfg, rep) for rep in range(cfg["reps"])]
    rows = [row for rep_rows in per_rep for row in rep_rows]

    csv_text = _csv_text(rows)
    (out_dir / "runs.csv").write_text(csv_text)
    summary = summarize(cfg, problem, budget, rows, csv_text)
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )

    for tag, entry in summary["methods"].items():
        med = entry.get("median_alpha")
        iqr = entry.get("iqr_alpha")
        if med is None:
            print(f"{tag:>14s}: all repetitions faulted")
        else:
            print(f"{tag:>14s}: median alpha {med:.4e}  IQR {iqr:.2e}  "
                  f"faults {entry['n_fault']}/{entry['reps']}")
    print(f"wrote {out_dir / 'runs.csv'} and {out_dir / 'summary.json'}")
    n_fault = sum(1 for r in rows if r["status"] == "FAULT")
    return EXIT_FAULT if n_fault else EXIT_OK


def cmd_oracle(cfg: dict) -> int:
    cfg_reading = cfg.pop("oracle_reading", "adopted")
    cfg = normalize_config(cfg)
    if isinstance(cfg["problem"], dict):
        raise ConfigError("problem", "the oracle is for cheap analytic problems; "
                                     "external simulators are refused")
    m_oracle = cfg.get("oracle_M")
    if m_oracle is None:
        raise ConfigError("oracle_M", "required (sample size, e.g. 1e8)")
    readings = {
        "adopted": [None],
        "sd": ["sd"],
        "variance": ["variance"],
        "both": ["sd", "variance"],
    }.get(cfg_reading)
    if readings is None:
        raise ConfigError("reading", "must be adopted, sd, variance, or both")
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for reading in readings:
        problem = make_problem(cfg["problem"], reading=reading)
        rng = RngStream(cfg["base_seed"], 0)
        est = oracle_alpha(problem, m_oracle, rng, workers=cfg["workers"])
        ref = problem.table_alpha
        band = 3.0 * math.sqrt(ref * (1.0 - ref) / m_oracle)
        rec = {
            "problem": problem.name,
            "reading": problem.calibration["reading"],
            "adopted_reading": problem.calibration["adopted_reading"],
            "response": problem.calibration["response"],
            "m_oracle": m_oracle,
            "seed": cfg["base_seed"],
            "alpha_hat": est.alpha_hat,
            "sigma_hat": est.sigma_hat,
            "alpha_ref": ref,
            "within_3se_of_ref": bool(abs(est.alpha_hat - ref) <= band),
        }
        records.append(rec)
        print(f"{problem.name} [{rec['reading']} reading] alpha = "
              f"{est.alpha_hat:.6e} +- {est.sigma_hat:.2e}  "
              f"(reference {ref:.3e}, within 3 SE: {rec['within_3se_of_ref']})")
    (out_dir / "oracle.json").write_text(
        json.dumps(records if len(records) > 1 else records[0],
                   indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote {out_dir / 'oracle.json'}")
    return EXIT_OK


def cmd_trace(cfg: dict) -> int:
    cfg = normalize_config(cfg)
    problem = build_problem(cfg)
    budget = budget_from_config(cfg, problem)
    m_pool = cfg.get("M") or problem.table_M
    rng = RngStream(cfg["base_seed"], 0)
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        s0, pool = _init_run(problem, budget, rng, m_pool)
        _, trace = run_stage1(problem, s0, pool, budget, rng)
    except SimulatorFault as err:
        print(f"simulator fault: {err}", file=sys.stderr)
        return EXIT_FAULT
    finally:
        sim = problem.f
        if isinstance(sim, ExternalSimulator):
            sim.close()
    lines = ["n,alpha_hat,sigma_hat,diff,decision"]
    hist = trace.alpha_history
    for i, (n, alpha, sigma) in enumerate(hist):
        diff = "" if i == 0 else repr(abs(alpha - hist[i - 1][1]))
        last = i == len(hist) - 1
        decision = "STOP" if (last and trace.stop_reason == "CRITERION_MET") else "CONTINUE"
        lines.append(f"{n},{repr(alpha)},{repr(sigma)},{diff},{decision}")
    (out_dir / "trace.csv").write_text("\n".join(lines) + "\n")
    print(f"stage 1 ended at n={trace.n_chosen} ({trace.stop_reason}); "
          f"{len(hist)} checks")
    print(f"wrote {out_dir / 'trace.csv'}")
    return EXIT_OK


def _add_common_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--seed", type=int, default=None, help="base seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--problem", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--m", type=float, default=None, help="Monte Carlo pool size")
    p.add_argument("--n0", type=int, default=None)
    p.add_argument("--N", type=int, default=None, dest="N")
    p.add_argument("--check-interval", type=int, default=None)
    p.add_argument("--min-failures", type=int, default=None)
    p.add_argument("--min-n-factor", type=int, default=None)
    p.add_argument("--stage2-batch", type=int, default=None)
    p.add_argument("--reading", default=None, choices=("sd", "variance"))


def _flag_overrides(args) -> dict:
    pairs = {
        "problem": args.problem,
        "base_seed": args.seed,
        "output_dir": args.out,
        "workers": args.workers,
        "M": int(args.m) if args.m is not None else None,
        "n0": args.n0,
        "N": args.N,
        "check_interval": args.check_interval,
        "min_failures": args.min_failures,
        "min_n_factor": args.min_n_factor,
        "stage2_batch": args.stage2_batch,
        "reading": args.reading,
    }
    return {k: v for k, v in pairs.items() if v is not None}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="rareprob",
        description="Two-stage adaptive failure-probability benchmark harness",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run methods x repetitions on a problem")
    _add_common_flags(p_run)
    p_run.add_argument("--methods", default=None,
                       help="comma-separated method tags, or 'all'")
    p_run.add_argument("--reps", type=int, default=None)

    p_oracle = sub.add_parser("oracle", help="brute-force oracle for the true alpha")
    _add_common_flags(p_oracle)
    p_oracle.add_argument("--oracle-m", type=float, default=None,
                          help="oracle sample size (e.g. 1e8)")
    p_oracle.add_argument("--oracle-reading", default="adopted",
                          choices=("adopted", "sd", "variance", "both"))

    p_trace = sub.add_parser("trace", help="stage-1 stopping trace for one seed")
    _add_common_flags(p_trace)

    args = ap.parse_args(argv)
    try:
        cfg = _load_json(args.config) if args.config else {}
        cfg.update(_flag_overrides(args))
        if args.command == "run":
            if args.methods is not None:
                cfg["methods"] = (
                    "all" if args.methods == "all" else args.methods.split(",")
                )
            if args.reps is not None:
                cfg["reps"] = args.reps
            return cmd_run(cfg)
        if args.command == "oracle":
            if args.oracle_m is not None:
                if args.oracle_m < 1:
                    raise ConfigError("oracle_M", "must be >= 1")
                cfg["oracle_M"] = int(args.oracle_m)
            cfg["oracle_reading"] = args.oracle_reading
            return cmd_oracle(cfg)
        if args.command == "trace":
            return cmd_trace(cfg)
        raise ConfigError("command", f"unknown command {args.command!r}")
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
