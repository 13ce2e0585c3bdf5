"""Tests for the benchmark CLI: config validation, run/oracle/trace, exit codes."""

import json
import math
import sys

import numpy as np
import pytest

from rareprob.cli import (
    COMPARED_METHODS,
    CSV_COLUMNS,
    EXIT_CONFIG,
    EXIT_FAULT,
    EXIT_OK,
    ConfigError,
    build_problem,
    cmd_oracle,
    cmd_run,
    cmd_trace,
    main,
    normalize_config,
    reproducibility_hash,
)

# Small but complete run: every row schema field exercised, two methods
# sharing one stage-1 prefix, two repetitions.
ANALYTIC_CFG = dict(
    problem="PLATEAU4",
    M=5000,
    n0=6,
    N=16,
    check_interval=2,
    min_failures=0,
    reps=2,
    methods=["HYBRID_MC", "EXHAUSTIVE_CL"],
    base_seed=5,
)

SUM_SIMULATOR = """\
import sys
for line in sys.stdin:
    print(sum(float(v) for v in line.split()))
    sys.stdout.flush()
"""

GARBAGE_SIMULATOR = """\
import sys
for line in sys.stdin:
    print("banana")
    sys.stdout.flush()
"""


def _external_cfg(tmp_path, source=SUM_SIMULATOR, **overrides):
    script = tmp_path / "sim.py"
    script.write_text(source)
    cfg = dict(
        problem=dict(
            command=[sys.executable, "-u", str(script)],
            dim=2,
            t=1.8,
            lower=[0.0, 0.0],
            upper=[1.0, 1.0],
            marginals=[
                dict(type="uniform", a=0.0, b=1.0),
                dict(type="uniform", a=0.0, b=1.0),
            ],
        ),
        M=4000,
        n0=6,
        N=14,
        reps=1,
        methods=["HYBRID_MC"],
        base_seed=2,
        output_dir=str(tmp_path / "out"),
    )
    cfg.update(overrides)
    return cfg


def _read_rows(out_dir):
    lines = (out_dir / "runs.csv").read_text().splitlines()
    header = lines[0].split(",")
    return header, [dict(zip(header, line.split(","))) for line in lines[1:]]


def _strip_wall_ms(csv_text):
    idx = CSV_COLUMNS.index("wall_ms")
    kept = []
    for line in csv_text.splitlines():
        parts = line.split(",")
        del parts[idx]
        kept.append(",".join(parts))
    return "\n".join(kept)


@pytest.fixture(scope="module")
def analytic_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("analytic")
    rc = cmd_run(dict(ANALYTIC_CFG, output_dir=str(out)))
    return rc, out


@pytest.fixture(scope="module")
def analytic_rerun(tmp_path_factory):
    out = tmp_path_factory.mktemp("analytic_rerun")
    rc = cmd_run(dict(ANALYTIC_CFG, output_dir=str(out)))
    return rc, out


@pytest.fixture(scope="module")
def analytic_workers2(tmp_path_factory):
    out = tmp_path_factory.mktemp("analytic_w2")
    rc = cmd_run(dict(ANALYTIC_CFG, output_dir=str(out), workers=2))
    return rc, out


# ---------------------------------------------------------------------------
# Configuration validation


def test_normalize_defaults():
    cfg = normalize_config({"problem": "herbie"})
    assert cfg["problem"] == "HERBIE"
    assert cfg["methods"] == list(COMPARED_METHODS)
    assert cfg["reps"] == 1
    assert cfg["base_seed"] == 0
    assert cfg["workers"] == 1
    assert cfg["output_dir"] == "results"
    assert cfg["M"] is None and cfg["n0"] is None and cfg["N"] is None


def test_normalize_methods_all_expands():
    cfg = normalize_config({"problem": "HERBIE", "methods": "all"})
    assert cfg["methods"] == list(COMPARED_METHODS)


@pytest.mark.parametrize(
    "patch,field",
    [
        ({}, "problem"),
        ({"problem": "BRANIN"}, "problem"),
        ({"problem": 7}, "problem"),
        ({"problem": "HERBIE", "bogus_key": 1}, "bogus_key"),
        ({"problem": "HERBIE", "methods": []}, "methods"),
        ({"problem": "HERBIE", "methods": ["WARP_DRIVE"]}, "methods"),
        ({"problem": "HERBIE", "reps": 0}, "reps"),
        ({"problem": "HERBIE", "reps": 2.5}, "reps"),
        ({"problem": "HERBIE", "base_seed": -1}, "base_seed"),
        ({"problem": "HERBIE", "base_seed": 2**63}, "base_seed"),
        ({"problem": "HERBIE", "M": 0}, "M"),
        ({"problem": "HERBIE", "n0": 1}, "n0"),
        ({"problem": "HERBIE", "N": 2}, "N"),
        ({"problem": "HERBIE", "check_interval": 0}, "check_interval"),
        ({"problem": "HERBIE", "min_failures": -1}, "min_failures"),
        ({"problem": "HERBIE", "stage2_batch": 0}, "stage2_batch"),
        ({"problem": "HERBIE", "reading": "stdev"}, "reading"),
        ({"problem": "HERBIE", "workers": 0}, "workers"),
    ],
)
def test_normalize_rejects_bad_fields(patch, field):
    with pytest.raises(ConfigError) as exc:
        normalize_config(patch)
    assert exc.value.field == field


def test_normalize_external_problem_requirements(tmp_path):
    cfg = _external_cfg(tmp_path)
    assert normalize_config(dict(cfg))["problem"]["orientation"] == "FAIL_ABOVE"

    incomplete = dict(cfg, problem={"command": ["x"], "dim": 2})
    with pytest.raises(ConfigError, match="external simulator needs"):
        normalize_config(incomplete)

    bad_len = dict(cfg, problem=dict(cfg["problem"], lower=[0.0]))
    with pytest.raises(ConfigError, match="length dim"):
        normalize_config(bad_len)

    bad_marg = normalize_config(
        dict(cfg, problem=dict(cfg["problem"], marginals=[{"type": "cauchy"}] * 2))
    )
    with pytest.raises(ConfigError, match="unknown type"):
        build_problem(bad_marg)

    with pytest.raises(ConfigError, match="workers"):
        normalize_config(dict(cfg, workers=2))


def test_budget_inconsistency_is_config_error():
    # BudgetConfig demands N > 2*n0; the violation surfaces as exit 2.
    rc = main(
        ["run", "--problem", "PLATEAU4", "--n0", "8", "--N", "16",
         "--out", "/tmp/never-written"]
    )
    assert rc == EXIT_CONFIG


def test_main_missing_problem_exits_2(capsys):
    rc = main(["run"])
    assert rc == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "configuration error" in err and "problem" in err


def test_main_bad_json_exits_2(tmp_path, capsys):
    bad = tmp_path / "cfg.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    assert "not valid JSON" in capsys.readouterr().err


def test_main_non_object_json_exits_2(tmp_path):
    bad = tmp_path / "cfg.json"
    bad.write_text("[1, 2]")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG


def test_main_missing_config_file_exits_2(tmp_path):
    assert main(["run", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG


def test_main_unknown_method_exits_2(capsys):
    rc = main(["run", "--problem", "HERBIE", "--methods", "WARP_DRIVE"])
    assert rc == EXIT_CONFIG
    assert "WARP_DRIVE" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# run subcommand


def test_run_exit_code_and_files(analytic_run):
    rc, out = analytic_run
    assert rc == EXIT_OK
    assert (out / "runs.csv").exists()
    assert (out / "summary.json").exists()


def test_run_csv_schema(analytic_run):
    _, out = analytic_run
    header, rows = _read_rows(out)
    assert header == list(CSV_COLUMNS)
    assert len(rows) == ANALYTIC_CFG["reps"] * len(ANALYTIC_CFG["methods"])
    for r in rows:
        assert r["problem"] == "PLATEAU4"
        assert r["method"] in ANALYTIC_CFG["methods"]
        assert r["status"] == "OK"
        rep = int(r["rep"])
        assert int(r["seed"]) == ANALYTIC_CFG["base_seed"] ^ rep
        assert int(r["n0"]) == 6
        n_chosen = int(r["n_chosen"])
        assert 6 <= n_chosen <= 16
        assert int(r["B"]) == 16 - n_chosen
        assert int(r["sim_evals"]) == 16
        assert 0.0 <= float(r["alpha_hat"]) <= 1.0
        assert float(r["sigma_hat"]) >= 0.0
        assert r["stop_reason"] in ("CRITERION_MET", "BUDGET_EXHAUSTED")
        assert int(r["wall_ms"]) >= 0
    exhaustive = [r for r in rows if r["method"] == "EXHAUSTIVE_CL"]
    assert all(int(r["n_chosen"]) == 16 for r in exhaustive)


def test_run_summary_contents(analytic_run):
    _, out = analytic_run
    summary = json.loads((out / "summary.json").read_text())
    assert summary["problem"] == "PLATEAU4"
    assert summary["reps"] == 2
    assert summary["base_seed"] == 5
    assert summary["m_pool"] == 5000
    assert summary["n0"] == 6 and summary["N"] == 16
    assert summary["alpha_ref"] == pytest.approx(4.308e-4)
    lo, hi = summary["band_2sigma"]
    assert lo < summary["alpha_ref"] < hi
    assert summary["reproducibility_hash"].startswith("sha256:")
    header, rows = _read_rows(out)
    for tag in ANALYTIC_CFG["methods"]:
        entry = summary["methods"][tag]
        assert entry["reps"] == 2 and entry["n_fault"] == 0
        alphas = sorted(
            float(r["alpha_hat"]) for r in rows if r["method"] == tag
        )
        assert entry["median_alpha"] == pytest.approx(
            (alphas[0] + alphas[1]) / 2
        )
        assert entry["iqr_alpha"] >= 0.0
        assert 0.0 <= entry["stopped_early_rate"] <= 1.0
        assert 0.0 <= entry["band_containment"] <= 1.0


def test_run_deterministic_modulo_wall_ms(analytic_run, analytic_rerun):
    _, out_a = analytic_run
    _, out_b = analytic_rerun
    text_a = (out_a / "runs.csv").read_text()
    text_b = (out_b / "runs.csv").read_text()
    assert _strip_wall_ms(text_a) == _strip_wall_ms(text_b)
    assert reproducibility_hash(text_a) == reproducibility_hash(text_b)
    sum_a = json.loads((out_a / "summary.json").read_text())
    sum_b = json.loads((out_b / "summary.json").read_text())
    assert sum_a["reproducibility_hash"] == sum_b["reproducibility_hash"]


def test_run_worker_count_invariant(analytic_run, analytic_workers2):
    rc_1, out_1 = analytic_run
    rc_2, out_2 = analytic_workers2
    assert rc_1 == rc_2 == EXIT_OK
    hash_1 = json.loads((out_1 / "summary.json").read_text())["reproducibility_hash"]
    hash_2 = json.loads((out_2 / "summary.json").read_text())["reproducibility_hash"]
    assert hash_1 == hash_2


def test_run_from_config_file_with_flag_precedence(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(dict(
        problem="PLATEAU4", M=3000, n0=6, N=16, min_failures=0,
        reps=1, methods=["HYBRID_MC"], base_seed=1,
        output_dir=str(tmp_path / "ignored"),
    )))
    out = tmp_path / "out"
    rc = main(
        ["run", "--config", str(cfg_path), "--n0", "7", "--seed", "42",
         "--out", str(out)]
    )
    assert rc == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n0"] == 7
    assert summary["base_seed"] == 42
    assert not (tmp_path / "ignored").exists()
    _, rows = _read_rows(out)
    assert rows[0]["seed"] == "42"


# ---------------------------------------------------------------------------
# External simulator end to end


def test_run_external_simulator(tmp_path):
    cfg = _external_cfg(
        tmp_path,
        methods=["HYBRID_MC", "EXHAUSTIVE_CL", "TWO_STAGE_PROX", "SIIS", "SIIS_UCB"],
    )
    rc = cmd_run(dict(cfg))
    assert rc == EXIT_OK
    header, rows = _read_rows(tmp_path / "out")
    assert len(rows) == 5
    by_method = {r["method"]: r for r in rows}
    for r in rows:
        assert r["problem"] == "EXTERNAL"
        assert r["status"] == "OK"
        assert int(r["sim_evals"]) == 14
    # All adaptive variants share the stage-1 prefix; the exhaustive
    # baseline spends the entire budget on contour location.
    shared = {
        by_method[m]["n_chosen"]
        for m in ("HYBRID_MC", "TWO_STAGE_PROX", "SIIS", "SIIS_UCB")
    }
    assert len(shared) == 1
    assert int(by_method["EXHAUSTIVE_CL"]["n_chosen"]) == 14
    # P(x1 + x2 > 1.8) = 0.02 on the unit square; MC-backed estimates land
    # near it even with this tiny design.
    for tag in ("HYBRID_MC", "EXHAUSTIVE_CL"):
        assert abs(float(by_method[tag]["alpha_hat"]) - 0.02) < 0.03
    for tag in ("SIIS", "SIIS_UCB"):
        assert float(by_method[tag]["alpha_hat"]) >= 0.0


def test_run_external_fault_rows_and_exit_code(tmp_path):
    cfg = _external_cfg(tmp_path, source=GARBAGE_SIMULATOR)
    rc = cmd_run(dict(cfg))
    assert rc == EXIT_FAULT
    header, rows = _read_rows(tmp_path / "out")
    assert len(rows) == 1
    r = rows[0]
    assert r["status"] == "FAULT"
    assert r["alpha_hat"] == "" and r["n_chosen"] == "" and r["stop_reason"] == ""
    assert int(r["wall_ms"]) >= 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["methods"]["HYBRID_MC"]["n_fault"] == 1


# ---------------------------------------------------------------------------
# oracle subcommand


def test_oracle_subcommand(tmp_path, capsys):
    rc = main(
        ["oracle", "--problem", "PLATEAU4", "--oracle-m", "2e5",
         "--seed", "3", "--out", str(tmp_path)]
    )
    assert rc == EXIT_OK
    rec = json.loads((tmp_path / "oracle.json").read_text())
    assert rec["problem"] == "PLATEAU4"
    assert rec["reading"] == "sd"
    assert rec["adopted_reading"] is True
    assert rec["m_oracle"] == 200_000
    assert rec["seed"] == 3
    assert isinstance(rec["within_3se_of_ref"], bool)
    # Loose 4-sigma sanity band around the reference probability.
    ref = 4.2927e-4
    assert abs(rec["alpha_hat"] - ref) < 4 * math.sqrt(ref * (1 - ref) / 2e5)
    out = capsys.readouterr().out
    assert "alpha" in out and "within 3 SE" in out


def test_oracle_both_readings(tmp_path):
    rc = main(
        ["oracle", "--problem", "HERBIE", "--oracle-m", "50000",
         "--oracle-reading", "both", "--seed", "1", "--out", str(tmp_path)]
    )
    assert rc == EXIT_OK
    recs = json.loads((tmp_path / "oracle.json").read_text())
    assert isinstance(recs, list) and len(recs) == 2
    assert {r["reading"] for r in recs} == {"sd", "variance"}
    flags = {r["reading"]: r["adopted_reading"] for r in recs}
    assert flags["sd"] is True and flags["variance"] is False


def test_oracle_requires_sample_size(capsys):
    rc = main(["oracle", "--problem", "PLATEAU4"])
    assert rc == EXIT_CONFIG
    assert "oracle_M" in capsys.readouterr().err


def test_oracle_rejects_zero_sample_size():
    rc = main(["oracle", "--problem", "PLATEAU4", "--oracle-m", "0"])
    assert rc == EXIT_CONFIG


def test_oracle_refuses_external_problem(tmp_path):
    cfg = _external_cfg(tmp_path, oracle_M=1000)
    cfg.pop("methods")
    cfg.pop("reps")
    with pytest.raises(ConfigError, match="external"):
        cmd_oracle(dict(cfg))


# ---------------------------------------------------------------------------
# trace subcommand


def test_trace_subcommand(tmp_path, capsys):
    cfg = dict(ANALYTIC_CFG, output_dir=str(tmp_path))
    cfg.pop("reps")
    cfg.pop("methods")
    rc = cmd_trace(dict(cfg))
    assert rc == EXIT_OK
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "n,alpha_hat,sigma_hat,diff,decision"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) >= 1
    ns = [int(r[0]) for r in rows]
    assert ns == sorted(ns)
    assert all(b - a == ANALYTIC_CFG["check_interval"] for a, b in zip(ns, ns[1:]))
    assert rows[0][3] == ""
    for prev, cur in zip(rows, rows[1:]):
        expected = abs(float(cur[1]) - float(prev[1]))
        assert float(cur[3]) == expected
    decisions = [r[4] for r in rows]
    assert all(d == "CONTINUE" for d in decisions[:-1])
    assert decisions[-1] in ("CONTINUE", "STOP")
    out = capsys.readouterr().out
    assert "stage 1 ended" in out
