from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import pytest
from pydantic import ValidationError

from app.cli import COMMANDS, config_hash, execute, load_config, main, parse_config, run_directory
from app.errors import EXIT_INCONCLUSIVE, EXIT_OK, EXIT_USAGE, InconclusiveExperiment, exit_code_for
from app.schemas import WeakRateConfig

CONSTANT_VOL = {"vol": {"family": "shifted_linear", "a": 0.5, "b": 0.0}}


def _write_config(tmp_path: Path, payload: Any, name: str = "config.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def _manifest(run_dir: Path) -> dict[str, Any]:
    return json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))


def test_usage_errors_exit_two(tmp_path: Path) -> None:
    assert main(["--config", str(tmp_path / "missing.json")]) == EXIT_USAGE
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    assert main(["--config", str(broken)]) == EXIT_USAGE
    for payload in (
        {"command": "kernels", "levels": []},
        {"command": "sample", "M": 0},
        {"command": "calibrate"},
        {"command": "sample", "config": {"H": 0.8}},
        {"command": "strong-rate", "levels": [16, 32, 64], "export_terminals": 8},
    ):
        assert main(["--config", str(_write_config(tmp_path, payload))]) == EXIT_USAGE


def test_config_hash_ignores_seed_and_threads() -> None:
    a = parse_config({"command": "sample", "N": 8, "seed": 1, "threads": 1})
    b = parse_config({"command": "sample", "N": 8, "seed": 2, "threads": 4})
    c = parse_config({"command": "sample", "N": 16, "seed": 1})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 12
    assert run_directory(a, Path("/tmp/x")).name == f"sample-{config_hash(a)}-seed1"


def test_seed_override(tmp_path: Path) -> None:
    path = _write_config(tmp_path, {"command": "sample", "seed": 3})
    assert load_config(path).seed == 3
    assert load_config(path, seed=11).seed == 11
    with pytest.raises(ValidationError):
        parse_config({"command": "sample", "unexpected": True})


def test_kernels_run_writes_artifacts_and_manifest(tmp_path: Path) -> None:
    payload = {"command": "kernels", "H": [0.3], "t": [1.0], "beta": [0.0, 1.0], "levels": [8, 16, 32]}
    out = tmp_path / "out"
    assert main(["--config", str(_write_config(tmp_path, payload)), "--out-dir", str(out)]) == EXIT_OK
    (run_dir,) = (out / "runs").iterdir()
    manifest = _manifest(run_dir)
    assert manifest["status"] == "ok" and manifest["exit_code"] == 0
    assert manifest["artifacts"] == ["delta_k_scaling.csv", "kernels.csv", "summary.json"]
    assert manifest["config"]["H"] == [0.3]
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    assert summary["max_beta_rel_err"] < 1e-8
    lines = (run_dir / "kernels.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "suite,H,t,t_i,alpha,beta,value,oracle,rel_err"
    assert len(lines) == 1 + 2 + 3


def test_weak_rate_constant_vol_is_degenerate(tmp_path: Path) -> None:
    cfg = parse_config({"command": "weak-rate", "case": "case1", "config": CONSTANT_VOL})
    code, run_dir = execute(cfg, tmp_path)
    assert code == EXIT_OK
    rate = json.loads((run_dir / "rate.json").read_text(encoding="utf-8"))
    assert rate["status"] == "degenerate"
    assert _manifest(run_dir)["status"] == "degenerate"


def test_weak_rate_case1_reports_slope(tmp_path: Path) -> None:
    cfg = parse_config({"command": "weak-rate", "case": "case1", "config": {"H": 0.3}})
    code, run_dir = execute(cfg, tmp_path)
    assert code == EXIT_OK
    rate = json.loads((run_dir / "rate.json").read_text(encoding="utf-8"))
    assert rate["slope"] == pytest.approx(-1.0, abs=0.1)
    header = (run_dir / "levels.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("N,")


def test_ppde_at_horizon_returns_payoff(tmp_path: Path) -> None:
    cfg = parse_config({"command": "ppde", "t": 1.0, "x": 0.5, "n": 0, "M": 10})
    code, run_dir = execute(cfg, tmp_path)
    assert code == EXIT_OK
    report = json.loads((run_dir / "ppde.json").read_text(encoding="utf-8"))
    assert report["u"] == {"value": 0.25, "ci": 0.0}
    assert report["d2omega_singular"] == {"value": 0.0, "ci": 0.0}
    assert "residual" not in report


def test_domain_error_is_recorded_in_manifest(tmp_path: Path) -> None:
    cfg = parse_config({"command": "ppde", "t": 0.0, "n": 4, "M": 10})
    code, run_dir = execute(cfg, tmp_path)
    assert code == EXIT_USAGE
    manifest = _manifest(run_dir)
    assert manifest["status"] == "failed"
    assert "at least" in manifest["error"]
    assert manifest["artifacts"] == []


def test_telescope_budget_exhaustion_exits_four(tmp_path: Path) -> None:
    cfg = parse_config(
        {"command": "telescope", "M_outer": 8, "M_inner": 5, "sub_steps": 2, "budget_seconds": 1e-9}
    )
    code, run_dir = execute(cfg, tmp_path)
    assert code == EXIT_INCONCLUSIVE
    assert _manifest(run_dir)["status"] == "inconclusive"
    assert json.loads((run_dir / "telescope.json").read_text(encoding="utf-8"))["status"] == "inconclusive"


def test_sample_rerun_is_byte_identical(tmp_path: Path) -> None:
    first = parse_config({"command": "sample", "N": 4, "M": 500, "seed": 9, "threads": 1, "export_paths": 3})
    second = first.model_copy(update={"threads": 2})
    code_a, dir_a = execute(first, tmp_path / "a")
    code_b, dir_b = execute(second, tmp_path / "b")
    assert code_a == code_b == EXIT_OK
    assert dir_a.name == dir_b.name
    for name in ("moments.csv", "paths.csv", "summary.json"):
        assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes()
    assert len((dir_a / "paths.csv").read_text(encoding="utf-8").splitlines()) == 1 + 3


def test_event_log_records_runs(tmp_path: Path, lab_data_dir: Path) -> None:
    execute(parse_config({"command": "ppde", "t": 1.0, "n": 0, "M": 2}), tmp_path)
    lines = (lab_data_dir / "logs" / "events.jsonl").read_text(encoding="utf-8").splitlines()
    assert json.loads(lines[-1])["type"] == "run_finished"


def test_shipped_experiments_parse() -> None:
    paths = sorted((Path(__file__).resolve().parents[1] / "experiments").glob("*.json"))
    assert paths
    commands = {load_config(path).command for path in paths}
    assert commands == {"kernels", "sample", "weak-rate", "strong-rate", "ppde", "telescope"}


def test_shipped_schema_covers_every_command() -> None:
    schema_path = Path(__file__).resolve().parents[2] / "shared" / "experiment-config.schema.json"
    schema = json.loads(schema_path.read_text(encoding="utf-8"))
    branches = [schema["$defs"][ref["$ref"].rsplit("/", 1)[-1]] for ref in schema["oneOf"]]
    assert {b["properties"]["command"]["const"] for b in branches} == set(COMMANDS)


def test_strong_rate_exports_terminals(tmp_path: Path) -> None:
    cfg = parse_config(
        {"command": "strong-rate", "levels": [4, 8, 16], "N_f": 64, "M": 200, "seed": 4, "export_terminals": 8}
    )
    code, run_dir = execute(cfg, tmp_path)
    assert code == EXIT_OK
    assert _manifest(run_dir)["artifacts"] == ["levels.csv", "rate.json", "terminals.csv"]
    lines = (run_dir / "terminals.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "path,xbar_T,x_ref_T"
    assert len(lines) == 1 + 200


def test_repeated_levels_are_usage_errors(tmp_path: Path) -> None:
    for command in ("weak-rate", "strong-rate"):
        payload = {"command": command, "levels": [16, 16, 32]}
        assert main(["--config", str(_write_config(tmp_path, payload))]) == EXIT_USAGE
    # a config that skipped validation still fails cleanly inside the run
    cfg = WeakRateConfig.model_construct(case="case2", levels=[16, 16, 32])
    code, run_dir = execute(cfg, tmp_path)
    assert code == EXIT_USAGE
    manifest = _manifest(run_dir)
    assert manifest["status"] == "failed"
    assert "distinct" in manifest["error"]
    assert manifest["artifacts"] == []


def test_strict_run_fails_inconclusive_experiments(tmp_path: Path) -> None:
    cfg = parse_config(
        {"command": "telescope", "M_outer": 8, "M_inner": 5, "sub_steps": 2, "budget_seconds": 1e-9}
    )
    code, run_dir = execute(cfg, tmp_path, strict=True)
    assert code == EXIT_INCONCLUSIVE
    manifest = _manifest(run_dir)
    assert manifest["status"] == "failed"
    assert manifest["error"].startswith("telescope inconclusive")
    assert "budget" in manifest["error"]
    assert manifest["artifacts"] == ["cells.csv", "telescope.json"]
    assert exit_code_for(InconclusiveExperiment("noise")) == EXIT_INCONCLUSIVE
