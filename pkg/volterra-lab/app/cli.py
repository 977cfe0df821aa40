from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from pydantic import TypeAdapter, ValidationError

from . import analytic_moments, kernel
from .errors import EXIT_INCONCLUSIVE, EXIT_OK, EXIT_USAGE, DomainError, InconclusiveExperiment, LabError, exit_code_for
from .gaussian_sampler import RNG_ALGORITHM, NoiseBundle, UniformGrid, export_paths_csv, load_or_build_joint_covariance, sample_bundle
from .model import ExponentialVol
from .ppde_estimators import (
    Direction,
    ForwardCurve,
    bump_domega_hat,
    bump_dx_hat,
    d2omega_u_singular_hat,
    d2u_dx2_hat,
    domega_dx_u_hat,
    domega_u_hat,
    du_dx_hat,
    ppde_residual,
    simulate_conditional,
    telescopic_check,
    tower_check,
    u_hat,
)
from .rate_lab import LEVEL_TABLE_HEADER, RateEstimate, level_table_rows, run_case1, run_case2, run_strong
from .run_logs import RunLogger
from .schemas import (
    CommandConfig,
    KernelsConfig,
    PpdeConfig,
    RunManifest,
    SampleConfig,
    StrongRateConfig,
    TelescopeConfig,
    WeakRateConfig,
)
from .scheme import coupled_level_terminals, terminal_table
from .storage import append_event, data_dir, default_threads, runs_dir, utc_now, write_csv, write_json
from .versioning import lab_display_version

_CONFIG_ADAPTER: TypeAdapter[CommandConfig] = TypeAdapter(CommandConfig)


def log(msg: str) -> None:
    print(f"[vlab] {msg}", flush=True)


@dataclass
class CommandResult:
    artifacts: list[Path] = field(default_factory=list)
    status: str = "ok"
    summary: dict[str, Any] = field(default_factory=dict)


def parse_config(raw: Any) -> CommandConfig:
    return _CONFIG_ADAPTER.validate_python(raw)


def load_config(path: Path, seed: int | None = None) -> CommandConfig:
    raw = json.loads(path.read_text(encoding="utf-8"))
    if seed is not None and isinstance(raw, dict):
        raw = {**raw, "seed": seed}
    return parse_config(raw)


def config_hash(cfg: CommandConfig) -> str:
    payload = cfg.model_dump(mode="json", exclude={"seed", "threads"})
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def run_directory(cfg: CommandConfig, out_root: Path | None = None) -> Path:
    return runs_dir(out_root) / f"{cfg.command}-{config_hash(cfg)}-seed{cfg.seed}"


def _threads(cfg: Any) -> int:
    value = getattr(cfg, "threads", None)
    return int(value) if value else default_threads()


def _rel_err(value: float, oracle: float) -> float:
    if oracle == 0.0:
        return abs(value)
    return abs(value - oracle) / abs(oracle)


def cmd_kernels(cfg: KernelsConfig, run_dir: Path, logger: RunLogger) -> CommandResult:
    header = ("suite", "H", "t", "t_i", "alpha", "beta", "value", "oracle", "rel_err")
    rows: list[tuple[object, ...]] = []
    beta_errors: list[float] = []
    for H in cfg.H:
        spec = kernel.KernelSpec(H)
        for t in cfg.t:
            for beta in cfg.beta:
                value = kernel.weighted_kernel_integral(spec, t, beta)
                oracle = kernel.beta_identity(spec, t, beta)
                err = _rel_err(value, oracle)
                beta_errors.append(err)
                rows.append(("beta", H, t, None, None, beta, value, oracle, err))

    scaling_rows: list[tuple[object, ...]] = []
    levels = sorted(cfg.levels)
    for H in cfg.H:
        spec = kernel.KernelSpec(H)
        for alpha in cfg.alpha:
            steps: list[float] = []
            values: list[float] = []
            for N in levels:
                dt = cfg.T / N
                t_i = cfg.T - dt
                value = kernel.delta_k_weighted_integral(spec, cfg.T, t_i, alpha)
                oracle = kernel.delta_k_closed_form(spec, cfg.T, t_i) if alpha == 0.0 else None
                err = None if oracle is None else _rel_err(value, oracle)
                rows.append(("delta_k", H, cfg.T, t_i, alpha, None, value, oracle, err))
                steps.append(dt)
                values.append(value)
            expected = kernel.delta_k_exponent(spec, alpha)
            if len(levels) >= 3 and all(v > 0.0 for v in values):
                slope = float(np.polyfit(np.log(steps), np.log(values), 1)[0])
            else:
                slope = None
            scaling_rows.append((H, alpha, slope, expected, None if slope is None else abs(slope - expected)))

    max_err = max(beta_errors) if beta_errors else 0.0
    logger.log("kernels_done", {"rows": len(rows), "max_beta_rel_err": max_err})
    artifacts = [
        write_csv(run_dir / "kernels.csv", header, rows),
        write_csv(run_dir / "delta_k_scaling.csv", ("H", "alpha", "slope", "exponent", "abs_gap"), scaling_rows),
    ]
    summary = {"max_beta_rel_err": max_err, "rows": len(rows)}
    artifacts.append(write_json(run_dir / "summary.json", summary))
    return CommandResult(artifacts=artifacts, summary=summary)


def cmd_sample(cfg: SampleConfig, run_dir: Path, logger: RunLogger) -> CommandResult:
    model = cfg.config
    grid = UniformGrid(model.T, cfg.N)
    spec = load_or_build_joint_covariance(model.H, grid)
    bundle = sample_bundle(spec, model.rho, cfg.M, cfg.seed, threads=_threads(cfg))
    logger.log("sampled", {"N": cfg.N, "M": cfg.M, "jitter_used": spec.jitter_used})

    M = cfg.M
    V = bundle.V
    times = grid.nodes[1:]
    var_oracle = np.asarray(analytic_moments.v_variance(model.H, times))
    fourth_oracle = np.asarray(analytic_moments.v_moment(model.H, times, 4))
    rows = []
    for i in range(cfg.N):
        col = V[:, i]
        sq = col * col
        row: list[object] = [
            i + 1,
            times[i],
            float(col.mean()),
            float(sq.mean()),
            float(var_oracle[i]),
            float(sq.std(ddof=1)) / math.sqrt(M) if M > 1 else None,
            float((sq * sq).mean()),
            float(fourth_oracle[i]),
        ]
        if isinstance(model.vol, ExponentialVol):
            e = np.exp(model.vol.nu * col)
            row += [float(e.mean()), float(analytic_moments.v_expmoment(model.H, times[i], model.vol.nu))]
        else:
            row += [None, None]
        rows.append(row)
    header = ("node", "t", "mean", "second", "second_oracle", "second_se", "fourth", "fourth_oracle", "exp_nu", "exp_nu_oracle")
    artifacts = [write_csv(run_dir / "moments.csv", header, rows)]
    if cfg.export_paths:
        count = min(cfg.export_paths, M)
        head = NoiseBundle(
            grid=bundle.grid,
            H=bundle.H,
            V=bundle.V[:count],
            dW=bundle.dW[:count],
            dWbar=bundle.dWbar[:count],
            dB=bundle.dB[:count],
            rho=bundle.rho,
            seed=bundle.seed,
            path_offset=bundle.path_offset,
        )
        artifacts.append(export_paths_csv(head, run_dir / "paths.csv"))
    dW = bundle.dW.ravel()
    dB = bundle.dB.ravel()
    summary = {
        "H": model.H,
        "N": cfg.N,
        "M": M,
        "jitter_used": spec.jitter_used,
        "corr_dW_dB": float(np.corrcoef(dW, dB)[0, 1]) if M * cfg.N > 1 else None,
        "rho": model.rho,
    }
    artifacts.append(write_json(run_dir / "summary.json", summary))
    return CommandResult(artifacts=artifacts, summary=summary)


def _rate_artifacts(estimate: RateEstimate, run_dir: Path) -> list[Path]:
    return [
        write_csv(run_dir / "levels.csv", LEVEL_TABLE_HEADER, level_table_rows(estimate)),
        write_json(run_dir / "rate.json", estimate.to_dict()),
    ]


def cmd_weak_rate(cfg: WeakRateConfig, run_dir: Path, logger: RunLogger) -> CommandResult:
    plan = cfg.plan(_threads(cfg))
    estimate = run_case1(plan) if cfg.case == "case1" else run_case2(plan)
    logger.log("weak_rate_done", {"case": cfg.case, "status": estimate.status, "slope": estimate.slope})
    return CommandResult(artifacts=_rate_artifacts(estimate, run_dir), status=estimate.status, summary=estimate.to_dict())


def cmd_strong_rate(cfg: StrongRateConfig, run_dir: Path, logger: RunLogger) -> CommandResult:
    plan = cfg.plan(_threads(cfg))
    estimate = run_strong(plan)
    artifacts = _rate_artifacts(estimate, run_dir)
    if cfg.export_terminals is not None:
        terms = coupled_level_terminals(plan.config, [cfg.export_terminals], plan.N_f, plan.M, plan.seed, plan.threads)
        rows = terminal_table(terms.sample(cfg.export_terminals))
        artifacts.append(write_csv(run_dir / "terminals.csv", ("path", "xbar_T", "x_ref_T"), rows))
    logger.log("strong_rate_done", {"status": estimate.status, "slope": estimate.slope})
    return CommandResult(artifacts=artifacts, status=estimate.status, summary=estimate.to_dict())


def _ppde_curve(cfg: PpdeConfig) -> ForwardCurve:
    T = cfg.config.T
    if cfg.curve_csv:
        curve = ForwardCurve.from_csv(Path(cfg.curve_csv))
        if not math.isclose(curve.t, cfg.t, abs_tol=1e-12) or not math.isclose(curve.T, T, rel_tol=1e-12):
            raise DomainError(f"curve CSV spans [{curve.t}, {curve.T}], expected [{cfg.t}, {T}]")
        return curve
    n = 0 if math.isclose(cfg.t, T, rel_tol=0.0, abs_tol=1e-14) else cfg.n
    if cfg.curve is not None:
        return ForwardCurve(t=cfg.t, T=T, values=np.asarray(cfg.curve, dtype=float))
    return ForwardCurve.constant(cfg.t, T, n, cfg.curve_level)


def cmd_ppde(cfg: PpdeConfig, run_dir: Path, logger: RunLogger) -> CommandResult:
    model = cfg.config
    threads = _threads(cfg)
    curve = _ppde_curve(cfg)
    sample = simulate_conditional(cfg.t, cfg.start, curve, model, cfg.M, cfg.seed, threads=threads)
    report: dict[str, Any] = {
        "t": cfg.t,
        "x": cfg.start,
        "n": curve.n,
        "u": u_hat(sample).to_dict(),
        "du_dx": du_dx_hat(sample).to_dict(),
        "d2u_dx2": d2u_dx2_hat(sample).to_dict(),
        "d2omega_singular": d2omega_u_singular_hat(sample).to_dict(),
    }
    if not sample.is_terminal:
        report["bump_dx"] = bump_dx_hat(sample, cfg.bump).to_dict()
        singular = Direction.singular_kernel()
        report["domega_singular"] = domega_u_hat(sample, singular).to_dict()
        report["domega_dx_singular"] = domega_dx_u_hat(sample, singular).to_dict()
        if cfg.direction is not None:
            eta = Direction.along(cfg.direction)
            report["domega"] = domega_u_hat(sample, eta).to_dict()
            report["bump_domega"] = bump_domega_hat(sample, eta, cfg.bump).to_dict()
    if cfg.residual and curve.n >= 2:
        residual = ppde_residual(cfg.t, cfg.start, curve, model, cfg.M, cfg.seed, threads=threads)
        report["residual"] = residual.to_dict()
    if cfg.tower is not None:
        tower = tower_check(
            cfg.t,
            cfg.tower.t_next,
            cfg.start,
            curve,
            model,
            cfg.tower.M_outer,
            cfg.tower.M_inner,
            cfg.seed,
            M_direct=cfg.tower.M_direct,
            threads=threads,
        )
        report["tower"] = tower.to_dict()
    logger.log("ppde_done", {"u": report["u"], "n": curve.n})
    return CommandResult(artifacts=[write_json(run_dir / "ppde.json", report)], summary=report)


def cmd_telescope(cfg: TelescopeConfig, run_dir: Path, logger: RunLogger) -> CommandResult:
    report = telescopic_check(
        cfg.config,
        cfg.N,
        cfg.M_outer,
        cfg.M_inner,
        cfg.seed,
        sub_steps=cfg.sub_steps,
        budget_seconds=cfg.budget_seconds,
        threads=_threads(cfg),
    )
    payload = report.to_dict()
    logger.log("telescope_done", {"status": report.status, "M_outer": report.M_outer, "elapsed": report.elapsed_seconds})
    artifacts = [
        write_json(run_dir / "telescope.json", payload),
        write_csv(run_dir / "cells.csv", ("cell", "rhs"), list(enumerate(report.cell_rhs))),
    ]
    return CommandResult(artifacts=artifacts, status=report.status, summary=payload)


COMMANDS: dict[str, Callable[[Any, Path, RunLogger], CommandResult]] = {
    "kernels": cmd_kernels,
    "sample": cmd_sample,
    "weak-rate": cmd_weak_rate,
    "strong-rate": cmd_strong_rate,
    "ppde": cmd_ppde,
    "telescope": cmd_telescope,
}


def _status_exit(status: str) -> int:
    return EXIT_INCONCLUSIVE if status == "inconclusive" else EXIT_OK


def execute(cfg: CommandConfig, out_root: Path | None = None, strict: bool = False) -> tuple[int, Path]:
    """Run one command into its run directory; strict turns an inconclusive result into a failed run."""
    run_dir = run_directory(cfg, out_root)
    run_dir.mkdir(parents=True, exist_ok=True)
    logger = RunLogger(cfg.command)
    started = utc_now()
    logger.log("run_started", {"run_dir": str(run_dir), "seed": cfg.seed})
    result = CommandResult(status="failed")
    error = ""
    try:
        result = COMMANDS[cfg.command](cfg, run_dir, logger)
        if strict and result.status == "inconclusive":
            message = str(result.summary.get("message", "")) or "noise-dominated result"
            raise InconclusiveExperiment(
                f"{cfg.command} inconclusive: {message}", {"artifacts": [p.name for p in result.artifacts]}
            )
        code = _status_exit(result.status)
    except ValidationError as exc:
        error = _format_validation(exc)
        code = EXIT_USAGE
        logger.error("run_failed", error, {"type": "ValidationError"})
        result.status = "failed"
    except LabError as exc:
        error = str(exc)
        code = exit_code_for(exc)
        logger.error("run_failed", error, {"type": type(exc).__name__, "context": exc.context})
        result.status = "failed"
    manifest = RunManifest(
        command=cfg.command,
        config_hash=config_hash(cfg),
        seed=cfg.seed,
        started_at=started,
        finished_at=utc_now(),
        status=result.status if result.status in ("ok", "degenerate", "inconclusive") else "failed",
        exit_code=code,
        artifacts=sorted(p.name for p in result.artifacts),
        software_version=lab_display_version(),
        rng=RNG_ALGORITHM,
        config=cfg.model_dump(mode="json"),
        error=error,
    )
    write_json(run_dir / "manifest.json", manifest.model_dump(mode="json"))
    append_event("run_finished", {"command": cfg.command, "run_dir": str(run_dir), "exit_code": code})
    logger.log("run_finished", {"exit_code": code, "status": manifest.status})
    return code, run_dir


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for item in exc.errors():
        loc = ".".join(str(p) for p in item.get("loc", ())) or "<root>"
        parts.append(f"{loc}: {item.get('msg', '')}")
    return "; ".join(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Rough-volatility Euler scheme lab")
    parser.add_argument("--config", required=True, help="JSON experiment config with a 'command' field")
    parser.add_argument("--seed", type=int, default=None, help="Override the config seed")
    parser.add_argument("--out-dir", default="", help=f"Output root (default {data_dir()})")
    parser.add_argument("--strict", action="store_true", help="Fail inconclusive runs (exit 4, status failed)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    path = Path(args.config)
    try:
        cfg = load_config(path, args.seed)
    except FileNotFoundError:
        log(f"config not found: {path}")
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        log(f"config {path} is not valid JSON: {exc}")
        return EXIT_USAGE
    except ValidationError as exc:
        log(f"invalid config {path}: {_format_validation(exc)}")
        return EXIT_USAGE
    out_root = Path(args.out_dir).expanduser() if args.out_dir.strip() else None
    log(f"{cfg.command} seed={cfg.seed} hash={config_hash(cfg)}")
    code, run_dir = execute(cfg, out_root, strict=args.strict)
    log(f"exit {code}: {run_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
