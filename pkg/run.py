#!/usr/bin/env python3
from __future__ import annotations

import argparse
import subprocess
import sys
from pathlib import Path


ROOT = Path(__file__).resolve().parent
LAB_DIR = ROOT / "volterra-lab"
LAB_REQ = LAB_DIR / "requirements.txt"


def log(msg: str) -> None:
    print(f"[vlab] {msg}", flush=True)


def run(cmd: list[str], cwd: Path | None = None, dry_run: bool = False) -> int:
    where = f" (cwd={cwd})" if cwd else ""
    log(f"$ {' '.join(cmd)}{where}")
    if dry_run:
        return 0
    return subprocess.run(cmd, cwd=str(cwd) if cwd else None).returncode


def has_pip(py: str) -> bool:
    result = subprocess.run([py, "-m", "pip", "--version"], capture_output=True, text=True)
    return result.returncode == 0


def ensure_pip(py: str, dry_run: bool = False) -> None:
    if has_pip(py):
        return
    log("pip not found for selected Python. Attempting ensurepip...")
    run([py, "-m", "ensurepip", "--upgrade"], cwd=ROOT, dry_run=dry_run)
    if not dry_run and not has_pip(py):
        raise RuntimeError(f"Python interpreter '{py}' has no working pip.")


def ensure_lab_installed(py: str, dry_run: bool = False) -> None:
    if not LAB_REQ.exists():
        raise RuntimeError(f"Missing requirements file: {LAB_REQ}")
    ensure_pip(py, dry_run=dry_run)
    code = run([py, "-m", "pip", "install", "--user", "--upgrade", "-r", str(LAB_REQ)], cwd=ROOT, dry_run=dry_run)
    if code != 0:
        raise RuntimeError(f"pip install failed with exit code {code}")


def lab_command(py: str, args: argparse.Namespace) -> list[str]:
    cmd = [py, "-m", "app.cli", "--config", str(Path(args.config).expanduser().resolve())]
    if args.seed is not None:
        cmd.extend(["--seed", str(args.seed)])
    if args.out_dir.strip():
        cmd.extend(["--out-dir", str(Path(args.out_dir).expanduser().resolve())])
    if args.strict:
        cmd.append("--strict")
    return cmd


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Launcher for the Volterra lab experiments (no venv required).")
    parser.add_argument("--config", required=True, help="Experiment JSON, e.g. volterra-lab/experiments/kernels.json")
    parser.add_argument("--seed", type=int, default=None, help="Override the config seed.")
    parser.add_argument("--out-dir", default="", help="Output root. Empty = VOLTERRA_LAB_DATA_DIR or <repo>/data.")
    parser.add_argument(
        "--install",
        action="store_true",
        help="Install/update the lab's Python packages before running.",
    )
    parser.add_argument("--strict", action="store_true", help="Treat inconclusive experiments as failed runs.")
    parser.add_argument("--dry-run", action="store_true", help="Print commands only.")
    return parser.parse_args()


def main() -> int:
    args = parse_args()
    py = sys.executable
    if not py:
        raise RuntimeError("Python interpreter not found.")

    if args.install:
        log("Installing/updating lab Python packages (global user site, no venv)...")
        ensure_lab_installed(py, dry_run=args.dry_run)

    return run(lab_command(py, args), cwd=LAB_DIR, dry_run=args.dry_run)


if __name__ == "__main__":
    try:
        raise SystemExit(main())
    except KeyboardInterrupt:
        log("Stopped by user.")
        raise SystemExit(130)
    except Exception as exc:
        log(f"ERROR: {exc}")
        raise SystemExit(1)
