from __future__ import annotations

import csv
import json
import math
import os
from datetime import datetime, timezone
from pathlib import Path
from threading import Lock
from typing import Any, Iterable, Sequence

ROOT_DIR = Path(__file__).resolve().parents[2]
DEFAULT_DATA_DIR = ROOT_DIR / "data"

DATA_DIR_ENV = "VOLTERRA_LAB_DATA_DIR"
THREADS_ENV = "VOLTERRA_LAB_THREADS"
FACTOR_CACHE_ENV = "VOLTERRA_LAB_FACTOR_CACHE"

_log_lock = Lock()


def data_dir() -> Path:
    raw = os.environ.get(DATA_DIR_ENV, "").strip()
    return Path(raw).expanduser() if raw else DEFAULT_DATA_DIR


def log_dir() -> Path:
    return data_dir() / "logs"


def runs_dir(root: Path | None = None) -> Path:
    return (root or data_dir()) / "runs"


def factors_dir() -> Path:
    return data_dir() / "factors"


def event_log_path() -> Path:
    return log_dir() / "events.jsonl"


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    try:
        value = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        value = os.cpu_count() or 1
    return max(1, value)


def factor_cache_enabled() -> bool:
    return os.environ.get(FACTOR_CACHE_ENV, "1").strip().lower() not in {"0", "false", "off", "no"}


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def ensure_data_layout() -> None:
    root = data_dir()
    root.mkdir(parents=True, exist_ok=True)
    log_dir().mkdir(parents=True, exist_ok=True)
    runs_dir().mkdir(parents=True, exist_ok=True)
    factors_dir().mkdir(parents=True, exist_ok=True)


def append_event(event_type: str, payload: dict[str, Any] | None = None) -> None:
    ensure_data_layout()
    record = {"time": utc_now(), "type": event_type, "payload": payload or {}}
    with _log_lock:
        with event_log_path().open("a", encoding="utf-8") as fp:
            fp.write(json.dumps(record, ensure_ascii=True, default=str) + "\n")


def format_float(value: float) -> str:
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return "%.17g" % value


def _format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    try:
        return format_float(float(value))
    except (TypeError, ValueError):
        return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_format_cell(cell) for cell in row])
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with path.open("r", encoding="utf-8", newline="") as fp:
        reader = csv.reader(fp)
        rows = list(reader)
    if not rows:
        return [], []
    return rows[0], rows[1:]


def write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, indent=2, ensure_ascii=True, sort_keys=True, allow_nan=True)
    path.write_text(text + "\n", encoding="utf-8", newline="\n")
    return path
