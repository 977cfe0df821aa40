from __future__ import annotations

import json
import os
import re
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .storage import ensure_data_layout, log_dir

_SAFE_SEGMENT_RE = re.compile(r"[^a-zA-Z0-9._-]+")


def _safe_segment(value: str, fallback: str) -> str:
    cleaned = _SAFE_SEGMENT_RE.sub("-", (value or "").strip()).strip(".-")
    return (cleaned or fallback)[:80]


def day_stamp(now: datetime | None = None) -> str:
    return (now or datetime.now(timezone.utc)).strftime("%Y%m%d")


class RunLogger:
    """Activity and error JSONL for one CLI invocation.

    Timestamps live here and in the manifest only; numeric artifacts in the
    run directory never carry them.
    """

    def __init__(self, command: str) -> None:
        ensure_data_layout()
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
        self.command = _safe_segment(command, "run")
        self.session_id = f"{self.command}-{stamp}-{os.getpid()}-{uuid.uuid4().hex[:8]}"
        self.session_dir = log_dir() / "sessions" / self.session_id
        self.session_dir.mkdir(parents=True, exist_ok=True)
        day = day_stamp()
        self.activity_file = self.session_dir / f"activity-{day}.jsonl"
        self.error_file = self.session_dir / f"errors-{day}.jsonl"
        self.log("session_started", {"session_id": self.session_id, "command": command})

    def _write(self, path: Path, row: dict[str, Any]) -> None:
        with path.open("a", encoding="utf-8") as fp:
            fp.write(json.dumps(row, ensure_ascii=True, default=str) + "\n")

    def log(self, event: str, payload: dict[str, Any] | None = None) -> None:
        row = {"time": datetime.now(timezone.utc).isoformat(), "event": event, "payload": payload or {}}
        self._write(self.activity_file, row)

    def error(self, event: str, error: str, payload: dict[str, Any] | None = None) -> None:
        row = {
            "time": datetime.now(timezone.utc).isoformat(),
            "event": event,
            "error": error,
            "payload": payload or {},
        }
        self._write(self.error_file, row)
        self.log(f"{event}_error", {"error": error})
