from __future__ import annotations

import json
from pathlib import Path

ROOT_DIR = Path(__file__).resolve().parents[2]
VERSION_FILE = ROOT_DIR / "shared" / "version.json"
UNKNOWN_VERSION = "0.0.0+0"


def lab_display_version(path: Path | None = None) -> str:
    """`<version>+<build>` of the lab entry in shared/version.json, or 0.0.0+0 when unreadable."""
    source = path or VERSION_FILE
    try:
        lab = json.loads(source.read_text(encoding="utf-8")).get("lab")
        version = str(lab.get("version", "")).strip() or "0.0.0"
        build = int(lab.get("build", 0))
    except (OSError, ValueError, TypeError, AttributeError):
        return UNKNOWN_VERSION
    return f"{version}+{build}"
