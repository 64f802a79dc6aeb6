from __future__ import annotations

import hashlib
import os
import re
from pathlib import Path

THREADS_ENV = "EDCR_SPIKE_THREADS"

_FAMILY_RE = re.compile(r"^([A-Za-z_]+)")


def sha256_of_file(path: Path, chunk_size: int = 1024 * 1024) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as f:
        while True:
            chunk = f.read(chunk_size)
            if not chunk:
                break
            digest.update(chunk)
    return digest.hexdigest()


def worker_count() -> int:
    raw = os.getenv(THREADS_ENV, "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, min(4, os.cpu_count() or 1))


def family_of(model_name: str) -> str:
    """LOGIT-3 -> LOGIT, ZDET-10-1.5 -> ZDET, CNN12 -> CNN."""
    m = _FAMILY_RE.match(model_name)
    return m.group(1).upper() if m else model_name


def safe_ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def pct_delta(old: float, new: float) -> float | None:
    if old == 0:
        return 0.0 if new == 0 else None
    return (new - old) / old * 100.0


def format_pct(delta: float | None) -> str:
    if delta is None:
        return "(n/a)"
    if delta == 0:
        return "(0.0%)"
    return f"({delta:+.2f}%)"
