from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .utils import sha256_of_file

MANIFEST_NAME = "manifest.json"


@dataclass(slots=True)
class StageRecord:
    stage: str
    outputs: dict[str, str]


class RunManifest:
    """Per-stage outputs (relative path -> sha256) of one output directory."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.path = out_dir / MANIFEST_NAME
        self._stages: dict[str, StageRecord] = {}

    def load(self) -> None:
        if not self.path.exists():
            self._stages = {}
            return
        raw = json.loads(self.path.read_text(encoding="utf-8"))
        items = raw.get("stages", {}) if isinstance(raw, dict) else {}
        parsed: dict[str, StageRecord] = {}
        for k, v in items.items():
            if not isinstance(v, dict):
                continue
            parsed[k] = StageRecord(stage=k, outputs={str(p): str(d) for p, d in v.items()})
        self._stages = parsed

    def save(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        serialized = {
            "stages": {
                k: dict(sorted(record.outputs.items()))
                for k, record in sorted(self._stages.items())
            }
        }
        self.path.write_text(json.dumps(serialized, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    def record(self, stage: str, paths: list[Path]) -> None:
        outputs = {
            path.relative_to(self.out_dir).as_posix(): sha256_of_file(path)
            for path in paths
        }
        self._stages[stage] = StageRecord(stage=stage, outputs=outputs)
