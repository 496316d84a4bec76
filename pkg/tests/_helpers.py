from __future__ import annotations

from pathlib import Path

import yaml


def edit_config(path: Path, fn) -> Path:
    """Apply ``fn`` to the parsed YAML config at ``path`` and write it back."""
    raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    fn(raw)
    path.write_text(yaml.safe_dump(raw, sort_keys=False), encoding="utf-8")
    return path
