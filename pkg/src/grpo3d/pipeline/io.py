"""File formats: scene JSON, JSON-lines, policy checkpoints, metrics."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ..scene_sim import SceneSpec

CHECKPOINT_FORMAT = "grpo3d-policy"
CHECKPOINT_VERSION = 1


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_jsonl(path: Path, rows: Iterable[dict]) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            n += 1
    return n


def iter_jsonl(path: Path) -> Iterator[dict | None]:
    """Yield one parsed object per non-blank line; None for lines that fail to parse."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError:
                yield None


def read_jsonl(path: Path) -> list:
    return list(iter_jsonl(path))


def write_scene(path: Path, scene: SceneSpec) -> None:
    write_json(path, scene.to_dict())


def read_scene(path: Path) -> SceneSpec:
    return SceneSpec.from_dict(read_json(path))


def save_checkpoint(path: Path, theta: np.ndarray, config_hash: str, stage: str) -> None:
    theta = np.asarray(theta, dtype=float)
    write_json(
        path,
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "stage": stage,
            "config_hash": config_hash,
            "shape": list(theta.shape),
            "theta": theta.tolist(),
        },
    )


def load_checkpoint(path: Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    d = read_json(path)
    if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path} is not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} checkpoint")
    theta = np.array(d["theta"], dtype=float).reshape(d["shape"])
    return theta, {k: v for k, v in d.items() if k != "theta"}
