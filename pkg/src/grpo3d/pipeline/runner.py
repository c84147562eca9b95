"""File-backed pipeline stages. Each stage reads its inputs from the run
directory, writes its outputs there, and records them in ``manifest.json``
together with the config hash and a content digest."""

from __future__ import annotations

import csv
import hashlib
import logging
import os
from pathlib import Path

import numpy as np

from ..cot_filter import CoTExample, FilterResult, OracleAnswerer, filter_dataset
from ..views import FusionWeights
from . import io
from .config import ENDPOINT_ENV, RunConfig
from .data import CORRUPTION_KINDS, Dataset, build_dataset, echo_oracle, qa_from_row, qa_row
from .training import (
    REWARD_ABLATION,
    RlStep,
    Task,
    build_task,
    eval_policy,
    reward_ablation,
    run_rl,
    run_sft,
    view_ablation,
)

log = logging.getLogger(__name__)

QA_FILE = "qa.jsonl"
COT_RAW = "cot_raw.jsonl"
COT_LABELS = "cot_labels.jsonl"
COT_FILTERED = "cot_filtered.jsonl"
COT_QUARANTINE = "cot_quarantine.jsonl"
FILTER_REPORT = "filter_report.json"
VIEWS_FILE = "views.jsonl"
FUSION_FILE = "fusion_weights.json"
SFT_CKPT = "sft_policy.json"
RL_CKPT = "rl_policy.json"
SFT_LOG = "sft_log.csv"
RL_LOG = "rl_log.csv"
METRICS = "metrics.json"
MANIFEST = "manifest.json"


class StageError(RuntimeError):
    """A stage cannot run: missing or empty inputs."""


# --- manifest ---------------------------------------------------------------------

def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def record_artifacts(cfg: RunConfig, stage: str, paths: list[Path]) -> None:
    out = cfg.out_dir
    mpath = out / MANIFEST
    manifest = io.read_json(mpath) if mpath.exists() else {"artifacts": {}}
    for p in paths:
        manifest["artifacts"][p.relative_to(out).as_posix()] = {
            "stage": stage,
            "config_hash": cfg.hash(),
            "sha256": _digest(p),
        }
    manifest["config_hash"] = cfg.hash()
    manifest["config"] = cfg.echo()
    io.write_json(mpath, manifest)


def upstream_hash(cfg: RunConfig, name: str) -> str | None:
    mpath = cfg.out_dir / MANIFEST
    if not mpath.exists():
        return None
    entry = io.read_json(mpath)["artifacts"].get(name)
    h = entry and entry["config_hash"]
    if h and h != cfg.hash():
        log.warning("%s was produced under config %s, current config is %s", name, h, cfg.hash())
    return h


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise StageError(f"{what} not found: {path}")
    return path


def _figure(cfg: RunConfig, name: str) -> Path:
    return cfg.out_dir / "figures" / name


# --- gen-data ---------------------------------------------------------------------

def gen_data(cfg: RunConfig) -> Dataset:
    out = cfg.out_dir
    data = build_dataset(cfg)
    written = []
    for sid, scene in data.scenes.items():
        p = out / "scenes" / f"{sid}.json"
        io.write_scene(p, scene)
        written.append(p)
    io.write_jsonl(out / QA_FILE, (qa_row(sid, item, split) for sid, item, split in data.qa))
    io.write_jsonl(out / COT_RAW, (ex.to_dict() for ex in data.cot))
    io.write_jsonl(
        out / COT_LABELS,
        ({"index": i, "scene_id": ex.scene_id, "question": ex.question, "planted": kind}
         for i, (ex, kind) in enumerate(zip(data.cot, data.corrupted))),
    )
    written += [out / QA_FILE, out / COT_RAW, out / COT_LABELS]
    record_artifacts(cfg, "gen-data", written)
    planted = {k: sum(1 for c in data.corrupted if c == k) for k in CORRUPTION_KINDS}
    log.info("generated %d scenes, %d questions, %d CoT records (%d corrupted)",
             len(data.scenes), len(data.qa), len(data.cot), sum(planted.values()))
    return data


def load_dataset(cfg: RunConfig, cot_file: str | None = COT_FILTERED) -> Dataset:
    """Rebuild a :class:`Dataset` from the run directory."""
    out = cfg.out_dir
    scene_dir = _require(out / "scenes", "scene directory (run gen-data first)")
    scenes = {}
    for p in sorted(scene_dir.glob("*.json")):
        scene = io.read_scene(p)
        scenes[scene.id] = scene
    if not scenes:
        raise StageError(f"no scenes in {scene_dir}")
    qa = [qa_from_row(r) for r in io.read_jsonl(_require(out / QA_FILE, "QA file")) if r is not None]
    cot = []
    if cot_file is not None:
        path = _require(out / cot_file, f"{cot_file} (run the filter stage first)")
        upstream_hash(cfg, cot_file)
        for row in io.iter_jsonl(path):
            try:
                cot.append(CoTExample.from_dict(row))
            except ValueError:
                log.warning("skipping malformed line in %s", path)
    return Dataset(scenes, qa, cot, [None] * len(cot))


# --- filter -----------------------------------------------------------------------

def make_oracle(cfg: RunConfig, endpoint: str | None = None) -> OracleAnswerer:
    if cfg.oracle == "echo":
        return echo_oracle
    from .oracle_client import RemoteOracle

    url = endpoint or cfg.endpoint or os.environ.get(ENDPOINT_ENV)
    if not url:
        raise StageError(f"remote oracle needs --endpoint or ${ENDPOINT_ENV}")
    return RemoteOracle(url, timeout=cfg.oracle_timeout, retries=cfg.oracle_retries, backoff=cfg.oracle_backoff)


def run_filter(cfg: RunConfig, oracle: OracleAnswerer | None = None) -> FilterResult:
    out = cfg.out_dir
    raw = _require(out / COT_RAW, "raw CoT file (run gen-data first)")
    upstream_hash(cfg, COT_RAW)
    oracle = oracle or make_oracle(cfg)
    workers = cfg.oracle_workers if cfg.oracle == "remote" else 1
    result = filter_dataset(io.iter_jsonl(raw), oracle, cfg.filter_config(), workers=workers)
    io.write_jsonl(out / COT_FILTERED, (ex.to_dict() for ex in result.accepted))
    written = [out / COT_FILTERED]
    qpath = out / COT_QUARANTINE
    if result.quarantine:
        io.write_jsonl(qpath, (ex.to_dict() for ex in result.quarantine))
        written.append(qpath)
    elif qpath.exists():
        qpath.unlink()
    io.write_json(out / FILTER_REPORT, {"config_hash": cfg.hash(), **result.report.to_dict()})
    written.append(out / FILTER_REPORT)
    if cfg.figures:
        from .plotting import plot_filter_counts

        written.append(plot_filter_counts(result.report.per_rule, result.report.accepted, _figure(cfg, "filter_counts.png")))
    record_artifacts(cfg, "filter", written)
    r = result.report
    log.info("filter: %d total, %d accepted, %d rejected, %d malformed, %d quarantined",
             r.total, r.accepted, r.rejected, r.malformed, r.quarantined)
    return result


# --- views ------------------------------------------------------------------------

def fusion_to_dict(w: FusionWeights) -> dict:
    return {"w_text": w.w_text, "w_coverage": w.w_coverage, "w_joint": w.w_joint,
            "pre": w.pre, "mu": w.mu, "lam": w.lam}


def load_task(cfg: RunConfig, cot_file: str | None = COT_FILTERED) -> Task:
    data = load_dataset(cfg, cot_file)
    task = build_task(cfg, data)
    fpath = cfg.out_dir / FUSION_FILE
    if fpath.exists():
        saved = io.read_json(fpath)
        if saved.get("config_hash") == cfg.hash():
            task.weights = FusionWeights(saved["w_text"], saved["pre"], saved["mu"], saved["lam"])
    return task


def select_views(cfg: RunConfig) -> Task:
    out = cfg.out_dir
    task = load_task(cfg, cot_file=None)
    io.write_json(out / FUSION_FILE, {"config_hash": cfg.hash(), **fusion_to_dict(task.weights)})
    rows = []
    for sid, item, split in task.data.qa:
        sel = task.selected(sid, item)
        rows.append({
            "scene_id": sid,
            "question": item.question,
            "split": split,
            "strategy": cfg.view_strategy,
            "views": [{"id": v.id, "utility": u} for v, u in sel],
        })
    io.write_jsonl(out / VIEWS_FILE, rows)
    record_artifacts(cfg, "select-views", [out / FUSION_FILE, out / VIEWS_FILE])
    return task


# --- training -----------------------------------------------------------------------

def train_sft_stage(cfg: RunConfig) -> np.ndarray:
    out = cfg.out_dir
    task = load_task(cfg)
    if not task.data.cot:
        raise StageError(f"SFT dataset is empty: {out / COT_FILTERED} has no accepted records")
    history: list[float] = []
    theta = run_sft(task, task.data.cot, history)
    io.save_checkpoint(out / SFT_CKPT, theta, cfg.hash(), "sft")
    with open(out / SFT_LOG, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        w.writerows([i + 1, f"{loss:.6f}"] for i, loss in enumerate(history))
    written = [out / SFT_CKPT, out / SFT_LOG]
    if cfg.figures:
        from .plotting import plot_sft_loss

        written.append(plot_sft_loss(history, _figure(cfg, "sft_loss.png")))
    record_artifacts(cfg, "train-sft", written)
    return theta


def train_rl_stage(cfg: RunConfig, checkpoint: Path | None = None) -> np.ndarray:
    out = cfg.out_dir
    ckpt = Path(checkpoint) if checkpoint else out / SFT_CKPT
    if not ckpt.exists():
        raise StageError(f"SFT checkpoint not found: {ckpt} (run train-sft first)")
    theta_sft, meta = io.load_checkpoint(ckpt)
    if meta["config_hash"] != cfg.hash():
        log.warning("checkpoint %s was trained under config %s", ckpt, meta["config_hash"])
    task = load_task(cfg, cot_file=None)
    steps: list[RlStep] = []
    theta = run_rl(task, theta_sft, log_steps=steps)
    io.save_checkpoint(out / RL_CKPT, theta, cfg.hash(), "rl")
    with open(out / RL_LOG, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mean_reward", "kl"])
        w.writerows([s.step, f"{s.mean_reward:.6f}", f"{s.kl:.6f}"] for s in steps)
    written = [out / RL_CKPT, out / RL_LOG]
    if cfg.figures and steps:
        from .plotting import plot_rl_curve

        written.append(plot_rl_curve([s.step for s in steps], [s.mean_reward for s in steps],
                                     [s.kl for s in steps], _figure(cfg, "rl_curve.png")))
    record_artifacts(cfg, "train-rl", written)
    return theta


# --- evaluation -----------------------------------------------------------------------

def eval_stage(cfg: RunConfig, checkpoint: Path | None = None) -> dict:
    out = cfg.out_dir
    if checkpoint is None:
        checkpoint = out / RL_CKPT if (out / RL_CKPT).exists() else out / SFT_CKPT
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise StageError(f"policy checkpoint not found: {checkpoint}")
    theta, meta = io.load_checkpoint(checkpoint)
    task = load_task(cfg, cot_file=None)
    result = eval_policy(task, theta)
    report = out / FILTER_REPORT
    per_rule = io.read_json(report)["perRule"] if report.exists() else None
    metrics = {
        **result.to_metrics(),
        "perRuleFilterCounts": per_rule,
        "checkpoint": {"stage": meta["stage"], "config_hash": meta["config_hash"]},
        "decode": cfg.eval_decode,
        "seeds": [cfg.seed],
        "config": cfg.echo(),
        "config_hash": cfg.hash(),
    }
    io.write_json(out / METRICS, metrics)
    record_artifacts(cfg, "eval", [out / METRICS])
    return metrics


def run_all(cfg: RunConfig, oracle: OracleAnswerer | None = None) -> dict:
    gen_data(cfg)
    run_filter(cfg, oracle)
    select_views(cfg)
    train_sft_stage(cfg)
    train_rl_stage(cfg)
    return eval_stage(cfg)


# --- ablations ---------------------------------------------------------------------------

def ablate(cfg: RunConfig, kind: str, seeds: list[int]) -> dict[str, list[float]]:
    out = cfg.out_dir
    if kind == "rewards":
        results = reward_ablation(cfg, seeds, tuple(REWARD_ABLATION))
    elif kind == "views":
        results = view_ablation(cfg, seeds)
    else:
        raise ValueError(f"unknown ablation {kind!r}")
    csv_path = out / f"ablation_{kind}.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", *(f"seed{s}" for s in seeds), "median"])
        for name, vals in results.items():
            w.writerow([name, *(f"{v:.6f}" for v in vals), f"{float(np.median(vals)):.6f}"])
    json_path = out / f"ablation_{kind}.json"
    io.write_json(json_path, {"config_hash": cfg.hash(), "config": cfg.echo(), "seeds": list(seeds),
                              "metric": "answerExactMatchRate", "results": results})
    written = [csv_path, json_path]
    if cfg.figures:
        from .plotting import plot_ablation

        written.append(plot_ablation(results, _figure(cfg, f"ablation_{kind}.png")))
    record_artifacts(cfg, f"ablate-{kind}", written)
    return results
