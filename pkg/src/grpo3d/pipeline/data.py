"""Synthetic dataset: scenes, templated QA and step-by-step CoT records.

A fraction of CoT records is deliberately corrupted, one rule at a time, so
the filter has something to reject and every rejection is attributable.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from ..cot_filter import CoTExample
from ..scene_sim import QAItem, SceneSpec, generate_questions, generate_scene
from .config import RunConfig, substream

CORRUPTION_KINDS = ("format", "thinkLength", "answerLength", "stepCount", "targetMention", "consistency")

_UNRELATED_ANSWERS = (
    "Honestly the room looks like a storage area full of unrelated clutter and I cannot tell which item the question refers to at all today.",
    "There is not enough information in this description to decide anything, so I would rather guess that nothing relevant appears anywhere here.",
    "My best guess is that the scene shows an outdoor parking lot with several cars and trees instead of any indoor furniture worth describing.",
)


@dataclass
class Dataset:
    scenes: dict[str, SceneSpec]
    qa: list[tuple[str, QAItem, str]]  # (scene_id, item, split)
    cot: list[CoTExample]
    corrupted: list[str | None]  # corruption kind per CoT record

    def split(self, name: str) -> list[tuple[str, QAItem]]:
        return [(sid, item) for sid, item, sp in self.qa if sp == name]


def _subject(scene: SceneSpec, item: QAItem) -> str:
    if item.reference is None:
        return scene.objects[item.target].label
    ref = scene.objects[item.reference]
    return f"{ref.color} {ref.label}"


def render_think(scene: SceneSpec, item: QAItem) -> str:
    subject = _subject(scene, item)
    if item.template == "attribute":
        look = f"the {subject} and read the color of its surface from the views where it is visible"
    elif item.template == "relation":
        direction = item.question.split()[4]
        look = f"all objects whose box centers lie {direction} of the {subject} on the fixed room axes"
    else:
        look = f"all other objects and measure the distance between their box centers and the {subject}"
    lines = [
        f"Step 1: Identify the query. The question concerns the {subject}, which anchors the search.",
        f"Step 2: Locate the {subject} in the scene and gather {look}.",
        "Step 3: Compare the remaining candidates and keep the one that satisfies the question best.",
        f"Conclusion: For the {subject}, the answer is {item.answer}.",
    ]
    return "\n".join(lines)


def render_long_answer(question: str, short: str) -> str:
    return (
        f"Based on the reasoning above, the answer to the question '{question.strip()}' is {short}, "
        "which agrees with the object positions and attributes observed in the scene."
    )


_CONCLUSION_ANSWER = re.compile(r"^conclusion\b.*?the answer is (.+?)\.?\s*$", re.IGNORECASE | re.MULTILINE)


def conclusion_answer(think: str) -> str:
    m = _CONCLUSION_ANSWER.search(think)
    return m.group(1).strip() if m else ""


def echo_oracle(think: str, question: str) -> str:
    """Local answerer: restates the answer the reasoning concludes with.

    It sees only the reasoning and the question, so an answer segment that
    does not follow from the reasoning fails the consistency rule.
    """
    short = conclusion_answer(think)
    return render_long_answer(question, short) if short else ""


def make_cot(scene: SceneSpec, item: QAItem) -> CoTExample:
    return CoTExample(scene.id, item.question, render_think(scene, item), render_long_answer(item.question, item.answer))


def corrupt(ex: CoTExample, kind: str, rng: np.random.Generator) -> CoTExample:
    """Break exactly one filter rule (and none before it)."""
    think, answer = ex.think, ex.answer
    if kind == "format":
        if rng.random() < 0.5:
            answer = ""
        else:
            think = think.replace("Step 2:", "<think> Step 2:", 1)
    elif kind == "thinkLength":
        think = f"Step 1: look. Step 2: check. Step 3: decide.\n{think.splitlines()[-1]}"
    elif kind == "answerLength":
        answer = conclusion_answer(think)
    elif kind == "stepCount":
        kept = [re.sub(r"^Step \d+:\s*", "", ln) for ln in think.splitlines()]
        think = "\n".join(kept)
    elif kind == "targetMention":
        lines = think.splitlines()
        think = "\n".join(lines[:-1] + [lines[-1].replace("Conclusion:", "Overall,", 1)])
    elif kind == "consistency":
        answer = _UNRELATED_ANSWERS[int(rng.integers(len(_UNRELATED_ANSWERS)))]
    else:
        raise ValueError(f"unknown corruption kind {kind!r}")
    return CoTExample(ex.scene_id, ex.question, think, answer)


def scene_ids(cfg: RunConfig) -> list[str]:
    return [f"scene_{i:03d}" for i in range(cfg.n_scenes)]


def heldout_count(cfg: RunConfig) -> int:
    return max(1, math.ceil(cfg.n_scenes * cfg.heldout_fraction))


def build_scenes(cfg: RunConfig) -> dict[str, SceneSpec]:
    scenes = {}
    for i, sid in enumerate(scene_ids(cfg)):
        rng = substream(cfg.seed, "scene", i)
        n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
        scenes[sid] = generate_scene(rng, n, sid, layout=cfg.layout)
    return scenes


def build_dataset(cfg: RunConfig) -> Dataset:
    scenes = build_scenes(cfg)
    ids = scene_ids(cfg)
    n_held = heldout_count(cfg)
    qa = []
    for i, sid in enumerate(ids):
        split = "heldout" if i >= len(ids) - n_held else "train"
        items = generate_questions(scenes[sid], substream(cfg.seed, "questions", i), cfg.max_questions)
        qa.extend((sid, item, split) for item in items)
    rng = substream(cfg.seed, "corruption")
    cot, kinds = [], []
    for sid, item, split in qa:
        if split != "train":
            continue
        ex = make_cot(scenes[sid], item)
        kind = None
        if rng.random() < cfg.corruption:
            kind = CORRUPTION_KINDS[int(rng.integers(len(CORRUPTION_KINDS)))]
            ex = corrupt(ex, kind, rng)
        cot.append(ex)
        kinds.append(kind)
    return Dataset(scenes, qa, cot, kinds)


def qa_row(scene_id: str, item: QAItem, split: str) -> dict:
    return {
        "scene_id": scene_id,
        "question": item.question,
        "answer": item.answer,
        "target": item.target,
        "template": item.template,
        "reference": item.reference,
        "split": split,
    }


def qa_from_row(row: dict) -> tuple[str, QAItem, str]:
    item = QAItem(row["question"], row["answer"], row["target"], row["template"], row["reference"])
    return row["scene_id"], item, row["split"]
