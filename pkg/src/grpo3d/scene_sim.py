"""Synthetic box-world scenes, templated questions and view-feature proxies.

Axis conventions: +x is east, +y is north, +z is up. Relation questions
compare box centers along these fixed axes.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingProvider
from .geometry import Aabb3, iou
from .views import ViewCandidate

VOCAB_VERSION = 1
LABELS = (
    "chair", "table", "sofa", "bed", "desk", "lamp", "cabinet", "shelf", "refrigerator", "sink",
    "toilet", "bathtub", "monitor", "television", "whiteboard", "bookshelf", "dresser", "stool",
    "couch", "piano", "plant", "bicycle", "microwave", "oven", "box", "basket", "mirror",
    "printer", "suitcase", "nightstand",
)
COLORS = ("red", "blue", "green", "yellow", "black", "white", "brown", "gray")
DIRECTIONS = {"north": (1, 1), "south": (1, -1), "east": (0, 1), "west": (0, -1)}

MIN_SIDE, MAX_SIDE = 0.3, 2.0
MAX_REJECTIONS = 10_000
DEFAULT_EXTENT = Aabb3((0.0, 0.0, 0.0), (10.0, 10.0, 10.0))
LAYOUTS = ("free", "floor")


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneObject:
    label: str
    color: str
    box: Aabb3

    def tokens(self) -> list[str]:
        return [self.color, self.label]


@dataclass(frozen=True)
class SceneSpec:
    id: str
    extent: Aabb3
    objects: tuple[SceneObject, ...]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "extent": self.extent.to_dict(),
            "objects": [{"label": o.label, "color": o.color, "box": o.box.to_dict()} for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        objs = tuple(SceneObject(o["label"], o["color"], Aabb3.from_dict(o["box"])) for o in d["objects"])
        return cls(d["id"], Aabb3.from_dict(d["extent"]), objs)

    def label_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for o in self.objects:
            counts[o.label] = counts.get(o.label, 0) + 1
        return counts


@dataclass(frozen=True)
class QAItem:
    question: str
    answer: str
    target: int
    template: str
    reference: int | None = None


def generate_scene(
    rng: np.random.Generator,
    n_objects: int,
    scene_id: str = "scene",
    extent: Aabb3 = DEFAULT_EXTENT,
    layout: str = "free",
) -> SceneSpec:
    """Rejection-sample ``n_objects`` non-overlapping boxes inside ``extent``.

    ``layout="floor"`` rests every box on the extent floor.
    """
    if not 3 <= n_objects <= 12:
        raise ValueError("n_objects must lie in [3, 12]")
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}")
    lo, hi = np.asarray(extent.min), np.asarray(extent.max)
    boxes: list[Aabb3] = []
    rejections = 0
    while len(boxes) < n_objects:
        size = rng.uniform(MIN_SIDE, MAX_SIDE, size=3)
        corner = rng.uniform(lo, hi - size)
        if layout == "floor":
            corner[2] = lo[2]
        box = Aabb3(tuple(corner), tuple(corner + size))
        if any(iou(box, b) > 0.0 for b in boxes):
            rejections += 1
            if rejections >= MAX_REJECTIONS:
                raise PlacementError(f"could not place {n_objects} boxes after {rejections} rejections")
            continue
        boxes.append(box)
    labels = rng.integers(len(LABELS), size=n_objects)
    colors = rng.integers(len(COLORS), size=n_objects)
    objs = tuple(SceneObject(LABELS[l], COLORS[c], b) for l, c, b in zip(labels, colors, boxes))
    return SceneSpec(scene_id, extent, objs)


def _centers(scene: SceneSpec) -> np.ndarray:
    return np.array([o.box.center for o in scene.objects])


def _unique_argmin(values: np.ndarray, candidates: list[int]) -> int | None:
    if not candidates:
        return None
    ordered = sorted(candidates, key=lambda i: values[i])
    if len(ordered) > 1 and abs(values[ordered[0]] - values[ordered[1]]) < 1e-9:
        return None
    return ordered[0]


def nearest_object(scene: SceneSpec, ref: int) -> int | None:
    c = _centers(scene)
    dist = np.linalg.norm(c - c[ref], axis=1)
    return _unique_argmin(dist, [i for i in range(len(scene.objects)) if i != ref])


def nearest_in_direction(scene: SceneSpec, ref: int, direction: str) -> int | None:
    axis, sign = DIRECTIONS[direction]
    c = _centers(scene)
    dist = np.linalg.norm(c - c[ref], axis=1)
    ahead = [i for i in range(len(scene.objects)) if i != ref and sign * (c[i, axis] - c[ref, axis]) > 0]
    return _unique_argmin(dist, ahead)


def _attribute_q(label: str) -> str:
    return f"what color is the {label}?"


def _relation_q(direction: str, color: str, label: str) -> str:
    return f"what is the object {direction} of the {color} {label}?"


def _nearest_q(label: str) -> str:
    return f"what is the object closest to the {label}?"


def all_questions(scene: SceneSpec) -> list[QAItem]:
    """Every unambiguous template instantiation, in a fixed order."""
    counts = scene.label_counts()
    unique = [i for i, o in enumerate(scene.objects) if counts[o.label] == 1]
    items: list[QAItem] = []
    for i in unique:
        o = scene.objects[i]
        items.append(QAItem(_attribute_q(o.label), o.color, i, "attribute"))
    for i in unique:
        o = scene.objects[i]
        for direction in DIRECTIONS:
            j = nearest_in_direction(scene, i, direction)
            if j is not None and counts[scene.objects[j].label] == 1:
                items.append(QAItem(_relation_q(direction, o.color, o.label), scene.objects[j].label, j, "relation", i))
    for i in unique:
        j = nearest_object(scene, i)
        if j is not None and counts[scene.objects[j].label] == 1:
            items.append(QAItem(_nearest_q(scene.objects[i].label), scene.objects[j].label, j, "nearest", i))
    return items


def generate_questions(scene: SceneSpec, rng: np.random.Generator, max_questions: int | None = None) -> list[QAItem]:
    items = all_questions(scene)
    if max_questions is not None and len(items) > max_questions:
        keep = np.sort(rng.choice(len(items), size=max_questions, replace=False))
        items = [items[k] for k in keep]
    return items


_ATTR_RE = re.compile(r"^what color is the (\w+)\?$")
_REL_RE = re.compile(r"^what is the object (north|south|east|west) of the (\w+) (\w+)\?$")
_NEAR_RE = re.compile(r"^what is the object closest to the (\w+)\?$")


def _unique_index(scene: SceneSpec, label: str, color: str | None = None) -> int | None:
    hits = [i for i, o in enumerate(scene.objects) if o.label == label]
    if len(hits) != 1:
        return None
    if color is not None and scene.objects[hits[0]].color != color:
        return None
    return hits[0]


def resolve_question(scene: SceneSpec, question: str) -> QAItem | None:
    """Recompute the templated answer for ``question``; None if out of template."""
    q = question.strip().lower()
    counts = scene.label_counts()
    if m := _ATTR_RE.match(q):
        i = _unique_index(scene, m.group(1))
        return None if i is None else QAItem(question, scene.objects[i].color, i, "attribute")
    if m := _REL_RE.match(q):
        ref = _unique_index(scene, m.group(3), m.group(2))
        if ref is None:
            return None
        j = nearest_in_direction(scene, ref, m.group(1))
        if j is None or counts[scene.objects[j].label] != 1:
            return None
        return QAItem(question, scene.objects[j].label, j, "relation", ref)
    if m := _NEAR_RE.match(q):
        ref = _unique_index(scene, m.group(1))
        if ref is None:
            return None
        j = nearest_object(scene, ref)
        if j is None or counts[scene.objects[j].label] != 1:
            return None
        return QAItem(question, scene.objects[j].label, j, "nearest", ref)
    return None


def oracle_answer(scene: SceneSpec, question: str) -> str:
    item = resolve_question(scene, question)
    return "" if item is None else item.answer


# --- cameras and visibility -------------------------------------------------

RINGS = ("horizontal", "elevated", "bottom")


@dataclass(frozen=True)
class CameraPose:
    id: str
    ring: str
    angle_deg: float
    position: tuple[float, float, float]
    look_at: tuple[float, float, float]


def _ring_geometry(extent: Aabb3, ring: str) -> tuple[float, float]:
    lo, hi = np.asarray(extent.min), np.asarray(extent.max)
    half_diag = float(np.linalg.norm(hi - lo)) / 2.0
    height = hi[2] - lo[2]
    if ring == "horizontal":
        return 1.2 * half_diag, lo[2] + 0.7 * height
    if ring == "elevated":
        return 0.8 * half_diag, hi[2] + 0.5 * height
    if ring == "bottom":
        return 0.15 * half_diag, lo[2] - 0.05 * height
    raise ValueError(f"unknown camera ring {ring!r}; expected one of {RINGS}")


def sample_camera_ring(scene: SceneSpec, n: int, ring: str = "horizontal") -> list[CameraPose]:
    """``n`` cameras equally spaced around the extent center, all looking at it.

    The horizontal ring sits at radius 1.2x the extent half-diagonal and
    height 0.7x the extent height; ``elevated`` is above the scene and
    ``bottom`` just below its floor.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    radius, z = _ring_geometry(scene.extent, ring)
    center = tuple(float(v) for v in scene.extent.center)
    poses = []
    for k in range(n):
        angle = 360.0 * k / n
        t = math.radians(angle)
        pos = (center[0] + radius * math.cos(t), center[1] + radius * math.sin(t), float(z))
        poses.append(CameraPose(f"{ring[0]}{k:02d}", ring, angle, pos, center))
    return poses


def visible_objects(scene: SceneSpec, pose: CameraPose, cone_deg: float = 90.0) -> tuple[int, ...]:
    """Objects whose box center lies inside the view cone (full apex angle ``cone_deg``)."""
    pos = np.asarray(pose.position)
    view = np.asarray(pose.look_at) - pos
    view /= np.linalg.norm(view)
    cos_half = math.cos(math.radians(cone_deg / 2.0))
    out = []
    for i, o in enumerate(scene.objects):
        d = o.box.center - pos
        dist = np.linalg.norm(d)
        along = float(np.dot(d, view))
        if along > 0.0 and along >= dist * cos_half:
            out.append(i)
    return tuple(out)


def visible_tokens(scene: SceneSpec, visible: tuple[int, ...]) -> list[str]:
    return [tok for i in visible for tok in scene.objects[i].tokens()]


def render_view_features(
    scene: SceneSpec, pose: CameraPose, provider: EmbeddingProvider, cone_deg: float = 90.0
) -> ViewCandidate:
    vis = visible_objects(scene, pose, cone_deg)
    toks = visible_tokens(scene, vis)
    return ViewCandidate(
        id=pose.id,
        camera_position=pose.position,
        look_at=pose.look_at,
        point3d_embedding=provider.embed("point3d", toks),
        rendered_joint_embedding=provider.embed("jointImage", toks),
        visible=vis,
    )
