"""Policy contexts for grounded scene QA.

Every (scene, question) pair becomes one context with a fixed menu of six
candidate responses. A response is an (answer, anchor object) pair rendered
into the tagged think/answer template, or deliberately malformed. The
policy sees, per candidate, what the selected views reveal about it:

    well_formed   1 if the render parses
    anchor_fit    +1/-1 if the anchor is observed and does/doesn't fit the question, else 0
    answer_fit    +1/-1 if the observed scene supports/contradicts the answer, else 0
    anchor_vis    fraction of selected views in which the anchor is visible

so what a policy can learn depends on which views were selected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..embeddings import EmbeddingProvider, tokenize
from ..geometry import iou
from ..rewards import RewardWeights, render_structured, score_response
from ..scene_sim import (
    COLORS,
    DIRECTIONS,
    LABELS,
    QAItem,
    SceneSpec,
    render_view_features,
    sample_camera_ring,
    visible_tokens,
)
from ..views import FusionItem, FusionWeights, SceneQueryContext, ViewCandidate, select_top_k
from .config import RunConfig, substream

SLOT_KINDS = ("gold", "gold_malformed", "grounded_distractor", "ungrounded", "misread", "distractor_malformed")
N_SLOTS = len(SLOT_KINDS)
SLOT_FEATURES = 4
N_FEATURES = N_SLOTS * SLOT_FEATURES + 1


@dataclass(frozen=True)
class Candidate:
    kind: str
    answer: str
    anchor: int
    well_formed: bool


@dataclass
class Context:
    scene_id: str
    item: QAItem
    candidates: list[Candidate]
    features: np.ndarray
    views: list[str]
    rewards: np.ndarray | None = None

    @property
    def gold(self) -> int:
        return next(i for i, c in enumerate(self.candidates) if c.kind == "gold")


# --- views ------------------------------------------------------------------

class SceneViews:
    """Rendered candidate pool and fixed-strategy view sets for one scene."""

    def __init__(self, scene: SceneSpec, cfg: RunConfig, provider: EmbeddingProvider):
        self.scene = scene
        poses = (
            sample_camera_ring(scene, cfg.pool_horizontal, "horizontal")
            + sample_camera_ring(scene, cfg.pool_elevated, "elevated")
            + sample_camera_ring(scene, cfg.pool_bottom, "bottom")
        )
        self.pool = [render_view_features(scene, p, provider, cfg.cone_deg) for p in poses]
        # fixed 6-view baselines are rendered as their own rings
        self.horizontal = [
            render_view_features(scene, p, provider, cfg.cone_deg) for p in sample_camera_ring(scene, 6, "horizontal")
        ]
        self.bottom = [v for v in self.pool if v.id.startswith("b")][:6] or [
            render_view_features(scene, p, provider, cfg.cone_deg) for p in sample_camera_ring(scene, 6, "bottom")
        ]
        self.image_embeddings = [provider.embed("image", visible_tokens(scene, v.visible)) for v in self.horizontal]

    def query(self, question: str, provider: EmbeddingProvider) -> SceneQueryContext:
        toks = tokenize(question)
        return SceneQueryContext(provider.embed("text", toks), provider.embed("jointText", toks), self.image_embeddings)

    def select(self, strategy: str, question: str, provider: EmbeddingProvider, weights: FusionWeights, k: int):
        """Return [(view, utility or None)] for the strategy."""
        if strategy == "all":
            return [(v, None) for v in self.pool]
        if strategy == "horizontal":
            return [(v, None) for v in self.horizontal[:k]]
        if strategy == "bottom":
            return [(v, None) for v in self.bottom[:k]]
        by_id = {v.id: v for v in self.pool}
        ranked = select_top_k(self.pool, self.query(question, provider), weights, k)
        return [(by_id[i], u) for i, u in ranked]


def preferred_views(views: SceneViews, item: QAItem) -> list[str]:
    needed = {item.target} | ({item.reference} if item.reference is not None else set())
    return [v.id for v in views.pool if needed <= set(v.visible)]


def fusion_items(
    scene_views: dict[str, SceneViews], qa: list[tuple[str, QAItem]], provider: EmbeddingProvider
) -> list[FusionItem]:
    items = []
    for sid, item in qa:
        sv = scene_views[sid]
        pref = preferred_views(sv, item)
        if 0 < len(pref) < len(sv.pool):
            items.append(FusionItem(sv.pool, sv.query(item.question, provider), pref))
    return items


# --- observation-based features -----------------------------------------------

def _observed_nearest(scene: SceneSpec, ref: int, observed: set[int], direction: str | None) -> int | None:
    c = np.array([o.box.center for o in scene.objects])
    cands = [i for i in sorted(observed) if i != ref]
    if direction is not None:
        axis, sign = DIRECTIONS[direction]
        cands = [i for i in cands if sign * (c[i, axis] - c[ref, axis]) > 0]
    if not cands:
        return None
    return min(cands, key=lambda i: (np.linalg.norm(c[i] - c[ref]), i))


def _direction(item: QAItem) -> str | None:
    return item.question.split()[4] if item.template == "relation" else None


def _observed_answer_object(scene: SceneSpec, item: QAItem, observed: set[int]) -> int | None:
    """The object the observed part of the scene points to as the answer."""
    if item.template == "attribute":
        label = scene.objects[item.target].label
        hits = [i for i in sorted(observed) if scene.objects[i].label == label]
        return hits[0] if len(hits) == 1 else None
    if item.reference not in observed:
        return None
    return _observed_nearest(scene, item.reference, observed, _direction(item))


def answer_of(scene: SceneSpec, item: QAItem, obj: int) -> str:
    o = scene.objects[obj]
    return o.color if item.template == "attribute" else o.label


def slot_features(scene: SceneSpec, item: QAItem, cand: Candidate, views: list[ViewCandidate]) -> list[float]:
    observed = set().union(*(v.visible for v in views)) if views else set()
    vis = sum(cand.anchor in v.visible for v in views) / len(views) if views else 0.0
    pointed = _observed_answer_object(scene, item, observed)
    if cand.anchor in observed and pointed is not None:
        anchor_fit = 1.0 if cand.anchor == pointed else -1.0
    else:
        anchor_fit = 0.0
    answer_fit = 0.0 if pointed is None else (1.0 if answer_of(scene, item, pointed) == cand.answer else -1.0)
    return [1.0 if cand.well_formed else 0.0, anchor_fit, answer_fit, vis]


def build_candidates(scene: SceneSpec, item: QAItem, rng: np.random.Generator, render_malformed: bool = True) -> list[Candidate]:
    truth = item.answer
    others = [i for i in range(len(scene.objects)) if i != item.target]
    differing = [i for i in others if answer_of(scene, item, i) != truth]
    j1 = int(rng.choice(differing or others))
    rest = [i for i in others if i != j1]
    j2 = int(rng.choice(rest or others))
    pool = COLORS if item.template == "attribute" else LABELS
    wrong = [a for a in pool if a != truth]
    misread = str(wrong[int(rng.integers(len(wrong)))])
    cands = [
        Candidate("gold", truth, item.target, True),
        Candidate("gold_malformed", truth, item.target, not render_malformed),
        Candidate("grounded_distractor", answer_of(scene, item, j1), j1, True),
        Candidate("ungrounded", truth, j2, True),
        Candidate("misread", misread, item.target, True),
        Candidate("distractor_malformed", answer_of(scene, item, j1), j1, not render_malformed),
    ]
    order = rng.permutation(N_SLOTS)
    return [cands[i] for i in order]


def render_candidate(scene: SceneSpec, cand: Candidate) -> str:
    o = scene.objects[cand.anchor]
    think = f"Locate the {o.color} {o.label} and read the answer from it."
    if cand.well_formed:
        return render_structured(think, cand.answer)
    return f"<answer>{cand.answer}</answer><think>{think}</think>"


def candidate_rewards(
    scene: SceneSpec, item: QAItem, cands: list[Candidate], provider: EmbeddingProvider, weights: RewardWeights, gate: bool
) -> np.ndarray:
    truth_box = scene.objects[item.target].box
    return np.array(
        [
            score_response(
                render_candidate(scene, c), scene.objects[c.anchor].box, truth_box, item.answer, provider, weights, gate
            ).total
            for c in cands
        ]
    )


def is_exact(cand: Candidate, item: QAItem) -> bool:
    """Grounded exact match: parses, answer matches, anchor is the target."""
    return cand.well_formed and cand.answer == item.answer and cand.anchor == item.target


def candidate_iou(scene: SceneSpec, item: QAItem, cand: Candidate) -> float:
    return iou(scene.objects[cand.anchor].box, scene.objects[item.target].box)


def context_key(scene_id: str, question: str) -> int:
    from ..embeddings import fnv1a_64

    return fnv1a_64(f"{scene_id}\x00{question}".encode()) & 0xFFFFFFFF


def build_context(
    cfg: RunConfig,
    scene: SceneSpec,
    item: QAItem,
    views: list[ViewCandidate],
    provider: EmbeddingProvider,
    weights: RewardWeights | None = None,
) -> Context:
    # candidate menus depend only on (seed, scene, question), never on views
    rng = substream(cfg.seed, "candidates", context_key(scene.id, item.question))
    cands = build_candidates(scene, item, rng, cfg.render_malformed)
    x = np.concatenate([slot_features(scene, item, c, views) for c in cands] + [[1.0]])
    ctx = Context(scene.id, item, cands, x, [v.id for v in views])
    if weights is not None:
        ctx.rewards = candidate_rewards(scene, item, cands, provider, weights, cfg.gate_on_format)
    return ctx
