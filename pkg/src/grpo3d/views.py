"""Candidate-view scoring, learnable score fusion and top-k selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .embeddings import cosine


@dataclass(frozen=True)
class ViewCandidate:
    id: str
    camera_position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    point3d_embedding: np.ndarray = field(repr=False, compare=False)
    rendered_joint_embedding: np.ndarray = field(repr=False, compare=False)
    visible: tuple[int, ...] = ()


@dataclass(frozen=True)
class SceneQueryContext:
    text_embedding: np.ndarray
    joint_text_embedding: np.ndarray
    image_embeddings: Sequence[np.ndarray]

    def __post_init__(self):
        if len(self.image_embeddings) == 0:
            raise ValueError("scene query needs at least one multi-view image embedding")


@dataclass(frozen=True)
class ScoreTriple:
    text3d: float
    image3d: float
    joint: float

    def as_array(self) -> np.ndarray:
        return np.array([self.text3d, self.image3d, self.joint])

    def scaled(self, c: float) -> "ScoreTriple":
        return ScoreTriple(c * self.text3d, c * self.image3d, c * self.joint)


def _sigmoid(a: float) -> float:
    if a >= 0:
        return 1.0 / (1.0 + math.exp(-a))
    e = math.exp(a)
    return e / (1.0 + e)


@dataclass(frozen=True)
class FusionWeights:
    """Text weight plus a logit ``pre`` that splits coverage vs joint weight.

    ``w_coverage = sigmoid(pre)`` and ``w_joint = 1 - w_coverage``, so the two
    visual weights always sum to one.
    """

    w_text: float = 0.3
    pre: float = 0.0
    mu: float = 0.3
    lam: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("regularization coefficient must be non-negative")

    @property
    def w_coverage(self) -> float:
        return _sigmoid(self.pre)

    @property
    def w_joint(self) -> float:
        return 1.0 - self.w_coverage

    @classmethod
    def from_weights(cls, w_text: float, w_coverage: float, **kw) -> "FusionWeights":
        if not 0.0 < w_coverage < 1.0:
            raise ValueError("w_coverage must lie strictly inside (0, 1)")
        return cls(w_text=w_text, pre=math.log(w_coverage / (1.0 - w_coverage)), **kw)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.w_text, self.w_coverage, self.w_joint)


def score_view(v: ViewCandidate, ctx: SceneQueryContext) -> ScoreTriple:
    text3d = cosine(ctx.text_embedding, v.point3d_embedding)
    image3d = float(np.mean([cosine(e, v.point3d_embedding) for e in ctx.image_embeddings]))
    joint = cosine(ctx.joint_text_embedding, v.rendered_joint_embedding)
    return ScoreTriple(text3d, image3d, joint)


def fuse(s: ScoreTriple, w: FusionWeights) -> float:
    return w.w_text * s.text3d + w.w_coverage * s.image3d + w.w_joint * s.joint


def rank_scored(scored: Sequence[tuple[str, float]], k: int) -> list[tuple[str, float]]:
    """Order by utility descending, ties by id; keep the first ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return sorted(scored, key=lambda item: (-item[1], item[0]))[:k]


def select_top_k(
    candidates: Sequence[ViewCandidate], ctx: SceneQueryContext, w: FusionWeights, k: int = 6
) -> list[tuple[str, float]]:
    if not candidates:
        raise ValueError("no candidate views to select from")
    return rank_scored([(v.id, fuse(score_view(v, ctx), w)) for v in candidates], k)


def weight_reg_loss(w: FusionWeights) -> float:
    return w.lam * (w.w_text - w.mu) ** 2


@dataclass
class FusionItem:
    """Scored candidates for one query plus the ids the simulator prefers."""

    candidates: Sequence[ViewCandidate]
    ctx: SceneQueryContext
    preferred: Sequence[str]


def _rank_pairs(dataset: Sequence[FusionItem]) -> np.ndarray:
    """Score differences (preferred - other) for every rankable pair."""
    diffs = []
    for item in dataset:
        scores = {v.id: score_view(v, item.ctx).as_array() for v in item.candidates}
        pref = [i for i in item.preferred if i in scores]
        others = [i for i in scores if i not in set(pref)]
        for p in pref:
            for o in others:
                diffs.append(scores[p] - scores[o])
    return np.array(diffs).reshape(-1, 3)


def hinge_ranking_loss(w: FusionWeights, diffs: np.ndarray, margin: float = 0.1) -> float:
    wv = np.array(w.as_tuple())
    slack = np.maximum(0.0, margin - diffs @ wv)
    return float(slack.mean()) + weight_reg_loss(w)


def train_fusion_weights(
    dataset: Sequence[FusionItem],
    steps: int,
    step_size: float,
    rng: np.random.Generator | None = None,
    init: FusionWeights = FusionWeights(),
    margin: float = 0.1,
    batch_size: int | None = None,
    history: list | None = None,
) -> FusionWeights:
    """Gradient descent on mean pairwise hinge loss plus the ``w_text`` L2 pull.

    Only ``w_text`` and ``pre`` move; ``mu`` and ``lam`` come from ``init``.
    With ``batch_size`` set, each step uses a random subset of pairs drawn
    from ``rng``. If ``history`` is given, the weights after every step are
    appended to it.
    """
    if steps == 0:
        return init
    diffs = _rank_pairs(dataset)
    if len(diffs) == 0:
        raise ValueError("dataset has no rankable (preferred, other) pairs")
    if step_size * init.lam >= 1.0:
        raise ValueError("step_size * lam >= 1 makes the L2 pull on w_text diverge")
    if batch_size is not None and rng is None:
        raise ValueError("minibatch training needs an rng")
    w = init
    for _ in range(steps):
        batch = diffs
        if batch_size is not None and batch_size < len(diffs):
            batch = diffs[rng.choice(len(diffs), size=batch_size, replace=False)]
        wv = np.array(w.as_tuple())
        active = (margin - batch @ wv) > 0.0
        # d(mean hinge)/d(w_t, w_c, w_clip)
        g = -(batch * active[:, None]).sum(axis=0) / len(batch)
        wc = w.w_coverage
        g_text = g[0] + 2.0 * w.lam * (w.w_text - w.mu)
        g_pre = (g[1] - g[2]) * wc * (1.0 - wc)
        w = replace(w, w_text=float(w.w_text - step_size * g_text), pre=float(w.pre - step_size * g_pre))
        if history is not None:
            history.append(w)
    return w
