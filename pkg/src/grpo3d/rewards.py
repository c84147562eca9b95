"""Format, perception and semantic-similarity rewards."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .embeddings import EmbeddingProvider, cosine, tokenize
from .geometry import Aabb3, iou

COMPONENTS = ("format", "perception", "similarity")

_STRUCTURED = re.compile(
    r"\A<think>(?P<think>.+?)</think>\s*<answer>(?P<answer>.+?)</answer>\Z", re.DOTALL
)
_TAG = re.compile(r"</?(think|answer)>")


@dataclass(frozen=True)
class StructuredResponse:
    think: str
    answer: str


def parse_structured(raw: str) -> StructuredResponse | None:
    """Split ``<think>..</think><answer>..</answer>``; None on any mismatch.

    Only whitespace may surround or separate the two tag pairs, and neither
    body may contain another think/answer tag.
    """
    m = _STRUCTURED.match(raw.strip())
    if m is None:
        return None
    think, answer = m.group("think"), m.group("answer")
    if _TAG.search(think) or _TAG.search(answer):
        return None
    if not think.strip() or not answer.strip():
        return None
    return StructuredResponse(think=think, answer=answer)


def render_structured(think: str, answer: str) -> str:
    return f"<think>{think}</think><answer>{answer}</answer>"


def reward_format(raw: str) -> int:
    return 1 if parse_structured(raw) is not None else 0


def reward_perception(predicted: Aabb3, truth: Aabb3) -> float:
    return iou(predicted, truth)


def reward_similarity(predicted_answer: str, truth_answer: str, provider: EmbeddingProvider) -> float:
    """Raw (unclamped) cosine of the text-channel answer embeddings."""
    return cosine(
        provider.embed("text", tokenize(predicted_answer)),
        provider.embed("text", tokenize(truth_answer)),
    )


@dataclass(frozen=True)
class RewardWeights:
    format: float = 1.0
    perception: float = 1.0
    similarity: float = 1.0
    use_format: bool = True
    use_perception: bool = True
    use_similarity: bool = True

    def __post_init__(self):
        if min(self.format, self.perception, self.similarity) < 0:
            raise ValueError("reward weights must be non-negative")
        if not (self.use_format or self.use_perception or self.use_similarity):
            raise ValueError("at least one reward component must be enabled")

    @classmethod
    def only(cls, *components: str) -> "RewardWeights":
        unknown = set(components) - set(COMPONENTS)
        if unknown:
            raise ValueError(f"unknown reward components: {sorted(unknown)}")
        return cls(**{f"use_{c}": c in components for c in COMPONENTS})

    def enabled(self) -> tuple[str, ...]:
        return tuple(c for c in COMPONENTS if getattr(self, f"use_{c}"))


@dataclass(frozen=True)
class RewardBreakdown:
    format: int
    perception: float
    similarity: float
    total: float


def combine_rewards(format: float, perception: float, similarity: float, w: RewardWeights = RewardWeights()) -> float:
    total = 0.0
    if w.use_format:
        total += w.format * format
    if w.use_perception:
        total += w.perception * perception
    if w.use_similarity:
        total += w.similarity * similarity
    return total


def score_response(
    raw: str,
    predicted_box: Aabb3 | None,
    truth_box: Aabb3,
    truth_answer: str,
    provider: EmbeddingProvider,
    weights: RewardWeights = RewardWeights(),
    gate_on_format: bool = True,
) -> RewardBreakdown:
    """Score one rendered response.

    With ``gate_on_format`` (the default) an unparseable response gets zero
    perception and similarity, since neither its answer nor its box can be
    read off reliably. Without it the answer falls back to the raw text.
    """
    parsed = parse_structured(raw)
    fmt = 1 if parsed is not None else 0
    if parsed is None and gate_on_format:
        perception = 0.0
        similarity = 0.0
    else:
        answer = parsed.answer if parsed is not None else _TAG.sub(" ", raw)
        perception = reward_perception(predicted_box, truth_box) if predicted_box is not None else 0.0
        similarity = reward_similarity(answer, truth_answer, provider)
    total = combine_rewards(fmt, perception, similarity, weights)
    return RewardBreakdown(fmt, perception, similarity, total)
