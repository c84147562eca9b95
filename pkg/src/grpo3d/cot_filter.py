"""Rule-based filtering of chain-of-thought records.

Rules run in a fixed order and the first failure wins: format, think
length, answer length, step count, target mention, then answer consistency
against an independent answerer. The answerer is only consulted when every
cheaper rule has passed.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Protocol, Sequence

import numpy as np

from .rewards import parse_structured, render_structured

log = logging.getLogger(__name__)

RULES = ("format", "thinkLength", "answerLength", "stepCount", "targetMention", "consistency")
ORACLE_ERROR = "oracleError"

DEFAULT_STEP_CUES = (r"step\s+\d+", r"first", r"next", r"last")

STOPWORDS = frozenset(
    """
    the a an and or but if then than that this these those there what which who where when
    why how is are was were be been has have had do does did of in on at to for from by with
    about into over under near not no it its they their can will also very all each
    """.split()
)


class OracleError(RuntimeError):
    """The answerer could not produce an answer (network, timeout, bad payload)."""


class OracleAnswerer(Protocol):
    def __call__(self, think: str, question: str) -> str: ...


@dataclass(frozen=True)
class CoTExample:
    scene_id: str
    question: str
    think: str
    answer: str

    def __post_init__(self):
        if not self.question.strip():
            raise ValueError("question must be non-empty")

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "question": self.question, "think": self.think, "answer": self.answer}

    @classmethod
    def from_dict(cls, d: dict) -> "CoTExample":
        fields_ = ("scene_id", "question", "think", "answer")
        if not isinstance(d, dict) or any(not isinstance(d.get(k), str) for k in fields_):
            raise ValueError("record needs string fields scene_id, question, think, answer")
        return cls(*(d[k] for k in fields_))


@dataclass(frozen=True)
class FilterConfig:
    min_think_words: int = 30
    min_answer_words: int = 20
    min_steps: int = 3
    sim_threshold: float = 0.8
    step_cues: tuple[str, ...] = DEFAULT_STEP_CUES
    canonicalize: bool = True

    def __post_init__(self):
        if min(self.min_think_words, self.min_answer_words, self.min_steps) < 1:
            raise ValueError("filter thresholds must be positive")
        if not 0.0 < self.sim_threshold <= 1.0:
            raise ValueError("sim_threshold must lie in (0, 1]")


@dataclass(frozen=True)
class FilterVerdict:
    accepted: bool
    failed_rule: str = "none"
    similarity: float | None = None


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance.

    Row-by-row dynamic program; within a row the insertion chain
    ``cur[j] = min(cur[j], cur[j-1] + 1)`` is resolved in one pass as a
    running minimum of ``cur[k] - k``.
    """
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    bb = np.frombuffer(b.encode("utf-32-le"), dtype=np.uint32)
    offsets = np.arange(len(b) + 1)
    prev = offsets.copy()
    for i, ca in enumerate(a, 1):
        cost = (bb != ord(ca)).astype(np.int64)
        cur = np.empty_like(prev)
        cur[0] = i
        cur[1:] = np.minimum(prev[1:] + 1, prev[:-1] + cost)
        cur = np.minimum.accumulate(cur - offsets) + offsets
        prev = cur
    return int(prev[-1])


_WS = re.compile(r"\s+")


def canonical(s: str) -> str:
    return _WS.sub(" ", s.lower()).strip()


def normalized_similarity(a_hat: str, a: str, canonicalize: bool = True) -> float:
    """``1 - lev(a_hat, a) / max(len)`` over characters; 1.0 for two empty strings."""
    if canonicalize:
        a_hat, a = canonical(a_hat), canonical(a)
    longest = max(len(a_hat), len(a))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a_hat, a) / longest


def word_count(s: str) -> int:
    return len(s.split())


def _cue_pattern(cues: Sequence[str]) -> re.Pattern:
    return re.compile(r"\b(?:" + "|".join(cues) + r")\b", re.IGNORECASE)


_DEFAULT_CUES = _cue_pattern(DEFAULT_STEP_CUES)


def count_reasoning_steps(think: str, cues: Sequence[str] = DEFAULT_STEP_CUES) -> int:
    pattern = _DEFAULT_CUES if tuple(cues) == DEFAULT_STEP_CUES else _cue_pattern(cues)
    return sum(1 for _ in pattern.finditer(think))


_CONCLUSION = re.compile(r"^conclusion\b:?", re.IGNORECASE)
_WORD = re.compile(r"[a-z0-9]+")


def content_words(s: str) -> set[str]:
    return {w for w in _WORD.findall(s.lower()) if len(w) >= 3 and w not in STOPWORDS}


def final_step_mentions_target(think: str, question: str) -> bool:
    wanted = content_words(question)
    for line in think.splitlines():
        line = line.strip()
        if _CONCLUSION.match(line) and content_words(line) & wanted:
            return True
    return False


def filter_example(ex: CoTExample, oracle: OracleAnswerer, cfg: FilterConfig = FilterConfig()) -> FilterVerdict:
    if parse_structured(render_structured(ex.think, ex.answer)) is None:
        return FilterVerdict(False, "format")
    if word_count(ex.think) < cfg.min_think_words:
        return FilterVerdict(False, "thinkLength")
    if word_count(ex.answer) < cfg.min_answer_words:
        return FilterVerdict(False, "answerLength")
    if count_reasoning_steps(ex.think, cfg.step_cues) < cfg.min_steps:
        return FilterVerdict(False, "stepCount")
    if not final_step_mentions_target(ex.think, ex.question):
        return FilterVerdict(False, "targetMention")
    try:
        a_hat = oracle(ex.think, ex.question)
    except OracleError as exc:
        log.warning("oracle failed for scene %s: %s", ex.scene_id, exc)
        return FilterVerdict(False, ORACLE_ERROR)
    if not isinstance(a_hat, str):
        return FilterVerdict(False, ORACLE_ERROR)
    s = normalized_similarity(a_hat, ex.answer, cfg.canonicalize)
    if s < cfg.sim_threshold:
        return FilterVerdict(False, "consistency", s)
    return FilterVerdict(True, "none", s)


@dataclass
class FilterReport:
    total: int = 0
    accepted: int = 0
    rejected: int = 0
    malformed: int = 0
    quarantined: int = 0
    per_rule: dict[str, int] = field(default_factory=lambda: {r: 0 for r in RULES})

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "malformed": self.malformed,
            "quarantined": self.quarantined,
            "perRule": dict(self.per_rule),
        }


@dataclass
class FilterResult:
    accepted: list[CoTExample]
    report: FilterReport
    quarantine: list[CoTExample]
    verdicts: list[FilterVerdict | None]


def _coerce(records: Iterable) -> Iterator[CoTExample | None]:
    for rec in records:
        if isinstance(rec, CoTExample):
            yield rec
            continue
        try:
            yield CoTExample.from_dict(rec)
        except (ValueError, TypeError) as exc:
            log.warning("skipping malformed record: %s", exc)
            yield None


def filter_dataset(
    records: Iterable,
    oracle: OracleAnswerer,
    cfg: FilterConfig = FilterConfig(),
    workers: int = 1,
) -> FilterResult:
    """Filter a stream of records, preserving input order.

    ``records`` may hold :class:`CoTExample` values or raw dicts; dicts that
    do not parse are counted as malformed and skipped. With ``workers > 1``
    examples are evaluated on a thread pool (which also bounds in-flight
    oracle calls) and merged back in input order. Oracle failures land in
    ``quarantine`` instead of being accepted.
    """
    examples = list(_coerce(records))
    check: Callable[[CoTExample | None], FilterVerdict | None] = (
        lambda ex: None if ex is None else filter_example(ex, oracle, cfg)
    )
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(check, examples))
    else:
        verdicts = [check(ex) for ex in examples]

    report = FilterReport(total=len(examples))
    accepted, quarantine = [], []
    for ex, v in zip(examples, verdicts):
        if v is None:
            report.malformed += 1
        elif v.accepted:
            report.accepted += 1
            accepted.append(ex)
        elif v.failed_rule == ORACLE_ERROR:
            report.quarantined += 1
            quarantine.append(ex)
        else:
            report.rejected += 1
            report.per_rule[v.failed_rule] += 1
    return FilterResult(accepted, report, quarantine, verdicts)


def rule_counts(verdicts: Iterable[FilterVerdict]) -> Counter:
    return Counter(v.failed_rule for v in verdicts if v is not None)
