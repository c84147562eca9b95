"""Cold-start SFT, GRPO training, evaluation and the ablation sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..embeddings import EmbeddingProvider
from ..grpo import (
    GrpoConfig,
    NonFiniteUpdate,
    grpo_objective,
    grpo_update,
    kl_categorical,
    log_softmax,
    policy_probs,
    sample_group,
)
from ..rewards import RewardWeights
from ..scene_sim import QAItem, SceneSpec
from ..views import FusionWeights, train_fusion_weights
from .config import RunConfig, substream
from .data import Dataset, build_dataset
from .task import N_FEATURES, N_SLOTS, Context, SceneViews, build_context, candidate_iou, fusion_items, is_exact

log = logging.getLogger(__name__)


def make_provider(cfg: RunConfig) -> EmbeddingProvider:
    return EmbeddingProvider.aligned(cfg.embed_dim)


def scene_views(scenes: dict[str, SceneSpec], cfg: RunConfig, provider: EmbeddingProvider) -> dict[str, SceneViews]:
    return {sid: SceneViews(scene, cfg, provider) for sid, scene in scenes.items()}


def fusion_weights(
    cfg: RunConfig,
    views: dict[str, SceneViews],
    train_qa: list[tuple[str, QAItem]],
    provider: EmbeddingProvider,
) -> FusionWeights:
    init = FusionWeights(w_text=cfg.fusion_mu, pre=0.0, mu=cfg.fusion_mu, lam=cfg.fusion_lambda)
    if cfg.fusion != "learned":
        w_text, w_cov = cfg.fusion
        return FusionWeights.from_weights(w_text, w_cov, mu=cfg.fusion_mu, lam=cfg.fusion_lambda)
    items = fusion_items(views, train_qa, provider)
    if not items:
        log.warning("no rankable view-preference items; keeping default fusion weights")
        return init
    return train_fusion_weights(
        items, cfg.fusion_steps, cfg.fusion_step_size, substream(cfg.seed, "fusion"), init, cfg.fusion_margin
    )


@dataclass
class Task:
    """Everything needed to train and evaluate on one generated dataset."""

    cfg: RunConfig
    data: Dataset
    provider: EmbeddingProvider
    views: dict[str, SceneViews]
    weights: FusionWeights
    selections: dict[tuple[str, str], list] = field(default_factory=dict)

    def selected(self, scene_id: str, item: QAItem):
        key = (scene_id, item.question)
        if key not in self.selections:
            self.selections[key] = self.views[scene_id].select(
                self.cfg.view_strategy, item.question, self.provider, self.weights, self.cfg.k_views
            )
        return self.selections[key]

    def contexts(self, qa: Sequence[tuple[str, QAItem]], rewards: RewardWeights | None = None) -> list[Context]:
        rewards = rewards or self.cfg.reward_config()
        out = []
        for sid, item in qa:
            views = [v for v, _ in self.selected(sid, item)]
            out.append(build_context(self.cfg, self.data.scenes[sid], item, views, self.provider, rewards))
        return out


def build_task(cfg: RunConfig, data: Dataset | None = None) -> Task:
    data = data or build_dataset(cfg)
    provider = make_provider(cfg)
    views = scene_views(data.scenes, cfg, provider)
    weights = fusion_weights(cfg, views, data.split("train"), provider)
    return Task(cfg, data, provider, views, weights)


# --- supervised cold start -------------------------------------------------------

def sft_loss(theta: np.ndarray, contexts: Sequence[Context]) -> float:
    return float(np.mean([-log_softmax(theta.T @ c.features)[c.gold] for c in contexts]))


def train_sft(
    contexts: Sequence[Context],
    epochs: int,
    step_size: float,
    rng: np.random.Generator,
    theta: np.ndarray | None = None,
    history: list | None = None,
) -> np.ndarray:
    """Per-example SGD on cross-entropy toward each context's gold response."""
    if not contexts:
        raise ValueError("SFT dataset is empty")
    theta = np.zeros((N_FEATURES, N_SLOTS)) if theta is None else np.array(theta, dtype=float)
    for _ in range(epochs):
        for idx in rng.permutation(len(contexts)):
            c = contexts[idx]
            p = policy_probs(theta, c.features)
            p[c.gold] -= 1.0
            theta -= step_size * np.outer(c.features, p)
        if history is not None:
            history.append(sft_loss(theta, contexts))
    return theta


# --- GRPO ------------------------------------------------------------------------

@dataclass
class RlStep:
    step: int
    mean_reward: float
    kl: float


@dataclass
class Rollout:
    """One GRPO step over one context; kept for logging and tests."""

    context: int
    responses: np.ndarray
    rewards: np.ndarray
    advantages: np.ndarray


def train_grpo(
    contexts: Sequence[Context],
    theta_init: np.ndarray,
    theta_ref: np.ndarray,
    gcfg: GrpoConfig,
    epochs: int,
    rng: np.random.Generator,
    log_steps: list[RlStep] | None = None,
) -> np.ndarray:
    """Loop over contexts: sample a group, score it, normalize, update.

    The reference policy stays frozen; the old policy for each group is the
    snapshot the group was sampled from.
    """
    if not all(c.rewards is not None for c in contexts):
        raise ValueError("contexts need precomputed candidate rewards")
    theta = np.array(theta_init, dtype=float)
    theta_ref = np.asarray(theta_ref, dtype=float)
    step = 0
    for _ in range(epochs):
        for idx in rng.permutation(len(contexts)):
            c = contexts[idx]
            theta_old = theta
            group = sample_group(theta_old, c.features, gcfg.group_size, rng)
            group = group.with_rewards(c.rewards[group.responses], gcfg.std_eps)
            theta = grpo_update(theta, theta_old, theta_ref, c.features, group, gcfg)
            if log_steps is not None:
                kl = kl_categorical(policy_probs(theta, c.features), policy_probs(theta_ref, c.features))
                log_steps.append(RlStep(step, float(group.rewards.mean()), kl))
            step += 1
    if not np.all(np.isfinite(theta)):
        raise NonFiniteUpdate("GRPO training produced a non-finite policy")
    return theta


# --- evaluation --------------------------------------------------------------------

@dataclass
class EvalResult:
    exact_match: float
    mean_iou: float
    mean_reward: float
    n_contexts: int
    n_responses: int

    def to_metrics(self) -> dict:
        return {
            "answerExactMatchRate": self.exact_match,
            "meanIoU": self.mean_iou,
            "meanReward": self.mean_reward,
            "nContexts": self.n_contexts,
            "nResponses": self.n_responses,
        }


def evaluate(
    theta: np.ndarray,
    contexts: Sequence[Context],
    scenes: dict[str, SceneSpec],
    decode: str = "sample",
    samples: int = 16,
    rng: np.random.Generator | None = None,
) -> EvalResult:
    """Exact-match, anchor IoU and reward of the policy's responses.

    ``sample`` draws ``samples`` responses per context, ``greedy`` takes the
    argmax, ``expected`` weights every candidate by its probability.
    """
    if not contexts:
        raise ValueError("no evaluation contexts")
    em = ious = rew = weight = 0.0
    n_resp = 0
    for c in contexts:
        scene = scenes[c.scene_id]
        exact = np.array([is_exact(k, c.item) for k in c.candidates], dtype=float)
        cand_iou = np.array([candidate_iou(scene, c.item, k) for k in c.candidates])
        p = policy_probs(theta, c.features)
        if decode == "expected":
            w = p
        elif decode == "greedy":
            w = np.zeros(len(p))
            w[int(np.argmax(p))] = 1.0
        else:
            if rng is None:
                raise ValueError("sampled decoding needs an rng")
            picks = sample_group(theta, c.features, max(samples, 2), rng).responses[:samples]
            w = np.bincount(picks, minlength=len(p)) / samples
        em += float(w @ exact)
        ious += float(w @ cand_iou)
        rew += float(w @ c.rewards) if c.rewards is not None else 0.0
        weight += 1.0
        n_resp += samples if decode == "sample" else 1
    return EvalResult(em / weight, ious / weight, rew / weight, len(contexts), n_resp)


def eval_policy(task: Task, theta: np.ndarray) -> EvalResult:
    cfg = task.cfg
    contexts = task.contexts(task.data.split("heldout"))
    return evaluate(theta, contexts, task.data.scenes, cfg.eval_decode, cfg.eval_samples, substream(cfg.seed, "eval"))


# --- stages on a Task ---------------------------------------------------------------

def sft_contexts(task: Task, accepted: Sequence) -> list[Context]:
    """Contexts for accepted CoT records, matched to QA items by (scene, question)."""
    lookup = {(sid, item.question): (sid, item) for sid, item in task.data.split("train")}
    pairs = [lookup[(ex.scene_id, ex.question)] for ex in accepted if (ex.scene_id, ex.question) in lookup]
    return task.contexts(pairs)


def run_sft(task: Task, accepted: Sequence, history: list | None = None) -> np.ndarray:
    cfg = task.cfg
    return train_sft(sft_contexts(task, accepted), cfg.sft_epochs, cfg.sft_step_size, substream(cfg.seed, "sft"), history=history)


def run_rl(
    task: Task,
    theta_sft: np.ndarray,
    rewards: RewardWeights | None = None,
    log_steps: list[RlStep] | None = None,
) -> np.ndarray:
    cfg = task.cfg
    contexts = task.contexts(task.data.split("train"), rewards)
    return train_grpo(contexts, theta_sft, theta_sft, cfg.grpo(), cfg.rl_epochs, substream(cfg.seed, "sampling"), log_steps)



# --- ablations ---------------------------------------------------------------------------

REWARD_ABLATION = {
    "sft_only": None,
    "format": ("format",),
    "perception": ("perception",),
    "similarity": ("similarity",),
    "format+perception": ("format", "perception"),
    "format+similarity": ("format", "similarity"),
    "perception+similarity": ("perception", "similarity"),
    "all": ("format", "perception", "similarity"),
}


def accepted_records(task: Task) -> list:
    from ..cot_filter import filter_dataset
    from .data import echo_oracle

    return filter_dataset(task.data.cot, echo_oracle, task.cfg.filter_config()).accepted


def reward_ablation(cfg: RunConfig, seeds: Sequence[int], configs: Sequence[str] = tuple(REWARD_ABLATION)) -> dict[str, list[float]]:
    """Held-out exact match per reward configuration and seed."""
    results: dict[str, list[float]] = {name: [] for name in configs}
    for seed in seeds:
        scfg = cfg.replace(seed=seed)
        task = build_task(scfg)
        theta_sft = run_sft(task, accepted_records(task))
        for name in configs:
            comps = REWARD_ABLATION[name]
            theta = theta_sft if comps is None else run_rl(task, theta_sft, RewardWeights.only(*comps))
            results[name].append(eval_policy(task, theta).exact_match)
    return results


def view_ablation(
    cfg: RunConfig, seeds: Sequence[int], strategies: Sequence[str] = ("all", "horizontal", "bottom", "learned")
) -> dict[str, list[float]]:
    """Downstream held-out exact match (SFT then RL) per view strategy and seed."""
    results: dict[str, list[float]] = {s: [] for s in strategies}
    for seed in seeds:
        base = build_dataset(cfg.replace(seed=seed))
        for strategy in strategies:
            task = build_task(cfg.replace(seed=seed, view_strategy=strategy), base)
            theta = run_rl(task, run_sft(task, accepted_records(task)))
            results[strategy].append(eval_policy(task, theta).exact_match)
    return results
