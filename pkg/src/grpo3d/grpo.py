"""Group sampling, advantage normalization and the clipped GRPO objective.

The policy is a linear-softmax categorical model: ``p = softmax(theta.T @ x)``
with ``theta`` of shape ``(features, actions)``. All gradients are closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KL_FLOOR = 1e-12


class NonFiniteUpdate(FloatingPointError):
    """Raised when an update step would produce a non-finite gradient."""


@dataclass
class GrpoConfig:
    group_size: int = 8
    clip_eps: float = 0.2
    kl_coeff: float = 0.02
    std_eps: float = 1e-8
    inner_epochs: int = 1
    step_size: float = 0.1

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.kl_coeff < 0:
            raise ValueError("kl_coeff must be non-negative")
        if self.std_eps <= 0 or self.step_size <= 0:
            raise ValueError("std_eps and step_size must be positive")
        if self.inner_epochs < 1:
            raise ValueError("inner_epochs must be >= 1")


@dataclass
class Group:
    responses: np.ndarray
    old_logprobs: np.ndarray
    rewards: np.ndarray | None = None
    advantages: np.ndarray | None = None

    def __post_init__(self):
        self.responses = np.asarray(self.responses, dtype=int)
        self.old_logprobs = np.asarray(self.old_logprobs, dtype=float)
        if len(self.responses) < 2 or len(self.old_logprobs) != len(self.responses):
            raise ValueError("group needs >= 2 responses with matching log-probs")

    @property
    def size(self) -> int:
        return len(self.responses)

    def with_rewards(self, rewards, std_eps: float = 1e-8) -> "Group":
        r = np.asarray(rewards, dtype=float)
        if r.shape != self.responses.shape:
            raise ValueError("reward vector length must equal group size")
        return Group(self.responses, self.old_logprobs, r, normalize_advantages(r, std_eps))


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z)
    return z - np.log(np.sum(np.exp(z)))


def policy_logprobs(theta: np.ndarray, ctx: np.ndarray) -> np.ndarray:
    return log_softmax(np.asarray(theta).T @ np.asarray(ctx))


def policy_probs(theta: np.ndarray, ctx: np.ndarray) -> np.ndarray:
    return np.exp(policy_logprobs(theta, ctx))


def sample_group(theta: np.ndarray, ctx: np.ndarray, n: int, rng: np.random.Generator) -> Group:
    """Draw ``n`` i.i.d. actions (with replacement) from the policy."""
    if n < 2:
        raise ValueError("group size must be >= 2 for advantage normalization")
    logp = policy_logprobs(theta, ctx)
    p = np.exp(logp)
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    u = rng.random(n)
    responses = np.minimum(np.searchsorted(cdf, u, side="right"), len(p) - 1)
    return Group(responses, logp[responses])


def normalize_advantages(r, std_eps: float = 1e-8) -> np.ndarray:
    """Standardize rewards within a group (population std).

    Groups whose rewards are (numerically) all equal get zero advantages.
    """
    r = np.asarray(r, dtype=float)
    if r.ndim != 1 or len(r) < 2:
        raise ValueError("need a reward vector of length >= 2")
    std = r.std()
    if std < std_eps:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def kl_categorical(p, q) -> float:
    """KL(p || q) with 0 log 0 = 0 and q floored at 1e-12."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    q = np.maximum(q, KL_FLOOR)
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def clipped_surrogate(ratio, adv, clip_eps: float):
    """Per-sample ``min(r A, clip(r, 1-eps, 1+eps) A)``."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def _ratios(theta, ctx, group):
    logp = policy_logprobs(theta, ctx)
    return logp, np.exp(logp[group.responses] - group.old_logprobs)


def grpo_objective(theta, theta_old, theta_ref, ctx, group: Group, cfg: GrpoConfig) -> float:
    """Clipped group objective minus ``beta * KL(pi_theta || pi_ref)`` for one context.

    ``theta_old`` is only used through ``group.old_logprobs``; it is accepted
    for signature symmetry with :func:`grpo_update`.
    """
    if group.advantages is None:
        raise ValueError("group advantages must be normalized first")
    logp, ratio = _ratios(theta, ctx, group)
    surrogate = clipped_surrogate(ratio, group.advantages, cfg.clip_eps).mean()
    kl = kl_categorical(np.exp(logp), policy_probs(theta_ref, ctx)) if cfg.kl_coeff else 0.0
    return float(surrogate - cfg.kl_coeff * kl)


def grpo_gradient(theta, theta_ref, ctx, group: Group, cfg: GrpoConfig) -> np.ndarray:
    ctx = np.asarray(ctx, dtype=float)
    logp, ratio = _ratios(theta, ctx, group)
    p = np.exp(logp)
    adv = group.advantages
    # d/d ratio of min(rA, clip(r)A): A on the unclipped branch, 0 on the plateau
    active = np.where(adv >= 0, ratio < 1.0 + cfg.clip_eps, ratio > 1.0 - cfg.clip_eps)
    coef = np.where(active, adv * ratio, 0.0) / group.size
    gz = -coef.sum() * p
    np.add.at(gz, group.responses, coef)
    if cfg.kl_coeff:
        logq = np.log(np.maximum(policy_probs(theta_ref, ctx), KL_FLOOR))
        d = logp - logq
        gz -= cfg.kl_coeff * p * (d - np.dot(p, d))
    return np.outer(ctx, gz)


def grpo_update(theta, theta_old, theta_ref, ctx, group: Group, cfg: GrpoConfig) -> np.ndarray:
    """``cfg.inner_epochs`` steps of gradient ascent on the objective.

    Returns a new matrix; the inputs are not modified. Importance ratios use
    the group's stored old log-probs, so every inner epoch is off-policy
    with respect to the same sampling snapshot.
    """
    theta = np.array(theta, dtype=float, copy=True)
    for _ in range(cfg.inner_epochs):
        g = grpo_gradient(theta, theta_ref, ctx, group, cfg)
        if not np.all(np.isfinite(g)):
            raise NonFiniteUpdate("non-finite GRPO gradient; update aborted")
        theta += cfg.step_size * g
    return theta


@dataclass
class CategoricalPolicy:
    """Thin holder for a logit-weight matrix with convenience accessors."""

    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim != 2 or not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be a finite 2-D matrix")

    @classmethod
    def zeros(cls, n_features: int, n_actions: int) -> "CategoricalPolicy":
        return cls(np.zeros((n_features, n_actions)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.theta.shape

    def probs(self, ctx) -> np.ndarray:
        return policy_probs(self.theta, ctx)

    def copy(self) -> "CategoricalPolicy":
        return CategoricalPolicy(self.theta.copy())
