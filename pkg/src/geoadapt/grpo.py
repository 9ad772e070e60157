"""Group Relative Policy Optimization on a linear-softmax toy policy.

Each candidate is a single whole-response action, so the importance ratio
is ``exp(logp_new - logp_old)`` of that action. The KL penalty is the exact
KL divergence between the current and reference action distributions for
the prompt's features.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rewards import RewardParams
from .world import SyntheticGeoWorld, SyntheticImage

log = logging.getLogger(__name__)


class NumericFailure(ArithmeticError):
    """Raised when logits or gradients stop being finite."""


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted)))


@dataclass
class ToyPolicy:
    """Linear policy: ``logits = weights @ features / temperature``."""

    weights: np.ndarray
    temperature: float = 1.0

    def __post_init__(self) -> None:
        self.weights = np.array(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a (n_actions, n_features) matrix")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @classmethod
    def init(cls, n_actions: int, n_features: int, seed: int, scale: float = 0.01, temperature: float = 1.0) -> "ToyPolicy":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, scale, size=(n_actions, n_features)), temperature)

    @property
    def n_actions(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.weights.copy(), self.temperature)

    def logits(self, features: np.ndarray) -> np.ndarray:
        z = self.weights @ np.asarray(features, dtype=float) / self.temperature
        if not np.all(np.isfinite(z)):
            raise NumericFailure("non-finite logits")
        return z

    def log_probs(self, features: np.ndarray) -> np.ndarray:
        return log_softmax(self.logits(features))

    def probs(self, features: np.ndarray) -> np.ndarray:
        return np.exp(self.log_probs(features))

    def dump(self) -> str:
        """Plain-text matrix dump, one row per action."""
        a, f = self.weights.shape
        lines = [f"# toy policy: {a} actions x {f} features, temperature {self.temperature!r}"]
        lines += [" ".join(repr(float(v)) for v in row) for row in self.weights]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ToyPolicy":
        header, *rows = [ln for ln in text.splitlines() if ln.strip()]
        temperature = float(header.rsplit("temperature", 1)[1])
        return cls(np.array([[float(v) for v in r.split()] for r in rows]), temperature)


@dataclass(frozen=True)
class CurriculumConfig:
    group_size: int = 8
    clip_eps: float = 0.2
    kl_beta: float = 0.04
    kl_beta_stage2: float | None = None
    learning_rate: float = 0.1
    stage1_epochs: int = 3
    stage2_epochs: int = 2
    seed: int = 42
    adv_eps: float = 1e-8
    scale_advantages: bool = True
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.kl_beta < 0 or (self.kl_beta_stage2 is not None and self.kl_beta_stage2 < 0):
            raise ValueError("KL coefficients must be non-negative")
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def for_stage(self, stage: int) -> "CurriculumConfig":
        if stage == 2 and self.kl_beta_stage2 is not None:
            return dataclasses.replace(self, kl_beta=self.kl_beta_stage2)
        return self


@dataclass
class CandidateGroup:
    prompt_id: str
    features: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    logp_ref: np.ndarray
    rewards: np.ndarray | None = None
    advantages: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.actions)


def sample_group(
    policy: ToyPolicy,
    features: np.ndarray,
    G: int,
    seed,
    ref: ToyPolicy | None = None,
    prompt_id: str = "",
) -> CandidateGroup:
    """Draw ``G`` i.i.d. actions from ``policy`` for one prompt.

    ``seed`` is anything ``numpy.random.default_rng`` accepts; a per-prompt
    tuple keeps runs reproducible regardless of processing order.
    """
    if G < 2:
        raise ValueError(f"group size must be at least 2, got {G}")
    features = np.asarray(features, dtype=float)
    try:
        logp = policy.log_probs(features)
        logp_ref = (ref or policy).log_probs(features)
    except NumericFailure as exc:
        raise NumericFailure(f"prompt {prompt_id!r}: {exc}") from None
    rng = np.random.default_rng(seed)
    actions = rng.choice(policy.n_actions, size=G, p=np.exp(logp))
    return CandidateGroup(prompt_id, features, actions, logp[actions], logp_ref[actions])


def normalize_advantages(rewards: Sequence[float], eps: float = 1e-8, scale: bool = True) -> np.ndarray:
    """Center rewards within the group, optionally dividing by ``std + eps``."""
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise ValueError("need at least two rewards per group")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    centered = r - r.mean()
    if not scale:
        return centered
    return centered / (r.std() + eps)


def clipped_surrogate(ratio, advantage, eps: float):
    """Per-candidate ``min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)``."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)


def kl_divergence(logp: np.ndarray, logq: np.ndarray) -> float:
    """Exact KL(p || q) between two discrete distributions given as log-probs."""
    p = np.exp(logp)
    return float(max(0.0, np.sum(p * (logp - logq))))


def objective_and_grad(
    weights: np.ndarray,
    group: CandidateGroup,
    ref: ToyPolicy,
    clip_eps: float,
    beta: float,
    temperature: float = 1.0,
) -> tuple[float, float, np.ndarray]:
    """Surrogate objective, KL and the analytic gradient w.r.t. ``weights``.

    Candidates whose clipped branch is the active minimum contribute no
    gradient, matching the subgradient of ``min`` away from the kinks.
    """
    if group.advantages is None:
        raise ValueError(f"group {group.prompt_id!r} has no advantages")
    x = group.features
    z = weights @ x / temperature
    if not np.all(np.isfinite(z)):
        raise NumericFailure(f"non-finite logits for group {group.prompt_id!r}")
    logp = log_softmax(z)
    p = np.exp(logp)
    G = group.size
    adv = group.advantages

    ratio = np.exp(logp[group.actions] - group.logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    surrogate = float(np.mean(np.minimum(unclipped, clipped)))

    logq = ref.log_probs(x)
    kl_terms = p * (logp - logq)
    kl_raw = float(np.sum(kl_terms))

    grad_z = np.zeros_like(z)
    active = ~(unclipped > clipped)  # NaN stays active so it surfaces in the gradient
    for a, coef in zip(group.actions[active], (ratio * adv)[active]):
        grad_z[a] += coef / G
        grad_z -= (coef / G) * p
    # d KL / dz_k = p_k (log p_k - log q_k - KL)
    grad_z -= beta * (p * (logp - logq) - p * kl_raw)

    grad_w = np.outer(grad_z, x) / temperature
    return surrogate - beta * kl_raw, max(0.0, kl_raw), grad_w


def clipped_step(
    group: CandidateGroup,
    policy: ToyPolicy,
    ref: ToyPolicy,
    cfg: CurriculumConfig,
) -> tuple[ToyPolicy, float, float]:
    """One gradient-ascent step on the clipped surrogate minus the KL penalty.

    Returns the updated policy plus the objective and KL evaluated before
    the update.
    """
    if policy.weights.shape != ref.weights.shape:
        raise ValueError("policy and reference must share a shape")
    objective, kl, grad = objective_and_grad(
        policy.weights, group, ref, cfg.clip_eps, cfg.kl_beta, policy.temperature
    )
    if not np.all(np.isfinite(grad)):
        raise NumericFailure(f"non-finite gradient for group {group.prompt_id!r}")
    return ToyPolicy(policy.weights + cfg.learning_rate * grad, policy.temperature), objective, kl


RewardFn = Callable[[SyntheticImage, int], float]


@dataclass
class StageResult:
    policy: ToyPolicy
    trace: list[dict] = field(default_factory=list)
    step_kl: list[float] = field(default_factory=list)


def run_stage(
    world: SyntheticGeoWorld,
    policy: ToyPolicy,
    reward_fn: RewardFn,
    cfg: CurriculumConfig,
    epochs: int,
    ref: ToyPolicy | None = None,
    stage: int = 1,
) -> StageResult:
    """Train for ``epochs`` passes over the world's training split.

    The sampling (old) policy is snapshotted at the start of each epoch and
    each prompt gets one update. Trace rows carry the epoch's mean reward,
    mean KL and mean objective.
    """
    cfg = cfg.for_stage(stage)
    ref = (ref or policy).copy()
    policy = policy.copy()
    train = world.split("train")
    result = StageResult(policy)

    for epoch in range(epochs):
        old = policy.copy()
        order = np.random.default_rng([cfg.seed, stage, epoch]).permutation(train)
        rewards, kls, objectives = [], [], []
        for idx in order:
            img = world.images[idx]
            group = sample_group(old, img.features, cfg.group_size, [cfg.seed, stage, epoch, int(idx)], ref, img.image_id)
            group.rewards = np.array([reward_fn(img, int(a)) for a in group.actions])
            group.advantages = normalize_advantages(group.rewards, cfg.adv_eps, cfg.scale_advantages)
            try:
                policy, objective, kl = clipped_step(group, policy, ref, cfg)
            except NumericFailure as exc:
                raise NumericFailure(f"stage {stage} epoch {epoch + 1}: {exc}") from None
            rewards.extend(group.rewards)
            kls.append(kl)
            objectives.append(objective)
        result.step_kl.extend(kls)
        row = {
            "epoch": epoch + 1,
            "stage": stage,
            "mean_reward": float(np.mean(rewards)) if rewards else 0.0,
            "mean_kl": float(np.mean(kls)) if kls else 0.0,
            "objective": float(np.mean(objectives)) if objectives else 0.0,
        }
        log.info("stage %d epoch %d: reward %.4f kl %.5f", stage, epoch + 1, row["mean_reward"], row["mean_kl"])
        result.trace.append(row)
    result.policy = policy
    return result


@dataclass
class CurriculumResult:
    policy: ToyPolicy
    stage1: StageResult
    stage2: StageResult

    @property
    def trace(self) -> list[dict]:
        return self.stage1.trace + self.stage2.trace


def run_curriculum(
    world: SyntheticGeoWorld,
    init_policy: ToyPolicy,
    cfg: CurriculumConfig,
    params: RewardParams | None = None,
) -> CurriculumResult:
    """Stage 1 (depth + grounding) against the initial policy, then Stage 2
    (hierarchical geo reward) with the reference swapped to the Stage-1 result."""
    params = params or RewardParams()
    s1 = run_stage(
        world, init_policy, lambda img, a: world.stage1_reward(img, a, params),
        cfg, cfg.stage1_epochs, ref=init_policy, stage=1,
    )
    stage1_policy = s1.policy
    s2 = run_stage(
        world, stage1_policy, lambda img, a: world.stage2_reward(img, a, params),
        cfg, cfg.stage2_epochs, ref=stage1_policy, stage=2,
    )
    return CurriculumResult(s2.policy, s1, s2)


def depth_accuracy(policy: ToyPolicy, world: SyntheticGeoWorld, indices: Sequence[int]) -> float:
    """Fraction of images whose most likely depth bit (marginalized over cells) is correct."""
    if not indices:
        raise ValueError("no images to evaluate")
    k = world.n_cells
    hits = 0
    for idx in indices:
        img = world.images[idx]
        p = policy.probs(img.features)
        predicted = int(p[k:].sum() > p[:k].sum())
        hits += predicted == img.stratum.label
    return hits / len(indices)


def cell_accuracy(policy: ToyPolicy, world: SyntheticGeoWorld, indices: Sequence[int]) -> float:
    k = world.n_cells
    hits = 0
    for idx in indices:
        img = world.images[idx]
        p = policy.probs(img.features)
        hits += int(np.argmax(p[:k] + p[k:])) == img.cell
    return hits / len(indices)
