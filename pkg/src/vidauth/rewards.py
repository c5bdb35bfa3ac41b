"""Rule-based rewards: binary, temporal-artifact bonus, quality partial credit, length bonus."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

from .core import AnswerLabel, AnswerSpace, Kind, Response, RolloutGroup, is_binary_correct, progress
from .errors import ConfigError, MissingManipulatedGroup, UnknownStep


@dataclass(frozen=True)
class RewardConfig:
    alpha1: float = 0.5
    alpha2: float = 0.3
    mu: float = 0.8
    delta: float = 1.0
    omega: float = 0.1
    l_min: int = 320
    l_max: int = 512

    def __post_init__(self):
        if not self.alpha1 > self.alpha2 > 0:
            raise ConfigError("need alpha1 > alpha2 > 0")
        if not 0 < self.mu < 1:
            raise ConfigError("mu must lie in (0, 1)")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.l_min > self.l_max:
            raise ConfigError("l_min must not exceed l_max")


def grpo_reward(response: Response, truth: AnswerLabel) -> float:
    return 1.0 if is_binary_correct(response.answer, truth) else 0.0


def fake_fraction(responses: Sequence[Response]) -> float:
    """Share of responses answering fake (p-tilde for a manipulated group)."""
    return sum(r.answer.kind is Kind.FAKE for r in responses) / len(responses)


def ta_rewards(group: RolloutGroup, cfg: RewardConfig) -> list[float]:
    """Binary rewards plus the temporal-artifact bonus, one per original response.

    The bonus is group-wise: a single p-tilde is computed from the
    manipulated responses, and each correct original response receives
    ``alpha1`` (real source) or ``alpha2`` (fake source) when p-tilde > mu.
    """
    if not group.manipulated_responses:
        raise MissingManipulatedGroup(f"group {group.input_id!r} has no manipulated responses")
    p_tilde = fake_fraction(group.manipulated_responses)
    bonus = cfg.alpha1 if group.truth.is_real else cfg.alpha2
    out = []
    for resp in group.responses:
        r = grpo_reward(resp, group.truth)
        out.append(r + bonus if (r == 1.0 and p_tilde > cfg.mu) else r)
    return out


def q_reward(answer: AnswerLabel, truth: AnswerLabel, space: AnswerSpace, cfg: RewardConfig) -> float:
    for label in (answer, truth):
        if label.kind is Kind.FAKE and label.step is None:
            raise UnknownStep("quality-graded reward needs a step on fake labels")
        space.check(label)
    if answer.kind is not truth.kind:
        return 0.0
    if answer == truth:
        return cfg.delta
    return abs(cfg.delta * (1.0 - abs(progress(answer, space) - progress(truth, space))))


def exact_match_reward(answer: AnswerLabel, truth: AnswerLabel, cfg: RewardConfig) -> float:
    """All-or-nothing baseline for the graded task: delta on exact match, else 0."""
    return cfg.delta if answer == truth else 0.0


def length_bonus(base: float, correct: bool, length: int, cfg: RewardConfig) -> float:
    if length < 0:
        raise ValueError("length must be non-negative")
    if correct and cfg.l_min <= length <= cfg.l_max:
        return base + cfg.omega
    return base


def reward_table(space: AnswerSpace, cfg: RewardConfig) -> list[list[float]]:
    """q_reward over every (answer, truth) pair; rows are answers, columns truths."""
    labels = space.graded_labels()
    return [[q_reward(a, t, space, cfg) for t in labels] for a in labels]


def reward_table_csv(space: AnswerSpace, cfg: RewardConfig) -> str:
    labels = [str(x) for x in space.graded_labels()]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["answer\\truth"] + labels)
    for name, row in zip(labels, reward_table(space, cfg)):
        writer.writerow([name] + [f"{v:.6f}" for v in row])
    return buf.getvalue()
