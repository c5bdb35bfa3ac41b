"""Training objectives and their gradients with respect to response log-probabilities.

Each loss returns ``(loss, grad)`` where ``grad`` is the derivative of the loss
with respect to the policy's log-probability inputs. The policy module
chains these into parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyBatch, LengthMismatch, SupportMismatch


@dataclass(frozen=True)
class ObjectiveConfig:
    beta_dpo: float = 0.1
    beta_kl: float = 0.04
    clip_eps: float = 0.2
    sigma_floor: float = 1e-8

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ConfigError("clip_eps must lie in (0, 1)")
        if self.beta_kl < 0:
            raise ConfigError("beta_kl must be non-negative")
        if self.beta_dpo < 0:
            raise ConfigError("beta_dpo must be non-negative")
        if self.sigma_floor <= 0:
            raise ConfigError("sigma_floor must be positive")


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(_log_sigmoid(x))


def sft_loss(logprobs) -> tuple[float, np.ndarray]:
    lp = np.asarray(logprobs, dtype=np.float64)
    if lp.size == 0:
        raise EmptyBatch("sft_loss needs at least one target")
    return float(-lp.mean()), np.full(lp.shape, -1.0 / lp.size)


def dpo_loss(lp_w, lp_l, lp_w_ref, lp_l_ref, beta: float):
    """Batched DPO loss.

    Returns ``(loss, (d_lp_w, d_lp_l), margins)`` where ``margins`` are the
    beta-scaled implicit reward margins per pair.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    lp_w, lp_l, lp_w_ref, lp_l_ref = (
        np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in (lp_w, lp_l, lp_w_ref, lp_l_ref)
    )
    if not lp_w.shape == lp_l.shape == lp_w_ref.shape == lp_l_ref.shape:
        raise LengthMismatch("preference batch arrays differ in length")
    if lp_w.size == 0:
        raise EmptyBatch("dpo_loss needs at least one pair")
    margins = beta * ((lp_w - lp_w_ref) - (lp_l - lp_l_ref))
    n = lp_w.size
    loss = float(-_log_sigmoid(margins).mean())
    # d/dm [-log sigmoid(m)] = -sigmoid(-m)
    coef = -_sigmoid(-margins) * beta / n
    return loss, (coef, -coef), margins


def group_advantages(rewards, sigma_floor: float = 1e-8) -> np.ndarray:
    """Z-score rewards within one group (population std); zero when the group is flat."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("rewards must be non-empty")
    std = r.std()
    if std < sigma_floor:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def clipped_terms(lp_theta, lp_ref, advantages, clip_eps: float):
    """Per-response surrogate ``min(ratio*A, clip(ratio)*A)`` and its derivative in lp_theta."""
    ratio = np.exp(np.asarray(lp_theta, dtype=np.float64) - np.asarray(lp_ref, dtype=np.float64))
    adv = np.asarray(advantages, dtype=np.float64)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    take_unclipped = unclipped <= clipped
    terms = np.where(take_unclipped, unclipped, clipped)
    dterms = np.where(take_unclipped, unclipped, 0.0)
    return terms, dterms


def grpo_objective(lp_theta, lp_ref, advantages, kl: float, cfg: ObjectiveConfig):
    """Clipped group surrogate with a KL penalty, as a loss to minimize.

    Returns ``(loss, d_loss/d_lp_theta)``. Advantages and reference
    log-probabilities are constants; the loss depends on ``kl`` with slope
    ``cfg.beta_kl``.
    """
    lp_theta = np.asarray(lp_theta, dtype=np.float64)
    lp_ref = np.asarray(lp_ref, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    if not lp_theta.shape == lp_ref.shape == advantages.shape:
        raise LengthMismatch("lp_theta, lp_ref and advantages must have equal length")
    g = lp_theta.size
    if g == 0:
        raise LengthMismatch("empty group")
    terms, dterms = clipped_terms(lp_theta, lp_ref, advantages, cfg.clip_eps)
    loss = -(terms.sum() / g - cfg.beta_kl * kl)
    return float(loss), -dterms / g


def kl_exact(p_theta, p_ref) -> float:
    p = np.asarray(p_theta, dtype=np.float64)
    q = np.asarray(p_ref, dtype=np.float64)
    if p.shape != q.shape:
        raise LengthMismatch("distributions differ in size")
    for name, d in (("p_theta", p), ("p_ref", q)):
        if abs(d.sum() - 1.0) > 1e-9 or (d < 0).any():
            raise ValueError(f"{name} is not a probability vector")
    support = p > 0
    if (q[support] <= 0).any():
        raise SupportMismatch("reference has no mass where p_theta does")
    return float(max(0.0, np.sum(p[support] * np.log(p[support] / q[support]))))


def kl_sampled(lp_theta_samples, lp_ref_samples) -> float:
    """Non-negative KL estimate from samples drawn under theta."""
    a = np.asarray(lp_theta_samples, dtype=np.float64)
    b = np.asarray(lp_ref_samples, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch("sample lists differ in length")
    if a.size == 0:
        raise LengthMismatch("need at least one sample")
    return float(kl_sampled_terms(a, b).mean())


def kl_sampled_terms(lp_theta_samples, lp_ref_samples) -> np.ndarray:
    x = np.asarray(lp_ref_samples, dtype=np.float64) - np.asarray(lp_theta_samples, dtype=np.float64)
    return np.expm1(x) - x
