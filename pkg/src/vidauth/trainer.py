"""SFT, DPO and GRPO-family training loops for the toy policy, with checkpoints."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import objectives, policy
from .artifacts import ArtifactConfig, inject
from .config import digest, from_dict, to_dict
from .core import (
    LENGTH_BUCKETS,
    AnswerLabel,
    AnswerSpace,
    LengthBucket,
    Response,
    RolloutGroup,
    VideoSample,
    is_binary_correct,
)
from .datagen import Corpus, PreferencePair
from .errors import (
    ConfigError,
    DigestMismatch,
    EmptyPairs,
    IOFailure,
    VersionMismatch,
)
from .objectives import ObjectiveConfig
from .policy import PolicyParams
from .rewards import (
    RewardConfig,
    exact_match_reward,
    fake_fraction,
    grpo_reward,
    length_bonus,
    q_reward,
    ta_rewards,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "1"
MID = LENGTH_BUCKETS.index(LengthBucket.MID)


class Mode(str, enum.Enum):
    SFT = "sft"
    DPO = "dpo"
    GRPO = "grpo"
    GRPO_TA = "grpo-ta"
    GRPO_Q = "grpo-q"

    @property
    def is_rl(self) -> bool:
        return self in (Mode.GRPO, Mode.GRPO_TA, Mode.GRPO_Q)


class RatioBaseline(str, enum.Enum):
    REFERENCE = "reference"
    SAMPLING = "sampling"


class OptimizerKind(str, enum.Enum):
    ADAM = "adam"
    SGD = "sgd"


@dataclass(frozen=True)
class TrainConfig:
    mode: Mode = Mode.GRPO
    steps: int = 2000
    batch_inputs: int = 16
    G: int = 8
    G_prime: int = 4
    learning_rate: float = 1e-2
    optimizer: OptimizerKind = OptimizerKind.ADAM
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    artifact: ArtifactConfig = field(default_factory=ArtifactConfig)
    space: AnswerSpace = field(default_factory=AnswerSpace)
    length_reward_enabled: bool = True
    ta_update_manipulated: bool = True
    q_partial_credit: bool = True
    ratio_baseline: RatioBaseline = RatioBaseline.REFERENCE
    init_checkpoint: Optional[str] = None
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        object.__setattr__(self, "ratio_baseline", RatioBaseline(self.ratio_baseline))
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.batch_inputs < 1:
            raise ConfigError("batch_inputs must be at least 1")
        if self.G < 2:
            raise ConfigError("G must be at least 2")
        if self.mode is Mode.GRPO_TA and self.G_prime < 1:
            raise ConfigError("G_prime must be at least 1 in grpo-ta mode")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


# --- optimizer ----------------------------------------------------------------


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), 0)


def optimizer_step(theta: np.ndarray, grad: np.ndarray, state: OptimizerState, cfg: TrainConfig) -> np.ndarray:
    """One descent step on ``theta``; mutates ``state``."""
    state.t += 1
    if cfg.optimizer is OptimizerKind.SGD:
        return theta - cfg.learning_rate * grad
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1**state.t)
    v_hat = state.v / (1 - b2**state.t)
    return theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


# --- state and checkpoints ------------------------------------------------------


@dataclass
class TrainState:
    step: int
    params: PolicyParams
    opt: OptimizerState
    reference: Optional[PolicyParams] = None
    responses_sampled: int = 0
    log: list[dict] = field(default_factory=list)


def _floats(a) -> list[str]:
    return [repr(float(x)) for x in np.ravel(a)]


def _unfloats(xs) -> np.ndarray:
    return np.array([float(x) for x in xs], dtype=np.float64)


def _params_json(p: Optional[PolicyParams]):
    if p is None:
        return None
    return {
        "classes": [str(c) for c in p.classes],
        "shape": {"classes": len(p.classes), "features": p.n_features, "length_buckets": len(LENGTH_BUCKETS)},
        "values": _floats(p.flat()),
    }


def _params_from_json(d) -> Optional[PolicyParams]:
    if d is None:
        return None
    classes = tuple(AnswerLabel.parse(c) for c in d["classes"])
    template = PolicyParams.zeros(classes, int(d["shape"]["features"]))
    return template.with_flat(_unfloats(d["values"]))


def save_checkpoint(state: TrainState, cfg: TrainConfig, path) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "mode": cfg.mode.value,
        "step": state.step,
        "params": _params_json(state.params),
        "reference": _params_json(state.reference),
        "optimizer_state": {"m": _floats(state.opt.m), "v": _floats(state.opt.v), "t": state.opt.t},
        "rng_state": {"scheme": "seed-sequence[seed, step, input]", "seed": cfg.seed, "next_step": state.step},
        "responses_sampled": state.responses_sampled,
        "config_digest": digest(cfg),
        "config": to_dict(cfg),
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=1))
    except OSError as exc:
        raise IOFailure(str(exc)) from exc


def read_checkpoint(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IOFailure(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise IOFailure(f"{path}: not a checkpoint ({exc})") from exc
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {doc.get('version')!r}, expected {CHECKPOINT_VERSION!r}")
    return doc


def load_checkpoint(path, cfg: Optional[TrainConfig] = None) -> TrainState:
    """Load a checkpoint; with ``cfg`` given, its digest must match the saved one."""
    doc = read_checkpoint(path)
    if cfg is not None and digest(cfg) != doc["config_digest"]:
        raise DigestMismatch(f"{path} was written under a different configuration")
    opt = doc["optimizer_state"]
    if doc["rng_state"].get("next_step") != doc["step"]:
        raise IOFailure(f"{path}: inconsistent rng state")
    return TrainState(
        step=int(doc["step"]),
        params=_params_from_json(doc["params"]),
        opt=OptimizerState(_unfloats(opt["m"]), _unfloats(opt["v"]), int(opt["t"])),
        reference=_params_from_json(doc["reference"]),
        responses_sampled=int(doc.get("responses_sampled", 0)),
    )


def checkpoint_config(path) -> TrainConfig:
    return from_dict(TrainConfig, read_checkpoint(path)["config"])


# --- rollouts and rewards -------------------------------------------------------


def step_rng(seed: int, step: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step, stream]))


def response_correct(answer: AnswerLabel, truth: AnswerLabel, mode: Mode) -> bool:
    """Correctness used by the length bonus: exact label in grpo-q, real/fake otherwise."""
    if mode is Mode.GRPO_Q:
        return answer == truth
    return is_binary_correct(answer, truth)


def base_reward(answer: AnswerLabel, truth: AnswerLabel, cfg: TrainConfig) -> float:
    if cfg.mode is Mode.GRPO_Q:
        if cfg.q_partial_credit:
            return q_reward(answer, truth, cfg.space, cfg.reward)
        return exact_match_reward(answer, truth, cfg.reward)
    return grpo_reward(Response(answer), truth)


def group_rewards(group: RolloutGroup, cfg: TrainConfig) -> list[float]:
    """Rewards for the original responses of a group, including the length bonus."""
    if cfg.mode is Mode.GRPO_TA:
        rewards = ta_rewards(group, cfg.reward)
    else:
        rewards = [base_reward(r.answer, group.truth, cfg) for r in group.responses]
    if cfg.length_reward_enabled:
        rewards = [
            length_bonus(r, response_correct(resp.answer, group.truth, cfg.mode), resp.length, cfg.reward)
            for r, resp in zip(rewards, group.responses)
        ]
    return rewards


def manipulated_rewards(responses: Sequence[Response], cfg: TrainConfig) -> list[float]:
    """Manipulated videos are fake: reward 1 for a fake answer, plus the length bonus."""
    truth = AnswerLabel.fake()
    out = []
    for resp in responses:
        r = grpo_reward(resp, truth)
        if cfg.length_reward_enabled:
            r = length_bonus(r, r == 1.0, resp.length, cfg.reward)
        out.append(r)
    return out


def _responses(params: PolicyParams, ai, li, lp) -> tuple[Response, ...]:
    return tuple(
        Response(params.classes[a], LENGTH_BUCKETS[l], logprob=float(p)) for a, l, p in zip(ai, li, lp)
    )


def _head_grads(params: PolicyParams, features, ai, li, dlp):
    """Logit gradients of sum_j dlp_j * logprob(response_j) for one input."""
    k = len(params.classes)
    pa = np.exp(policy.answer_logprobs(params, features))
    pl = np.exp(policy.length_logprobs(params))
    da = np.bincount(ai, weights=dlp, minlength=k) - dlp.sum() * pa
    dl = np.bincount(li, weights=dlp, minlength=len(LENGTH_BUCKETS)) - dlp.sum() * pl
    return da, dl


@dataclass
class _Rollout:
    row: int
    ai: np.ndarray
    li: np.ndarray
    rewards: list[float]


def _rollout_loss(params, ref, features, rollouts: Sequence[_Rollout], cfg: TrainConfig):
    """Mean GRPO loss over groups and its flat parameter gradient (KL included).

    ``features[r.row]`` conditions rollout ``r``; each group carries one KL term.
    """
    la, la_ref = policy.answer_logprobs(params, features), policy.answer_logprobs(ref, features)
    ll, ll_ref = policy.length_logprobs(params), policy.length_logprobs(ref)
    pa, pl = np.exp(la), np.exp(ll)
    kl, da_kl, dl_kl = policy.kl_to_reference(params, ref, features)
    beta = cfg.objective.beta_kl
    da = beta * da_kl
    dl = beta * dl_kl
    losses = np.zeros(len(rollouts))
    k = len(params.classes)
    for j, r in enumerate(rollouts):
        lp = la[r.row, r.ai] + ll[r.li]
        if cfg.ratio_baseline is RatioBaseline.SAMPLING:
            lp_ref = lp.copy()
        else:
            lp_ref = la_ref[r.row, r.ai] + ll_ref[r.li]
        adv = objectives.group_advantages(r.rewards, cfg.objective.sigma_floor)
        losses[j], dlp = objectives.grpo_objective(lp, lp_ref, adv, float(kl[r.row]), cfg.objective)
        total = dlp.sum()
        da[r.row] += np.bincount(r.ai, weights=dlp, minlength=k) - total * pa[r.row]
        dl += np.bincount(r.li, weights=dlp, minlength=len(LENGTH_BUCKETS)) - total * pl
    n = len(rollouts)
    grad = policy.backprop(params, features, da, dl) / n
    return float(losses.mean()), grad, kl


# --- trainer ----------------------------------------------------------------------


def policy_classes(corpus: Corpus, space: AnswerSpace) -> tuple[AnswerLabel, ...]:
    return space.labels(graded=corpus.graded)


class Trainer:
    """Runs one training mode step by step.

    Every step draws its randomness from ``SeedSequence([seed, step, stream])``
    so a run resumed from a checkpoint replays the uninterrupted run exactly.
    """

    def __init__(
        self,
        cfg: TrainConfig,
        corpus: Optional[Corpus] = None,
        pairs: Optional[Sequence[PreferencePair]] = None,
        params0: Optional[PolicyParams] = None,
        state: Optional[TrainState] = None,
    ):
        self.cfg = cfg
        self.corpus = corpus
        if corpus is None:
            raise ConfigError("training needs a corpus")
        self.train_samples: list[VideoSample] = corpus.train or list(corpus.samples)
        classes = policy_classes(corpus, cfg.space)
        if cfg.mode is Mode.GRPO_Q and not corpus.graded:
            raise ConfigError("grpo-q needs a quality-graded corpus")
        if cfg.mode is Mode.DPO:
            if not pairs:
                raise EmptyPairs("dpo needs at least one preference pair")
            self.pairs = list(pairs)
            by_id = corpus.by_id()
            self._pair_inputs = [by_id[p.input_id] for p in self.pairs]
            self._feat_samples = self._pair_inputs
        else:
            self._feat_samples = self.train_samples
        self.features = np.array([policy.featurize(s) for s in self._feat_samples])

        if state is None:
            if params0 is None:
                params0 = PolicyParams.zeros(classes)
            reference = policy.snapshot(params0) if cfg.mode is not Mode.SFT else None
            state = TrainState(0, params0, OptimizerState.zeros(params0.size), reference)
        if state.params.classes != classes:
            raise ConfigError(
                f"policy classes {[str(c) for c in state.params.classes]} do not match corpus "
                f"{[str(c) for c in classes]}"
            )
        self.state = state

    # batching
    def _batch(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.cfg.batch_inputs >= n:
            return np.arange(n)
        return np.sort(rng.choice(n, size=self.cfg.batch_inputs, replace=False))

    def step(self) -> dict:
        cfg = self.cfg
        rng = step_rng(cfg.seed, self.state.step)
        if cfg.mode is Mode.SFT:
            loss, grad, rec = self._sft_step(rng)
        elif cfg.mode is Mode.DPO:
            loss, grad, rec = self._dpo_step(rng)
        else:
            loss, grad, rec = self._grpo_step(rng)
        theta = optimizer_step(self.state.params.flat(), grad, self.state.opt, cfg)
        self.state.params = self.state.params.with_flat(theta)
        record = {"step": self.state.step, "loss": loss, **rec}
        self.state.step += 1
        self.state.log.append(record)
        return record

    def run(self, until: Optional[int] = None, checkpoint_dir=None) -> TrainState:
        until = self.cfg.steps if until is None else min(until, self.cfg.steps)
        every = self.cfg.checkpoint_every
        while self.state.step < until:
            self.step()
            if checkpoint_dir is not None and every and self.state.step % every == 0:
                save_checkpoint(self.state, self.cfg, Path(checkpoint_dir) / f"ckpt_{self.state.step:06d}.json")
        return self.state

    def _sft_step(self, rng):
        params = self.state.params
        idx = self._batch(rng, len(self.train_samples))
        feats = self.features[idx]
        truths = [self.train_samples[i].truth for i in idx]
        ai = np.array([params.class_index(t) for t in truths])
        la = policy.answer_logprobs(params, feats)
        ll = policy.length_logprobs(params)
        lp = la[np.arange(len(idx)), ai] + ll[MID]
        loss, dlp = objectives.sft_loss(lp)
        pa = np.exp(la)
        da = -dlp[:, None] * pa
        da[np.arange(len(idx)), ai] += dlp
        dl = -dlp.sum() * np.exp(ll)
        dl[MID] += dlp.sum()
        grad = policy.backprop(params, feats, da, dl)
        acc = float(np.mean(la.argmax(axis=1) == ai))
        return loss, grad, {"accuracy": acc}

    def _dpo_step(self, rng):
        params, ref = self.state.params, self.state.reference
        idx = self._batch(rng, len(self.pairs))
        feats = self.features[idx]
        w = np.array([params.class_index(self.pairs[i].preferred.answer) for i in idx])
        l = np.array([params.class_index(self.pairs[i].dispreferred.answer) for i in idx])
        rows = np.arange(len(idx))
        la, la_ref = policy.answer_logprobs(params, feats), policy.answer_logprobs(ref, feats)
        ll, ll_ref = policy.length_logprobs(params), policy.length_logprobs(ref)
        loss, (cw, cl), margins = objectives.dpo_loss(
            la[rows, w] + ll[MID],
            la[rows, l] + ll[MID],
            la_ref[rows, w] + ll_ref[MID],
            la_ref[rows, l] + ll_ref[MID],
            self.cfg.objective.beta_dpo,
        )
        pa = np.exp(la)
        da = -(cw + cl)[:, None] * pa
        np.add.at(da, (rows, w), cw)
        np.add.at(da, (rows, l), cl)
        dl = (cw.sum() + cl.sum()) * (np.eye(len(LENGTH_BUCKETS))[MID] - np.exp(ll))
        grad = policy.backprop(params, feats, da, dl)
        kl, _, _ = policy.kl_to_reference(params, ref, feats)
        return loss, grad, {
            "margin": float(margins.mean()),
            "kl": float(kl.mean()),
            "accuracy": float(np.mean(la[rows, w] > la[rows, l])),
        }

    def _grpo_step(self, rng):
        cfg = self.cfg
        params = self.state.params
        idx = self._batch(rng, len(self.train_samples))
        feats = [self.features[i] for i in idx]
        la = policy.answer_logprobs(params, self.features[idx])
        ll = policy.length_logprobs(params)
        rollouts, mean_rewards, accs, p_tildes = [], [], [], []
        sampled = 0
        for n, i in enumerate(idx):
            sample = self.train_samples[i]
            in_rng = step_rng(cfg.seed, self.state.step, n + 1)
            ai, li, lp = policy.draw(la[n], ll, cfg.G, in_rng)
            responses = _responses(params, ai, li, lp)
            sampled += cfg.G
            manipulated = None
            if cfg.mode is Mode.GRPO_TA:
                f_m = policy.featurize(inject(sample, cfg.artifact, in_rng))
                mai, mli, mlp = policy.sample_indices(params, f_m, cfg.G_prime, in_rng)
                manipulated = _responses(params, mai, mli, mlp)
                sampled += cfg.G_prime
            group = RolloutGroup(sample.id, responses, sample.truth, manipulated)
            rewards = group_rewards(group, cfg)
            rollouts.append(_Rollout(n, ai, li, rewards))
            mean_rewards.append(np.mean(rewards))
            accs.append(np.mean([is_binary_correct(r.answer, sample.truth) for r in responses]))
            if manipulated is not None:
                p_tildes.append(fake_fraction(manipulated))
                if cfg.ta_update_manipulated:
                    feats.append(f_m)
                    rollouts.append(_Rollout(len(feats) - 1, mai, mli, manipulated_rewards(manipulated, cfg)))
        loss, grad, kl = _rollout_loss(params, self.state.reference, np.array(feats), rollouts, cfg)
        self.state.responses_sampled += sampled
        rec = {
            "mean_reward": float(np.mean(mean_rewards)),
            "kl": float(np.mean(kl[: len(idx)])),
            "accuracy": float(np.mean(accs)),
        }
        if p_tildes:
            rec["p_tilde"] = float(np.mean(p_tildes))
        return loss, grad, rec


@dataclass
class TrainResult:
    params: PolicyParams
    log: list[dict]
    state: TrainState


def _finish(trainer: Trainer) -> TrainResult:
    state = trainer.run()
    return TrainResult(state.params, state.log, state)


def train_sft(corpus: Corpus, cfg: TrainConfig, params0: Optional[PolicyParams] = None) -> TrainResult:
    if cfg.mode is not Mode.SFT:
        raise ConfigError(f"train_sft called with mode {cfg.mode.value}")
    return _finish(Trainer(cfg, corpus, params0=params0))


def train_dpo(
    params0: Optional[PolicyParams], pairs: Sequence[PreferencePair], corpus: Corpus, cfg: TrainConfig
) -> TrainResult:
    if cfg.mode is not Mode.DPO:
        raise ConfigError(f"train_dpo called with mode {cfg.mode.value}")
    return _finish(Trainer(cfg, corpus, pairs=pairs, params0=params0))


def train_grpo(params0: Optional[PolicyParams], corpus: Corpus, cfg: TrainConfig) -> TrainResult:
    if not cfg.mode.is_rl:
        raise ConfigError(f"train_grpo called with mode {cfg.mode.value}")
    return _finish(Trainer(cfg, corpus, params0=params0))


def expected_grpo_gradient(
    params: PolicyParams,
    ref: PolicyParams,
    features,
    reward_fn: Callable[[Response], float],
    cfg: ObjectiveConfig,
) -> tuple[float, np.ndarray]:
    """GRPO loss and gradient in exact expectation over the response space.

    Sampling weights and advantage statistics use the current policy's
    probabilities (treated as constants), which removes Monte-Carlo noise.
    """
    space = policy.response_space(params.classes)
    p = policy.response_distribution(params, features)
    r = np.array([reward_fn(o) for o in space])
    mu = float(p @ r)
    sd = float(np.sqrt(p @ (r - mu) ** 2))
    adv = np.zeros_like(r) if sd < cfg.sigma_floor else (r - mu) / sd
    ai = np.repeat(np.arange(len(params.classes)), len(LENGTH_BUCKETS))
    li = np.tile(np.arange(len(LENGTH_BUCKETS)), len(params.classes))
    la, ll = policy.answer_logprobs(params, features), policy.length_logprobs(params)
    la_ref, ll_ref = policy.answer_logprobs(ref, features), policy.length_logprobs(ref)
    terms, dterms = objectives.clipped_terms(la[ai] + ll[li], la_ref[ai] + ll_ref[li], adv, cfg.clip_eps)
    kl, da_kl, dl_kl = policy.kl_to_reference(params, ref, features)
    loss = float(-(p @ terms) + cfg.beta_kl * kl[0])
    da, dl = _head_grads(params, features, ai, li, -p * dterms)
    grad = policy.backprop(params, features, da + cfg.beta_kl * da_kl[0], dl + cfg.beta_kl * dl_kl)
    return loss, grad
