import dataclasses
import json
import math

import numpy as np
import pytest

from gradcheck import central_diff, rel_error
from vidauth import policy
from vidauth.core import FAKE, LENGTH_BUCKETS, REAL, AnswerLabel, Response, RolloutGroup
from vidauth.datagen import Corpus, DatagenConfig, build_corpus, build_preference_pairs
from vidauth.errors import ConfigError, DigestMismatch, EmptyPairs, IOFailure, VersionMismatch
from vidauth.objectives import ObjectiveConfig, kl_exact
from vidauth.policy import PolicyParams
from vidauth.trainer import (
    Mode,
    OptimizerKind,
    OptimizerState,
    Trainer,
    TrainConfig,
    _rollout_loss,
    _Rollout,
    expected_grpo_gradient,
    group_rewards,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
    train_dpo,
    train_grpo,
    train_sft,
)


def test_config_invariants():
    with pytest.raises(ConfigError):
        TrainConfig(G=1)
    with pytest.raises(ConfigError):
        TrainConfig(mode=Mode.GRPO_TA, G_prime=0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    assert TrainConfig(mode="grpo-q").mode is Mode.GRPO_Q


def test_adam_first_step_is_lr_times_sign():
    cfg = TrainConfig(learning_rate=0.1)
    state = OptimizerState.zeros(3)
    out = optimizer_step(np.zeros(3), np.array([2.0, -0.5, 0.0]), state, cfg)
    np.testing.assert_allclose(out, [-0.1, 0.1, 0.0], atol=1e-7)
    assert state.t == 1


def test_sgd_step():
    cfg = TrainConfig(learning_rate=0.5, optimizer=OptimizerKind.SGD)
    out = optimizer_step(np.ones(2), np.array([1.0, -2.0]), OptimizerState.zeros(2), cfg)
    assert out.tolist() == [0.5, 2.0]


# --- SFT ---------------------------------------------------------------------


def test_sft_full_batch_gd_loss_non_increasing():
    corpus = build_corpus(DatagenConfig(n_pairs=5, noise_base=2.0, test_frac=0.0, seed=1))
    cfg = TrainConfig(mode=Mode.SFT, steps=200, batch_inputs=10, optimizer=OptimizerKind.SGD, learning_rate=0.05)
    losses = [r["loss"] for r in train_sft(corpus, cfg).log]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_sft_zero_steps_keeps_params(small_binary_corpus):
    p0 = PolicyParams.zeros((REAL, FAKE))
    res = train_sft(small_binary_corpus, TrainConfig(mode=Mode.SFT, steps=0), params0=p0)
    assert np.array_equal(res.params.flat(), p0.flat())
    assert res.log == []


def test_sft_fits_separable_corpus():
    corpus = build_corpus(DatagenConfig(n_pairs=500, noise_base=3.0, seed=0))
    res = train_sft(corpus, TrainConfig(mode=Mode.SFT, steps=1500, batch_inputs=32))
    feats = np.array([policy.featurize(s) for s in corpus.train])
    pred = policy.answer_logprobs(res.params, feats).argmax(axis=1)
    truth = np.array([res.params.class_index(s.truth) for s in corpus.train])
    assert np.mean(pred == truth) > 0.95


def test_mode_mismatch_errors(small_binary_corpus):
    with pytest.raises(ConfigError):
        train_sft(small_binary_corpus, TrainConfig(mode=Mode.GRPO))
    with pytest.raises(ConfigError):
        train_grpo(None, small_binary_corpus, TrainConfig(mode=Mode.SFT))
    with pytest.raises(ConfigError):
        train_grpo(None, small_binary_corpus, TrainConfig(mode=Mode.GRPO_Q))


# --- DPO ---------------------------------------------------------------------


def test_dpo_initial_loss_is_ln2(small_binary_corpus):
    pairs = build_preference_pairs(small_binary_corpus.train)
    res = train_dpo(None, pairs, small_binary_corpus, TrainConfig(mode=Mode.DPO, steps=1))
    assert abs(res.log[0]["loss"] - math.log(2)) < 1e-9
    assert res.log[0]["margin"] == 0.0


def test_dpo_zero_beta_freezes_params(small_binary_corpus):
    pairs = build_preference_pairs(small_binary_corpus.train)
    cfg = TrainConfig(mode=Mode.DPO, steps=5, objective=ObjectiveConfig(beta_dpo=0.0))
    res = train_dpo(None, pairs, small_binary_corpus, cfg)
    assert not res.params.flat().any()


def test_dpo_margin_increases(small_binary_corpus):
    pairs = build_preference_pairs(small_binary_corpus.train)
    res = train_dpo(None, pairs, small_binary_corpus, TrainConfig(mode=Mode.DPO, steps=200))
    assert res.log[-1]["margin"] > res.log[0]["margin"]


def test_dpo_needs_pairs(small_binary_corpus):
    with pytest.raises(EmptyPairs):
        train_dpo(None, [], small_binary_corpus, TrainConfig(mode=Mode.DPO))


# --- GRPO --------------------------------------------------------------------


def test_group_accounting(small_binary_corpus):
    for mode, per_input in ((Mode.GRPO, 8), (Mode.GRPO_TA, 12)):
        t = Trainer(TrainConfig(mode=mode, steps=3, batch_inputs=5), small_binary_corpus)
        for k in range(1, 4):
            t.step()
            assert t.state.responses_sampled == k * 5 * per_input


def test_log_record_fields(small_binary_corpus, small_quality_corpus):
    t = Trainer(TrainConfig(mode=Mode.GRPO, steps=1), small_binary_corpus)
    assert set(t.step()) == {"step", "loss", "mean_reward", "kl", "accuracy"}
    t = Trainer(TrainConfig(mode=Mode.GRPO_TA, steps=1), small_binary_corpus)
    rec = t.step()
    assert "p_tilde" in rec and 0.0 <= rec["p_tilde"] <= 1.0
    t = Trainer(TrainConfig(mode=Mode.GRPO_Q, steps=1), small_quality_corpus)
    assert "p_tilde" not in t.step()


def test_reference_frozen_and_kl(small_binary_corpus):
    t = Trainer(TrainConfig(mode=Mode.GRPO, steps=30), small_binary_corpus)
    ref = t.state.reference.flat().copy()
    assert t.step()["kl"] == 0.0
    t.run()
    assert np.array_equal(t.state.reference.flat(), ref)
    f = policy.featurize(small_binary_corpus.train[0])
    kl = kl_exact(
        policy.response_distribution(t.state.params, f),
        policy.response_distribution(t.state.reference, f),
    )
    assert 0.0 < kl < math.inf


def test_deterministic_logs(small_binary_corpus):
    cfg = TrainConfig(mode=Mode.GRPO_TA, steps=15, seed=4)
    a = train_grpo(None, small_binary_corpus, cfg)
    b = train_grpo(None, small_binary_corpus, cfg)
    assert json.dumps(a.log) == json.dumps(b.log)
    assert np.array_equal(a.params.flat(), b.params.flat())


def test_reward_hacking_guard():
    corpus = build_corpus(DatagenConfig(n_pairs=10, test_frac=0.0))
    fakes = Corpus([s for s in corpus if not s.truth.is_real])
    for seed in range(5):
        p0 = PolicyParams(np.zeros((2, 6)), np.array([50.0, -50.0]), np.zeros(3), (REAL, FAKE))
        cfg = TrainConfig(mode=Mode.GRPO, steps=3, seed=seed, length_reward_enabled=True)
        t = Trainer(cfg, fakes, params0=p0)
        for _ in range(3):
            assert t.step()["mean_reward"] == 0.0


def test_length_bonus_requires_correct_answer():
    cfg = TrainConfig()
    responses = tuple(Response(REAL, b) for b in LENGTH_BUCKETS)
    assert group_rewards(RolloutGroup("x", responses, FAKE), cfg) == [0.0, 0.0, 0.0]
    responses = tuple(Response(FAKE, b) for b in LENGTH_BUCKETS)
    assert group_rewards(RolloutGroup("x", responses, FAKE), cfg) == [1.0, 1.1, 1.0]


def _random_params(rng, classes=(REAL, FAKE), scale=0.5):
    k = len(classes)
    return PolicyParams(
        scale * rng.standard_normal((k, 6)), scale * rng.standard_normal(k), scale * rng.standard_normal(3), classes
    )


def test_equal_rewards_update_only_kl(rng):
    params = _random_params(rng)
    ref = _random_params(rng)
    feats = rng.standard_normal((3, 6))
    rollouts = [_Rollout(j, rng.integers(0, 2, 8), rng.integers(0, 3, 8), [1.0] * 8) for j in range(3)]
    cfg = TrainConfig()
    _, grad, _ = _rollout_loss(params, ref, feats, rollouts, cfg)
    _, da, dl = policy.kl_to_reference(params, ref, feats)
    expect = cfg.objective.beta_kl * policy.backprop(params, feats, da, dl) / 3
    np.testing.assert_allclose(grad, expect, rtol=1e-12, atol=1e-15)
    _, grad0, _ = _rollout_loss(params, policy.snapshot(params), feats, rollouts, cfg)
    assert not grad0.any()


def test_rollout_loss_gradient_vs_fd(rng):
    classes = (REAL, *[AnswerLabel.fake(s) for s in (10, 20, 30)])
    cfg = TrainConfig()
    checked = 0
    while checked < 10:
        params = _random_params(rng, classes, scale=0.3)
        ref = _random_params(rng, classes, scale=0.3)
        feats = rng.standard_normal((2, 6))
        rollouts = [
            _Rollout(j, rng.integers(0, 4, 8), rng.integers(0, 3, 8), list(rng.uniform(0, 1, 8))) for j in range(2)
        ]
        la = policy.answer_logprobs(params, feats)
        la_ref = policy.answer_logprobs(ref, feats)
        ll, ll_ref = policy.length_logprobs(params), policy.length_logprobs(ref)
        ratios = np.concatenate(
            [np.exp(la[r.row, r.ai] + ll[r.li] - la_ref[r.row, r.ai] - ll_ref[r.li]) for r in rollouts]
        )
        eps = cfg.objective.clip_eps
        if np.min(np.abs(ratios - (1 - eps))) < 0.02 or np.min(np.abs(ratios - (1 + eps))) < 0.02:
            continue
        _, grad, _ = _rollout_loss(params, ref, feats, rollouts, cfg)
        fd = central_diff(lambda v: _rollout_loss(params.with_flat(v), ref, feats, rollouts, cfg)[0], params.flat())
        assert rel_error(grad, fd) < 1e-4
        checked += 1


def test_exact_expectation_update_raises_best_response(rng):
    classes = (REAL, *[AnswerLabel.fake(s) for s in (10, 20, 30, 40, 50)])
    truth = AnswerLabel.fake(30)
    from vidauth.core import AnswerSpace
    from vidauth.rewards import RewardConfig, q_reward

    space = AnswerSpace()
    obj = ObjectiveConfig(beta_kl=0.0)
    for _ in range(20):
        params = _random_params(rng, classes, scale=0.3)
        f = rng.standard_normal(6)
        _, grad = expected_grpo_gradient(params, params, f, lambda o: q_reward(o.answer, truth, space, RewardConfig()), obj)
        new = params.with_flat(params.flat() - 1e-3 * grad)
        i = classes.index(truth)
        before = np.exp(policy.answer_logprobs(params, f))[i]
        after = np.exp(policy.answer_logprobs(new, f))[i]
        assert after > before


# --- checkpoints -------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path, small_binary_corpus):
    cfg = TrainConfig(mode=Mode.GRPO, steps=5)
    t = Trainer(cfg, small_binary_corpus)
    t.run()
    path = tmp_path / "c.json"
    save_checkpoint(t.state, cfg, path)
    back = load_checkpoint(path, cfg)
    assert back.step == 5
    assert np.array_equal(back.params.flat(), t.state.params.flat())
    assert np.array_equal(back.reference.flat(), t.state.reference.flat())
    assert np.array_equal(back.opt.m, t.state.opt.m) and np.array_equal(back.opt.v, t.state.opt.v)
    assert back.opt.t == t.state.opt.t
    doc = json.loads(path.read_text())
    assert {"version", "mode", "step", "params", "optimizer_state", "rng_state", "config_digest"} <= set(doc)


def test_checkpoint_errors(tmp_path, small_binary_corpus):
    cfg = TrainConfig(mode=Mode.GRPO, steps=1)
    t = Trainer(cfg, small_binary_corpus)
    path = tmp_path / "c.json"
    save_checkpoint(t.state, cfg, path)
    with pytest.raises(DigestMismatch):
        load_checkpoint(path, dataclasses.replace(cfg, learning_rate=0.5))
    doc = json.loads(path.read_text())
    doc["version"] = "999"
    bad = tmp_path / "v.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(VersionMismatch):
        load_checkpoint(bad)
    with pytest.raises(IOFailure):
        load_checkpoint(tmp_path / "missing.json")
    with pytest.raises(IOFailure):
        save_checkpoint(t.state, cfg, tmp_path / "no" / "dir" / "c.json")


@pytest.mark.parametrize("mode", [Mode.GRPO_TA, Mode.DPO, Mode.SFT])
def test_resume_matches_continuous(tmp_path, small_binary_corpus, mode):
    cfg = TrainConfig(mode=mode, steps=24, seed=2)
    pairs = build_preference_pairs(small_binary_corpus.train) if mode is Mode.DPO else None
    full = Trainer(cfg, small_binary_corpus, pairs=pairs)
    full.run()
    first = Trainer(cfg, small_binary_corpus, pairs=pairs)
    first.run(until=10)
    save_checkpoint(first.state, cfg, tmp_path / "c.json")
    second = Trainer(cfg, small_binary_corpus, pairs=pairs, state=load_checkpoint(tmp_path / "c.json", cfg))
    second.run()
    assert np.array_equal(second.state.params.flat(), full.state.params.flat())
    assert json.dumps(first.state.log + second.state.log) == json.dumps(full.state.log)
