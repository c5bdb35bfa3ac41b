import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcheck import central_diff, rel_error
from vidauth.errors import ConfigError, EmptyBatch, LengthMismatch, SupportMismatch
from vidauth.objectives import (
    ObjectiveConfig,
    clipped_terms,
    dpo_loss,
    group_advantages,
    grpo_objective,
    kl_exact,
    kl_sampled,
    kl_sampled_terms,
    sft_loss,
)

CFG = ObjectiveConfig()


def test_config_invariants():
    for bad in ({"clip_eps": 0.0}, {"clip_eps": 1.0}, {"beta_kl": -1}, {"sigma_floor": 0}):
        with pytest.raises(ConfigError):
            ObjectiveConfig(**bad)


def test_sft_examples():
    assert sft_loss([-0.5, -1.5])[0] == 1.0
    assert sft_loss([0.0])[0] == 0.0
    with pytest.raises(EmptyBatch):
        sft_loss([])


def test_sft_gradient_vs_fd(rng):
    lp = -rng.random(5)
    _, g = sft_loss(lp)
    assert rel_error(g, central_diff(lambda x: sft_loss(x)[0], lp)) < 1e-8


def test_dpo_at_reference_is_ln2():
    loss, _, margins = dpo_loss(-1.0, -2.0, -1.0, -2.0, beta=0.1)
    assert loss == pytest.approx(math.log(2), abs=1e-15)
    assert margins.tolist() == [0.0]


def test_dpo_large_beta_limit():
    loss, _, _ = dpo_loss(-0.1, -3.0, -1.0, -1.0, beta=1e4)
    assert loss < 1e-12
    loss, _, _ = dpo_loss(-3.0, -0.1, -1.0, -1.0, beta=1e4)
    assert math.isfinite(loss) and loss > 1e3


def test_dpo_gradient_vs_fd(rng):
    x = -rng.random((4, 6))

    def f(v):
        v = v.reshape(4, 6)
        return dpo_loss(v[0], v[1], v[2], v[3], beta=0.7)[0]

    _, (gw, gl), _ = dpo_loss(x[0], x[1], x[2], x[3], beta=0.7)
    fd = central_diff(f, x.ravel()).reshape(4, 6)
    assert rel_error(np.concatenate([gw, gl]), np.concatenate([fd[0], fd[1]])) < 1e-7


def test_dpo_zero_beta_zero_gradient():
    loss, (gw, gl), _ = dpo_loss([-1.0], [-2.0], [-3.0], [-0.5], beta=0.0)
    assert loss == pytest.approx(math.log(2))
    assert gw.tolist() == [0.0] and gl.tolist() == [0.0]


def test_advantage_examples():
    np.testing.assert_allclose(group_advantages([1.5, 1.5, 0, 0]), [1, 1, -1, -1], atol=1e-15)
    assert group_advantages([1, 1, 1, 1]).tolist() == [0, 0, 0, 0]


@given(
    rewards=st.lists(st.floats(-10, 10), min_size=2, max_size=16),
    shift=st.floats(-5, 5),
    scale=st.floats(0.1, 10),
)
def test_advantage_shift_and_scale_invariance(rewards, shift, scale):
    r = np.array(rewards)
    if r.std() < 1e-3:
        return
    a = group_advantages(r)
    np.testing.assert_allclose(group_advantages(r + shift), a, atol=1e-8)
    np.testing.assert_allclose(group_advantages(r * scale), a, atol=1e-8)


def test_clip_arithmetic():
    terms, _ = clipped_terms([math.log(1.5)], [0.0], [1.0], 0.2)
    assert terms[0] == pytest.approx(1.2)
    terms, dterms = clipped_terms([math.log(1.5)], [0.0], [-1.0], 0.2)
    assert terms[0] == pytest.approx(-1.5)
    assert dterms[0] == pytest.approx(-1.5)


def test_grpo_zero_advantages():
    loss, g = grpo_objective([-1.0, -2.0], [-1.5, -1.0], [0.0, 0.0], 0.0, CFG)
    assert loss == 0.0
    assert not g.any()


def test_grpo_length_mismatch():
    with pytest.raises(LengthMismatch):
        grpo_objective([-1.0], [-1.0, -2.0], [0.0], 0.0, CFG)


def test_grpo_kl_enters_with_beta():
    loss0, _ = grpo_objective([-1.0], [-1.0], [0.0], 0.0, CFG)
    loss1, _ = grpo_objective([-1.0], [-1.0], [0.0], 2.0, CFG)
    assert loss1 - loss0 == pytest.approx(CFG.beta_kl * 2.0)


def test_grpo_gradient_inside_clip_region(rng):
    cfg = ObjectiveConfig(beta_kl=0.0)
    lp_ref = -rng.random(8) - 0.5
    lp = lp_ref + rng.uniform(-0.1, 0.1, 8)
    adv = rng.standard_normal(8)
    _, g = grpo_objective(lp, lp_ref, adv, 0.0, cfg)
    ratio = np.exp(lp - lp_ref)
    np.testing.assert_allclose(g, -ratio * adv / 8, rtol=1e-13)
    fd = central_diff(lambda x: grpo_objective(x, lp_ref, adv, 0.0, cfg)[0], lp)
    assert rel_error(g, fd) < 1e-7


def test_grpo_permutation_invariant(rng):
    lp_ref = -rng.random(8)
    lp = lp_ref + rng.uniform(-0.5, 0.5, 8)
    adv = rng.standard_normal(8)
    perm = rng.permutation(8)
    a, ga = grpo_objective(lp, lp_ref, adv, 0.3, CFG)
    b, gb = grpo_objective(lp[perm], lp_ref[perm], adv[perm], 0.3, CFG)
    assert a == pytest.approx(b, abs=1e-14)
    np.testing.assert_allclose(ga[perm], gb, atol=1e-15)


@settings(max_examples=200)
@given(
    lp=st.lists(st.floats(-50, 0), min_size=1, max_size=8),
    shift=st.floats(-20, 20),
    adv=st.floats(-5, 5),
)
def test_losses_finite(lp, shift, adv):
    lp = np.array(lp)
    assert math.isfinite(sft_loss(lp)[0])
    assert math.isfinite(dpo_loss(lp, lp - abs(shift), lp, lp, beta=5.0)[0])
    loss, g = grpo_objective(lp, np.minimum(lp + shift, 0), np.full(lp.shape, adv), 0.0, CFG)
    assert math.isfinite(loss) and np.isfinite(g).all()


def test_kl_exact_examples():
    assert kl_exact([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert kl_exact([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    with pytest.raises(SupportMismatch):
        kl_exact([0.5, 0.5], [1.0, 0.0])
    with pytest.raises(ValueError):
        kl_exact([0.5, 0.6], [0.5, 0.5])


def test_kl_exact_gibbs(rng):
    for _ in range(1000):
        k = rng.integers(2, 10)
        p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        assert kl_exact(p, q) >= 0.0


def test_kl_sampled_basics(rng):
    lp = -rng.random(10)
    assert kl_sampled(lp, lp) == 0.0
    assert (kl_sampled_terms(lp, -rng.random(10) * 5) >= 0).all()
    with pytest.raises(LengthMismatch):
        kl_sampled([-1.0], [])


def test_kl_sampled_converges_to_exact():
    p = np.array([0.6, 0.3, 0.1])
    q = np.array([0.2, 0.5, 0.3])
    rng = np.random.default_rng(0)
    idx = rng.choice(3, size=100_000, p=p)
    terms = kl_sampled_terms(np.log(p[idx]), np.log(q[idx]))
    se = terms.std() / np.sqrt(terms.size)
    assert abs(terms.mean() - kl_exact(p, q)) < 2 * se
