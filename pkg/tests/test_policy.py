import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pop.policy import LOG_2PI, Policy, PolicyConfig, PolicyOutput, sample_action, squash_log_std


@pytest.fixture(scope="module")
def policy():
    return Policy(PolicyConfig(), seed=0)


@given(st.floats(allow_nan=False))
def test_log_std_bounded_for_any_raw(raw):
    v = squash_log_std(raw, -3.0, 2.0)
    assert -3.0 <= v <= 2.0


@pytest.mark.parametrize("raw", [-1e300, -50.0, 0.0, 50.0, 1e300, np.inf, -np.inf])
def test_policy_log_std_bounded(raw):
    p = Policy(seed=1)
    p.params["log_std_raw"].data = np.array(raw)
    assert -3.0 <= p.forward(np.zeros((3, 4))).log_std <= 2.0


def test_parameter_count_near_166k(policy):
    n = policy.num_parameters()
    assert n == 170_531
    assert abs(n - 166_000) / 166_000 < 0.10


def test_config_invariants():
    with pytest.raises(ValueError):
        PolicyConfig(embed_dim=63)
    with pytest.raises(ValueError):
        PolicyConfig(logstd_bounds=(2.0, -3.0))


def test_empty_sequence_rejected(policy):
    with pytest.raises(ValueError):
        policy.forward(np.zeros((0, 4)))


@pytest.mark.parametrize("L", [1, 2, 10, 50, 100, 110])
def test_finite_for_any_history_length(policy, L):
    out = policy.forward(np.random.default_rng(L).normal(size=(3, L, 4)))
    assert np.all(np.isfinite(out.mu)) and np.all(np.isfinite(out.value)) and math.isfinite(out.log_std)


def test_coordinate_independence_bitwise(policy, rng):
    toks = rng.normal(size=(6, 12, 4))
    base = policy.forward(toks)
    other = toks.copy()
    other[2] += rng.normal(size=(12, 4))
    moved = policy.forward(other)
    keep = [0, 1, 3, 4, 5]
    np.testing.assert_array_equal(base.mu[keep], moved.mu[keep])
    np.testing.assert_array_equal(base.value[keep], moved.value[keep])
    assert base.mu[2] != moved.mu[2]


def test_batched_equals_independent(policy, rng):
    streams = [rng.normal(size=(L, 4)) for L in (5, 5, 9, 1, 9)]
    batched = policy.batched_forward(streams)
    for s, b in zip(streams, batched):
        single = policy.forward(s)
        np.testing.assert_allclose(b.mu, single.mu, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(b.value, single.value, rtol=1e-12, atol=1e-14)
    one = policy.batched_forward(streams[:1])[0]
    np.testing.assert_array_equal(one.mu, policy.forward(streams[0]).mu)


def test_permuting_streams_permutes_outputs(policy, rng):
    toks = rng.normal(size=(5, 8, 4))
    perm = rng.permutation(5)
    a = policy.forward(toks)
    b = policy.forward(toks[perm])
    np.testing.assert_allclose(b.mu, a.mu[perm], rtol=1e-12, atol=1e-14)


def test_appending_a_token_changes_output(policy, rng):
    toks = rng.normal(size=(1, 6, 4))
    longer = np.concatenate([toks, rng.normal(size=(1, 1, 4))], axis=1)
    assert policy.forward(toks).mu[0] != policy.forward(longer).mu[0]


def test_thirty_two_coordinates(policy, rng):
    out = policy.forward(rng.normal(size=(32, 20, 4)))
    assert out.mu.shape == (32,) and np.all(np.isfinite(out.mu))


def test_sample_action_mode_density_and_positivity(rng):
    out = PolicyOutput(mu=np.array([0.3, -1.0]), log_std=-0.5, value=np.zeros(2))
    u, step, lp = sample_action(out, None, deterministic=True)
    np.testing.assert_array_equal(u, out.mu)
    np.testing.assert_allclose(step, np.exp(out.mu))
    np.testing.assert_allclose(lp, 0.5 - 0.5 * LOG_2PI)
    for _ in range(100):
        u, step, lp = sample_action(out, rng)
        assert np.all(step > 0)


def test_sample_statistics(rng):
    out = PolicyOutput(mu=np.zeros(20_000), log_std=math.log(0.7), value=np.zeros(20_000))
    u, _, _ = sample_action(out, rng)
    assert abs(u.std() - 0.7) < 3 * 0.7 / math.sqrt(2 * 20_000)


def test_save_load_round_trip(tmp_path, policy, rng):
    policy.save(tmp_path / "ckpt", extra={"iteration": 3})
    back = Policy.load(tmp_path / "ckpt")
    toks = rng.normal(size=(2, 7, 4))
    np.testing.assert_array_equal(back.forward(toks).mu, policy.forward(toks).mu)
    assert back.config == policy.config


def test_float32_close_to_float64(rng):
    p64 = Policy(seed=4)
    p32 = Policy(seed=4, dtype=np.float32)
    toks = rng.normal(size=(4, 30, 4))
    np.testing.assert_allclose(p32.forward(toks).mu, p64.forward(toks).mu, rtol=1e-3, atol=1e-4)
