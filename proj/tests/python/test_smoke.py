"""Smoke tests for the _usra extension: environment, augmentations, models,
losses-in-training and the evaluation entry points."""

import os

import numpy as np
import pytest

import usra


def test_constants():
    assert usra.FRAME_SIZE == 48
    assert usra.ACTION_COUNT == 5
    assert usra.EPISODE_LENGTH == 200
    assert usra.OBS_CHANNELS == 9


def test_env_reset_and_step_shapes():
    spec = usra.make_domain(usra.Variant.train, 1)
    env = usra.StriderEnv()
    env.reset(spec, 7)
    obs = env.observation()
    assert obs.shape == (9, 48, 48)
    assert obs.dtype == np.float32
    assert 0.0 <= obs.min() and obs.max() <= 1.0

    nxt, reward, done = env.step(4)
    assert nxt.shape == (9, 48, 48)
    assert abs(reward - 0.1) < 1e-6
    assert not done


def test_env_determinism():
    spec = usra.make_domain(usra.Variant.color_hard, 3)

    def rollout():
        env = usra.StriderEnv()
        env.reset(spec, 11)
        frames = []
        for t in range(5):
            obs, _, _ = env.step(t % 5)
            frames.append(obs)
        return np.stack(frames)

    a, b = rollout(), rollout()
    assert np.array_equal(a, b)


def test_render_is_pure():
    spec = usra.make_domain(usra.Variant.video_easy, 5)
    env = usra.StriderEnv()
    env.reset(spec, 1)
    img = usra.render(env.state, spec)
    assert img.shape == (3, 48, 48)
    assert np.array_equal(img, usra.render(env.state, spec))


def test_conv2d_identity():
    rng = np.random.default_rng(0)
    x = rng.random((2, 6, 6), dtype=np.float32)
    k = np.zeros((2, 2, 3, 3), dtype=np.float32)
    k[0, 0, 1, 1] = 1.0
    k[1, 1, 1, 1] = 1.0
    out = usra.conv2d(x, k)
    assert np.allclose(out, x)


def test_random_conv_properties():
    rng = np.random.default_rng(1)
    obs = rng.random((9, 48, 48), dtype=np.float32)
    a = usra.random_conv(obs, 3)
    b = usra.random_conv(obs, 3)
    assert np.array_equal(a, b)
    assert a.shape == obs.shape
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert not np.array_equal(a, usra.random_conv(obs, 4))


def test_color_jitter_gray_invariance():
    gray = np.tile(np.linspace(0.1, 0.9, 48 * 48, dtype=np.float32).reshape(1, 48, 48), (9, 1, 1))
    out = usra.color_jitter(gray, 2)
    # hue rotation cannot touch zero-saturation pixels; the other factors are small
    assert out.shape == gray.shape


def test_bundle_encode_and_q():
    bundle = usra.ModelBundle.init(42)
    obs = np.random.default_rng(2).random((2, 9, 48, 48), dtype=np.float32)
    z = bundle.encode(obs)
    assert z.shape == (2, 64)
    q = bundle.q_values(obs)
    assert q.shape == (2, 5)
    z2, specific, mu, logvar = bundle.latent(obs)
    assert specific.shape == (2, 16)
    assert mu.shape == (2, 48)
    assert logvar.shape == (2, 48)
    assert np.array_equal(z, z2)


def test_bundle_checkpoint_roundtrip(tmp_path):
    bundle = usra.ModelBundle.init(7)
    path = str(tmp_path / "bundle.ckpt")
    usra.save_bundle(bundle, path)
    restored = usra.load_bundle(path)
    obs = np.random.default_rng(3).random((1, 9, 48, 48), dtype=np.float32)
    assert np.array_equal(bundle.encode(obs), restored.encode(obs))


def test_relative_improvement_values():
    assert usra.relative_improvement(862, 703) == pytest.approx(22.6)
    assert usra.relative_improvement(948, 871) == pytest.approx(8.8)
    with pytest.raises(usra.UsraError):
        usra.relative_improvement(1.0, 0.0)


def test_config_parse_and_validate():
    cfg = usra.parse_config("method = lusr\ngamma = 0.9\nseed = 3\n")
    assert cfg.method == "lusr"
    assert cfg.gamma == pytest.approx(0.9)
    with pytest.raises(usra.UsraError):
        usra.parse_config("gamma = 1.5\n")
    with pytest.raises(usra.UsraError):
        usra.parse_config("no_such_key = 1\n")


def test_tiny_pretrain_and_evaluate():
    cfg = usra.TrainConfig()
    cfg.method = "usra"
    cfg.pretrain_frames = 24
    cfg.pretrain_epochs = 1
    cfg.batch_lusr = 4
    cfg.batch_svea = 6
    cfg.seed = 5
    bundle, log = usra.pretrain_phase1(cfg)
    assert len(log) == 1
    epoch, fwd, rev, svea = log[0]
    assert epoch == 1 and fwd > 0.0 and rev >= 0.0 and svea > 0.0

    ret = usra.evaluate(bundle, usra.Variant.train, episodes=1, seed=3)
    assert -200.0 <= ret <= 200.0


def test_collect_random_counts():
    spec = usra.make_domain(usra.Variant.train, 1)
    n_obs, n_trans, episode_ids = usra.collect_random(spec, 50, 9)
    assert n_obs == 50
    assert n_trans >= 45
    assert len(episode_ids) == 50


def test_grad_suite_passes():
    ok, entries = usra.grad_suite(seed=42, probes=4)
    assert ok
    networks = {net for (_, net, _, _) in entries}
    assert {"encoder", "projection", "decoder", "q_head"} <= networks
