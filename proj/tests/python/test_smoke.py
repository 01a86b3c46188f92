import math

import numpy as np
import pytest

import coca


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_squash_matches_numpy():
    rng = np.random.default_rng(0)
    s = rng.standard_normal((50, 16)) * 3
    v = coca.squash(s)
    n = np.linalg.norm(s, axis=1, keepdims=True)
    np.testing.assert_allclose(v, n / (1 + n**2) * s, rtol=1e-12, atol=1e-14)
    assert np.all(np.linalg.norm(v, axis=1) < 1)
    np.testing.assert_array_equal(coca.squash(np.zeros(4)), np.zeros(4))


def test_routing_couplings_on_simplex():
    rng = np.random.default_rng(1)
    votes = rng.standard_normal((20, 10, 16))
    out, c, b = coca.dynamic_routing(votes, 3)
    assert out.shape == (10, 16)
    assert c.shape == (20, 10) and b.shape == (20, 10)
    np.testing.assert_allclose(c.sum(axis=1), 1.0, atol=1e-12)
    _, c1, _ = coca.dynamic_routing(votes, 1)
    np.testing.assert_allclose(c1, 0.1, atol=1e-15)
    with pytest.raises(ValueError):
        coca.dynamic_routing(np.zeros((2, 2)), 3)


def test_nt_xent_against_numpy():
    rng = np.random.default_rng(2)
    n, d, tau = 5, 8, 0.2
    z = unit_rows(rng, 2 * n, d)
    sim = z @ z.T / tau
    total = 0.0
    for a in range(2 * n):
        p = a + n if a < n else a - n
        others = [k for k in range(2 * n) if k != a]
        total += -(sim[a, p] - np.log(np.exp(sim[a, others]).sum()))
    assert coca.nt_xent(z, tau) == pytest.approx(total / (2 * n), abs=1e-10)
    loss, grad = coca.nt_xent_with_grad(z, tau)
    assert grad.shape == z.shape
    same = np.tile([[0.6, 0.8]], (8, 1))
    assert coca.nt_xent(same, tau) == pytest.approx(math.log(7), abs=1e-9)
    with pytest.raises(Exception):
        coca.nt_xent(np.ones((4, 3)), tau)


def test_knn_self_retrieval_and_ties():
    rng = np.random.default_rng(3)
    bank = unit_rows(rng, 100, 16).astype(np.float32)
    labels = rng.integers(0, 10, 100).astype(np.uint8)
    top1, top5 = coca.knn_evaluate(bank, labels, bank, labels, k=1)
    assert top1 == 100.0 and top5 == 100.0
    scores, ranked = coca.knn_predict(np.array([0.5, 0.5, 0.5], np.float32), np.array([7, 2, 5], np.uint8), k=3)
    assert ranked[:3] == [2, 5, 7]
    assert scores[2] == pytest.approx(math.exp(2.5))


def test_profile_counts():
    p = coca.profile()
    conv = [layer["params"] for layer in p["layers"] if layer["block"] == "ConvBlock"]
    assert conv == [432, 32, 4608, 64, 9216, 64, 18432, 128, 36864, 128, 73728, 256]
    assert p["total_params"] == 2045008
    assert p["conv_macs"] == 18137088
    assert coca.profile(convention="2macs")["headline_flops"] == 2 * 18137088
    with pytest.raises(Exception):
        coca.profile(convention="flops")


def test_model_forward_shapes_and_norms():
    cfg = {"conv_channels": [8, 16], "conv_strides": [2, 2], "primary_types": 4, "primary_dim": 8}
    m = coca.Model(seed=1, model=cfg)
    x = np.random.default_rng(4).standard_normal((3, 3, 32, 32)).astype(np.float32)
    z, h = m.forward(x)
    assert z.shape == (3, 160)
    assert h.shape == (3, 16 * 8 * 8)
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1, atol=1e-5)
    np.testing.assert_allclose(np.linalg.norm(h, axis=1), 1, atol=1e-5)
    z2, _ = coca.Model(seed=1, model=cfg).forward(x)
    np.testing.assert_array_equal(z, z2)
    assert m.config["primary_types"] == "4"
    assert m.normalization is None
    with pytest.raises(KeyError):
        coca.Model(model={"bogus": 1})


def test_missing_files_raise(tmp_path):
    with pytest.raises(Exception):
        coca.read_batch_file(str(tmp_path / "nope.bin"))
    with pytest.raises(Exception):
        coca.Model.from_checkpoint(str(tmp_path / "nope.ckpt"))
