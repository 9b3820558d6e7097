import math

import numpy as np
import pytest

from disentangle import autodiff as ad
from disentangle.architectures import (FAMILIES, ModelSpec, class_interaction_matrices, class_interaction_matrix,
                                       extract_bilinear_interaction, forward, init_params, load_params,
                                       make_spec, param_count, param_shapes, predict, probe_interaction_score,
                                       save_params)
from disentangle.training import loss_and_grads
from conftest import numeric_grad, rel_error


def token_spec(family, p=7, d=4, m=6):
    return make_spec(family, "tokens", hidden=m, out_dim=p, vocab=p, embed_dim=d)


def test_concat_enforced_for_non_bilinear():
    with pytest.raises(ValueError, match="concatenated"):
        ModelSpec("relu", "pair-embed", 4, 3, vocab=3, embed_dim=2)
    assert token_spec("relu").input_mode == "concat-embed"
    assert token_spec("bilinear").input_mode == "pair-embed"


@pytest.mark.parametrize("family", FAMILIES)
def test_param_shapes_and_count(family):
    spec = token_spec(family, p=97, d=32, m=64)
    shapes = param_shapes(spec)
    assert shapes["E"] == (97, 32)
    if family == "bilinear":
        assert shapes["W1"] == shapes["W2"] == (32, 64)
    elif family in ("swiglu", "geglu"):
        assert shapes["W1"] == shapes["W2"] == (64, 64)
    else:
        assert shapes["W"] == (64, 64)
    assert shapes["W_out"] == (64, 97)
    assert sum(a * b for a, b in shapes.values()) == param_count(spec)


def test_param_count_closed_form():
    assert param_count(token_spec("bilinear", 97, 32, 64)) == 97 * 32 + 2 * 32 * 64 + 64 * 97
    assert param_count(token_spec("relu", 97, 32, 64)) == 97 * 32 + 64 * 64 + 64 + 64 * 97


@pytest.mark.parametrize("family", FAMILIES)
def test_init_is_deterministic(family):
    a, b = init_params(token_spec(family), 5), init_params(token_spec(family), 5)
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_kaiming_init():
    spec = make_spec("bilinear", "tokens", hidden=100, out_dim=1, head="scalar", vocab=50, embed_dim=100,
                     init="kaiming")
    p = init_params(spec, 0)
    np.testing.assert_allclose(np.linalg.norm(p["E"], axis=1), 1.0, atol=1e-12)
    # 10^4 samples per projection; sample variance within 10% of 2/fan_in
    for name in ("W1", "W2"):
        assert abs(p[name].var() / (2 / 100) - 1) < 0.1
    assert abs(p["W_out"].std() - 0.1) < 0.03


def test_default_init_bounds():
    p = init_params(token_spec("relu", 11, 8, 16), 0)
    bound = 1 / math.sqrt(16)
    assert np.abs(p["W"]).max() <= bound and np.abs(p["W_out"]).max() <= 1 / math.sqrt(16)


def test_bilinear_ones_example():
    spec = make_spec("bilinear", "tokens", hidden=3, out_dim=3, vocab=2, embed_dim=3)
    params = {"E": np.ones((2, 3)), "W1": np.eye(3), "W2": np.eye(3), "W_out": np.eye(3)}
    np.testing.assert_array_equal(predict(spec, params, [[0, 1]]), [[1.0, 1.0, 1.0]])


def test_swiglu_zero_gate():
    # the SwiGLU gate is silu: silu(0) = 0 and silu'(0) = sigmoid(0) = 0.5
    spec = make_spec("swiglu", "vector", hidden=3, out_dim=3, head="regression", input_dim=2)
    W1 = np.arange(6.0).reshape(2, 3)
    x = np.array([[1.0, 2.0]])
    params = {"W1": W1, "W2": np.zeros((2, 3)), "W_out": np.eye(3)}
    np.testing.assert_array_equal(predict(spec, params, x), 0.0)
    eps = 1e-7
    params["W2"] = np.full((2, 3), eps / 3.0)  # gate pre-activation eps on every unit
    np.testing.assert_allclose(predict(spec, params, x) / eps, 0.5 * x @ W1, rtol=1e-6)


@pytest.mark.parametrize("family", FAMILIES)
def test_zero_weights_give_uniform_loss(family):
    spec = token_spec(family)
    params = {k: np.zeros_like(v) for k, v in init_params(spec, 0).items()}
    X = np.array([[0, 1], [3, 4]])
    np.testing.assert_array_equal(predict(spec, params, X), 0.0)
    loss = ad.softmax_cross_entropy(forward(spec, params, X), [2, 5]).value[0, 0]
    assert loss == pytest.approx(math.log(7), abs=1e-12)


def test_regression_head_returns_increment_with_bias():
    spec = make_spec("relu", "pair", hidden=5, out_dim=4, head="regression", input_dim=7, split=4)
    assert "b_out" in init_params(spec, 0)


def test_extract_planted_rank_one(rng):
    u, v = rng.standard_normal(5), rng.standard_normal(5)
    spec = make_spec("bilinear", "pair", hidden=1, out_dim=1, head="scalar", input_dim=10, split=5)
    params = {"W1": u[:, None], "W2": v[:, None], "W_out": np.ones((1, 1))}
    np.testing.assert_allclose(extract_bilinear_interaction(spec, params), np.outer(u, v), atol=1e-15)
    params["W_out"][:] = 0
    assert not extract_bilinear_interaction(spec, params).any()


def test_extract_matches_forward_scalar(rng):
    spec = make_spec("bilinear", "pair", hidden=16, out_dim=1, head="scalar", input_dim=64, split=32)
    params = init_params(spec, 3)
    M = extract_bilinear_interaction(spec, params)
    X = rng.standard_normal((20, 64))
    np.testing.assert_allclose(predict(spec, params, X)[:, 0],
                               np.einsum("ni,ij,nj->n", X[:, :32], M, X[:, 32:]), atol=1e-10)


def test_extract_pullback_exhaustive_small():
    spec = make_spec("bilinear", "tokens", hidden=5, out_dim=3, vocab=6, embed_dim=8)
    params = init_params(spec, 1)
    direction = np.array([0.2, -1.0, 0.5])
    M = extract_bilinear_interaction(spec, params, direction, pullback=True)
    logits = class_interaction_matrices(spec, params)
    np.testing.assert_allclose(np.tensordot(direction, logits, axes=1), M, atol=1e-12)


def test_extract_rejects_non_bilinear():
    spec = make_spec("relu", "vector", hidden=3, out_dim=1, head="scalar", input_dim=4)
    with pytest.raises(ValueError):
        extract_bilinear_interaction(spec, init_params(spec, 0))


def test_class_interaction_matrix():
    spec = token_spec("bilinear", p=5)
    zero = {k: np.zeros_like(v) for k, v in init_params(spec, 0).items()}
    assert not class_interaction_matrix(spec, zero, 2).any()
    params = init_params(spec, 0)
    Mk = class_interaction_matrix(spec, params, 3)
    assert Mk.shape == (5, 5)
    np.testing.assert_array_equal(Mk, class_interaction_matrix(spec, params, 3))
    assert Mk[1, 4] == predict(spec, params, [[1, 4]])[0, 3]
    with pytest.raises(IndexError):
        class_interaction_matrix(spec, params, 5)


def test_one_hot_teacher_gives_delta_tables():
    # bilinear teacher with one-hot embeddings and hidden units indexed by (a, b)
    p = 5
    spec = make_spec("bilinear", "tokens", hidden=p * p, out_dim=p, vocab=p, embed_dim=p)
    W1 = np.zeros((p, p * p))
    W2 = np.zeros((p, p * p))
    W_out = np.zeros((p * p, p))
    for a in range(p):
        for b in range(p):
            W1[a, a * p + b] = W2[b, a * p + b] = 1.0
            W_out[a * p + b, (a + b) % p] = 1.0
    params = {"E": np.eye(p), "W1": W1, "W2": W2, "W_out": W_out}
    Ms = class_interaction_matrices(spec, params)
    a, b = np.meshgrid(range(p), range(p), indexing="ij")
    for k in range(p):
        np.testing.assert_array_equal(Ms[k], ((a + b) % p == k).astype(float))


def test_probe_score():
    spec = make_spec("relu", "pair", hidden=8, out_dim=1, head="scalar", input_dim=6, split=3)
    params = init_params(spec, 0)
    u, v = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    s = probe_interaction_score(spec, params, u, v)
    doubled = dict(params, W_out=2 * params["W_out"])
    assert probe_interaction_score(spec, doubled, u, v) == pytest.approx(2 * s, rel=1e-12)
    zero = {k: np.zeros_like(w) for k, w in params.items()}
    assert probe_interaction_score(spec, zero, u, v) == 0.0
    with pytest.raises(ad.ShapeError):
        probe_interaction_score(spec, params, u, np.ones(4))


def test_probe_equals_extracted_form_for_bilinear(rng):
    spec = make_spec("bilinear", "pair", hidden=12, out_dim=1, head="scalar", input_dim=16, split=8)
    params = init_params(spec, 2)
    M = extract_bilinear_interaction(spec, params)
    for _ in range(5):
        u, v = rng.standard_normal(8), rng.standard_normal(8)
        assert abs(probe_interaction_score(spec, params, u, v) - u @ M @ v) < 1e-10


def test_forward_is_bit_deterministic(rng):
    spec = token_spec("geglu")
    params = init_params(spec, 0)
    X = rng.integers(0, 7, size=(30, 2))
    assert predict(spec, params, X).tobytes() == predict(spec, params, X).tobytes()


def test_checkpoint_round_trip(tmp_path):
    spec = token_spec("swiglu")
    params = init_params(spec, 0)
    save_params(params, tmp_path / "ck.json", spec)
    loaded, spec2 = load_params(tmp_path / "ck.json")
    assert spec2 == spec
    for k in params:
        np.testing.assert_array_equal(loaded[k], params[k])


def _model_cases():
    cases = []
    for fam in FAMILIES:
        cases.append((fam, make_spec(fam, "tokens", hidden=5, out_dim=4, vocab=4, embed_dim=3), "xent"))
        cases.append((fam, make_spec(fam, "pair", hidden=5, out_dim=2, head="regression", input_dim=6, split=2),
                      "mse"))
        cases.append((fam, make_spec(fam, "vector", hidden=5, out_dim=1, head="scalar", input_dim=6), "mse"))
    return cases


@pytest.mark.parametrize("family,spec,loss", _model_cases(), ids=lambda x: getattr(x, "input_mode", x))
def test_full_model_gradient(family, spec, loss, rng):
    params = init_params(spec, 7)
    if spec.uses_embedding:
        X, y = rng.integers(0, spec.vocab, size=(6, 2)), rng.integers(0, spec.out_dim, size=6)
    else:
        X, y = rng.uniform(-1, 1, (6, spec.input_dim)), rng.uniform(-1, 1, (6, spec.out_dim))
    _, grads = loss_and_grads(spec, params, X, y, loss)
    for name, arr in params.items():
        num = numeric_grad(lambda: loss_and_grads(spec, params, X, y, loss)[0], arr)
        assert rel_error(grads[name], num) < 1e-5, name
