import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disentangle.architectures import init_params, make_spec, predict
from disentangle.tasks import gen_entangled, gen_superposition
from disentangle.unlearning import (EntangledConfig, SuperpositionConfig, attack_loss, block_norms,
                                    classify_neurons, distortion, distortion_target, entangled_spec,
                                    gradient_unlearn, interaction_scores, pearson, pretrain_entangled,
                                    prune_sweep, run_superposition, score_tasks, selectivity, superposition_spec)


def two_pass_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / (sxx * syy) ** 0.5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 200))
def test_pearson_matches_two_pass(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n) * rng.uniform(0.1, 100) + rng.uniform(-50, 50)
    y = 0.3 * x + rng.standard_normal(n)
    assert abs(pearson(x, y) - two_pass_pearson(list(x), list(y))) < 1e-12


def test_pearson_constant_is_zero():
    assert pearson(np.ones(5), np.arange(5.0)) == 0.0
    with pytest.raises(ValueError):
        pearson(np.ones(3), np.ones(4))


def planted_superposition(tasks, hidden=4):
    """Bilinear scalar model with M = M_A + M_B exactly (two hidden units)."""
    spec = superposition_spec("bilinear", tasks.d, hidden)
    W1 = np.zeros((tasks.d, hidden))
    W2 = np.zeros((tasks.d, hidden))
    W_out = np.zeros((hidden, 1))
    W1[:, 0], W2[:, 0], W_out[0] = tasks.u1, tasks.v1, tasks.lam
    W1[:, 1], W2[:, 1], W_out[1] = tasks.u2, tasks.v2, tasks.lam
    return spec, {"W1": W1, "W2": W2, "W_out": W_out}


def test_planted_scores_alpha0():
    tasks = gen_superposition(d=32, n_tokens=50, alpha=0.0, n_samples=100, seed=0)
    spec, params = planted_superposition(tasks)
    s = score_tasks(spec, params, tasks)
    assert s.score_A == pytest.approx(60.0, abs=1e-10) and s.score_B == pytest.approx(60.0, abs=1e-10)
    y = predict(spec, params, tasks.X)[:, 0]
    np.testing.assert_allclose(y, tasks.y_phase1, atol=1e-10)


def test_planted_scores_alpha1():
    tasks = gen_superposition(d=32, n_tokens=50, alpha=1.0, n_samples=100, seed=0)
    spec, params = planted_superposition(tasks)
    assert score_tasks(spec, params, tasks).score_B == pytest.approx(120.0, abs=1e-10)


def test_zero_model_scores():
    tasks = gen_superposition(d=8, n_tokens=10, alpha=0.3, n_samples=10, seed=0)
    for fam in ("bilinear", "relu", "swiglu"):
        spec = superposition_spec(fam, 8, 6)
        zero = {k: np.zeros_like(v) for k, v in init_params(spec, 0).items()}
        s = score_tasks(spec, zero, tasks)
        assert (s.score_A, s.score_B) == (0.0, 0.0)


def test_extract_and_probe_routes_agree():
    tasks = gen_superposition(d=16, n_tokens=10, alpha=0.4, n_samples=10, seed=1)
    spec = superposition_spec("bilinear", 16, 32)
    params = init_params(spec, 5)
    a = score_tasks(spec, params, tasks, route="extract")
    b = score_tasks(spec, params, tasks, route="probe")
    assert abs(a.score_A - b.score_A) < 1e-10 and abs(a.score_B - b.score_B) < 1e-10
    with pytest.raises(ValueError):
        score_tasks(spec, params, tasks, route="other")


def test_distortion_examples():
    t0 = gen_superposition(d=16, n_tokens=10, alpha=0.0, n_samples=10, seed=0)
    t1 = gen_superposition(d=16, n_tokens=10, alpha=1.0, n_samples=10, seed=0)
    th = gen_superposition(d=16, n_tokens=10, alpha=0.5, n_samples=10, seed=0)
    assert distortion(60.0, t0) == pytest.approx(0.0, abs=1e-12)
    assert distortion(60.0, t1) == pytest.approx(60.0, abs=1e-12)
    assert distortion_target(t0) == pytest.approx(60.0, abs=1e-12)
    assert distortion_target(t1) == pytest.approx(120.0, abs=1e-12)
    overlap = (th.u2 @ th.u1) * (th.v2 @ th.v1)
    assert distortion_target(th) == pytest.approx(60.0 * (1 + overlap), abs=1e-12)
    assert 60.0 < distortion_target(th) < 120.0


def test_run_superposition_short():
    cfg = SuperpositionConfig(d=8, hidden=16, n_tokens=40, n_samples=400, batch_size=100,
                              phase1_epochs={"default": 3}, phase2_epochs={"default": 2})
    r = run_superposition("bilinear", 0.0, seed=0, config=cfg)
    assert len(r.score_A) == 5 and r.phase_boundary == 3
    assert r.target_B == pytest.approx(60.0)
    assert r.distortion == abs(r.final.score_B - 60.0)
    r2 = run_superposition("bilinear", 0.0, seed=0, config=cfg)
    np.testing.assert_array_equal(r.score_B, r2.score_B)


# entangled


def block_model(d, blocks):
    """Bilinear neuron per entry of ``blocks``: (u block, v block)."""
    m = len(blocks)
    spec = entangled_spec("bilinear", d, m)
    W1 = np.zeros((3 * d, m))
    W2 = np.zeros((3 * d, m))
    for h, (bu, bv) in enumerate(blocks):
        if bu is not None:
            W1[bu * d:(bu + 1) * d, h] = 1.0
        if bv is not None:
            W2[bv * d:(bv + 1) * d, h] = 1.0
    return spec, {"W1": W1, "W2": W2, "W_out": np.ones((m, 1))}


def test_role_examples():
    spec, params = block_model(4, [(0, 1), (1, 2), (0, 2), (None, None), (1, 1), (1, 0)])
    roles = classify_neurons(spec, params)
    assert roles.labels.tolist() == ["pure_f12", "pure_f23", "mixed", "dead", "mixed", "pure_f12"]
    assert sum(roles.counts().values()) == 6


def test_interaction_scores_bilinear():
    spec, params = block_model(4, [(0, 1)])
    S12, S23 = interaction_scores(spec, params)
    assert S12[0] == pytest.approx(4.0) and S23[0] == 0.0  # |u1| |v2| = 2 * 2
    assert block_norms(spec, params).shape == (2, 3, 1)


def test_interaction_scores_relu_bridge():
    d = 3
    spec = entangled_spec("relu", d, 2)
    W = np.zeros((3 * d, 2))
    W[:d, 0] = 1.0
    W[d:2 * d, 0] = 2.0
    W[d:2 * d, 1] = 1.0
    W[2 * d:, 1] = 1.0
    params = {"W": W, "b": np.zeros((1, 2)), "W_out": np.ones((2, 1))}
    S12, S23 = interaction_scores(spec, params)
    np.testing.assert_allclose(S12, [np.sqrt(3) * 2 * np.sqrt(3), 0.0])
    np.testing.assert_allclose(S23, [0.0, 3.0])
    assert classify_neurons(spec, params).labels.tolist() == ["pure_f12", "pure_f23"]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_roles_partition_neurons(seed):
    spec = entangled_spec("bilinear", 4, 10)
    roles = classify_neurons(spec, init_params(spec, seed))
    assert len(roles.labels) == 10
    assert set(roles.labels) <= {"dead", "pure_f12", "pure_f23", "mixed"}
    assert sum(roles.counts().values()) == 10


@pytest.fixture(scope="module")
def small_entangled():
    data = gen_entangled(d=6, rank=1, n_train=2000, n_val=500, seed=0)
    cfg = EntangledConfig(d=6, hidden=24, epochs=15, batch_size=128)
    spec, params, _ = pretrain_entangled("bilinear", data, 0, cfg)
    return data, spec, params


def test_prune_sweep_endpoints(small_entangled):
    data, spec, params = small_entangled
    curve = prune_sweep(spec, params, data.X_val, data.f12_val, data.f23_val)
    assert (curve.ret_f12[0], curve.ret_f23[0]) == (1.0, 1.0)
    assert (curve.ret_f12[-1], curve.ret_f23[-1]) == (0.0, 0.0)
    assert len(curve.pruned) == 25
    S12, _ = interaction_scores(spec, params)
    assert np.all(np.diff(S12[curve.order]) <= 0)


def test_prune_sweep_is_reproducible(small_entangled):
    data, spec, params = small_entangled
    a = prune_sweep(spec, params, data.X_val, data.f12_val, data.f23_val)
    b = prune_sweep(spec, params, data.X_val, data.f12_val, data.f23_val)
    np.testing.assert_array_equal(a.ret_f12, b.ret_f12)


def test_prune_planted_model_is_surgical():
    data = gen_entangled(d=4, rank=1, n_train=10, n_val=20000, seed=1)
    d = 4
    spec = entangled_spec("bilinear", d, 2)
    W1 = np.zeros((3 * d, 2))
    W2 = np.zeros((3 * d, 2))
    u12, v12 = np.linalg.svd(data.A12)[0][:, 0], np.linalg.svd(data.A12)[2][0]
    s12 = np.linalg.svd(data.A12)[1][0]
    u23, v23 = np.linalg.svd(data.A23)[0][:, 0], np.linalg.svd(data.A23)[2][0]
    s23 = np.linalg.svd(data.A23)[1][0]
    W1[:d, 0], W2[d:2 * d, 0] = u12, v12
    W1[d:2 * d, 1], W2[2 * d:, 1] = u23, v23
    params = {"W1": W1, "W2": W2, "W_out": np.array([[s12], [s23]])}
    np.testing.assert_allclose(predict(spec, params, data.X_val)[:, 0], data.y_val, atol=1e-9)
    curve = prune_sweep(spec, params, data.X_val, data.f12_val, data.f23_val)
    assert curve.order[0] == 0
    assert curve.has_point(0.05, 0.90)
    # f23 correlation rises once the f12 neuron is gone, so its retention exceeds 1
    assert abs(curve.ret_f12[1]) < 0.05 and curve.ret_f23[1] > 1.0


def test_gradient_unlearn_series(small_entangled):
    data, spec, params = small_entangled
    before = {k: v.copy() for k, v in params.items()}
    _, corr = gradient_unlearn(spec, params, data, steps=20, batch_size=128)
    assert corr.shape == (21, 2)
    y0 = predict(spec, params, data.X_val)[:, 0]
    assert corr[0, 0] == pearson(y0, data.f12_val) and corr[0, 1] == pearson(y0, data.f23_val)
    for k in params:
        np.testing.assert_array_equal(params[k], before[k])


def test_oracle_f23_model_correlations():
    # a model that outputs exactly f23: corr_f23 = 1 and corr_f12 ~ 0 (independent chaoses)
    data = gen_entangled(d=16, rank=1, n_train=10, n_val=20000, seed=2)
    assert pearson(data.f23_val, data.f23_val) == pytest.approx(1.0)
    assert abs(pearson(data.f23_val, data.f12_val)) < 4 / np.sqrt(20000)


def test_attack_loss_value():
    from disentangle import autodiff as ad
    out = ad.constant(np.array([[1.0], [2.0]]))
    targets = np.array([[0.0, 1.0], [0.0, 2.0]])
    assert attack_loss(0.5)(out, targets).value[0, 0] == pytest.approx(0.0 - 0.5 * 2.5)


def test_selectivity_ratio_definition():
    # damage 0.5 on f12 and 0.1 on f23 gives ratio 5
    d12, d23, eps = 0.5, 0.1, 1e-3
    assert d12 / (eps if d23 < eps else d23) == pytest.approx(5.0)


def test_selectivity_zero_steps_flagged(small_entangled):
    data, spec, params = small_entangled
    r = selectivity(spec, params, data, steps=0)
    assert r.delta_f12 == 0.0 and r.delta_f23 == 0.0
    assert r.flagged and r.ratio == 0.0 and r.steps_run == 0


def test_selectivity_runs_and_reports(small_entangled):
    data, spec, params = small_entangled
    r = selectivity(spec, params, data, steps=5, lr=1e-3, batch_size=128)
    assert r.steps_run == 5 and not r.diverged
    assert np.isfinite(r.ratio)
    if not r.flagged:
        assert r.ratio == pytest.approx(r.delta_f12 / r.delta_f23)


def test_selectivity_divergence_guard(small_entangled):
    data, spec, params = small_entangled
    r = selectivity(spec, params, data, steps=50, lr=1e6, batch_size=128)
    assert r.diverged and r.steps_run < 50
    assert np.isfinite(r.delta_f12) and np.isfinite(r.delta_f23)
