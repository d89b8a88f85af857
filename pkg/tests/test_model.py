"""Tests for the decoder network, its attention variants and checkpointing."""

import numpy as np
import pytest

from uecct import tensor as T
from uecct.channel import preprocess, standardize
from uecct.config import ModelConfig
from uecct.errors import ConfigError, DataError
from uecct.maskgen import NEG_INF
from uecct.model import (
    AttentionRecorder,
    MacTally,
    UecctModel,
    decode,
    embed,
    encoder_layer,
    hard_flips,
    unified_attention,
    vanilla_mha,
)
from uecct.registry import CodeRegistry, builtin_code
from uecct.tensor import Tensor, grad_check


@pytest.fixture
def rng():
    return np.random.default_rng(11)


@pytest.fixture
def hamming():
    return builtin_code("hamming74")


def small_model(variant="unified", n_max=7, s_max=3, seed=0, **kwargs):
    config = ModelConfig(layers=1, heads=2, d_k=4, variant=variant, **kwargs)
    return UecctModel(config, n_max, s_max, rng=np.random.default_rng(seed), code_names=["hamming74"])


def features_for(model, code, y):
    registry = CodeRegistry([code], n_max=model.n_max, s_max=model.s_max)
    return standardize(registry, code, preprocess(code, y)).features


# =============================================================================
# Building blocks
# =============================================================================


def test_embed_scales_rows_by_inputs(rng):
    W = Tensor(rng.standard_normal((5, 3)))
    x = np.array([[1.0, 0.0, 2.0, -1.0, 0.5]])
    out = embed(x, W).data
    assert out.shape == (1, 5, 3)
    assert np.allclose(out[0], x[0][:, None] * W.data)
    assert np.all(out[0, 1] == 0.0)


def test_embed_length_mismatch(rng):
    with pytest.raises(DataError, match="does not match W rows"):
        embed(np.zeros((1, 4)), Tensor(rng.standard_normal((5, 3))))


def test_unified_attention_single_column_collapses_to_memory_row(rng):
    X = Tensor(rng.standard_normal((2, 3, 6, 4)))
    A = Tensor(rng.standard_normal((6, 1)))
    V = Tensor(rng.standard_normal((6, 1)))
    out, probs = unified_attention(X, A, V, sparse=False)
    assert np.allclose(probs.data, 1.0)
    memory = np.einsum("n,bhnd->bhd", V.data[:, 0], X.data)
    assert np.allclose(out.data, np.broadcast_to(memory[:, :, None, :], out.shape))


def test_unified_attention_sparse_matches_dense_and_respects_mask(rng, hamming):
    model = small_model()
    masks = model.mask_stack([hamming] * 3)
    X = Tensor(rng.standard_normal((3, 2, 10, 4)))
    A = Tensor(rng.standard_normal((10, 3)))
    V = Tensor(rng.standard_normal((10, 3)))
    sparse_out, probs = unified_attention(X, A, V, masks, sparse=True)
    dense_out, _ = unified_attention(X, A, V, masks, sparse=False)
    assert np.max(np.abs(sparse_out.data - dense_out.data)) <= 1e-12
    assert probs.shape == (3, 1, 10, 3)
    assert np.all(probs.data[:, 0][masks <= NEG_INF / 2] == 0.0)
    assert np.allclose(probs.data.sum(axis=-1), 1.0)


def test_unified_attention_counts_only_active_entries(rng, hamming):
    model = small_model()
    masks = model.mask_stack([hamming])
    macs = MacTally()
    unified_attention(
        Tensor(rng.standard_normal((1, 1, 10, 4))),
        Tensor(rng.standard_normal((10, 3))),
        Tensor(rng.standard_normal((10, 3))),
        masks,
        macs=macs,
    )
    assert macs.get("attention.core") == 15 * 4
    assert macs.get("attention.core_dense") == 30 * 4
    assert macs.total == macs.get("attention.memory") + 60


def test_unified_attention_rejects_mismatched_shapes(rng):
    X = Tensor(rng.standard_normal((1, 1, 6, 2)))
    with pytest.raises(DataError, match="do not fit N=6"):
        unified_attention(X, Tensor(np.zeros((5, 2))), Tensor(np.zeros((5, 2))))


def vanilla_weights(rng, heads=2, d_k=3):
    shape = (heads, d_k, d_k)
    return [Tensor(rng.standard_normal(shape)) for _ in range(3)] + [
        Tensor(rng.standard_normal((heads * d_k, heads * d_k)))
    ]


def test_vanilla_single_token_attends_to_itself(rng):
    Wq, Wk, Wv, Wo = vanilla_weights(rng)
    X = Tensor(rng.standard_normal((2, 1, 6)))
    recorder = AttentionRecorder()
    out = vanilla_mha(X, Wq, Wk, Wv, Wo, recorder=recorder)
    assert np.allclose(recorder.attention[0], 1.0)
    Xh = X.data.reshape(2, 1, 2, 3).transpose(0, 2, 1, 3)
    V = Xh @ Wv.data
    expected = V.transpose(0, 2, 1, 3).reshape(2, 1, 6) @ Wo.data
    assert np.allclose(out.data, expected)


def test_vanilla_is_permutation_equivariant(rng):
    Wq, Wk, Wv, Wo = vanilla_weights(rng)
    X = rng.standard_normal((1, 5, 6))
    perm = np.array([3, 0, 4, 1, 2])
    out = vanilla_mha(Tensor(X), Wq, Wk, Wv, Wo).data
    out_perm = vanilla_mha(Tensor(X[:, perm]), Wq, Wk, Wv, Wo).data
    assert np.allclose(out[:, perm], out_perm)


def test_vanilla_rows_sum_to_one_and_skip_masked_keys(rng):
    Wq, Wk, Wv, Wo = vanilla_weights(rng)
    key_mask = np.array([[0.0, 0.0, NEG_INF, 0.0]])
    recorder = AttentionRecorder()
    vanilla_mha(Tensor(rng.standard_normal((1, 4, 6))), Wq, Wk, Wv, Wo, key_mask=key_mask, recorder=recorder)
    probs = recorder.attention[0]
    assert probs.shape == (1, 2, 4, 4)
    assert np.allclose(probs.sum(axis=-1), 1.0)
    assert np.all(probs[..., 2] == 0.0)
    assert recorder.scores[0].shape == (1, 2, 4, 4)


def test_vanilla_rejects_bad_projection_shapes(rng):
    Wq, Wk, Wv, Wo = vanilla_weights(rng)
    with pytest.raises(DataError, match="H·d_k"):
        vanilla_mha(Tensor(np.zeros((1, 4, 5))), Wq, Wk, Wv, Wo)


def test_zeroed_output_projections_make_layer_identity(rng):
    model = small_model()
    params = model.layer_params(0)
    for name in ("Wo", "ffn.w2", "ffn.b2"):
        params[name].data[...] = 0.0
    X = Tensor(rng.standard_normal((2, 10, 8)))
    out = encoder_layer(X, params, lambda h: h @ params["Wo"])
    assert np.array_equal(out.data, X.data)


# =============================================================================
# Model construction
# =============================================================================


def test_unknown_variant():
    with pytest.raises(ConfigError, match="Unknown model variant"):
        small_model(variant="sparse")


def test_d_l_smaller_than_s_max_rejected():
    with pytest.raises(ConfigError, match="d_l=2 is smaller than S_max=3"):
        small_model(d_l=2)


def test_d_l_smaller_than_s_max_allowed_without_mask():
    assert small_model(d_l=2, use_mask=False).d_l == 2


def test_extra_memory_columns_are_masked(hamming):
    model = small_model(d_l=5)
    mask = model.code_mask(hamming)
    assert mask.shape == (10, 5)
    assert np.all(mask[:, 3:] == NEG_INF)


def test_mask_off_gives_zero_mask(hamming):
    assert not small_model(use_mask=False).code_mask(hamming).any()


def test_unified_has_fewer_attention_parameters_than_vanilla():
    registry = CodeRegistry([builtin_code("hamming74"), builtin_code("golay24")])
    unified = UecctModel(ModelConfig(), registry.n_max, registry.s_max)
    vanilla = UecctModel(ModelConfig(variant="vanilla"), registry.n_max, registry.s_max)
    assert unified.parameter_count() < vanilla.parameter_count()


def test_trainable_freeze_patterns():
    model = small_model()
    assert "layer0.A_l" not in model.trainable(["memory"])
    assert "layer0.V_l" not in model.trainable(["memory"])
    assert "layer0.Wo" in model.trainable(["memory"])
    assert set(model.trainable(["encoder"])) == {"head.fc1.w", "head.fc1.b", "head.fc2.w", "head.fc2.b"}
    assert not any(name.startswith("layer0.") for name in model.trainable(["layer0"]))
    assert model.parameter_count(["head"]) < model.parameter_count()


def test_freeze_prefix_covers_both_leaves():
    model = small_model()
    kept = model.trainable(["head.fc1", "layer0.ln1"])
    for name in ("head.fc1.w", "head.fc1.b", "layer0.ln1.gamma", "layer0.ln1.beta"):
        assert name in model.params
        assert name not in kept
    assert "head.fc2.w" in kept
    assert "layer0.ln2.gamma" in kept


def test_slot_and_output_activity_for_padded_code(hamming):
    model = small_model(n_max=24, s_max=12)
    slots = model.slot_active([hamming])
    assert slots[0, :7].all() and not slots[0, 7:24].any()
    assert slots[0, 24:27].all() and not slots[0, 27:].any()
    assert model.output_active([hamming])[0].sum() == 7


# =============================================================================
# Forward pass
# =============================================================================


@pytest.mark.parametrize("variant", ["unified", "vanilla"])
def test_forward_shapes_and_range(variant, rng, hamming):
    model = small_model(variant=variant, n_max=24, s_max=12)
    feats = features_for(model, hamming, rng.standard_normal((4, 7)))
    out = model(feats, [hamming] * 4)
    assert out.shape == (4, 24)
    assert np.all((out.data > 0) & (out.data < 1))


def test_forward_rejects_wrong_width(hamming):
    model = small_model()
    with pytest.raises(DataError, match="expected \\(batch, 10\\)"):
        model(np.zeros((2, 9)), [hamming] * 2)
    with pytest.raises(DataError, match="2 codes for a batch of 3"):
        model(np.zeros((3, 10)), [hamming] * 2)


def test_forward_mac_tally_has_every_component(rng, hamming):
    model = small_model()
    macs = MacTally()
    model(features_for(model, hamming, rng.standard_normal((1, 7))), [hamming], macs=macs)
    for kind in ("embed", "attention.memory", "attention.core", "attention.output", "ffn", "head"):
        assert macs.get(kind) > 0, kind


def test_recorder_collects_one_entry_per_layer(rng, hamming):
    config = ModelConfig(layers=3, heads=2, d_k=4)
    model = UecctModel(config, 7, 3)
    recorder = AttentionRecorder()
    model(features_for(model, hamming, rng.standard_normal((2, 7))), [hamming] * 2, recorder=recorder)
    assert len(recorder.attention) == 3
    assert recorder.attention[0].shape == (2, 2, 10, 3)
    # heads share the same matrix
    assert np.array_equal(recorder.attention[0][:, 0], recorder.attention[0][:, 1])


GRADIENT_CASES = [("unified", True), ("unified", False), ("vanilla", False)]


def perturbed_two_layer_model(variant, sparse, seed):
    config = ModelConfig(layers=2, heads=2, d_k=2, variant=variant, sparse_kernel=sparse)
    model = UecctModel(config, 7, 3, rng=np.random.default_rng(seed), code_names=["hamming74"])
    rng = np.random.default_rng(seed + 1000)
    # move biases and norms off their zero/one init
    for param in model.params.values():
        param.data = param.data + 0.1 * rng.standard_normal(param.data.shape)
    return model, rng


def gradient_reports(model, code, rng):
    feats = features_for(model, code, rng.standard_normal((3, 7)) + 1.0)
    target = (rng.random((3, 7)) < 0.2).astype(float)
    active = model.output_active([code] * 3)
    reports = {}
    for name, original in list(model.params.items()):

        def loss(point, name=name):
            model.params[name] = point
            return T.bce_loss(model(feats, [code] * 3), target, active)

        reports[name] = grad_check(loss, Tensor(original.data.copy()))
        model.params[name] = original
    return reports


def assert_gradients_match(reports):
    failed = {name: r.max_rel_error for name, r in reports.items() if r.status == "fail"}
    assert not failed
    assert sum(r.passed for r in reports.values()) > len(reports) // 2


@pytest.mark.parametrize(("variant", "sparse"), GRADIENT_CASES)
def test_two_layer_gradient_every_parameter(variant, sparse, hamming):
    model, rng = perturbed_two_layer_model(variant, sparse, seed=0)
    reports = gradient_reports(model, hamming, rng)
    assert set(reports) == set(model.params)
    assert any(name.startswith("layer1.") for name in reports)
    assert_gradients_match(reports)


@pytest.mark.slow
@pytest.mark.parametrize(("variant", "sparse"), GRADIENT_CASES)
def test_two_layer_gradient_at_twenty_points(variant, sparse, hamming):
    for seed in range(1, 21):
        model, rng = perturbed_two_layer_model(variant, sparse, seed)
        assert_gradients_match(gradient_reports(model, hamming, rng))


def test_padded_outputs_get_no_gradient(rng, hamming):
    model = small_model(n_max=24, s_max=12)
    feats = features_for(model, hamming, rng.standard_normal((2, 7)))
    out = model(feats, [hamming] * 2)
    T.backward(T.bce_loss(out, np.zeros((2, 24)), model.output_active([hamming] * 2)))
    grad = model.params["head.fc2.w"].grad
    assert np.all(grad[:, 7:] == 0.0)
    assert np.any(grad[:, :7] != 0.0)


# =============================================================================
# Decoding and persistence
# =============================================================================


def test_hard_flips_threshold():
    assert hard_flips([0.2, 0.5, 0.5000001, 0.9]).tolist() == [0, 0, 1, 1]


def test_decode_single_and_batch(rng, hamming):
    model = small_model()
    y = rng.standard_normal((5, 7)) + 1.0
    z_hat, x_hat = decode(model, hamming, y)
    assert z_hat.shape == (5, 7) and x_hat.shape == (5, 7)
    assert set(np.unique(x_hat)) <= {0, 1}
    z1, x1 = decode(model, hamming, y[0])
    assert z1.shape == (7,)
    assert np.array_equal(x1, x_hat[0])
    z_again, _ = decode(model, hamming, y)
    assert np.array_equal(z_again, z_hat)


def test_save_and_load_reproduces_outputs(tmp_path, rng, hamming):
    model = small_model(seed=5)
    path = model.save(tmp_path / "model.npz", extra={"epoch": 2})
    loaded, meta = UecctModel.load(path)
    assert meta["epoch"] == 2
    assert loaded.config == model.config
    feats = features_for(model, hamming, rng.standard_normal((2, 7)))
    assert np.array_equal(loaded(feats, [hamming] * 2).data, model(feats, [hamming] * 2).data)


def test_load_state_reports_mismatches():
    model = small_model()
    other = UecctModel(ModelConfig(layers=2, heads=2, d_k=4), 7, 3)
    with pytest.raises(DataError, match="Checkpoint does not fit the model") as exc:
        model.load_state({k: t.data for k, t in other.params.items()})
    assert "unexpected tensors: layer1." in str(exc.value)
