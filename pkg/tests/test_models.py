import numpy as np
import pytest

from armsense import autodiff as ad
from armsense.errors import NonFiniteLogits, ShapeMismatch, TooManyPatches
from armsense.models import (
    BivtcModel,
    ModelConfig,
    VitModel,
    bivtc_forward,
    build_bivtc,
    build_encoder,
    build_vit,
    embed_patches,
    load_model_weights,
    paper_preset,
    predict,
    save_model,
    state_dict,
    tiny_preset,
    vit_classify_forward,
    vit_forward,
)
from armsense.preprocess import patchify
from armsense.types import ActivityLabel, AmplitudeWindow, SnifferId

from helpers import make_sample, make_window


TINY = tiny_preset()


def _tiny_encoder(seed=0, capacity=16, dtype=np.float64):
    return build_encoder(TINY, ad.make_rng(seed), patch_capacity=capacity, dtype=dtype)


def _patches(rows=8, cols=8, seed=0):
    return patchify(make_window(rows, cols, seed=seed), TINY.patch_side)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(embed_dim=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(dropout_p=1.0)


def test_paper_preset_values():
    cfg = paper_preset()
    assert (cfg.embed_dim, cfg.heads, cfg.depth, cfg.patch_side) == (128, 4, 6, 45)
    assert cfg.dropout_p == 0.4
    assert cfg.num_classes == 8


def test_config_json_roundtrip():
    cfg = ModelConfig(depth=2, mlp_hidden=64)
    assert ModelConfig.from_json(cfg.to_json()) == cfg


def test_embed_patches_shape_and_positions():
    enc = _tiny_encoder()
    p = _patches()
    out = embed_patches(p, enc, ad.make_rng(0))
    assert out.data.shape == (16, TINY.embed_dim)

    # identical patch content at two positions differs exactly by the
    # positional rows
    w = AmplitudeWindow(np.tile(np.arange(4, dtype=np.float32).reshape(2, 2), (2, 1)), 30)
    p2 = patchify(w, 2)
    tokens = embed_patches(p2, enc, ad.make_rng(0))
    pos = enc.positional_embedding.data
    delta = tokens.data[1] - tokens.data[0]
    assert np.allclose(delta, pos[1] - pos[0], atol=1e-6)


def test_embed_zero_patches_zero_positions_gives_zero_tokens():
    enc = _tiny_encoder(seed=20)
    enc.positional_embedding.data[:] = 0.0
    silent = patchify(AmplitudeWindow(np.zeros((8, 8), dtype=np.float32), 30), 2)
    tokens = embed_patches(silent, enc, ad.make_rng(0))
    assert np.all(tokens.data == 0.0)


def test_embed_paper_scale_token_shape():
    from armsense.models import default_patch_capacity

    cfg = paper_preset()
    assert default_patch_capacity(cfg) == 48
    enc = build_encoder(cfg, ad.make_rng(21))
    p = patchify(make_window(360, 236, seed=22), cfg.patch_side)
    tokens = embed_patches(p, enc, ad.make_rng(0))
    assert tokens.data.shape == (48, 128)


def test_embed_patches_capacity_guard():
    enc = _tiny_encoder(capacity=3)
    with pytest.raises(TooManyPatches):
        embed_patches(_patches(), enc, ad.make_rng(0))


def test_vit_forward_depth_zero_is_mean_of_tokens():
    cfg = ModelConfig(
        embed_dim=8, heads=2, depth=0, patch_side=2, mlp_hidden=16, dropout_p=0.0, head_hidden=8
    )
    enc = build_encoder(cfg, ad.make_rng(1), patch_capacity=16, dtype=np.float64)
    p = _patches(seed=3)
    feature = vit_forward(p, enc, ad.make_rng(0))
    tokens = embed_patches(p, enc, ad.make_rng(0))
    assert np.allclose(feature.data, tokens.data.mean(axis=0))
    assert feature.data.shape == (8,)


def test_vit_forward_permutation_invariant_with_zero_positions():
    enc = _tiny_encoder(seed=2)
    enc.positional_embedding.data[:] = 0.0
    p = _patches(seed=4)
    base = vit_forward(p, enc, ad.make_rng(0)).data
    perm = np.random.default_rng(5).permutation(p.count)
    shuffled = type(p)(
        p.patches[perm], p.patch_side, p.pad_rows, p.pad_cols, p.origin_shape, p.rate_hz
    )
    out = vit_forward(shuffled, enc, ad.make_rng(0)).data
    assert np.abs(base - out).max() < 1e-9


def test_vit_forward_tiny_grad_check():
    enc = _tiny_encoder(seed=6, capacity=4)
    w = make_window(4, 4, seed=7)
    p = patchify(w, 2)

    def f():
        feature = vit_forward(p, enc, ad.make_rng(0))
        return ad.cross_entropy(ad.reshape(feature, (1, 8)), [2])

    err = ad.grad_check(f, enc.parameters(), eps=1e-5)
    assert err < 1e-4


def test_bivtc_logits_shape_and_softmax():
    model = build_bivtc(TINY, ad.make_rng(8), patch_capacity=16, dtype=np.float64)
    s = make_sample(rows=8, cols=8, seed=9)
    logits = bivtc_forward(s, model, ad.make_rng(0))
    assert logits.data.shape == (8,)
    probs = ad.softmax_last_dim(logits).data
    assert probs.sum() == pytest.approx(1.0, abs=1e-6)


def test_bivtc_rejects_mismatched_windows():
    model = build_bivtc(TINY, ad.make_rng(8), patch_capacity=64, dtype=np.float64)
    s = make_sample(rows=8, cols=8, seed=9)
    bad = type(s)(s.sniffer1, make_window(8, 10, seed=1), s.meta)
    with pytest.raises(ShapeMismatch):
        bivtc_forward(bad, model, ad.make_rng(0))


def test_bivtc_swap_symmetry():
    model = build_bivtc(TINY, ad.make_rng(10), patch_capacity=16, dtype=np.float64)
    s = make_sample(rows=8, cols=8, seed=11)
    base = bivtc_forward(s, model, ad.make_rng(0)).data

    L = TINY.embed_dim
    swapped_head = type(model.head)(
        w1=ad.Tensor(
            np.concatenate([model.head.w1.data[L:], model.head.w1.data[:L]]), requires_grad=True
        ),
        b1=model.head.b1,
        w2=model.head.w2,
        b2=model.head.b2,
    )
    swapped_model = BivtcModel(
        config=model.config, encoder1=model.encoder2, encoder2=model.encoder1, head=swapped_head
    )
    swapped_sample = type(s)(s.sniffer2, s.sniffer1, s.meta)
    out = bivtc_forward(swapped_sample, swapped_model, ad.make_rng(0)).data
    assert np.abs(base - out).max() < 1e-9


def test_bivtc_stream_isolation():
    # zeroing encoder2's contribution makes logits independent of sniffer2
    model = build_bivtc(TINY, ad.make_rng(12), patch_capacity=16, dtype=np.float64)
    L = TINY.embed_dim
    model.head.w1.data[L:] = 0.0
    s = make_sample(rows=8, cols=8, seed=13)
    base = bivtc_forward(s, model, ad.make_rng(0)).data
    perturbed = type(s)(s.sniffer1, make_window(8, 8, seed=99), s.meta)
    out = bivtc_forward(perturbed, model, ad.make_rng(0)).data
    assert np.array_equal(base, out)


def test_bivtc_eval_mode_deterministic():
    model = build_bivtc(TINY, ad.make_rng(14), patch_capacity=16)
    s = make_sample(rows=8, cols=8, seed=15)
    a = bivtc_forward(s, model, ad.make_rng(0), train=False).data
    b = bivtc_forward(s, model, ad.make_rng(123), train=False).data
    assert np.array_equal(a, b)


def test_bivtc_full_grad_check_tiny():
    model = build_bivtc(TINY, ad.make_rng(16), patch_capacity=4, dtype=np.float64)
    s = make_sample(rows=4, cols=4, seed=17)

    def f():
        return ad.cross_entropy(bivtc_forward(s, model, ad.make_rng(0)), 5)

    err = ad.grad_check(f, model.parameters(), eps=1e-5)
    assert err < 1e-4


def test_vit_single_stream_uses_designated_sniffer():
    model = build_vit(TINY, ad.make_rng(18), patch_capacity=16, sniffer=SnifferId.S2)
    s = make_sample(rows=8, cols=8, seed=19)
    base = vit_classify_forward(s, model, ad.make_rng(0)).data
    changed_s1 = type(s)(make_window(8, 8, seed=77), s.sniffer2, s.meta)
    assert np.array_equal(base, vit_classify_forward(changed_s1, model, ad.make_rng(0)).data)
    changed_s2 = type(s)(s.sniffer1, make_window(8, 8, seed=78), s.meta)
    assert not np.array_equal(base, vit_classify_forward(changed_s2, model, ad.make_rng(0)).data)


def test_predict_basics():
    one_hot = np.full(8, -5.0)
    one_hot[3] = 2.0
    assert predict(one_hot) is ActivityLabel.SILENCE
    assert predict(np.zeros(8)) is ActivityLabel.ARC  # tie -> lowest index
    with pytest.raises(NonFiniteLogits):
        predict(np.array([np.nan] + [0.0] * 7))
    with pytest.raises(ShapeMismatch):
        predict(np.zeros(7))


def test_predict_shift_invariance_and_oracle():
    rng = np.random.default_rng(20)
    for _ in range(100):
        logits = rng.standard_normal(8)
        label = predict(logits)
        assert predict(logits + 13.7) == label
        best = max(range(8), key=lambda i: (logits[i], -i))
        assert int(label) == best


def test_checkpoint_roundtrip_identical_logits(tmp_path):
    model = build_bivtc(TINY, ad.make_rng(21), patch_capacity=16)
    s = make_sample(rows=8, cols=8, seed=22)
    base = bivtc_forward(s, model, ad.make_rng(0)).data.copy()
    save_model(tmp_path / "m.rfsw", model)

    reloaded = build_bivtc(TINY, ad.make_rng(999), patch_capacity=16)
    load_model_weights(tmp_path / "m.rfsw", reloaded)
    out = bivtc_forward(s, reloaded, ad.make_rng(0)).data
    assert np.array_equal(base, out)
    assert (tmp_path / "m.rfsw.config.json").exists()


def test_state_dict_covers_all_parameters():
    model = build_bivtc(TINY, ad.make_rng(23), patch_capacity=16)
    named = state_dict(model)
    assert len(named) == len(model.parameters())
    by_id = {id(t) for t in named.values()}
    assert all(id(p) in by_id for p in model.parameters())


def test_vit_model_checkpoint(tmp_path):
    model = build_vit(TINY, ad.make_rng(24), patch_capacity=16)
    save_model(tmp_path / "v.rfsw", model)
    other = build_vit(TINY, ad.make_rng(25), patch_capacity=16)
    load_model_weights(tmp_path / "v.rfsw", other)
    for name, tensor in state_dict(model).items():
        assert np.array_equal(tensor.data, state_dict(other)[name].data), name
