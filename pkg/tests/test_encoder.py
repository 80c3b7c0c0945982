import numpy as np
import pytest

from transblstm import ModelConfig, build_model, count_params_analytic, count_params_model, preset
from transblstm.autodiff import Tensor, gradcheck, no_record, ops, precision
from transblstm.checks import block_gradcheck, perturb_parameters
from transblstm.encoder import (
    Encoder,
    PureBlstmLayer,
    TransBlstm1Block,
    TransBlstm2Block,
    TransformerBlock,
    encoder_stack_forward,
    make_block,
)
from transblstm.errors import ConfigError
from transblstm.nn import initialize, set_dropout_rng

MODES = ["none", "replace_ffn", "parallel_sum", "pure_blstm"]


def cfg(**kw):
    base = dict(num_layers=2, hidden=8, num_heads=2, ff_width=32, blstm_hidden=4, vocab_size=20,
                max_positions=16, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def ln(x):
    mu = x.mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(((x - mu) ** 2).mean(-1, keepdims=True) + 1e-12)


@pytest.mark.parametrize("mode", MODES)
def test_block_preserves_shape(f64, mode):
    block = make_block(cfg(blstm_mode=mode))
    perturb_parameters(block, np.random.default_rng(0))
    for s in (1, 5, 16):
        assert block(Tensor(np.ones((s, 8)))).shape == (s, 8)


@pytest.mark.parametrize("mode", ["none", "replace_ffn", "parallel_sum"])
def test_zero_sublayers_reduce_to_double_layer_norm(f64, mode):
    block = make_block(cfg(blstm_mode=mode))
    initialize(block, 0)
    for name, p in block.named_parameters():
        if p.kind == "weight":
            p.data[...] = 0.0
    x = np.random.default_rng(1).normal(size=(4, 8))
    np.testing.assert_allclose(block(Tensor(x)).data, ln(ln(x)), atol=1e-12)


@pytest.mark.parametrize("mode", MODES)
def test_block_gradcheck(mode):
    res = block_gradcheck(cfg(blstm_mode=mode), batch=2, seq_len=4, seed=0, max_coords=None)
    assert res.max_error < 1e-4, res.worst


def test_trans_blstm2_gradcheck_attention_sum_point():
    res = block_gradcheck(cfg(blstm_mode="parallel_sum", sum_point="attention"), seq_len=4)
    assert res.max_error < 1e-4


def test_half_width_block_has_no_projection():
    block = TransBlstm1Block(cfg(blstm_mode="replace_ffn", blstm_hidden=4))
    assert block.blstm.proj is None
    assert not any("proj" in n for n, _ in block.named_parameters())
    assert TransBlstm1Block(cfg(blstm_mode="replace_ffn", blstm_hidden=8)).blstm.proj is not None


def test_tb1_block_count_formula():
    c = preset("base", blstm_mode="replace_ffn")
    base_block = TransformerBlock(c)
    tb1 = TransBlstm1Block(c)
    ffn = base_block.ffn.num_parameters()
    blstm = 2 * 4 * (768 * 768 + 768 * 768 + 768) + (2 * 768 * 768 + 768)
    assert tb1.num_parameters() == base_block.num_parameters() - ffn + blstm
    rep = count_params_analytic(c)
    assert tb1.num_parameters() == rep.per_layer


def test_ablation_identity_block(f64):
    c = cfg(blstm_mode="parallel_sum", dropout=0.1)
    trans, tb2 = TransformerBlock(c), TransBlstm2Block(c)
    initialize(trans, 3)
    initialize(tb2, 3)
    for name, p in tb2.named_parameters():
        if name.startswith("blstm."):
            p.data[...] = 0.0
    x = Tensor(np.random.default_rng(2).normal(size=(2, 5, 8)))
    pad = np.array([[True] * 5, [True] * 3 + [False] * 2])
    for m in (trans, tb2):
        set_dropout_rng(m, np.random.default_rng(9))
        m.train()
    assert np.array_equal(trans(x, pad).data, tb2(x, pad).data)


def test_ablation_identity_full_model_float32(synthetic):
    from transblstm.data import ExampleStream, TokenizedCorpus

    c = preset("toy")
    tok = TokenizedCorpus.build(synthetic.corpus, synthetic.vocab)
    batch = ExampleStream(tok, synthetic.vocab, np.random.default_rng(0), 32).batch(8)
    trans = build_model(c, 0)
    tb2 = build_model(c.replace(blstm_mode="parallel_sum"), 0)
    for name, p in tb2.named_parameters():
        if ".blstm." in name:
            p.data[...] = 0.0
    with no_record():
        lt = [t.item() for t in trans.losses(batch)]
        lb = [t.item() for t in tb2.losses(batch)]
    assert lt == lb


def test_shared_init_by_name():
    a = build_model(preset("toy"), 7)
    b = build_model(preset("toy", blstm_mode="parallel_sum"), 7)
    pb = dict(b.named_parameters())
    for name, p in a.named_parameters():
        assert np.array_equal(p.data, pb[name].data), name


def test_pure_single_layer_composition(f64):
    c = cfg(blstm_mode="pure_blstm", num_layers=1, blstm_hidden=8)
    layer = PureBlstmLayer(c)
    perturb_parameters(layer, np.random.default_rng(4))
    x = np.random.default_rng(5).normal(size=(6, 8))
    raw = layer.blstm.scan(Tensor(x)).data
    proj = raw @ layer.blstm.proj.weight.data + layer.blstm.proj.bias.data
    n = layer.output_norm
    expect = ln(x + proj) * n.gamma.data + n.beta.data
    np.testing.assert_allclose(layer(Tensor(x)).data, expect, atol=1e-12)


def test_pure_stack_shape():
    enc = Encoder(cfg(blstm_mode="pure_blstm", num_layers=3))
    assert enc(np.arange(7) % 20, np.zeros(7, dtype=int)).shape == (7, 8)


@pytest.mark.parametrize("silence", ["backward_dir", "forward_dir"])
def test_pure_stack_causality_every_depth(f64, silence):
    c = cfg(blstm_mode="pure_blstm", num_layers=3, blstm_hidden=8)
    layers = [PureBlstmLayer(c) for _ in range(3)]
    rng = np.random.default_rng(6)
    for layer in layers:
        perturb_parameters(layer, rng)
        for _, p in getattr(layer.blstm, silence).named_parameters():
            p.data[...] = 0.0
    x = rng.normal(size=(7, 8))
    t = 3
    moved = x.copy()
    if silence == "backward_dir":
        moved[t + 1:] += 1.0
        keep = slice(0, t + 1)
    else:
        moved[:t] += 1.0
        keep = slice(t, None)
    a, b = Tensor(x), Tensor(moved)
    for layer in layers:
        a, b = layer(a), layer(b)
        assert np.array_equal(a.data[keep], b.data[keep])
        assert not np.array_equal(a.data, b.data)


def test_toy_encoder_output_shape():
    c = preset("toy")
    enc = Encoder(c)
    out = encoder_stack_forward(np.arange(8) + 5, np.zeros(8, dtype=int), enc)
    assert out.shape == (8, 16)


def test_variants_accept_same_config_and_shapes():
    c = preset("toy")
    ids = np.random.default_rng(0).integers(5, 100, size=(3, 9))
    seg = np.zeros_like(ids)
    shapes = []
    for mode in ("replace_ffn", "parallel_sum"):
        model = build_model(c.replace(blstm_mode=mode), 0)
        shapes.append(model.encoder(ids, seg).shape)
    assert shapes[0] == shapes[1] == (3, 9, 16)


def test_mode_swap_changes_count_by_ffn_total():
    c = preset("toy")
    tb1 = count_params_model(build_model(c.replace(blstm_mode="replace_ffn"), 0))
    tb2 = count_params_model(build_model(c.replace(blstm_mode="parallel_sum"), 0))
    ffn = 16 * 64 + 64 + 64 * 16 + 16
    assert tb2 - tb1 == c.num_layers * ffn


def test_eval_mode_is_deterministic():
    model = build_model(preset("toy", dropout=0.3), 0)
    set_dropout_rng(model, np.random.default_rng(0))
    model.eval()
    ids = np.arange(10) + 5
    a = model.encoder(ids, np.zeros(10, dtype=int)).data
    b = model.encoder(ids, np.zeros(10, dtype=int)).data
    assert np.array_equal(a, b)


def test_base_config_output_shape_full_scale():
    with precision("float32"):
        enc = Encoder(preset("base", num_layers=1))
        out = enc(np.zeros(256, dtype=int), np.zeros(256, dtype=int))
    assert out.shape == (256, 768)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(blstm_mode="sideways")
    with pytest.raises(ConfigError):
        ModelConfig(hidden=10, num_heads=3)
    with pytest.raises(ConfigError):
        preset("huge")
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"hidden": 8, "colour": "red"})
    assert ModelConfig.from_dict(preset("small").to_dict()) == preset("small")


def test_encoder_end_to_end_gradcheck():
    c = cfg(blstm_mode="parallel_sum", num_layers=2)
    with precision("float64"):
        enc = Encoder(c)
        perturb_parameters(enc, np.random.default_rng(8))
        ids = np.array([[2, 7, 9, 3, 11, 3], [2, 8, 3, 12, 3, 0]])
        seg = np.array([[0, 0, 0, 0, 1, 1], [0, 0, 0, 1, 1, 1]])
        pad = ids != 0
        w = np.random.default_rng(9).normal(size=(2, 6, 8))
        res = gradcheck(lambda: ops.sum(enc(ids, seg, pad) * w), dict(enc.named_parameters()),
                        max_coords=16)
    assert res.max_error < 1e-4
