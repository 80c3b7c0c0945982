import numpy as np
import pytest

from transblstm.autodiff import Tape, Tensor, backward, gradcheck, ops
from transblstm.checks import perturb_parameters
from transblstm.errors import ConfigError, VocabError
from transblstm.nn import (
    BLSTM,
    Embeddings,
    FeedForward,
    LayerNorm,
    LstmDirection,
    MultiHeadAttention,
    blstm_forward,
    initialize,
    lstm_cell_step,
)

from .oracles import attention_dense, blstm_scalar, lstm_step_scalar


def randomize(module, seed=0):
    perturb_parameters(module, np.random.default_rng(seed))
    return module


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def check_module(module, x, extra=(), tol=1e-4, seed=0):
    rng = np.random.default_rng(seed)
    out_shape = module(x, *extra).shape
    w = rng.normal(size=out_shape)
    params = {"input": x, **dict(module.named_parameters())}
    return gradcheck(lambda: ops.sum(module(x, *extra) * w), params).max_error


# -- embeddings --------------------------------------------------------------------

def test_embeddings_zero_tables_give_zeros(f64):
    emb = Embeddings(10, 12, 16, dropout=0.0)
    out = emb(np.arange(9) % 10, np.zeros(9, dtype=int))
    assert out.shape == (9, 16)
    assert np.array_equal(out.data, np.zeros((9, 16)))


def test_embeddings_gradient_only_at_used_rows(f64):
    emb = Embeddings(10, 12, 8, dropout=0.0)
    initialize(emb, 0)
    ids = np.array([3, 5, 3])
    w = np.random.default_rng(0).normal(size=(3, 8))
    with Tape() as tape:
        loss = ops.sum(emb(ids, np.array([0, 0, 1])) * w)
    backward(loss, tape)
    norms = np.abs(emb.token.grad).sum(axis=1)
    assert norms[3] > 0 and norms[5] > 0
    assert np.all(norms[[0, 1, 2, 4, 6, 7, 8, 9]] == 0)


def test_embeddings_out_of_range_id():
    emb = Embeddings(10, 12, 8)
    with pytest.raises(VocabError, match="10"):
        emb(np.array([1, 10]), np.array([0, 0]))


def test_embeddings_gradcheck(f64):
    emb = randomize(Embeddings(7, 6, 4, dropout=0.0))
    w = np.random.default_rng(1).normal(size=(5, 4))
    ids, seg = np.array([1, 2, 6, 1, 0]), np.array([0, 0, 1, 1, 1])
    res = gradcheck(lambda: ops.sum(emb(ids, seg) * w), dict(emb.named_parameters()))
    assert res.max_error < 1e-5


# -- attention ---------------------------------------------------------------------

def _attn_params(m):
    return [m.query.weight.data, m.query.bias.data, m.key.weight.data, m.key.bias.data,
            m.value.weight.data, m.value.bias.data, m.output.weight.data, m.output.bias.data]


def test_attention_single_token(f64):
    m = randomize(MultiHeadAttention(4, 2, dropout=0.0))
    x = np.random.default_rng(2).normal(size=(1, 4))
    out = m(Tensor(x)).data
    expect = (x @ m.value.weight.data + m.value.bias.data) @ m.output.weight.data + m.output.bias.data
    np.testing.assert_allclose(out, expect, atol=1e-14)


def test_attention_zero_input_zero_bias(f64):
    m = MultiHeadAttention(8, 2, dropout=0.0)
    initialize(m, 3)
    assert np.array_equal(m(Tensor(np.zeros((3, 8)))).data, np.zeros((3, 8)))


@pytest.mark.parametrize("heads", [1, 2])
def test_attention_matches_dense_oracle(f64, heads):
    m = randomize(MultiHeadAttention(4, heads, dropout=0.0), seed=heads)
    x = np.random.default_rng(4).normal(size=(2, 4))
    np.testing.assert_allclose(m(Tensor(x)).data, attention_dense(x, *_attn_params(m), heads),
                               atol=1e-10)


def test_attention_padding_oracle_and_zero_weight(f64):
    m = randomize(MultiHeadAttention(6, 3, dropout=0.0))
    x = np.random.default_rng(5).normal(size=(4, 6))
    keep = np.array([True, True, False, True])
    out = m(Tensor(x), keep).data
    np.testing.assert_allclose(out, attention_dense(x, *_attn_params(m), 3, keep), atol=1e-10)
    probs, _ = m.weights(Tensor(x[None]), keep[None])
    assert np.all(probs.data[..., 2] == 0.0)
    np.testing.assert_allclose(probs.data.sum(-1), 1.0, atol=1e-12)


def test_attention_heads_must_divide():
    with pytest.raises(ConfigError):
        MultiHeadAttention(10, 3)


def test_attention_is_not_position_wise(f64):
    m = randomize(MultiHeadAttention(4, 1, dropout=0.0))
    x = np.random.default_rng(6).normal(size=(3, 4))
    perm = np.array([2, 0, 1])
    # with learned position embeddings absent, attention is permutation
    # equivariant; position-wise maps are too, but mixing shows up when one
    # row changes: every output row moves, not only the changed one
    base = m(Tensor(x)).data
    x2 = x.copy()
    x2[0] += 1.0
    moved = np.abs(m(Tensor(x2)).data - base).sum(axis=1)
    assert np.all(moved > 1e-6)
    np.testing.assert_allclose(m(Tensor(x[perm])).data, base[perm], atol=1e-12)


def test_attention_gradcheck(f64):
    m = randomize(MultiHeadAttention(8, 2, dropout=0.0))
    x = leaf(np.random.default_rng(7).normal(size=(2, 4, 8)))
    pad = np.array([[True] * 4, [True, True, True, False]])
    assert check_module(m, x, (pad,)) < 1e-4


# -- feed-forward ------------------------------------------------------------------

def test_ffn_zero_params(f64):
    m = FeedForward(4, 8)
    assert np.array_equal(m(Tensor(np.ones((3, 4)))).data, np.zeros((3, 4)))


def test_ffn_and_layer_norm_commute_with_permutation(f64):
    ffn, ln = randomize(FeedForward(4, 16)), randomize(LayerNorm(4))
    x = np.random.default_rng(8).normal(size=(5, 4))
    perm = np.random.default_rng(9).permutation(5)
    for m in (ffn, ln):
        np.testing.assert_allclose(m(Tensor(x[perm])).data, m(Tensor(x)).data[perm], atol=1e-14)
    x2 = x.copy()
    x2[0] += 1.0
    moved = np.abs(ffn(Tensor(x2)).data - ffn(Tensor(x)).data).sum(axis=1)
    assert moved[0] > 0 and np.all(moved[1:] == 0)


def test_ffn_gradcheck(f64):
    m = randomize(FeedForward(4, 8))
    x = leaf(np.random.default_rng(10).normal(size=(2, 4)))
    assert check_module(m, x) < 1e-5


# -- LSTM cell ---------------------------------------------------------------------

def test_lstm_cell_all_zero(f64):
    d = LstmDirection(3, 2)
    h, c = lstm_cell_step(Tensor(np.ones(3)), Tensor(np.zeros(2)), Tensor(np.zeros(2)), d)
    assert np.array_equal(h.data, np.zeros(2)) and np.array_equal(c.data, np.zeros(2))


def test_lstm_cell_zero_weights_analytic(f64):
    d = LstmDirection(3, 2)
    c0 = np.array([0.7, -2.0])
    h, c = lstm_cell_step(Tensor(np.ones(3)), Tensor(np.zeros(2)), Tensor(c0), d)
    np.testing.assert_allclose(c.data, 0.5 * c0, atol=1e-15)
    np.testing.assert_allclose(h.data, 0.5 * np.tanh(0.5 * c0), atol=1e-15)


def test_lstm_cell_scalar_oracle(f64):
    d = randomize(LstmDirection(3, 2), seed=11)
    r = np.random.default_rng(12)
    x, h0, c0 = r.normal(size=3), r.normal(size=2), r.normal(size=2)
    h, c = lstm_cell_step(Tensor(x), Tensor(h0), Tensor(c0), d)
    eh, ec = lstm_step_scalar(list(x), list(h0), list(c0), d.w_ih.data.tolist(),
                              d.w_hh.data.tolist(), d.bias.data.tolist())
    np.testing.assert_allclose(h.data, eh, atol=1e-12)
    np.testing.assert_allclose(c.data, ec, atol=1e-12)


# -- BLSTM -------------------------------------------------------------------------

def _dir_lists(d):
    return d.w_ih.data.tolist(), d.w_hh.data.tolist(), d.bias.data.tolist()


def test_blstm_raw_width_is_two_h():
    m = BLSTM(4, 4, projection=False, allow_raw=True)
    assert m.scan(Tensor(np.zeros((3, 4)))).shape == (3, 8)
    assert BLSTM(4, 4).forward(Tensor(np.zeros((3, 4)))).shape == (3, 4)


def test_blstm_half_width_has_no_projection():
    assert BLSTM(8, 4).proj is None
    assert BLSTM(8, 8).proj is not None


def test_blstm_missing_projection_is_config_error():
    with pytest.raises(ConfigError):
        BLSTM(8, 8, projection=False)


def test_blstm_scalar_oracle(f64):
    m = BLSTM(4, 2, projection=False, allow_raw=True)
    randomize(m, seed=13)
    x = np.random.default_rng(14).normal(size=(3, 4))
    expect = blstm_scalar(x.tolist(), _dir_lists(m.forward_dir), _dir_lists(m.backward_dir))
    np.testing.assert_allclose(m.scan(Tensor(x)).data, expect, atol=1e-12)


def test_blstm_direction_symmetry(f64):
    m = BLSTM(3, 2, projection=False, allow_raw=True)
    randomize(m, seed=15)
    for name in ("w_ih", "w_hh", "bias"):
        getattr(m.backward_dir, name).data[...] = getattr(m.forward_dir, name).data
    x = np.random.default_rng(16).normal(size=(5, 3))
    out = m.scan(Tensor(x)).data
    rev = m.scan(Tensor(x[::-1].copy())).data
    swapped = np.concatenate([out[:, 2:], out[:, :2]], axis=1)
    np.testing.assert_allclose(rev, swapped[::-1], atol=1e-14)


def test_blstm_causality_per_direction(f64):
    m = randomize(BLSTM(3, 2, projection=False, allow_raw=True), seed=17)
    x = np.random.default_rng(18).normal(size=(6, 3))
    base = m.scan(Tensor(x)).data
    t = 2
    later = x.copy()
    later[t + 1:] += 1.0
    earlier = x.copy()
    earlier[:t] += 1.0
    assert np.array_equal(m.scan(Tensor(later)).data[t, :2], base[t, :2])
    assert np.array_equal(m.scan(Tensor(earlier)).data[t, 2:], base[t, 2:])


def test_blstm_padding_matches_unpadded_prefix(f64):
    m = randomize(BLSTM(4, 2), seed=19)
    x = np.random.default_rng(20).normal(size=(1, 5, 4))
    short = m(Tensor(x[:, :3])).data
    pad = np.array([[True, True, True, False, False]])
    noisy = x.copy()
    noisy[:, 3:] = 50.0
    padded = m.scan(Tensor(noisy), pad).data
    np.testing.assert_allclose(padded[:, :3], m.scan(Tensor(x[:, :3])).data, atol=1e-14)
    assert np.all(padded[:, 3:] == 0.0)
    assert short.shape == (1, 3, 4)


def test_blstm_forward_alias(f64):
    m = randomize(BLSTM(4, 4), seed=21)
    x = Tensor(np.random.default_rng(22).normal(size=(3, 4)))
    assert np.array_equal(blstm_forward(x, m).data, m(x).data)


@pytest.mark.parametrize("n_in,n_hidden", [(4, 2), (4, 4), (3, 5)])
def test_blstm_gradcheck(f64, n_in, n_hidden):
    m = randomize(BLSTM(n_in, n_hidden, projection=True), seed=n_hidden)
    x = leaf(np.random.default_rng(23).normal(size=(2, 4, n_in)))
    pad = np.array([[True] * 4, [True, True, False, False]])
    assert check_module(m, x, (pad,)) < 1e-4


def test_layer_norm_module_gradcheck(f64):
    m = randomize(LayerNorm(6))
    x = leaf(np.random.default_rng(24).normal(size=(3, 6)))
    assert check_module(m, x) < 1e-5
