import math

import numpy as np
import pytest

from oracles import direct_decay_sum, numeric_grad, rel_error
from tabsae.models import MambaAttentionClassifier, MambaConfig
from tabsae.models.base import load_checkpoint, save_checkpoint
from tabsae.models.mamba import MambaBlock, kernel_eval
from tabsae.tensor import NumericError, Tensor, cross_entropy, exp_decay_scan, no_grad, softmax


def mini(seed=0, **kw):
    cfg = dict(vocab_sizes=[3, 4], n_num=2, d_model=8, token_dim=4, heads=2, dropout=0.0, depth=2,
               zero_head=False)
    cfg.update(kw)
    return MambaAttentionClassifier(MambaConfig(**cfg), seed=seed)


def batch(rng, n=5, vocab=(3, 4), n_num=2):
    cat = np.stack([rng.integers(0, v, size=n) for v in vocab], axis=1)
    return cat, rng.normal(size=(n, n_num)), rng.integers(0, 3, size=n)


# --------------------------------------------------------------------- kernel
def test_kernel_examples():
    assert kernel_eval(1.0, 1e-12, 7) == pytest.approx(1.0, abs=1e-10)
    assert kernel_eval(1.0, math.log(2), 1) == pytest.approx(0.5, abs=1e-15)
    assert kernel_eval(2.0, 1.0, 3) == pytest.approx(0.09957413673572789, abs=1e-15)
    with pytest.raises(ValueError):
        kernel_eval(1.0, 1.0, -1)


def test_kernel_strictly_decreasing_for_positive_decay():
    rng = np.random.default_rng(0)
    A, B = rng.uniform(0.1, 3, 16), rng.uniform(1e-3, 3, 16)
    vals = np.stack([kernel_eval(A, B, t) for t in range(40)])
    assert np.all(np.diff(vals, axis=0) < 0)


@pytest.mark.parametrize("T", [1, 4, 17, 64])
def test_recurrence_matches_direct_sum(T):
    rng = np.random.default_rng(T)
    k = rng.normal(size=(3, T, 5))
    A, B = rng.normal(size=5), rng.uniform(0.01, 2, 5)
    fast = exp_decay_scan(Tensor(k), Tensor(A), Tensor(B)).data
    slow = direct_decay_sum(k, A, B)
    assert np.max(np.abs(fast - slow)) <= 1e-12 * max(1.0, np.max(np.abs(slow)))
    if T == 1:
        assert np.array_equal(fast[:, 0], A * k[:, 0])


# ---------------------------------------------------------------------- block
def test_zero_amplitude_is_exact_residual():
    rng = np.random.default_rng(1)
    block = MambaBlock(4, 8, rng, 0.0)
    block.A.data[:] = 0.0
    x = rng.normal(size=(2, 6, 4))
    assert np.array_equal(block(Tensor(x)).data, x)


def test_block_context_matches_oracle():
    rng = np.random.default_rng(2)
    block = MambaBlock(4, 8, rng, 0.0)
    block.A.data[:] = rng.normal(size=8)
    x = Tensor(rng.normal(size=(1, 4, 4)))
    _, kt, _ = block.context(x)
    from tabsae.tensor import layer_norm, matmul
    k = matmul(layer_norm(x, block.norm.gain, block.norm.bias), block.W_k).data
    B = np.log1p(np.exp(block.B_raw.data))
    assert np.max(np.abs(kt.data - direct_decay_sum(k, block.A.data, B))) <= 1e-12


def test_causality_exact():
    rng = np.random.default_rng(3)
    model = mini(seed=3)
    for _ in range(20):
        x = rng.normal(size=(1, 6, 4))
        t_prime = int(rng.integers(1, 6))
        y0 = x
        y1 = x.copy()
        y1[0, t_prime] += rng.normal(size=4)
        a, b = Tensor(y0), Tensor(y1)
        for blk in model.blocks:
            a, b = blk(a), blk(b)
        assert np.array_equal(a.data[0, :t_prime], b.data[0, :t_prime])
        assert not np.array_equal(a.data[0, t_prime], b.data[0, t_prime])


def test_decay_positive_and_initialised():
    block = MambaBlock(4, 8, np.random.default_rng(0), 0.0, init_decay=0.5)
    assert np.allclose(block.decay().data, 0.5)
    block.B_raw.data[:] = -50.0
    assert np.all(block.decay().data > 0)


# ---------------------------------------------------------------- tokenizer
def test_tokenizer_shape_and_locality():
    rng = np.random.default_rng(4)
    model = mini()
    cat, num, _ = batch(rng, n=2)
    cat[1] = cat[0]
    num[1] = num[0]
    num[1, 1] += 1.0
    tok = model.tokenize(cat, num).data
    assert tok.shape == (2, 4, 4)
    diff = np.any(tok[0] != tok[1], axis=1)
    assert diff.tolist() == [False, False, False, True]


def test_zero_numeric_token_is_bias_plus_position():
    model = mini()
    tok = model.tokenize(np.zeros((1, 2), dtype=int), np.zeros((1, 2))).data
    assert np.array_equal(tok[0, 2], model.num_bias.data[0] + model.pos.data[2])


def test_tokenizer_rejects_out_of_vocab():
    with pytest.raises(ValueError):
        mini().tokenize(np.array([[3, 0]]), np.zeros((1, 2)))


# ------------------------------------------------------------------ classifier
def test_zero_head_gives_uniform_probabilities():
    model = MambaAttentionClassifier(MambaConfig(vocab_sizes=[3], n_num=1, d_model=8, token_dim=4, heads=2))
    p = model.predict_proba(np.array([[0], [2]]), np.array([[0.3], [-1.0]]))
    assert np.array_equal(p, np.full((2, 3), 1 / 3))


def test_batch_permutation_equivariance():
    rng = np.random.default_rng(5)
    model = mini()
    cat, num, _ = batch(rng, n=6)
    perm = rng.permutation(6)
    p = model.predict_proba(cat, num)
    assert np.allclose(model.predict_proba(cat[perm], num[perm]), p[perm], atol=1e-15)
    assert np.allclose(p.sum(axis=1), 1, atol=1e-12)


def test_defaults_follow_hyperparameter_table():
    cfg = MambaConfig(vocab_sizes=[2])
    assert (cfg.d_model, cfg.heads, cfg.dropout) == (256, 8, 0.3)
    with pytest.raises(ValueError):
        MambaConfig(vocab_sizes=[2], d_model=30, heads=8)


def test_nan_reports_layer_index():
    model = mini()
    model.blocks[1].W_0.data[:] = np.nan
    with pytest.raises(NumericError, match="layer 1"):
        model(np.zeros((1, 2), dtype=int), np.zeros((1, 2)))


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    model = mini(seed=9)
    save_checkpoint(model, tmp_path / "m.npz", {"note": "x"})
    back, extra = load_checkpoint(tmp_path / "m.npz")
    assert extra == {"note": "x"} and back.config == model.config
    for (n1, a), (n2, b) in zip(model.named_parameters(), back.named_parameters()):
        assert n1 == n2 and a.data.tobytes() == b.data.tobytes()


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("gate", [False, True])
def test_full_model_gradients(seed, gate):
    rng = np.random.default_rng(seed)
    model = mini(seed=seed, query_gate=gate)
    for blk in model.blocks:
        blk.A.data[:] = rng.normal(size=blk.A.shape)
    cat, num, y = batch(rng)

    def loss():
        with no_grad():
            return cross_entropy(model(cat, num), y).item()

    model.zero_grad()
    cross_entropy(model(cat, num), y).backward()
    for name, p in model.named_parameters():
        num_g = numeric_grad(loss, p.data)
        if p.grad is None:  # unused without the query gate
            assert not gate and name.endswith("W_q") and not num_g.any()
            continue
        assert rel_error(p.grad, num_g) <= 1e-3, name


def test_training_mode_dropout_changes_output():
    rng = np.random.default_rng(6)
    model = mini(dropout=0.5)
    model.train()
    from tabsae.nn import seed_dropout
    seed_dropout(model, np.random.default_rng(0))
    cat, num, _ = batch(rng)
    a = softmax(model(cat, num), axis=-1).data
    b = softmax(model(cat, num), axis=-1).data
    assert not np.array_equal(a, b)
    model.eval()
    assert np.array_equal(model.predict_proba(cat, num), model.predict_proba(cat, num))
