import math

import numpy as np
import pytest

from conftest import grads_match, sample_coords, tiny_config
from qrewrite.data import pad_batch
from qrewrite.model import (
    ModelConfig,
    attention_maps,
    decoder_step,
    encode_source,
    init_params,
    load_checkpoint,
    loss_and_grads,
    read_attention_tsv,
    save_checkpoint,
    sequence_log_prob,
    weighted_logprob_grads,
    write_attention_tsv,
)
from qrewrite.textcore import BOS, EOS, PAD


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, d_model=10, num_heads=3)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, dropout=1.0)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=3)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, max_len=1)


def test_init_deterministic_and_layer_norm_ones():
    cfg = tiny_config()
    p1 = init_params(cfg, seed=4)
    p2 = init_params(cfg, seed=4)
    for name in p1.tensors:
        assert np.array_equal(p1.tensors[name], p2.tensors[name])
    assert np.all(p1.tensors["enc0.ln1.g"] == 1.0)
    assert np.all(p1.tensors["dec0.ln3.b"] == 0.0)
    p3 = init_params(cfg, seed=5)
    assert any(not np.array_equal(p1.tensors[n], p3.tensors[n]) for n in p1.tensors)


def test_encoder_shape_and_determinism(tiny_params):
    state = encode_source((4, 5, 6), tiny_params)
    assert state.context.shape == (3, tiny_params.config.d_model)
    again = encode_source((4, 5, 6), tiny_params)
    assert np.array_equal(state.context, again.context)


def test_encoder_padding_invariance(tiny_params):
    plain = encode_source((4, 5, 6), tiny_params)
    padded = encode_source((4, 5, 6, PAD, PAD), tiny_params)
    assert np.max(np.abs(padded.context[:3] - plain.context)) < 1e-6


def test_encoder_rejects_overlength_and_empty(tiny_params):
    with pytest.raises(ValueError):
        encode_source(tuple(range(4, 4 + tiny_params.config.max_len + 1)), tiny_params)
    with pytest.raises(ValueError):
        encode_source((), tiny_params)


def test_decoder_step_is_normalized_log_distribution(tiny_params):
    state = encode_source((4, 5), tiny_params)
    lp = decoder_step(state, [BOS, 7], tiny_params)
    assert lp.shape == (tiny_params.config.vocab_size,)
    assert abs(np.exp(lp).sum() - 1.0) < 1e-6
    assert np.all(lp <= 0.0)
    with pytest.raises(ValueError):
        decoder_step(state, [7], tiny_params)


def test_decoder_causality(tiny_params):
    # The distribution after a given prefix must not move when the prefix is
    # extended; recompute each step from scratch and compare.
    state = encode_source((4, 5, 6), tiny_params)
    y = (7, 8, 9)
    for t in range(len(y)):
        short = decoder_step(state, [BOS, *y[:t]], tiny_params)
        # same step recomputed while the model also sees later tokens
        longer_prefix = [BOS, *y]
        full = decoder_step(state, longer_prefix[: t + 1], tiny_params)
        assert np.max(np.abs(short - full)) == 0.0


def test_sequence_log_prob_matches_stepwise_sum(tiny_params):
    x, y = (4, 5, 6), (7, 8)
    state = encode_source(x, tiny_params)
    gold = list(y) + [EOS]
    total = 0.0
    for t, tok in enumerate(gold):
        lp = decoder_step(state, [BOS, *y[:t]], tiny_params)
        total += lp[tok]
    assert sequence_log_prob(x, y, tiny_params) == pytest.approx(total, abs=1e-9)
    assert total <= 0.0


def test_sequence_log_prob_empty_target(tiny_params):
    x = (4, 5)
    state = encode_source(x, tiny_params)
    expected = decoder_step(state, [BOS], tiny_params)[EOS]
    assert sequence_log_prob(x, (), tiny_params) == pytest.approx(float(expected), abs=1e-9)


# ---------------------------------------------------------------------------
# Straight-line reimplementation oracle for the full forward pass.
# ---------------------------------------------------------------------------


def _oracle_pe(pos, d):
    vec = np.zeros(d)
    for i in range(0, d, 2):
        angle = pos / (10000.0 ** (i / d))
        vec[i] = math.sin(angle)
        if i + 1 < d:
            vec[i + 1] = math.cos(angle)
    return vec


def _oracle_ln(v, g, b, eps=1e-5):
    mu = v.mean()
    var = ((v - mu) ** 2).mean()
    return g * (v - mu) / math.sqrt(var + eps) + b


def _oracle_softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def _oracle_mha(q_in, kv_in, t, prefix, allowed, heads):
    d = q_in.shape[1]
    dh = d // heads
    q = q_in @ t[f"{prefix}.wq"] + t[f"{prefix}.bq"]
    k = kv_in @ t[f"{prefix}.wk"] + t[f"{prefix}.bk"]
    v = kv_in @ t[f"{prefix}.wv"] + t[f"{prefix}.bv"]
    ctx = np.zeros_like(q_in)
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        for i in range(q_in.shape[0]):
            scores = np.full(kv_in.shape[0], -np.inf)
            for j in range(kv_in.shape[0]):
                if allowed(i, j):
                    scores[j] = float(q[i, cols] @ k[j, cols]) / math.sqrt(dh)
            weights = _oracle_softmax(scores)
            acc = np.zeros(dh)
            for j in range(kv_in.shape[0]):
                if weights[j] > 0:
                    acc += weights[j] * v[j, cols]
            ctx[i, cols] = acc
    return ctx @ t[f"{prefix}.wo"] + t[f"{prefix}.bo"]


def _oracle_sequence_log_prob(x, y, params):
    cfg = params.config
    t = params.tensors
    scale = math.sqrt(cfg.d_model)

    h = np.stack([t["src_embed"][tok] * scale + _oracle_pe(p, cfg.d_model) for p, tok in enumerate(x)])
    for i in range(cfg.num_layers):
        a = _oracle_mha(h, h, t, f"enc{i}.attn", lambda qi, kj: True, cfg.num_heads)
        h = np.stack([_oracle_ln(h[r] + a[r], t[f"enc{i}.ln1.g"], t[f"enc{i}.ln1.b"]) for r in range(len(x))])
        f = np.maximum(0.0, h @ t[f"enc{i}.ff.w1"] + t[f"enc{i}.ff.b1"]) @ t[f"enc{i}.ff.w2"] + t[f"enc{i}.ff.b2"]
        h = np.stack([_oracle_ln(h[r] + f[r], t[f"enc{i}.ln2.g"], t[f"enc{i}.ln2.b"]) for r in range(len(x))])
    enc = h

    tgt_in = [BOS, *y]
    d = np.stack([t["tgt_embed"][tok] * scale + _oracle_pe(p, cfg.d_model) for p, tok in enumerate(tgt_in)])
    for i in range(cfg.num_layers):
        a = _oracle_mha(d, d, t, f"dec{i}.self", lambda qi, kj: kj <= qi, cfg.num_heads)
        d = np.stack([_oracle_ln(d[r] + a[r], t[f"dec{i}.ln1.g"], t[f"dec{i}.ln1.b"]) for r in range(len(tgt_in))])
        c = _oracle_mha(d, enc, t, f"dec{i}.cross", lambda qi, kj: True, cfg.num_heads)
        d = np.stack([_oracle_ln(d[r] + c[r], t[f"dec{i}.ln2.g"], t[f"dec{i}.ln2.b"]) for r in range(len(tgt_in))])
        f = np.maximum(0.0, d @ t[f"dec{i}.ff.w1"] + t[f"dec{i}.ff.b1"]) @ t[f"dec{i}.ff.w2"] + t[f"dec{i}.ff.b2"]
        d = np.stack([_oracle_ln(d[r] + f[r], t[f"dec{i}.ln3.g"], t[f"dec{i}.ln3.b"]) for r in range(len(tgt_in))])

    gold = list(y) + [EOS]
    total = 0.0
    for pos, tok in enumerate(gold):
        logits = d[pos] @ t["out.w"] + t["out.b"]
        logp = logits - logits.max()
        logp = logp - math.log(np.exp(logp).sum())
        total += logp[tok]
    return total


def test_forward_pass_matches_hand_rolled_oracle():
    params = init_params(tiny_config(d_model=8, d_ff=12, num_heads=2, vocab_size=9), seed=11)
    x, y = (4, 6, 5), (7, 8)
    expected = _oracle_sequence_log_prob(x, y, params)
    assert sequence_log_prob(x, y, params) == pytest.approx(expected, abs=1e-6)


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


def test_loss_mean_invariant_under_duplication(tiny_params):
    pairs = [((4, 5), (6, 7)), ((5, 6), (8,))]
    loss1, _ = loss_and_grads(pad_batch(pairs), tiny_params)
    loss2, _ = loss_and_grads(pad_batch(pairs + pairs), tiny_params)
    assert loss1 == pytest.approx(loss2, abs=1e-9)


def test_per_example_loss_same_alone_or_batched(tiny_params):
    pairs = [((4, 5, 6), (7,)), ((5,), (8, 9, 10))]
    batched, _ = weighted_logprob_grads(pad_batch(pairs), tiny_params, None)
    for i, pair in enumerate(pairs):
        alone, _ = weighted_logprob_grads(pad_batch([pair]), tiny_params, None)
        assert batched[i] == pytest.approx(alone[0], abs=1e-9)


def test_unused_embedding_rows_have_zero_grad(tiny_params):
    pairs = [((4, 5), (6,))]
    _, grads = loss_and_grads(pad_batch(pairs), tiny_params)
    assert np.all(grads["src_embed"][7] == 0.0)
    assert np.all(grads["tgt_embed"][9] == 0.0)
    assert np.any(grads["src_embed"][4] != 0.0)


def test_gradients_match_finite_differences_small():
    params = init_params(tiny_config(), seed=2)
    batch = pad_batch([((4, 5, 6), (7, 8)), ((5, 9), (10, 4, 6)), ((6,), (11,))])
    _, grads = loss_and_grads(batch, params)
    rng = np.random.default_rng(3)
    for name, arr in params.tensors.items():
        for idx in sample_coords(arr.shape, 4, rng):
            h = 1e-6 * max(1.0, abs(arr[idx]))
            orig = arr[idx]
            arr[idx] = orig + h
            up = -weighted_logprob_grads(batch, params, None)[0].mean()
            arr[idx] = orig - h
            dn = -weighted_logprob_grads(batch, params, None)[0].mean()
            arr[idx] = orig
            fd = (up - dn) / (2 * h)
            assert grads_match(fd, grads[name][idx], rel_tol=1e-5, abs_tol=1e-7), name


def test_nan_gradient_reports_tensor():
    params = init_params(tiny_config(), seed=2)
    params.tensors["out.w"][0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        loss_and_grads(pad_batch([((4, 5), (6,))]), params)


def test_empty_batch_rejected(tiny_params):
    with pytest.raises(ValueError):
        pad_batch([])


# ---------------------------------------------------------------------------
# Attention maps and checkpoints
# ---------------------------------------------------------------------------


def test_attention_rows_stochastic(tiny_params):
    maps = attention_maps((4, 5, 6), (7, 8), tiny_params)
    assert set(maps) == {"encoder_self", "decoder_self", "decoder_cross"}
    for weights in maps.values():
        assert np.max(np.abs(weights.sum(axis=-1) - 1.0)) < 1e-6
    # decoder self-attention is causal
    dec = maps["decoder_self"]
    assert np.all(np.triu(dec[0, 0], k=1) == 0.0)


def test_attention_pad_columns_masked(tiny_params):
    state = encode_source((4, 5, PAD, 6), tiny_params, collect_attention=True)
    assert state.attention is not None
    assert np.all(state.attention[:, :, :, 2] == 0.0)
    sums = state.attention.sum(axis=-1)
    assert np.max(np.abs(sums - 1.0)) < 1e-6


def test_attention_tsv_roundtrip(tiny_params, tmp_path):
    maps = attention_maps((4, 5), (7, 8, 9), tiny_params)
    path = str(tmp_path / "attn.tsv")
    write_attention_tsv(maps, path)
    loaded = read_attention_tsv(path)
    assert set(loaded) == set(maps)
    for section in maps:
        assert loaded[section].shape == maps[section].shape
        assert np.array_equal(loaded[section], np.round(maps[section], 6))


def test_checkpoint_roundtrip_and_byte_stability(tmp_path):
    params = init_params(tiny_config(dtype="float32"), seed=6, role="backward")
    params.step = 17
    p1 = str(tmp_path / "model.qrw")
    p2 = str(tmp_path / "model2.qrw")
    save_checkpoint(params, p1, vocab_hash="abc123")
    loaded, vocab_hash = load_checkpoint(p1)
    assert vocab_hash == "abc123"
    assert loaded.role == "backward"
    assert loaded.step == 17
    assert loaded.config == params.config
    for name in params.tensors:
        assert np.array_equal(loaded.tensors[name], params.tensors[name])
    save_checkpoint(loaded, p2, vocab_hash="abc123")
    assert (tmp_path / "model.qrw").read_bytes() == (tmp_path / "model2.qrw").read_bytes()


def test_checkpoint_magic_enforced(tmp_path):
    bad = tmp_path / "bad.qrw"
    bad.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(str(bad))


def test_checkpoint_preserves_float64_exactly(tmp_path):
    params = init_params(tiny_config(dtype="float64"), seed=6)
    path = str(tmp_path / "m.qrw")
    save_checkpoint(params, path)
    loaded, _ = load_checkpoint(path)
    for name in params.tensors:
        assert loaded.tensors[name].dtype == np.float64
        assert np.array_equal(loaded.tensors[name], params.tensors[name])
