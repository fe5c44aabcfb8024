"""Transformer-lite encoder-decoder with hand-assembled gradients.

One instance scores next-token distributions and teacher-forced sequence
log-likelihoods for a single translation direction; the rewriting pipeline
holds two instances (roles "forward": query -> title, "backward": title ->
query). Default arithmetic is 32-bit; ``dtype="float64"`` switches a model
into the high-precision reference mode used by the gradient oracle tests.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .data import Batch, pad_batch
from .textcore import BOS, EOS, PAD, TokenSeq

# Additive attention-mask bias. exp(-1e9) underflows to exactly zero, so
# masked positions carry no weight and padding cannot perturb real positions.
MASK_BIAS = -1e9

CHECKPOINT_MAGIC = b"QRW1"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_layers: int = 1
    num_heads: int = 2
    d_model: int = 32
    d_ff: int = 64
    dropout: float = 0.1
    max_len: int = 24
    dtype: str = "float32"

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ValueError("vocab_size must cover the four special tokens")
        if self.d_model % self.num_heads != 0:
            raise ValueError("d_model must be divisible by num_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.max_len < 2:
            raise ValueError("max_len must be at least 2")
        if self.num_layers < 1 or self.d_ff < 1:
            raise ValueError("num_layers and d_ff must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)


@dataclass
class ModelParameters:
    config: ModelConfig
    role: str
    tensors: dict[str, np.ndarray]
    step: int = 0


@dataclass
class EncoderState:
    """Per-position context vectors for one source sequence."""

    context: np.ndarray  # (source_len, d_model)
    src_ids: np.ndarray  # (source_len,)
    src_mask: np.ndarray  # (source_len,) True at real tokens
    attention: np.ndarray | None = None  # (layers, heads, src, src)


def _tensor_specs(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Fixed (name, shape, init kind) listing; init draws follow this order."""
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    specs: list[tuple[str, tuple[int, ...], str]] = [
        ("src_embed", (v, d), "embedding"),
        ("tgt_embed", (v, d), "embedding"),
    ]
    for i in range(cfg.num_layers):
        for attn in (f"enc{i}.attn",):
            for w in ("wq", "wk", "wv", "wo"):
                specs.append((f"{attn}.{w}", (d, d), "matrix"))
            for b in ("bq", "bk", "bv", "bo"):
                specs.append((f"{attn}.{b}", (d,), "zeros"))
        specs += [
            (f"enc{i}.ln1.g", (d,), "ones"),
            (f"enc{i}.ln1.b", (d,), "zeros"),
            (f"enc{i}.ff.w1", (d, f), "matrix"),
            (f"enc{i}.ff.b1", (f,), "zeros"),
            (f"enc{i}.ff.w2", (f, d), "matrix"),
            (f"enc{i}.ff.b2", (d,), "zeros"),
            (f"enc{i}.ln2.g", (d,), "ones"),
            (f"enc{i}.ln2.b", (d,), "zeros"),
        ]
    for i in range(cfg.num_layers):
        for attn in (f"dec{i}.self", f"dec{i}.cross"):
            for w in ("wq", "wk", "wv", "wo"):
                specs.append((f"{attn}.{w}", (d, d), "matrix"))
            for b in ("bq", "bk", "bv", "bo"):
                specs.append((f"{attn}.{b}", (d,), "zeros"))
        specs += [
            (f"dec{i}.ln1.g", (d,), "ones"),
            (f"dec{i}.ln1.b", (d,), "zeros"),
            (f"dec{i}.ln2.g", (d,), "ones"),
            (f"dec{i}.ln2.b", (d,), "zeros"),
            (f"dec{i}.ff.w1", (d, f), "matrix"),
            (f"dec{i}.ff.b1", (f,), "zeros"),
            (f"dec{i}.ff.w2", (f, d), "matrix"),
            (f"dec{i}.ff.b2", (d,), "zeros"),
            (f"dec{i}.ln3.g", (d,), "ones"),
            (f"dec{i}.ln3.b", (d,), "zeros"),
        ]
    specs += [
        ("out.w", (d, v), "matrix"),
        ("out.b", (v,), "zeros"),
    ]
    return specs


def init_params(cfg: ModelConfig, seed: int, role: str = "forward") -> ModelParameters:
    """Scaled-uniform weight init; layer-norm scales one, every bias zero."""
    rng = np.random.default_rng(seed)
    dt = cfg.np_dtype
    tensors: dict[str, np.ndarray] = {}
    for name, shape, kind in _tensor_specs(cfg):
        if kind == "matrix":
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-limit, limit, shape).astype(dt)
        elif kind == "embedding":
            limit = np.sqrt(3.0 / cfg.d_model)
            tensors[name] = rng.uniform(-limit, limit, shape).astype(dt)
        elif kind == "ones":
            tensors[name] = np.ones(shape, dtype=dt)
        else:
            tensors[name] = np.zeros(shape, dtype=dt)
    return ModelParameters(cfg, role, tensors)


@lru_cache(maxsize=None)
def _positional_encoding(max_len: int, d_model: int, dtype: str) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    dim = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, dim / d_model)
    pe = np.zeros((max_len, d_model))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe.astype(dtype)


def _param_vars(params: ModelParameters) -> dict[str, Var]:
    return {name: Var(arr) for name, arr in params.tensors.items()}


def _project(pv: dict[str, Var], prefix: str, which: str, x: Var) -> Var:
    return ad.add(ad.matmul(x, pv[f"{prefix}.w{which}"]), pv[f"{prefix}.b{which}"])


def _split_heads(x: Var, num_heads: int) -> Var:
    b, length, d = x.shape
    x = ad.reshape(x, (b, length, num_heads, d // num_heads))
    return ad.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: Var) -> Var:
    b, h, length, dh = x.shape
    x = ad.transpose(x, (0, 2, 1, 3))
    return ad.reshape(x, (b, length, h * dh))


def _attention(
    pv: dict[str, Var],
    prefix: str,
    cfg: ModelConfig,
    q_in: Var,
    kv_in: Var,
    mask_bias: np.ndarray | None,
    rng: np.random.Generator | None,
    collect: list | None,
) -> Var:
    q = _split_heads(_project(pv, prefix, "q", q_in), cfg.num_heads)
    k = _split_heads(_project(pv, prefix, "k", kv_in), cfg.num_heads)
    v = _split_heads(_project(pv, prefix, "v", kv_in), cfg.num_heads)
    scores = ad.mul_const(
        ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))),
        float((cfg.d_model // cfg.num_heads) ** -0.5),
    )
    probs = ad.softmax_masked(scores, mask_bias)
    if collect is not None:
        collect.append(probs.value.copy())
    probs = ad.dropout(probs, cfg.dropout, rng)
    ctx = _merge_heads(ad.matmul(probs, v))
    return ad.add(ad.matmul(ctx, pv[f"{prefix}.wo"]), pv[f"{prefix}.bo"])


def _feed_forward(pv: dict[str, Var], prefix: str, x: Var) -> Var:
    h = ad.relu(ad.add(ad.matmul(x, pv[f"{prefix}.w1"]), pv[f"{prefix}.b1"]))
    return ad.add(ad.matmul(h, pv[f"{prefix}.w2"]), pv[f"{prefix}.b2"])


def _sublayer(pv, name: str, x: Var, delta: Var, cfg, rng) -> Var:
    """Residual add around a dropped-out sublayer output, then layer norm."""
    summed = ad.add(x, ad.dropout(delta, cfg.dropout, rng))
    return ad.layer_norm(summed, pv[f"{name}.g"], pv[f"{name}.b"])


def _embed(pv, table: str, ids: np.ndarray, cfg, rng) -> Var:
    x = ad.mul_const(ad.embedding(pv[table], ids), float(np.sqrt(cfg.d_model)))
    pe = _positional_encoding(cfg.max_len, cfg.d_model, cfg.dtype)[: ids.shape[1]]
    return ad.dropout(ad.add_const(x, pe), cfg.dropout, rng)


def _pad_bias(mask: np.ndarray, dtype: np.dtype) -> np.ndarray:
    """(B, L) boolean mask -> (B, 1, 1, L) additive bias blocking pad columns."""
    return np.where(mask, 0.0, MASK_BIAS).astype(dtype)[:, None, None, :]


def _causal_bias(length: int, dtype: np.dtype) -> np.ndarray:
    rows = np.arange(length)[:, None]
    cols = np.arange(length)[None, :]
    return np.where(cols <= rows, 0.0, MASK_BIAS).astype(dtype)[None, None, :, :]


def _encoder_forward(
    pv, cfg, src_ids, src_mask, rng=None, collect: list | None = None
) -> Var:
    if src_ids.shape[1] > cfg.max_len:
        raise ValueError(f"source length {src_ids.shape[1]} exceeds max_len {cfg.max_len}")
    h = _embed(pv, "src_embed", src_ids, cfg, rng)
    bias = _pad_bias(src_mask, cfg.np_dtype)
    for i in range(cfg.num_layers):
        a = _attention(pv, f"enc{i}.attn", cfg, h, h, bias, rng, collect)
        h = _sublayer(pv, f"enc{i}.ln1", h, a, cfg, rng)
        f = _feed_forward(pv, f"enc{i}.ff", h)
        h = _sublayer(pv, f"enc{i}.ln2", h, f, cfg, rng)
    return h


def _decoder_logits(
    pv,
    cfg,
    enc_out: Var,
    src_mask: np.ndarray,
    tgt_in: np.ndarray,
    tgt_in_mask: np.ndarray,
    rng=None,
    collect_self: list | None = None,
    collect_cross: list | None = None,
) -> Var:
    if tgt_in.shape[1] > cfg.max_len:
        raise ValueError(f"target length {tgt_in.shape[1]} exceeds max_len {cfg.max_len}")
    h = _embed(pv, "tgt_embed", tgt_in, cfg, rng)
    self_bias = _causal_bias(tgt_in.shape[1], cfg.np_dtype) + _pad_bias(tgt_in_mask, cfg.np_dtype)
    cross_bias = _pad_bias(src_mask, cfg.np_dtype)
    for i in range(cfg.num_layers):
        a = _attention(pv, f"dec{i}.self", cfg, h, h, self_bias, rng, collect_self)
        h = _sublayer(pv, f"dec{i}.ln1", h, a, cfg, rng)
        c = _attention(pv, f"dec{i}.cross", cfg, h, enc_out, cross_bias, rng, collect_cross)
        h = _sublayer(pv, f"dec{i}.ln2", h, c, cfg, rng)
        f = _feed_forward(pv, f"dec{i}.ff", h)
        h = _sublayer(pv, f"dec{i}.ln3", h, f, cfg, rng)
    return ad.add(ad.matmul(h, pv["out.w"]), pv["out.b"])


def _teacher_arrays(batch: Batch) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Shifted decoder inputs, gold targets (with EOS step), and the step mask."""
    b, lt = batch.tgt.shape
    lens = batch.tgt_mask.sum(axis=1)
    tgt_in = np.full((b, lt + 1), PAD, dtype=np.int64)
    tgt_in[:, 0] = BOS
    tgt_in[:, 1:] = np.where(batch.tgt_mask, batch.tgt, PAD)
    tgt_in_mask = np.zeros((b, lt + 1), dtype=bool)
    tgt_in_mask[:, 0] = True
    tgt_in_mask[:, 1:] = batch.tgt_mask
    gold = np.full((b, lt + 1), PAD, dtype=np.int64)
    gold[:, :lt] = np.where(batch.tgt_mask, batch.tgt, PAD)
    gold[np.arange(b), lens] = EOS
    step_mask = np.arange(lt + 1)[None, :] <= lens[:, None]
    return tgt_in, tgt_in_mask, gold, step_mask


def weighted_logprob_grads(
    batch: Batch,
    params: ModelParameters,
    row_weights: np.ndarray | None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict[str, np.ndarray] | None]:
    """Teacher-forced per-sequence log-probs, plus grads of sum(w_i * logprob_i).

    ``row_weights is None`` skips the backward pass (pure scoring).
    """
    cfg = params.config
    pv = _param_vars(params)
    enc = _encoder_forward(pv, cfg, batch.src, batch.src_mask, rng)
    tgt_in, tgt_in_mask, gold, step_mask = _teacher_arrays(batch)
    logits = _decoder_logits(pv, cfg, enc, batch.src_mask, tgt_in, tgt_in_mask, rng)
    logp = ad.log_softmax(logits)
    picked = ad.gather_last(logp, gold)
    seq_lp = ad.masked_row_sum(picked, step_mask)
    if row_weights is None:
        return seq_lp.value.copy(), None
    root = ad.weighted_sum(seq_lp, row_weights.astype(cfg.np_dtype))
    ad.backward(root)
    grads = {
        name: (pv[name].grad if pv[name].grad is not None else np.zeros_like(arr))
        for name, arr in params.tensors.items()
    }
    return seq_lp.value.copy(), grads


def loss_and_grads(
    batch: Batch,
    params: ModelParameters,
    which: str = "forward",
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean negative sequence log-likelihood and its gradients.

    ``which="forward"`` trains source -> target as batched; "backward" swaps
    the pair orientation. Losses average per sequence, then per batch.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    oriented = batch if which == "forward" else batch.swapped()
    weights = np.full(len(batch), -1.0 / len(batch))
    seq_lps, grads = weighted_logprob_grads(oriented, params, weights, rng)
    assert grads is not None
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in tensor {name!r}")
    loss = float(-seq_lps.mean())
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    return loss, grads


def sequence_scores(
    pairs: Sequence[tuple[TokenSeq, TokenSeq]], params: ModelParameters
) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode per-pair sequence log-probs and scored-token counts (EOS step included)."""
    batch = pad_batch(pairs)
    seq_lps, _ = weighted_logprob_grads(batch, params, None)
    counts = batch.tgt_mask.sum(axis=1) + 1
    return seq_lps, counts


def sequence_log_prob(
    x: TokenSeq,
    y: TokenSeq,
    params: ModelParameters,
    rng: np.random.Generator | None = None,
) -> float:
    """log P(y | x) under teacher forcing, including the EOS step.

    Passing a generator enables dropout (training-mode scoring); the default
    is deterministic eval mode.
    """
    batch = pad_batch([(x, y)])
    seq_lps, _ = weighted_logprob_grads(batch, params, None, rng)
    return float(seq_lps[0])


def encode_source(
    x: TokenSeq,
    params: ModelParameters,
    eval_mode: bool = True,
    rng: np.random.Generator | None = None,
    collect_attention: bool = False,
) -> EncoderState:
    """Run the encoder over one sequence; PAD ids inside ``x`` are masked out."""
    if len(x) == 0:
        raise ValueError("empty source sequence")
    ids = np.asarray([x], dtype=np.int64)
    mask = ids != PAD
    collect: list | None = [] if collect_attention else None
    pv = _param_vars(params)
    out = _encoder_forward(pv, params.config, ids, mask, None if eval_mode else rng, collect)
    attn = np.stack(collect)[:, 0] if collect else None
    return EncoderState(out.value[0].copy(), ids[0], mask[0], attn)


def encode_batch(
    srcs: Sequence[TokenSeq], params: ModelParameters
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eval-mode encoder over many sources; returns (context, ids, mask) arrays."""
    if any(len(s) == 0 for s in srcs):
        raise ValueError("empty source sequence")
    width = max(len(s) for s in srcs)
    ids = np.full((len(srcs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(srcs), width), dtype=bool)
    for i, s in enumerate(srcs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    pv = _param_vars(params)
    out = _encoder_forward(pv, params.config, ids, mask)
    return out.value, ids, mask


def next_token_log_probs(
    params: ModelParameters,
    enc_ctx: np.ndarray,
    src_mask: np.ndarray,
    prefixes: np.ndarray,
) -> np.ndarray:
    """Log-distributions over the next token for a batch of BOS-led prefixes."""
    if prefixes.shape[1] > params.config.max_len:
        raise ValueError(f"prefix length {prefixes.shape[1]} exceeds max_len {params.config.max_len}")
    pv = _param_vars(params)
    enc = Var(enc_ctx)
    mask = np.ones(prefixes.shape, dtype=bool)
    logits = _decoder_logits(pv, params.config, enc, src_mask, prefixes, mask)
    logp = ad.log_softmax(logits)
    return logp.value[:, -1, :].copy()


def decoder_step(
    enc: EncoderState,
    prefix: Sequence[int],
    params: ModelParameters,
    eval_mode: bool = True,
) -> np.ndarray:
    """Next-token log-probability vector given a BOS-led prefix."""
    if not prefix or prefix[0] != BOS:
        raise ValueError("prefix must start with BOS")
    del eval_mode  # single-step scoring is always deterministic
    return next_token_log_probs(
        params,
        enc.context[None, :, :],
        enc.src_mask[None, :],
        np.asarray([prefix], dtype=np.int64),
    )[0]


def attention_maps(
    x: TokenSeq, y: TokenSeq, params: ModelParameters
) -> dict[str, np.ndarray]:
    """Eval-mode attention weights, stacked (layer, head, query_pos, key_pos)."""
    batch = pad_batch([(x, y)])
    cfg = params.config
    pv = _param_vars(params)
    enc_collect: list = []
    self_collect: list = []
    cross_collect: list = []
    enc = _encoder_forward(pv, cfg, batch.src, batch.src_mask, None, enc_collect)
    tgt_in, tgt_in_mask, _, _ = _teacher_arrays(batch)
    _decoder_logits(
        pv, cfg, enc, batch.src_mask, tgt_in, tgt_in_mask, None, self_collect, cross_collect
    )
    return {
        "encoder_self": np.stack(enc_collect)[:, 0],
        "decoder_self": np.stack(self_collect)[:, 0],
        "decoder_cross": np.stack(cross_collect)[:, 0],
    }


def mean_pooled_embedding(x: TokenSeq, params: ModelParameters) -> np.ndarray:
    """Mean of encoder context vectors over non-pad positions."""
    state = encode_source(x, params)
    kept = state.context[state.src_mask]
    if kept.size == 0:
        raise ValueError("cannot pool an all-pad sequence")
    return kept.mean(axis=0)


def write_attention_tsv(maps: dict[str, np.ndarray], path: str) -> None:
    """`section<TAB>layer<TAB>head<TAB>row<TAB>col<TAB>weight` at 6 decimals."""
    with open(path, "w", encoding="utf-8") as fh:
        for section in sorted(maps):
            weights = maps[section]
            layers, heads, rows, cols = weights.shape
            for l in range(layers):
                for h in range(heads):
                    for r in range(rows):
                        for c in range(cols):
                            fh.write(f"{section}\t{l}\t{h}\t{r}\t{c}\t{weights[l, h, r, c]:.6f}\n")


def read_attention_tsv(path: str) -> dict[str, np.ndarray]:
    cells: dict[str, dict[tuple[int, int, int, int], float]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 tab-separated columns")
            section = cols[0]
            l, h, r, c = (int(v) for v in cols[1:5])
            cells.setdefault(section, {})[(l, h, r, c)] = float(cols[5])
    out: dict[str, np.ndarray] = {}
    for section, entries in cells.items():
        shape = tuple(max(k[i] for k in entries) + 1 for i in range(4))
        arr = np.zeros(shape)
        for (l, h, r, c), w in entries.items():
            arr[l, h, r, c] = w
        out[section] = arr
    return out


# ---------------------------------------------------------------------------
# Named-tensor container files ("QRW1"): also reused for optimizer state.
# ---------------------------------------------------------------------------


def write_named_tensors(path: str, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Magic, length-prefixed JSON metadata, then (name, shape, data) records.

    Tensors are written in sorted name order so that save -> load -> save is
    byte-identical.
    """
    meta_blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name])
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_named_tensors(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        dtype = np.dtype(meta.get("dtype", "float32")).newbyteorder("<")
        (count,) = struct.unpack("<I", fh.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(n * dtype.itemsize), dtype=dtype)
            tensors[name] = data.reshape(shape).astype(dtype.newbyteorder("="))
        return meta, tensors


def save_checkpoint(params: ModelParameters, path: str, vocab_hash: str = "") -> None:
    meta = {
        "kind": "model",
        "config": asdict(params.config),
        "dtype": params.config.dtype,
        "role": params.role,
        "step": params.step,
        "vocab_hash": vocab_hash,
    }
    write_named_tensors(path, meta, params.tensors)


def load_checkpoint(path: str) -> tuple[ModelParameters, str]:
    meta, tensors = read_named_tensors(path)
    if meta.get("kind") != "model":
        raise ValueError(f"{path}: not a model checkpoint")
    cfg = ModelConfig(**meta["config"])
    expected = {name for name, _, _ in _tensor_specs(cfg)}
    if set(tensors) != expected:
        raise ValueError(f"{path}: tensor names do not match the configuration")
    params = ModelParameters(cfg, meta["role"], tensors, step=int(meta["step"]))
    return params, meta.get("vocab_hash", "")
