"""Batch command-line entry points wiring the modules into pipelines.

Every subcommand is reproducible from (inputs, config, seed): re-running
writes byte-identical outputs. Terminal artifacts are staged and renamed into
place on success, so a failed run leaves no partial output files (training
checkpoints are exempt: they are complete snapshots kept for --resume).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import baseline as baseline_mod
from . import index as index_mod
from . import metrics as metrics_mod
from . import plots
from .data import (
    SynonymWorldSpec,
    extract_query_pairs,
    generate_synthetic,
    load_click_log,
    load_ground_truth,
    read_click_rows,
    write_click_log,
    write_ground_truth,
)
from .decode import DecodeConfig
from .model import (
    ModelConfig,
    attention_maps,
    init_params,
    load_checkpoint,
    write_attention_tsv,
)
from .rewrite import RewriteConfig, rewrite, sample_titles
from .textcore import build_vocab, decode_text, encode, load_vocab, save_vocab
from .train import (
    AdamConfig,
    TrainConfig,
    joint_train,
    load_train_state,
    train_single,
)
from .util import derive_seed

# Configuration document: one flat JSON object; these are the known keys with
# their defaults. Command-line flags override file values.
_FLOAT_KEYS = {"lambda", "lr_scale", "beta1", "beta2", "eps", "dropout"}
_STR_KEYS = {"dtype"}
CONFIG_DEFAULTS: dict = {
    "lambda": 0.1,
    "k": 3,
    "n": 40,
    "batch_size": 32,
    "max_steps": 400,
    "warmup_steps": 200,
    "noam_warmup": 200,
    "lr_scale": 1.0,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "seed": 0,
    "eval_every": 50,
    "max_title_len": 16,
    "max_query_len": 12,
    "top_out": 3,
    "min_shared_clicks": 4,
    "d_model": 32,
    "num_heads": 2,
    "d_ff": 64,
    "dropout": 0.1,
    "max_len": 24,
    "layers_forward": 2,
    "layers_backward": 1,
    "threads": 1,
    "dtype": "float32",
}


def load_config(path: str | None) -> dict:
    """Defaults overlaid with the JSON document at ``path`` (if given)."""
    config = dict(CONFIG_DEFAULTS)
    if path is None:
        return config
    with open(path, encoding="utf-8") as fh:
        loaded = json.load(fh)
    if not isinstance(loaded, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    for key, value in loaded.items():
        if key not in CONFIG_DEFAULTS:
            raise ValueError(f"{path}: unknown config key {key!r}")
        if key in _FLOAT_KEYS:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValueError(f"{path}: key {key!r} must be a number")
            config[key] = float(value)
        elif key in _STR_KEYS:
            if not isinstance(value, str):
                raise ValueError(f"{path}: key {key!r} must be a string")
            config[key] = value
        else:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValueError(f"{path}: key {key!r} must be an integer")
            config[key] = value
    return config


class _StagedOutputs:
    """Write to temp names, rename into place only when the command succeeds."""

    def __init__(self):
        self._staged: list[tuple[str, str]] = []

    def path(self, final: str) -> str:
        parent = os.path.dirname(final) or "."
        os.makedirs(parent, exist_ok=True)
        tmp = os.path.join(parent, "." + os.path.basename(final) + ".tmp")
        self._staged.append((tmp, final))
        return tmp

    def commit(self) -> list[str]:
        for tmp, final in self._staged:
            os.replace(tmp, final)
        return [final for _, final in self._staged]

    def abort(self) -> None:
        for tmp, _ in self._staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _resolve(args: argparse.Namespace, config: dict, key: str, attr: str | None = None):
    value = getattr(args, attr or key.replace("-", "_"), None)
    return config[key] if value is None else value


def _write_lines(path: str, lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_gen_data(args, config, out: _StagedOutputs) -> str:
    seed = _resolve(args, config, "seed")
    spec = SynonymWorldSpec(
        concepts=args.concepts,
        surfaces_per_concept=args.surfaces,
        title_tokens_per_concept=args.title_tokens,
        modifier_vocab=args.modifiers,
        pairs_to_emit=args.pairs,
        seed=seed,
    )
    dataset, ground_truth = generate_synthetic(spec)
    assert dataset.rows is not None
    write_click_log(dataset.rows, out.path(os.path.join(args.out, "clicklog.tsv")))
    write_ground_truth(ground_truth, out.path(os.path.join(args.out, "ground_truth.tsv")))
    return (
        f"gen-data: {len(dataset)} pairs over {spec.concepts} concepts "
        f"({spec.surfaces_per_concept} surfaces each, seed {seed}) -> {args.out}"
    )


def _cmd_build_vocab(args, config, out: _StagedOutputs) -> str:
    rows = read_click_rows(args.input)
    vocab = build_vocab(
        (f"{q} {t}" for q, t, _ in rows), max_size=args.max_size, min_freq=args.min_freq
    )
    save_vocab(vocab, out.path(args.out))
    return f"build-vocab: {len(vocab)} tokens (incl. 4 specials) -> {args.out}"


def _model_config(config: dict, vocab_size: int, layers: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        num_layers=layers,
        num_heads=config["num_heads"],
        d_model=config["d_model"],
        d_ff=config["d_ff"],
        dropout=config["dropout"],
        max_len=config["max_len"],
        dtype=config["dtype"],
    )


def _train_config(args, config) -> TrainConfig:
    lam = _resolve(args, config, "lambda", "lam")
    seed = _resolve(args, config, "seed")
    return TrainConfig(
        lam=lam,
        batch_size=_resolve(args, config, "batch_size"),
        max_steps=_resolve(args, config, "max_steps", "steps"),
        warmup_steps=_resolve(args, config, "warmup_steps", "warmup"),
        decode=DecodeConfig(
            k=_resolve(args, config, "k"),
            n=_resolve(args, config, "n"),
            max_steps=config["max_title_len"],
            rng_seed=seed,
        ),
        adam=AdamConfig(
            lr_scale=config["lr_scale"],
            beta1=config["beta1"],
            beta2=config["beta2"],
            eps=config["eps"],
        ),
        noam_warmup=config["noam_warmup"],
        seed=seed,
        eval_every=_resolve(args, config, "eval_every"),
    )


def _cmd_train(args, config, out: _StagedOutputs) -> str:
    vocab = load_vocab(args.vocab)
    dataset = load_click_log(args.data, vocab)
    tcfg = _train_config(args, config)
    os.makedirs(args.out, exist_ok=True)

    if args.task == "joint":
        resume = None
        if args.resume:
            resume = load_train_state(args.out)
        fcfg = _model_config(config, len(vocab), config["layers_forward"])
        bcfg = _model_config(config, len(vocab), config["layers_backward"])
        fparams = init_params(fcfg, derive_seed(tcfg.seed, 1), "forward")
        bparams = init_params(bcfg, derive_seed(tcfg.seed, 2), "backward")
        fparams, bparams, report = joint_train(
            dataset, tcfg, fparams, bparams,
            out_dir=args.out, resume=resume, vocab_hash=vocab.content_hash(),
        )
        plots.plot_training_curves(report, out.path(os.path.join(args.out, "curves.png")))
        return (
            f"train joint: {tcfg.max_steps} steps (warmup {tcfg.warmup_steps}, "
            f"lambda {tcfg.lam}) final loss_f={report.last('loss_forward'):.4f} "
            f"loss_b={report.last('loss_backward'):.4f} -> {args.out}"
        )

    if args.task == "q2t":
        pairs = [(p.query, p.title) for p in dataset.pairs]
        role, ckpt = "forward", "forward.qrw"
        layers = config["layers_forward"]
    elif args.task == "t2q":
        pairs = [(p.title, p.query) for p in dataset.pairs]
        role, ckpt = "backward", "backward.qrw"
        layers = config["layers_backward"]
    else:  # q2q
        qpairs = extract_query_pairs(dataset, _resolve(args, config, "min_shared_clicks"))
        if not qpairs:
            raise ValueError("no query pairs above the shared-click threshold")
        pairs = [(p.source, p.target) for p in qpairs]
        role, ckpt = "forward", "q2q.qrw"
        layers = config["layers_forward"]
    params = init_params(_model_config(config, len(vocab), layers), derive_seed(tcfg.seed, 1), role)
    params, report = train_single(
        pairs, tcfg, params, out_dir=args.out, vocab_hash=vocab.content_hash(), ckpt_name=ckpt
    )
    plots.plot_training_curves(report, out.path(os.path.join(args.out, "curves.png")))
    return (
        f"train {args.task}: {tcfg.max_steps} steps on {len(pairs)} pairs, "
        f"final loss={report.last('loss'):.4f} -> {args.out}"
    )


def _load_model(path: str, vocab) -> "ModelParameters":
    params, vocab_hash = load_checkpoint(path)
    if vocab_hash and vocab_hash != vocab.content_hash():
        raise ValueError(f"{path}: checkpoint was trained against a different vocabulary")
    return params


def _cmd_rewrite(args, config, out: _StagedOutputs) -> str:
    vocab = load_vocab(args.vocab)
    fparams = _load_model(args.forward, vocab)
    bparams = _load_model(args.backward, vocab)
    seed = _resolve(args, config, "seed")
    threads = _resolve(args, config, "threads")
    with open(args.queries, encoding="utf-8") as fh:
        queries = [line.strip() for line in fh if line.strip()]

    def rewrite_one(item: tuple[int, str]) -> dict:
        qi, text = item
        x = encode(text, vocab)
        cfg = RewriteConfig(
            k=_resolve(args, config, "k"),
            n=_resolve(args, config, "n"),
            max_title_len=config["max_title_len"],
            max_query_len=config["max_query_len"],
            exclude_identity=not args.keep_identity,
            top_out=_resolve(args, config, "top_out"),
            rng_seed=derive_seed(seed, 17, qi),
        )
        candidates = rewrite(x, fparams, bparams, cfg)
        return {
            "original": text,
            "rewrites": [
                {"rewrite": decode_text(c.query, vocab), "log_prob": round(c.log_prob, 6)}
                for c in candidates
            ],
        }

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(rewrite_one, enumerate(queries)))
    _write_lines(
        out.path(args.out),
        [json.dumps(row, sort_keys=True) for row in results],
    )

    if args.attention_tsv:
        lines = []
        for qi, text in enumerate(queries):
            x = encode(text, vocab)
            titles, fwd_lps = sample_titles(
                x, fparams,
                RewriteConfig(
                    k=_resolve(args, config, "k"), n=_resolve(args, config, "n"),
                    max_title_len=config["max_title_len"],
                    rng_seed=derive_seed(seed, 17, qi),
                ),
            )
            if not titles:
                continue
            best = titles[int(np.argmax(fwd_lps))]
            for section, weights in sorted(attention_maps(x, best, fparams).items()):
                layers, heads, rows, cols = weights.shape
                for l in range(layers):
                    for h in range(heads):
                        for r in range(rows):
                            for c in range(cols):
                                lines.append(
                                    f"{qi}\t{section}\t{l}\t{h}\t{r}\t{c}\t{weights[l, h, r, c]:.6f}"
                                )
        _write_lines(out.path(args.attention_tsv), lines)

    total = sum(len(r["rewrites"]) for r in results)
    return f"rewrite: {len(queries)} queries -> {total} rewrites -> {args.out}"


def _cmd_eval(args, config, out: _StagedOutputs) -> str:
    vocab = load_vocab(args.vocab)
    dataset = load_click_log(args.data, vocab)
    fparams = _load_model(args.forward, vocab)
    bparams = _load_model(args.backward, vocab)
    seed = _resolve(args, config, "seed")
    threads = _resolve(args, config, "threads")
    ground_truth = load_ground_truth(args.ground_truth) if args.ground_truth else None
    dictionary = baseline_mod.load_dictionary(args.dictionary) if args.dictionary else None

    surface_set: set[str] | None = None
    if ground_truth is not None:
        surface_set = {s for surfaces in ground_truth.values() for s in surfaces}
    query_texts: list[str] = []
    seen: set[str] = set()
    for pair in dataset.pairs:
        text = decode_text(pair.query, vocab)
        if text in seen:
            continue
        if surface_set is not None and text not in surface_set:
            continue
        seen.add(text)
        query_texts.append(text)
        if len(query_texts) >= args.eval_queries:
            break
    if not query_texts:
        raise ValueError("no evaluable queries found")

    decode_cfg = DecodeConfig(
        k=_resolve(args, config, "k"), n=_resolve(args, config, "n"),
        max_steps=config["max_title_len"], rng_seed=derive_seed(seed, 5),
    )

    def model_rewrites(item: tuple[int, str]) -> list[str]:
        qi, text = item
        cfg = RewriteConfig(
            k=decode_cfg.k, n=decode_cfg.n,
            max_title_len=config["max_title_len"], max_query_len=config["max_query_len"],
            top_out=_resolve(args, config, "top_out"),
            rng_seed=derive_seed(seed, 19, qi),
        )
        cands = rewrite(encode(text, vocab), fparams, bparams, cfg)
        return [decode_text(c.query, vocab) for c in cands]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        per_query_model = list(pool.map(model_rewrites, enumerate(query_texts)))

    report = metrics_mod.EvalReport()

    def add_rows(source: str, query: str, rewrites: list[str]) -> None:
        for rw in rewrites:
            if not rw:
                continue
            row = {
                "source": source,
                "query": query,
                "rewrite": rw,
                "f1": metrics_mod.ngram_f1(query.split(), rw.split()),
                "edit_distance": metrics_mod.edit_distance(query, rw),
                "cosine": metrics_mod.cosine_similarity(
                    encode(query, vocab), encode(rw, vocab), fparams
                ),
            }
            report.details.append(row)

    for query, rewrites in zip(query_texts, per_query_model):
        add_rows("model", query, rewrites)
    if dictionary is not None:
        for query in query_texts:
            add_rows("rule", query, baseline_mod.rewrite_rule_based(query, dictionary))

    def aggregate(source: str, key: str) -> float | None:
        values = [d[key] for d in report.details if d["source"] == source]
        return float(np.mean(values)) if values else None

    report.aggregates["perplexity_forward"] = metrics_mod.perplexity(dataset, fparams, "forward")
    report.aggregates["perplexity_backward"] = metrics_mod.perplexity(dataset, bparams, "backward")
    eval_queries = [encode(t, vocab) for t in query_texts]
    report.aggregates["translate_back_log_prob"] = metrics_mod.translate_back_log_prob(
        eval_queries, fparams, bparams, decode_cfg
    )
    report.aggregates["translate_back_accuracy"] = metrics_mod.translate_back_accuracy(
        eval_queries, fparams, bparams, decode_cfg
    )
    for source in ("model", "rule") if dictionary is not None else ("model",):
        for key in ("f1", "edit_distance", "cosine"):
            value = aggregate(source, key)
            if value is not None:
                report.aggregates[f"{source}_{key}_mean"] = value
    if ground_truth is not None:
        report.aggregates[f"model_recall_at_{args.m}"] = metrics_mod.synonym_recall_at_m(
            dict(zip(query_texts, per_query_model)), ground_truth, args.m
        )

    os.makedirs(args.out, exist_ok=True)
    report.write_tsv(out.path(os.path.join(args.out, "eval.tsv")))
    report.write_jsonl(out.path(os.path.join(args.out, "eval_detail.jsonl")))
    model_rows = [d for d in report.details if d["source"] == "model"]
    if model_rows:
        plots.plot_metric_histograms(model_rows, out.path(os.path.join(args.out, "eval_hist.png")))
    return (
        f"eval: {len(query_texts)} queries, {len(report.details)} rewrite rows, "
        f"{len(report.aggregates)} aggregates -> {args.out}"
    )


def _cmd_index(args, config, out: _StagedOutputs) -> str:
    vocab = load_vocab(args.vocab)
    docs = index_mod.load_corpus(args.corpus, vocab)
    idx = index_mod.build_index(docs)
    lines = []
    for tok in sorted(idx.postings):
        ids = ",".join(str(d) for d in idx.postings[tok])
        lines.append(f"{vocab.token_of(tok)}\t{ids}")
    _write_lines(out.path(args.out), lines)
    return f"index: {len(docs)} docs, {len(idx.postings)} posting lists -> {args.out}"


def _cmd_retrieve(args, config, out: _StagedOutputs) -> str:
    vocab = load_vocab(args.vocab)
    docs = index_mod.load_corpus(args.corpus, vocab)
    idx = index_mod.build_index(docs)
    groups: list[tuple[str, list[str]]] = []
    with open(args.rewrites, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            groups.append((row["original"], [r["rewrite"] for r in row["rewrites"]]))

    lines: list[str] = []
    merged_nodes = 0
    separate_nodes = 0
    total = 0
    for original, rewrites in groups:
        seqs = [encode(original, vocab)] + [encode(r, vocab) for r in rewrites if r]
        seqs = [s for s in seqs if s]
        if not seqs:
            continue
        trees = [index_mod.parse_query(s) for s in seqs]
        separate_nodes += sum(index_mod.node_count(t) for t in trees)
        merged = index_mod.merge_trees(seqs)
        merged_nodes += index_mod.node_count(merged)
        if args.merged:
            doc_ids = index_mod.evaluate(merged, idx)
        else:
            union: set[int] = set()
            for tree in trees:
                union.update(index_mod.evaluate(tree, idx))
            doc_ids = sorted(union)
        total += len(doc_ids)
        lines.extend(f"{original}\t{d}" for d in doc_ids)
    _write_lines(out.path(args.out), lines)
    mode = "merged" if args.merged else "separate"
    return (
        f"retrieve ({mode}): {len(groups)} query groups, {total} docs, "
        f"tree nodes merged={merged_nodes} vs separate={separate_nodes} -> {args.out}"
    )


def _cmd_inspect_attention(args, config, out: _StagedOutputs) -> str:
    vocab = load_vocab(args.vocab)
    params = _load_model(args.checkpoint, vocab)
    x = encode(args.source, vocab)
    y = encode(args.target, vocab)
    if not x or not y:
        raise ValueError("source and target must be non-empty")
    maps = attention_maps(x, y, params)
    write_attention_tsv(maps, out.path(args.out_prefix + ".tsv"))
    src_labels = args.source.split()
    tgt_in_labels = ["<bos>"] + args.target.split()
    labels = {
        "encoder_self": (src_labels, src_labels),
        "decoder_self": (tgt_in_labels, tgt_in_labels),
        "decoder_cross": (tgt_in_labels, src_labels),
    }
    for section, weights in maps.items():
        q_labels, k_labels = labels[section]
        plots.plot_attention_grid(
            weights, q_labels, k_labels, section,
            out.path(f"{args.out_prefix}.{section}.png"),
        )
    return f"inspect-attention: {len(maps)} sections -> {args.out_prefix}.*"


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qrewrite",
        description="Query rewriting via twin translation models with cyclic-consistency training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config document")
    common.add_argument("--seed", type=int, help="global random seed")
    common.add_argument("--threads", type=int, help="worker cap for per-query parallelism")

    p = sub.add_parser("gen-data", parents=[common], help="emit a synthetic click log with planted synonyms")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--concepts", type=int, default=30)
    p.add_argument("--surfaces", type=int, default=3)
    p.add_argument("--title-tokens", type=int, default=2)
    p.add_argument("--modifiers", type=int, default=8)
    p.add_argument("--pairs", type=int, default=2000)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("build-vocab", parents=[common], help="build a vocabulary file from a click log")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-size", type=int, default=20000)
    p.add_argument("--min-freq", type=int, default=1)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("train", parents=[common], help="train models on a click log")
    p.add_argument("--task", choices=("q2t", "t2q", "q2q", "joint"), default="joint")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoints and report")
    p.add_argument("--lambda", dest="lam", type=float, help="cyclic likelihood weight")
    p.add_argument("--steps", type=int, help="total training steps")
    p.add_argument("--warmup", type=int, help="separate-only warmup steps")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--min-shared-clicks", type=int, help="q2q pair extraction threshold")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoints in --out")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("rewrite", parents=[common], help="rewrite queries with trained models")
    p.add_argument("--queries", required=True, help="file with one query per line")
    p.add_argument("--forward", required=True, help="forward model checkpoint")
    p.add_argument("--backward", required=True, help="backward model checkpoint")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="output JSON-lines file")
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--top-out", type=int)
    p.add_argument("--keep-identity", action="store_true", help="do not drop the original query")
    p.add_argument("--attention-tsv", help="optional attention dump for the top title per query")
    p.set_defaults(func=_cmd_rewrite)

    p = sub.add_parser("eval", parents=[common], help="offline metrics against a click log")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--forward", required=True)
    p.add_argument("--backward", required=True)
    p.add_argument("--ground-truth", help="planted synonym map for recall")
    p.add_argument("--dictionary", help="rule-based synonym dictionary for the baseline")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--eval-queries", type=int, default=50)
    p.add_argument("--m", type=int, default=3, help="recall cutoff")
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--top-out", type=int)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("index", parents=[common], help="build posting lists from a corpus")
    p.add_argument("--corpus", required=True, help="doc_id<TAB>title TSV")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("retrieve", parents=[common], help="retrieve docs for rewrite groups")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--rewrites", required=True, help="JSON-lines output of the rewrite command")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--merged", action="store_true", help="single merged syntax tree per group")
    mode.add_argument("--separate", action="store_true", help="union of per-query retrievals")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("inspect-attention", parents=[common], help="export attention maps for one pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_inspect_attention)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    out = _StagedOutputs()
    try:
        config = load_config(args.config)
        summary = args.func(args, config, out)
        out.commit()
    except Exception as exc:  # runtime failure: clean partial outputs, exit 1
        out.abort()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
