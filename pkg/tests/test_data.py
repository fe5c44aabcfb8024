import numpy as np
import pytest

from qrewrite.data import (
    ClickLogDataset,
    ClickPair,
    SynonymWorldSpec,
    batches,
    extract_query_pairs,
    generate_synthetic,
    load_click_log,
    load_ground_truth,
    pad_batch,
    write_click_log,
    write_ground_truth,
)
from qrewrite.textcore import PAD, build_vocab


@pytest.fixture
def vocab():
    return build_vocab(["q1 q2 q3 t1 t2 t3"], max_size=100)


def _write(tmp_path, rows):
    path = tmp_path / "log.tsv"
    path.write_text("".join(f"{q}\t{t}\t{c}\n" for q, t, c in rows))
    return str(path)


def test_load_drops_single_clicks(tmp_path, vocab):
    path = _write(tmp_path, [("q1", "t1", 2), ("q2", "t2", 1), ("q3", "t3", 5)])
    dataset = load_click_log(path, vocab)
    assert len(dataset) == 2
    assert all(p.clicks > 1 for p in dataset.pairs)


def test_load_empty_file(tmp_path, vocab):
    path = tmp_path / "empty.tsv"
    path.write_text("")
    assert len(load_click_log(str(path), vocab)) == 0


def test_load_reports_line_numbers(tmp_path, vocab):
    path = tmp_path / "bad.tsv"
    path.write_text("q1\tt1\t2\nq2\tt2\tx\n")
    with pytest.raises(ValueError, match=":2"):
        load_click_log(str(path), vocab)
    path.write_text("q1\tt1\n")
    with pytest.raises(ValueError, match=":1"):
        load_click_log(str(path), vocab)


def test_generator_is_deterministic():
    spec = SynonymWorldSpec(concepts=5, surfaces_per_concept=3, pairs_to_emit=200, seed=7)
    ds1, gt1 = generate_synthetic(spec)
    ds2, gt2 = generate_synthetic(spec)
    assert ds1.rows == ds2.rows
    assert gt1 == gt2
    ds3, _ = generate_synthetic(SynonymWorldSpec(concepts=5, surfaces_per_concept=3, pairs_to_emit=200, seed=8))
    assert ds1.rows != ds3.rows


def test_degenerate_world_single_concept_single_surface():
    spec = SynonymWorldSpec(concepts=1, surfaces_per_concept=1, modifier_vocab=2, pairs_to_emit=50, seed=0)
    dataset, _ = generate_synthetic(spec)
    firsts = {row[0].split()[0] for row in dataset.rows}
    assert firsts == {"syn0_0"}


def test_concept_recoverable_from_title_tokens():
    spec = SynonymWorldSpec(concepts=30, surfaces_per_concept=3, pairs_to_emit=2000, seed=7)
    dataset, ground_truth = generate_synthetic(spec)
    for query, title, _ in dataset.rows:
        cat = [tok for tok in title.split() if tok.startswith("cat")]
        assert len(cat) == 1
        concept = int(cat[0][3:])
        surface = " ".join(query.split()[:2])
        assert surface in ground_truth[concept]


def test_generated_clicks_survive_reload(tmp_path):
    spec = SynonymWorldSpec(concepts=3, surfaces_per_concept=2, pairs_to_emit=40, seed=1)
    dataset, _ = generate_synthetic(spec)
    path = tmp_path / "log.tsv"
    write_click_log(dataset.rows, str(path))
    reloaded = load_click_log(str(path), dataset.vocab)
    assert reloaded.pairs == dataset.pairs


def test_ground_truth_roundtrip(tmp_path):
    _, gt = generate_synthetic(SynonymWorldSpec(concepts=4, surfaces_per_concept=2, pairs_to_emit=10, seed=3))
    path = tmp_path / "gt.tsv"
    write_ground_truth(gt, str(path))
    assert load_ground_truth(str(path)) == gt


def _toy_dataset(vocab, rows):
    from qrewrite.textcore import encode

    return ClickLogDataset(
        [ClickPair(encode(q, vocab), encode(t, vocab), c) for q, t, c in rows], vocab=vocab
    )


def test_extract_query_pairs_sums_both_sides(vocab):
    # q1 and q2 each click t1 three times; shared score is 3 + 3 = 6.
    dataset = _toy_dataset(
        vocab,
        [("q1", "t1", 3), ("q2", "t1", 3), ("q3", "t2", 9), ("q1", "t3", 2), ("q2", "t2", 2)],
    )
    pairs = extract_query_pairs(dataset, min_shared_clicks=5)
    keys = {(p.source, p.target): p.shared_clicks for p in pairs}
    from qrewrite.textcore import encode

    q1, q2, q3 = (encode(q, vocab) for q in ("q1", "q2", "q3"))
    assert keys[(q1, q2)] == 6
    assert keys[(q2, q1)] == 6
    # q2 and q3 share t2: 2 + 9 = 11.
    assert keys[(q2, q3)] == 11
    assert (q1, q3) not in keys  # no common title


def test_extract_query_pairs_brute_force_small(vocab):
    from qrewrite.textcore import encode

    rows = [("q1", "t1", 2), ("q2", "t1", 4), ("q3", "t1", 2), ("q1", "t2", 3), ("q3", "t2", 5)]
    dataset = _toy_dataset(vocab, rows)
    threshold = 7
    got = {(p.source, p.target) for p in extract_query_pairs(dataset, threshold)}

    clicks = {}
    for q, t, c in rows:
        clicks[(q, t)] = clicks.get((q, t), 0) + c
    queries = sorted({q for q, _, _ in rows})
    titles = {t for _, t, _ in rows}
    expected = set()
    for a in queries:
        for b in queries:
            if a >= b:
                continue
            shared = sum(
                clicks.get((a, t), 0) + clicks.get((b, t), 0)
                for t in titles
                if (a, t) in clicks and (b, t) in clicks
            )
            if shared >= threshold:
                expected.add((encode(a, vocab), encode(b, vocab)))
                expected.add((encode(b, vocab), encode(a, vocab)))
    assert got == expected


def test_extract_query_pairs_symmetry_and_degenerate(vocab):
    single = _toy_dataset(vocab, [("q1", "t1", 5), ("q1", "t2", 4)])
    assert extract_query_pairs(single, 1) == []
    dataset = _toy_dataset(vocab, [("q1", "t1", 2), ("q2", "t1", 2)])
    assert extract_query_pairs(dataset, 1000) == []
    pairs = extract_query_pairs(dataset, 2)
    directed = {(p.source, p.target) for p in pairs}
    assert {(t, s) for s, t in directed} == directed


def test_batches_shapes_and_seeded_order(vocab):
    dataset = _toy_dataset(vocab, [(f"q{1 + i % 3}", "t1 t2", 2) for i in range(10)])
    got = list(batches(dataset, 3, shuffle_seed=5))
    assert [len(b) for b in got] == [3, 3, 3, 1]
    again = list(batches(dataset, 3, shuffle_seed=5))
    for a, b in zip(got, again):
        assert np.array_equal(a.src, b.src) and np.array_equal(a.tgt, b.tgt)


def test_pad_batch_masks(vocab):
    batch = pad_batch([((4, 5), (6,)), ((4,), (6, 7, 8))])
    assert batch.src.shape == (2, 2)
    assert batch.tgt.shape == (2, 3)
    assert batch.src[1, 1] == PAD
    assert batch.src_mask.tolist() == [[True, True], [True, False]]
    swapped = batch.swapped()
    assert np.array_equal(swapped.src, batch.tgt)
