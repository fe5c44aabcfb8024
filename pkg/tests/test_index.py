import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qrewrite.index import (
    And,
    Document,
    InvertedIndex,
    Or,
    Token,
    build_index,
    evaluate,
    load_corpus,
    merge_trees,
    node_count,
    parse_query,
)


def _docs(rows):
    return [Document(i, tuple(tokens)) for i, tokens in enumerate(rows)]


def test_build_index_sorted_and_complete():
    idx = build_index(_docs([(4, 5), (4, 6), (5, 6)]))
    assert idx.postings[4] == [0, 1]
    assert idx.postings[5] == [0, 2]
    assert idx.postings[6] == [1, 2]


def test_build_index_empty_and_single():
    assert build_index([]).postings == {}
    idx = build_index([Document(0, (4, 5))])
    assert idx.postings == {4: [0], 5: [0]}


def test_build_index_rejects_duplicate_ids():
    with pytest.raises(ValueError, match="duplicate"):
        build_index([Document(1, (4,)), Document(1, (5,))])


def test_build_index_matches_linear_scan():
    rng = np.random.default_rng(0)
    rows = [tuple(int(t) for t in rng.integers(4, 14, size=rng.integers(1, 6))) for _ in range(100)]
    docs = _docs(rows)
    idx = build_index(docs)
    for tok in range(4, 14):
        expected = sorted(d.doc_id for d in docs if tok in d.tokens)
        assert idx.postings.get(tok, []) == expected


def test_parse_query_shapes():
    assert parse_query((4,)) == Token(4)
    assert parse_query((4, 5)) == And((Token(4), Token(5)))
    assert parse_query((4, 4, 5)) == And((Token(4), Token(5)))
    with pytest.raises(ValueError):
        parse_query(())


def test_tree_invariants_enforced():
    with pytest.raises(ValueError):
        And((Token(4),))
    with pytest.raises(ValueError):
        Or((Token(4),))
    with pytest.raises(ValueError):
        And((And((Token(4), Token(5))), Token(6)))
    with pytest.raises(ValueError):
        Or((Or((Token(4), Token(5))), Token(6)))


def test_merge_single_query_is_parse():
    assert merge_trees([(5, 4)]) == parse_query((5, 4))


def test_merge_factorizes_shared_token():
    # {"apple phone", "apple cellphone"} -> And(apple, Or(phone, cellphone))
    tree = merge_trees([(10, 11), (10, 12)])
    assert tree == And((Token(10), Or((Token(11), Token(12)))))


def test_merge_absorbs_superset_query():
    # docs(a AND b) is a subset of docs(a): the one-token query wins
    tree = merge_trees([(4, 5), (4,)])
    assert tree == Token(4)
    idx = build_index(_docs([(4, 5), (4,), (5,)]))
    assert evaluate(tree, idx) == [0, 1]
    assert evaluate(tree, idx) == sorted(
        set(evaluate(parse_query((4, 5)), idx)) | set(evaluate(parse_query((4,)), idx))
    )


def test_evaluate_token_and_or():
    idx = InvertedIndex({4: [1, 2, 3], 5: [2, 3, 5]})
    assert evaluate(Token(9), idx) == []
    assert evaluate(And((Token(4), Token(5))), idx) == [2, 3]
    assert evaluate(Or((Token(4), Token(5))), idx) == [1, 2, 3, 5]


def test_node_count():
    assert node_count(Token(4)) == 1
    assert node_count(And((Token(4), Token(5)))) == 3
    assert node_count(And((Token(4), Or((Token(5), Token(6)))))) == 5


def test_merged_tree_smaller_on_overlapping_queries():
    # three queries sharing two tokens, single-token tails
    queries = [(4, 5, 6), (4, 5, 7), (4, 5, 8)]
    merged = merge_trees(queries)
    merged_count = node_count(merged)
    separate_count = sum(node_count(parse_query(q)) for q in queries)
    assert merged_count < separate_count


def _union_oracle(queries, idx):
    union: set[int] = set()
    for q in queries:
        union.update(evaluate(parse_query(q), idx))
    return sorted(union)


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_union_equivalence_randomized(data):
    n_docs = data.draw(st.integers(0, 30))
    rng_docs = data.draw(
        st.lists(
            st.lists(st.integers(4, 12), min_size=1, max_size=5),
            min_size=n_docs and 1,
            max_size=max(1, n_docs),
        )
    )
    queries = data.draw(
        st.lists(
            st.lists(st.integers(4, 12), min_size=1, max_size=4).map(tuple),
            min_size=1,
            max_size=4,
        )
    )
    docs = _docs([tuple(r) for r in rng_docs])
    idx = build_index(docs)
    merged = merge_trees(queries)
    assert evaluate(merged, idx) == _union_oracle(queries, idx)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_evaluate_strictly_increasing_and_idempotent(data):
    rows = data.draw(
        st.lists(st.lists(st.integers(4, 10), min_size=1, max_size=4), min_size=1, max_size=20)
    )
    queries = data.draw(
        st.lists(st.lists(st.integers(4, 10), min_size=1, max_size=3).map(tuple), min_size=1, max_size=3)
    )
    idx = build_index(_docs([tuple(r) for r in rows]))
    tree = merge_trees(queries)
    out = evaluate(tree, idx)
    assert all(a < b for a, b in zip(out, out[1:]))
    assert evaluate(tree, idx) == out


def test_load_corpus(tmp_path):
    from qrewrite.textcore import build_vocab

    vocab = build_vocab(["red shoes blue hat"], max_size=50)
    path = tmp_path / "corpus.tsv"
    path.write_text("0\tred shoes\n7\tblue hat\n")
    docs = load_corpus(str(path), vocab)
    assert docs[0].doc_id == 0 and docs[1].doc_id == 7
    assert docs[0].tokens == (vocab.id_of("red"), vocab.id_of("shoes"))
    path.write_text("x\tred\n")
    with pytest.raises(ValueError, match=":1"):
        load_corpus(str(path), vocab)
