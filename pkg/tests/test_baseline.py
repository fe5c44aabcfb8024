import pytest

from qrewrite.baseline import SynonymDictionary, load_dictionary, rewrite_rule_based


def _dict(rows):
    d = SynonymDictionary()
    for phrase, synonym in rows:
        d.add(tuple(phrase.split()), tuple(synonym.split()))
    return d


def test_load_dictionary(tmp_path):
    path = tmp_path / "dict.tsv"
    path.write_text("newest iphone\tiphone 12\nsneaker\ttrainer\n")
    d = load_dictionary(str(path))
    assert len(d.entries) == 2
    assert d.entries[("newest", "iphone")] == [("iphone", "12")]


def test_load_dictionary_rejects_self_mapping(tmp_path):
    path = tmp_path / "dict.tsv"
    path.write_text("a b\ta b\n")
    with pytest.raises(ValueError, match=":1"):
        load_dictionary(str(path))


def test_load_dictionary_rejects_malformed_row(tmp_path):
    path = tmp_path / "dict.tsv"
    path.write_text("a\tb\nc\n")
    with pytest.raises(ValueError, match=":2"):
        load_dictionary(str(path))


def test_load_dictionary_collapses_duplicates(tmp_path):
    path = tmp_path / "dict.tsv"
    path.write_text("a\tb\na\tb\na\tc\n")
    d = load_dictionary(str(path))
    assert d.entries[("a",)] == [("b",), ("c",)]


def test_no_match_gives_empty_list():
    d = _dict([("sneaker", "trainer")])
    assert rewrite_rule_based("red dress", d) == []


def test_paper_motivating_example():
    d = _dict([("newest iphone", "iphone 12")])
    assert rewrite_rule_based("newest iphone", d) == ["iphone 12"]


def test_phrase_in_context_single_replacement():
    d = _dict([("newest iphone", "iphone 12")])
    assert rewrite_rule_based("buy newest iphone case", d) == ["buy iphone 12 case"]


def test_two_phrases_two_synonyms_each_gives_four():
    d = _dict([("a", "a1"), ("a", "a2"), ("b", "b1"), ("b", "b2")])
    out = rewrite_rule_based("a b", d)
    assert out == ["a1 b", "a2 b", "a b1", "a b2"]
    # each rewrite differs from the input in exactly one phrase occurrence
    for rw in out:
        diff = sum(x != y for x, y in zip(rw.split(), "a b".split()))
        assert diff == 1


def test_leftmost_occurrence_only():
    d = _dict([("x", "y")])
    assert rewrite_rule_based("x q x", d) == ["y q x"]


def test_order_by_position_then_dictionary_order():
    d = _dict([("b", "b1"), ("a", "a1")])
    # "a" matches at position 0, "b" at position 1, despite dictionary order
    assert rewrite_rule_based("a b", d) == ["a1 b", "a b1"]


def test_output_deduplicated():
    d = _dict([("a", "b"), ("a b", "b b")])
    # "a b": replacing "a" with "b" gives "b b"; phrase "a b" -> "b b" duplicates
    assert rewrite_rule_based("a b", d) == ["b b"]


def test_case_folding_in_matching():
    d = _dict([("iphone", "apple phone")])
    assert rewrite_rule_based("Newest IPHONE", d) == ["newest apple phone"]
