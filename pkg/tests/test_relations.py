import pytest

from sentgraph.corpus import Document, segment_sentences
from sentgraph.relations import (
    NNRelation,
    NSRelation,
    RelationAssertion,
    RelationKind,
    WholeResponseUnparseable,
    parse_core_indices,
    parse_label,
    parse_relation_response,
    render_nn_prompt,
    render_ns_prompt,
)
from support import fenced

VALID = range(4)


def test_nn_triple_parses():
    out = parse_relation_response(fenced("(0, 2, Contrast)"), "NN", VALID)
    assert out == [RelationAssertion(0, 2, RelationKind.NN, NNRelation.Contrast)]


def test_ns_triple_parses():
    out = parse_relation_response(fenced("(1, 3, Cause)"), "NS", VALID)
    assert out == [RelationAssertion(1, 3, RelationKind.NS, NSRelation.Cause)]


def test_out_of_family_label_dropped():
    assert parse_relation_response(fenced("(0, 2, Cause)"), "NN", VALID) == []


def test_out_of_range_and_self_loop_dropped():
    out = parse_relation_response(fenced("(0, 7, Contrast)", "(1, 1, Contrast)", "(0, 1, Sequence)"), "NN", VALID)
    assert out == [RelationAssertion(0, 1, RelationKind.NN, NNRelation.Sequence)]


def test_case_insensitive_and_alias():
    out = parse_relation_response(fenced("(0, 1, conjunction)", "(2, 3, restatement)"), "NN", VALID)
    assert [a.label for a in out] == [NNRelation.Conjunction, NNRelation.MultinuclearRestatement]


def test_symmetric_labels_canonicalised_and_deduplicated():
    out = parse_relation_response(fenced("(2, 0, Contrast)", "(0, 2, contrast)"), "NN", VALID)
    assert out == [RelationAssertion(0, 2, RelationKind.NN, NNRelation.Contrast)]


def test_sequence_keeps_direction():
    out = parse_relation_response(fenced("(2, 0, Sequence)"), "NN", VALID)
    assert (out[0].src_sent, out[0].dst_sent) == (2, 0)


def test_unfenced_triples_accepted():
    assert len(parse_relation_response("Here: (0, 1, Elaboration)", "NS", VALID)) == 1


def test_whole_response_unparseable():
    with pytest.raises(WholeResponseUnparseable):
        parse_relation_response("I cannot help with that.", "NN", VALID)


def test_fenced_but_empty_is_not_an_error():
    assert parse_relation_response(fenced(), "NN", VALID) == []


def test_core_indices():
    assert parse_core_indices(fenced("CORE: 2, 0, 9, 2"), VALID) == [2, 0]
    assert parse_core_indices("nothing", VALID) is None
    assert parse_core_indices(fenced("CORE:"), VALID) == []


def test_assertion_validates_family():
    with pytest.raises(ValueError):
        RelationAssertion(0, 1, RelationKind.NN, NSRelation.Cause)
    with pytest.raises(ValueError):
        RelationAssertion(1, 1, RelationKind.NS, NSRelation.Cause)


def test_parse_label_families():
    assert parse_label("ELABORATION", "NS") is NSRelation.Elaboration
    assert parse_label("Elaboration", "NN") is None
    assert NNRelation.Sequence.symmetric is False
    assert all(r.symmetric for r in NNRelation if r is not NNRelation.Sequence)


def test_prompts_list_sentences_and_labels():
    sents = segment_sentences(Document("d", "Alpha one. Beta ```two```. Gamma three."))
    nn = render_nn_prompt(sents)
    assert "[0] Alpha one." in nn and "[2] Gamma three." in nn
    assert all(r.value in nn for r in NNRelation)
    assert "```two```" not in nn
    ns = render_ns_prompt(sents[0], sents[1:])
    assert "[1]" in ns and all(r.value in ns for r in NSRelation)
    with pytest.raises(ValueError):
        render_nn_prompt([])
    with pytest.raises(ValueError):
        render_ns_prompt(sents[0], [])
