import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifactlab.errors import AnswerConflictError, DomainError, EmptyAnswerError, ParseError, ValidationError
from artifactlab.taxonomy import (
    COARSE_GROUPS, NO_ARTIFACTS, LabelSet, canonical_answer, dump_taxonomy, load_taxonomy, parse_answer,
)

ONE = """version = tiny

[category]
name = Blur
group = others
explanation = Out of focus.
"""


def test_default_has_thirteen_categories(taxonomy):
    assert len(taxonomy) == 13
    assert [c.id for c in taxonomy.categories] == list(range(13))
    assert {c.coarse_group for c in taxonomy.categories} == set(COARSE_GROUPS)
    assert all(c.explanation for c in taxonomy.categories)


def test_category_two_is_distortion(taxonomy):
    assert taxonomy[2].name == "Distorted components"
    assert taxonomy.id_of("Distorted and deformated components") == 2


def test_single_category_document():
    tax = load_taxonomy(ONE)
    assert len(tax) == 1
    assert tax.version == "tiny"
    assert tax[0].name == "Blur"


def test_duplicate_name_rejected():
    doc = ONE + "\n[category]\nname = blur\ngroup = others\nexplanation = Again.\n"
    with pytest.raises(ValidationError, match="duplicate"):
        load_taxonomy(doc)


@pytest.mark.parametrize(
    "doc, line",
    [
        ("[category]\nname = A\ngroup = others\n", 1),
        ("[category]\nname = A\ngroup = others\nexplanation = x\nbogus line\n", 5),
        ("[categry]\nname = A\n", 1),
        ("[category]\nname = A\ngroup = others\nexplanation = x\ncolour = red\n", 5),
    ],
)
def test_malformed_document_reports_line(doc, line):
    with pytest.raises(ParseError) as err:
        load_taxonomy(doc)
    assert err.value.line == line


def test_unknown_group_rejected():
    with pytest.raises(ValidationError):
        load_taxonomy("[category]\nname = A\ngroup = weird\nexplanation = x\n")


def test_empty_document_rejected():
    with pytest.raises(ValidationError):
        load_taxonomy("version = 1\n# nothing\n")


def test_dump_roundtrip(taxonomy):
    assert load_taxonomy(dump_taxonomy(taxonomy)) == taxonomy


def test_load_from_path(tmp_path, taxonomy):
    p = tmp_path / "tax.txt"
    p.write_text(dump_taxonomy(taxonomy))
    assert load_taxonomy(p) == taxonomy
    assert load_taxonomy(str(p)) == taxonomy


def test_parse_no_artifacts():
    tax = load_taxonomy(ONE)
    assert parse_answer("No artifacts.", tax) == (NO_ARTIFACTS, [])
    assert parse_answer("  no ARTIFACTS ", tax) == (NO_ARTIFACTS, [])


def test_parse_two_components(taxonomy):
    labels, unmatched = parse_answer("Distorted components, Duplicated components", taxonomy)
    assert labels == LabelSet.of(taxonomy.id_of("Distorted components"), taxonomy.id_of("Duplicated components"))
    assert unmatched == []


def test_parse_unknown_is_empty_answer_error(taxonomy):
    with pytest.raises(EmptyAnswerError) as err:
        parse_answer("zzz-unknown", taxonomy)
    assert err.value.unmatched == ["zzz-unknown"]


def test_parse_empty_text(taxonomy):
    with pytest.raises(EmptyAnswerError):
        parse_answer("  .. ", taxonomy)


def test_parse_conflict(taxonomy):
    with pytest.raises(AnswerConflictError) as err:
        parse_answer("No artifacts, Blur", taxonomy)
    assert err.value.labels == LabelSet.of(taxonomy.id_of("Blur"))


def test_unique_prefix_and_unmatched_kept(taxonomy):
    labels, unmatched = parse_answer("Omitted, Luminosity, purple haze\nShadow", taxonomy)
    assert labels == LabelSet.of(3, 9, 10)
    assert unmatched == ["purple haze"]


def test_ambiguous_prefix_is_unmatched(taxonomy):
    # "S" starts Spatial, Shape and Shadow
    labels, unmatched = parse_answer("S, Blur", taxonomy)
    assert labels == LabelSet.of(11)
    assert unmatched == ["S"]


def test_canonical_answers(taxonomy):
    assert canonical_answer(NO_ARTIFACTS, taxonomy) == "No artifacts."
    assert canonical_answer(LabelSet.of(2), taxonomy) == "Distorted components."
    assert canonical_answer(LabelSet.of(12, 0), taxonomy) == "Illegible letters, Out of frame."


def test_canonical_invalid_id(taxonomy):
    with pytest.raises(DomainError):
        canonical_answer(LabelSet.of(13), taxonomy)


def test_roundtrip_all_small_label_sets(taxonomy):
    sets = [NO_ARTIFACTS] + [LabelSet(frozenset(c)) for k in (1, 2, 3) for c in itertools.combinations(range(13), k)]
    sets.append(LabelSet(frozenset(range(13))))
    for labels in sets:
        assert parse_answer(canonical_answer(labels, taxonomy), taxonomy) == (labels, [])


label_sets = st.frozensets(st.integers(0, 12), max_size=13).map(LabelSet)


@settings(max_examples=200, deadline=None)
@given(labels=label_sets, upper=st.booleans(), pad=st.sampled_from(["", " ", "  ", "\t"]))
def test_parse_tolerates_case_and_whitespace(taxonomy, labels, upper, pad):
    text = canonical_answer(labels, taxonomy)
    text = text.upper() if upper else text.lower()
    text = pad + text.replace(", ", "," + pad) + pad
    assert parse_answer(text, taxonomy) == (labels, [])


@settings(max_examples=200, deadline=None)
@given(text=st.text(max_size=60))
def test_parse_never_mixes(taxonomy, text):
    try:
        labels, _ = parse_answer(text, taxonomy)
    except (EmptyAnswerError, AnswerConflictError):
        return
    assert labels.is_clean or all(0 <= i < 13 for i in labels.ids)
