import random
from dataclasses import replace
from datetime import date
from decimal import Decimal

import pytest

from ontodesk.errors import ParseError, UnknownEntityError, ValidationError
from ontodesk.kb import (
    Assertion,
    ClassPattern,
    Ind,
    Ontology,
    PropPattern,
    Provenance,
    assert_fact,
    is_instance_of,
    parse_pattern,
    quantize,
    query,
    validate,
)
from ontodesk.kbfile import dump_ontology, load_ontology

from .generators import random_kb
from .oracles import brute_force_query

SMALL = """
class Element ns=common
class Finding sub Element ns=common
class Increase sub Finding ns=common
class Phone sub Element ns=common
class NewPhone sub Phone ns=common
class Customer sub Element ns=common
class PhoneBrand sub Element ns=common
rel hasValue dom=Finding rng=decimal
rel hasCharacteristic dom=Phone rng=PhoneBrand
ind Finding309 : Increase
ind Nokia_E72 : NewPhone
ind Nokia : PhoneBrand
fact Finding309 hasValue 11.23
"""


def small_kb() -> Ontology:
    return load_ontology(SMALL)


# -- loading ---------------------------------------------------------------


def test_load_counts_declarations():
    text = """
    class Finding ns=common
    class Increase sub Finding ns=common
    rel hasValue dom=Finding rng=decimal
    """
    kb = load_ontology(text)
    assert len(kb.classes) == 2
    assert len(kb.relations) == 1


def test_load_rejects_subclass_cycle():
    text = """
    class A sub B ns=common
    class B sub A ns=common
    """
    with pytest.raises(ValidationError) as err:
        load_ontology(text)
    assert "subclass cycle" in str(err.value)


def test_case_study_schema_loads_clean(case_dir):
    kb = load_ontology((case_dir / "schema.kb").read_text())
    assert validate(kb) == []
    for name in (
        "Phone", "NewPhone", "Customer", "NewCustomer", "PhoneBrand",
        "Finding", "Increase", "DiscountPrice", "Measure", "Dimension",
        "MessageSeverity", "Actor",
    ):
        assert name in kb.classes


def test_load_duplicate_class_is_error():
    text = "class A ns=common\nclass A ns=common\n"
    with pytest.raises(ParseError) as err:
        load_ontology(text)
    assert err.value.line == 2


def test_parse_error_carries_line_number():
    with pytest.raises(ParseError) as err:
        load_ontology("class A ns=common\nbogus directive\n")
    assert err.value.line == 2


def test_dump_round_trips(case_dir):
    kb = load_ontology((case_dir / "schema.kb").read_text())
    text = dump_ontology(kb)
    again = load_ontology(text)
    assert set(again.classes) == set(kb.classes)
    assert set(again.relations) == set(kb.relations)
    assert set(again.individuals) == set(kb.individuals)
    assert set(again.assertions) == set(kb.assertions)
    assert dump_ontology(again) == text


# -- assert_fact -------------------------------------------------------------


def test_assert_accepts_brand_characteristic():
    kb = small_kb()
    kb = assert_fact(
        kb, Assertion("Nokia_E72", "hasCharacteristic", Ind("Nokia"))
    )
    assert kb.has_assertion("Nokia_E72", "hasCharacteristic", Ind("Nokia"))


def test_assert_rejects_datatype_mismatch():
    kb = small_kb()
    with pytest.raises(ValidationError) as err:
        assert_fact(kb, Assertion("Finding309", "hasValue", "abc"))
    assert "datatype" in str(err.value)


def test_assert_rejects_domain_violation():
    kb = small_kb()
    with pytest.raises(ValidationError) as err:
        assert_fact(kb, Assertion("Nokia", "hasValue", quantize("1")))
    assert "domain" in str(err.value)


def test_assert_unknown_subject_and_relation():
    kb = small_kb()
    with pytest.raises(ValidationError):
        assert_fact(kb, Assertion("Ghost", "hasValue", quantize("1")))
    with pytest.raises(ValidationError):
        assert_fact(kb, Assertion("Finding309", "noSuchRel", quantize("1")))


def test_assert_is_idempotent():
    kb = small_kb()
    a = Assertion("Nokia_E72", "hasCharacteristic", Ind("Nokia"))
    kb1 = assert_fact(kb, a)
    kb2 = assert_fact(kb1, a)
    assert kb2 is kb1


def test_assert_then_query_round_trip():
    kb = small_kb()
    kb = assert_fact(kb, Assertion("Nokia_E72", "hasCharacteristic", Ind("Nokia")))
    got = query(kb, [PropPattern("hasCharacteristic", "?p", "?b")])
    assert got == [{"?p": Ind("Nokia_E72"), "?b": Ind("Nokia")}]


def test_snapshots_are_independent():
    kb = small_kb()
    kb2 = assert_fact(kb, Assertion("Nokia_E72", "hasCharacteristic", Ind("Nokia")))
    assert not kb.has_assertion("Nokia_E72", "hasCharacteristic", Ind("Nokia"))
    assert kb2.has_assertion("Nokia_E72", "hasCharacteristic", Ind("Nokia"))


# -- queries -----------------------------------------------------------------


def test_query_subclass_transitivity():
    kb = small_kb()
    assert query(kb, [ClassPattern("Phone", "?x")]) == [{"?x": Ind("Nokia_E72")}]


def test_query_value_binding():
    kb = small_kb()
    got = query(kb, [PropPattern("hasValue", "?f", "?v")])
    assert got == [{"?f": Ind("Finding309"), "?v": Decimal("11.2300")}]


def test_query_empty_kb():
    kb = load_ontology("class A ns=common\nrel r dom=A rng=A\n")
    assert query(kb, [ClassPattern("A", "?x")]) == []
    assert query(kb, [PropPattern("r", "?x", "?y")]) == []


def test_query_unknown_predicate():
    kb = small_kb()
    with pytest.raises(UnknownEntityError):
        query(kb, [PropPattern("nope", "?x", "?y")])


def test_parse_pattern_conjunction():
    kb = small_kb()
    patterns = parse_pattern("Phone(?x), hasCharacteristic(?x, ?b)", kb)
    assert len(patterns) == 2
    assert isinstance(patterns[0], ClassPattern)
    assert isinstance(patterns[1], PropPattern)


def test_query_matches_brute_force_on_random_kbs():
    rng = random.Random(20100401)
    for _ in range(25):
        kb = random_kb(rng)
        relations = sorted(kb.relations)
        classes = sorted(c for c in kb.classes if c != "Thing")
        patterns = [
            [ClassPattern(rng.choice(classes), "?x")],
            [PropPattern(rng.choice(relations), "?x", "?y")],
            [
                ClassPattern(rng.choice(classes), "?x"),
                PropPattern(rng.choice(relations), "?x", "?y"),
            ],
        ]
        for pattern in patterns:
            got = query(kb, pattern)
            want = brute_force_query(kb, pattern)
            assert got == want


# -- is_instance_of ------------------------------------------------------------


def test_instance_of_reflexive_and_transitive():
    kb = small_kb()
    assert is_instance_of(kb, "Nokia_E72", "NewPhone")
    assert is_instance_of(kb, "Nokia_E72", "Phone")
    assert not is_instance_of(kb, "Nokia_E72", "Customer")


def test_instance_of_unknown_raises():
    kb = small_kb()
    with pytest.raises(UnknownEntityError):
        is_instance_of(kb, "ghost", "Phone")
    with pytest.raises(UnknownEntityError):
        is_instance_of(kb, "Nokia_E72", "Ghost")


# -- validate ---------------------------------------------------------------


def test_validate_clean_case_study(case_kb):
    assert validate(case_kb) == []


def test_validate_unresolved_assertion_subject():
    kb = small_kb()
    kb = assert_fact(kb, Assertion("Nokia_E72", "hasCharacteristic", Ind("Nokia")))
    broken = replace(
        kb, individuals={k: v for k, v in kb.individuals.items() if k != "Nokia_E72"}
    )
    problems = validate(broken)
    assert any("unknown subject" in p or "unresolved" in p for p in problems)


def test_validate_missing_domain_class():
    kb = load_ontology(
        "class A ns=common\nclass B ns=common\nrel r dom=B rng=A\n"
    )
    broken = replace(kb, classes={k: v for k, v in kb.classes.items() if k != "B"})
    problems = validate(broken)
    assert problems == ["relation r: unresolved domain B"]


def test_acyclicity_of_random_kbs():
    rng = random.Random(7)
    for _ in range(20):
        kb = random_kb(rng)
        assert not any("cycle" in v for v in validate(kb))


# -- literals and provenance ---------------------------------------------------


def test_decimal_quantized_to_four_places():
    kb = small_kb()
    a = Assertion("Finding309", "hasValue", Decimal("5.87"))
    kb = assert_fact(kb, a)
    stored = [x for x in kb.assertions.values() if x.relation == "hasValue"]
    assert any(v.obj == Decimal("5.8700") for v in stored)


def test_literal_date_and_bool_parsing():
    kb = load_ontology(
        "class A ns=common\n"
        "rel when dom=A rng=date\n"
        "rel flag dom=A rng=boolean\n"
        "ind a : A\n"
        "fact a when 2010-04-01\n"
        "fact a flag true\n"
    )
    objs = {a.relation: a.obj for a in kb.assertions.values()}
    assert objs["when"] == date(2010, 4, 1)
    assert objs["flag"] is True


def test_derived_provenance_requires_rule():
    with pytest.raises(ValueError):
        Provenance("derived")
    assert str(Provenance("derived", "r1")) == "derived(r1)"
    assert str(Provenance("olap")) == "olap"


def test_snapshots_cross_thread_reads():
    import threading

    kb = small_kb()
    kb = assert_fact(kb, Assertion("Nokia_E72", "hasCharacteristic", Ind("Nokia")))
    results: list = []

    def reader():
        results.append(query(kb, [ClassPattern("Phone", "?x")]))

    threads = [threading.Thread(target=reader) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r == [{"?x": Ind("Nokia_E72")}] for r in results)


def test_query_self_referential_pattern():
    kb = load_ontology(
        "class A ns=common\n"
        "rel r dom=A rng=A\n"
        "ind a : A\n"
        "ind b : A\n"
        "fact a r a\n"
        "fact a r b\n"
    )
    got = query(kb, [PropPattern("r", "?x", "?x")])
    assert got == [{"?x": Ind("a")}]
    want = brute_force_query(kb, [PropPattern("r", "?x", "?x")])
    assert got == want
