import json
import random

import pytest

from veristack.canonical import canonicalize, hash_payload
from veristack.ispec import (
    IspecParseError,
    IspecReloadError,
    IspecValidationError,
    SpecStore,
    check_action,
    parse_ispec,
    reload_ispec,
    serialize_ispec,
)
from veristack.harness.episode import PseudoReceipt
from veristack.harness.scenarios import fixture_ispec, fixture_ispec_document


def minimal_document(**overrides):
    doc = {
        "spec_id": "minimal",
        "version": 1,
        "objective": {
            "goal_text": "do one thing",
            "success_conditions": [{"metric": "done", "comparator": ">=", "threshold": 1}],
        },
        "constraints": {
            "allowed_tools": ["search"],
            "forbidden_tools": [],
            "forbidden_arg_patterns": [],
            "resource_limits": {},
        },
        "policies": {"rules": []},
        "verification": {
            "cra_triggers": [],
            "align_threshold_tau": 0.6,
            "challenge_deadline": 10,
        },
    }
    doc.update(overrides)
    return doc


def receipt_for(tool, index=0, agent="agent-1"):
    return PseudoReceipt(id=index, tool=tool, args_hash="0" * 64, timestamp=index, agent_id=agent)


def test_minimal_spec_parses():
    spec = parse_ispec(json.dumps(minimal_document()))
    assert spec.spec_id == "minimal"
    assert spec.constraints.allowed_tools == frozenset({"search"})
    assert spec.constraints.forbidden_tools == frozenset()
    assert spec.verification.align_threshold_tau == 0.6


def test_disjointness_violation_rejected():
    doc = minimal_document()
    doc["constraints"]["allowed_tools"] = ["shell", "search"]
    doc["constraints"]["forbidden_tools"] = ["shell"]
    with pytest.raises(IspecValidationError, match="disjointness"):
        parse_ispec(doc)


def test_bundled_content_moderation_fixture():
    spec = fixture_ispec()
    assert spec.spec_id == "content-moderation"
    assert len(spec.policies.rules) == 3
    assert len(spec.verification.cra_triggers) == 2
    # round-trip oracle: parse(serialize(spec)) == spec
    assert parse_ispec(serialize_ispec(spec)) == spec


def test_round_trip_of_minimal_and_fixture_documents():
    for doc in (minimal_document(), fixture_ispec_document()):
        spec = parse_ispec(doc)
        again = parse_ispec(serialize_ispec(spec))
        assert again == spec
        assert again.document_hash() == spec.document_hash()


def test_document_hash_is_sha256_of_canonical_form():
    spec = fixture_ispec()
    assert spec.document_hash() == hash_payload(canonicalize(spec.to_document()))


def test_malformed_document_reports_location():
    with pytest.raises(IspecParseError) as err:
        parse_ispec('{"spec_id": "x",\n  "version": }')
    assert err.value.line == 2


def test_validation_error_names_field():
    doc = minimal_document()
    doc["verification"]["align_threshold_tau"] = 1.5
    with pytest.raises(IspecValidationError, match="align_threshold_tau"):
        parse_ispec(doc)


@pytest.mark.parametrize(
    "mutate,field",
    [
        (lambda d: d["objective"].update(success_conditions=[]), "success_conditions"),
        (lambda d: d["constraints"]["resource_limits"].update({"calls:search": -1}), "resource_limits"),
        (lambda d: d["constraints"]["resource_limits"].update({"calls:search": float("inf")}), "resource_limits"),
        (lambda d: d["constraints"]["forbidden_arg_patterns"].append({"tool": "search", "pattern": "("}), "pattern"),
        (lambda d: d["verification"].update(challenge_deadline=0), "challenge_deadline"),
        (lambda d: d.update(version=0), "version"),
    ],
)
def test_invariant_violations_rejected(mutate, field):
    doc = minimal_document()
    mutate(doc)
    with pytest.raises(IspecValidationError, match=field):
        parse_ispec(doc)


def test_duplicate_rule_ids_rejected():
    doc = minimal_document()
    rule = {
        "rule_id": "r1",
        "description": "d",
        "severity": "low",
        "predicate": {"kind": "max_count", "tool": "search", "max": 5},
    }
    doc["policies"]["rules"] = [rule, dict(rule)]
    with pytest.raises(IspecValidationError, match="duplicate"):
        parse_ispec(doc)


def test_constraint_tool_references_must_be_declared():
    doc = minimal_document()
    doc["constraints"]["resource_limits"] = {"calls:undeclared": 5}
    with pytest.raises(IspecValidationError, match="undeclared"):
        parse_ispec(doc)


# -- check_action -------------------------------------------------------------


def test_forbidden_tool_receipt_is_violation():
    spec = fixture_ispec()
    verdict = check_action(spec, receipt_for("shell"), [])
    assert not verdict.passed
    assert verdict.violations[0].rule_id == "forbidden-tool"
    assert verdict.violations[0].severity == "high"


def test_allowed_tool_within_limits_passes():
    spec = fixture_ispec()
    history = [receipt_for("search", i) for i in range(3)]
    verdict = check_action(spec, receipt_for("read_file", 3), history)
    assert verdict.passed and verdict.violations == ()


def test_unknown_tool_fails_closed():
    spec = fixture_ispec()
    verdict = check_action(spec, receipt_for("mystery"), [])
    assert not verdict.passed
    assert verdict.violations[0].rule_id == "unknown-tool"
    assert verdict.violations[0].severity == "high"


def test_eleventh_call_over_cap_flagged_against_brute_force_recount():
    """Oracle: brute-force recount over a randomized synthetic history."""
    spec = fixture_ispec()  # calls:search capped at 10
    rng = random.Random(5)
    tools = ["search", "read_file", "summarize", "flag_content"]
    history = []
    flagged_at = []
    for i in range(60):
        tool = rng.choice(tools)
        receipt = receipt_for(tool, i)
        verdict = check_action(spec, receipt, history)
        brute_count = sum(1 for r in history if r.tool == "search") + (1 if tool == "search" else 0)
        expect_violation = tool == "search" and brute_count > 10
        assert ("resource-limit" in [v.rule_id for v in verdict.violations]) == expect_violation
        if expect_violation:
            flagged_at.append(i)
        history.append(receipt)
    assert flagged_at, "the scripted history never exceeded the cap"
    eleventh = [i for i, r in enumerate(history) if r.tool == "search"][10]
    assert flagged_at[0] == eleventh


def test_adjacency_rule_fires_on_pair():
    spec = fixture_ispec()
    history = [receipt_for("read_file", 0)]
    verdict = check_action(spec, receipt_for("delegate", 1), history)
    assert [v.rule_id for v in verdict.violations] == ["no-read-then-delegate"]
    assert verdict.violations[0].severity == "medium"
    # non-adjacent: fine
    history = [receipt_for("read_file", 0), receipt_for("search", 1)]
    assert check_action(spec, receipt_for("delegate", 2), history).passed


def test_arg_pattern_rule_needs_args_text():
    spec = fixture_ispec()
    receipt = receipt_for("summarize")
    # hashes alone cannot reveal the argument text
    assert check_action(spec, receipt, []).passed
    verdict = check_action(spec, receipt, [], args_text='{"cmd":"sudo rm"}')
    assert "no-shell-text" in [v.rule_id for v in verdict.violations]


def test_determinism_identical_inputs_identical_verdicts():
    spec = fixture_ispec()
    history = [receipt_for("search", i) for i in range(12)]
    receipt = receipt_for("search", 12)
    first = check_action(spec, receipt, history)
    second = check_action(spec, receipt, history)
    assert first == second


# -- reload -------------------------------------------------------------------


def test_reload_with_higher_version_changes_verdicts():
    store = SpecStore(parse_ispec(minimal_document()))
    assert check_action(store.current, receipt_for("search"), []).passed

    doc = minimal_document(version=2)
    doc["constraints"]["allowed_tools"] = []
    doc["constraints"]["forbidden_tools"] = ["search"]
    store.reload(doc)
    verdict = check_action(store.current, receipt_for("search"), [])
    assert not verdict.passed
    assert verdict.violations[0].rule_id == "forbidden-tool"


def test_reload_same_version_rejected_and_old_spec_retained():
    store = SpecStore(parse_ispec(minimal_document()))
    with pytest.raises(IspecReloadError, match="non-increasing"):
        store.reload(minimal_document())
    assert store.current.version == 1
    assert check_action(store.current, receipt_for("search"), []).passed


def test_reload_broken_document_fails_closed():
    store = SpecStore(parse_ispec(minimal_document()))
    with pytest.raises(IspecParseError):
        store.reload("{broken json")
    bad = minimal_document(version=5)
    bad["constraints"]["allowed_tools"] = ["x"]
    bad["constraints"]["forbidden_tools"] = ["x"]
    with pytest.raises(IspecValidationError):
        store.reload(bad)
    assert store.current.version == 1


def test_reload_ispec_requires_strict_increase():
    current = parse_ispec(minimal_document(version=3))
    with pytest.raises(IspecReloadError):
        reload_ispec(current, minimal_document(version=3))
    new = reload_ispec(current, minimal_document(version=4))
    assert new.version == 4
