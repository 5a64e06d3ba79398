"""Fact identification: extraction, verification, corrective actions."""

from __future__ import annotations

import json

import pytest

from factmeet.chunking import chunk_transcript
from factmeet.facts import (
    VerificationAction,
    VerificationActionKind,
    VerificationReport,
    apply_verification,
    extract_facts,
    identify_facts,
    render_fact_digest,
    verify_facts,
)
from factmeet.gateway import Gateway, RepairExhaustedError
from factmeet.model import IdAllocator

from helpers import CLEAN_VERIFICATION, RecordingBackend, gateway_for, make_fact, make_turns


def one_chunk():
    return chunk_transcript(make_turns("we agreed to ship", "the budget is fixed"), budget=1000)[0]


def test_digest_is_an_id_claim_context_json_list():
    facts = [make_fact(1, "a claim", context="its context"), make_fact(2, "b claim")]
    payload = json.loads(render_fact_digest(facts))
    assert payload == [
        {"id": 1, "fact": "a claim", "context": "its context"},
        {"id": 2, "fact": "b claim", "context": "Said during the meeting."},
    ]


class TestExtractFacts:
    def test_valid_reply_allocates_sequential_ids(self):
        gw = gateway_for(
            [
                {"fact": "ship friday", "context": "Agreed near the end."},
                {"fact": "budget fixed", "context": "Finance said so."},
            ]
        )
        facts = extract_facts(one_chunk(), gw, IdAllocator())
        assert [f.fact_id for f in facts] == [1, 2]
        assert facts[0].claim == "ship friday"
        assert all(f.source_chunk == 0 for f in facts)

    def test_empty_list_is_a_legal_reply(self):
        gw = gateway_for([])
        assert extract_facts(one_chunk(), gw, IdAllocator()) == []

    def test_malformed_record_triggers_repair(self):
        backend = RecordingBackend(
            [{"fact": "no context given"}],
            [{"fact": "ok", "context": "fixed"}],
        )
        gw = Gateway(backend)
        facts = extract_facts(one_chunk(), gw, IdAllocator())
        assert len(facts) == 1
        assert "previous reply was invalid" in backend.prompt(1)
        # ids are allocated only after validation, so the repair did not burn id 1
        assert facts[0].fact_id == 1

    def test_prompt_carries_chunk_and_context(self):
        backend = RecordingBackend([])
        chunk = one_chunk()
        extract_facts(chunk, Gateway(backend), IdAllocator())
        prompt = backend.prompt(0)
        assert "ALICE: we agreed to ship" in prompt
        assert chunk.text in prompt


class TestVerifyFacts:
    def test_clean_report(self):
        gw = gateway_for(CLEAN_VERIFICATION)
        report = verify_facts(one_chunk(), [make_fact(1, "x")], gw)
        assert report.clean
        assert report.overall_score == 95
        assert report.actions == ()

    def test_unknown_action_kind_is_repaired(self):
        bad = dict(CLEAN_VERIFICATION, actions=[{"action": "delete_everything", "target_fact": 1}])
        backend = RecordingBackend(bad, CLEAN_VERIFICATION)
        report = verify_facts(one_chunk(), [make_fact(1, "x")], Gateway(backend))
        assert report.clean
        assert "unknown action" in backend.prompt(1)

    def test_removal_must_reference_extracted_id(self):
        bad = dict(
            CLEAN_VERIFICATION,
            actions=[{"action": "remove_unsupported", "target_fact": 99, "detail": "made up"}],
        )
        backend = RecordingBackend(bad, CLEAN_VERIFICATION)
        verify_facts(one_chunk(), [make_fact(1, "x")], Gateway(backend))
        assert "not an extracted fact id" in backend.prompt(1)

    def test_gap_action_needs_no_target(self):
        payload = dict(
            CLEAN_VERIFICATION,
            actions=[{"action": "add_missed_key_info", "detail": "the date was missed"}],
        )
        gw = gateway_for(payload)
        report = verify_facts(one_chunk(), [make_fact(1, "x")], gw)
        assert not report.clean
        assert report.actions[0].kind is VerificationActionKind.ADD_MISSED_KEY_INFO
        assert report.actions[0].target_fact is None

    def test_score_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            VerificationReport(overall_score=101, feedback=(), summary="", actions=())


def report_with(*actions: VerificationAction) -> VerificationReport:
    return VerificationReport(overall_score=60, feedback=("issue",), summary="s", actions=actions)


class TestApplyVerification:
    def test_removal_preserves_order_of_survivors(self):
        facts = [make_fact(i, f"claim {i}") for i in range(1, 6)]
        report = report_with(
            VerificationAction(VerificationActionKind.REMOVE_UNSUPPORTED, 3, "not in chunk")
        )
        gw = gateway_for()  # no calls expected
        result = apply_verification(one_chunk(), facts, report, gw, IdAllocator(start=6))
        assert [f.fact_id for f in result] == [1, 2, 4, 5]

    def test_rewrite_replaces_fact_in_place(self):
        facts = [make_fact(1, "one"), make_fact(2, "two")]
        report = report_with(
            VerificationAction(VerificationActionKind.REWRITE_CONTEXT, 2, "context too vague")
        )
        backend = RecordingBackend({"fact": "two", "context": "Now grounded in the chunk."})
        result = apply_verification(one_chunk(), facts, report, Gateway(backend), IdAllocator(start=3))
        assert [f.fact_id for f in result] == [1, 2]
        assert result[1].context == "Now grounded in the chunk."
        assert "context too vague" in backend.prompt(0)

    def test_unfixable_fact_is_dropped(self):
        facts = [make_fact(1, "one"), make_fact(2, "two")]
        report = report_with(
            VerificationAction(VerificationActionKind.TRIM_CONTEXT, 1, "rambles")
        )
        gw = gateway_for("nonsense", "more nonsense", "still nonsense")
        result = apply_verification(one_chunk(), facts, report, gw, IdAllocator(start=3))
        assert [f.fact_id for f in result] == [2]

    def test_gap_extraction_appends_with_fresh_ids(self):
        facts = [make_fact(1, "one")]
        report = report_with(
            VerificationAction(VerificationActionKind.ADD_MISSED_KEY_INFO, None, "missed the deadline")
        )
        gw = gateway_for([{"fact": "deadline is june", "context": "Stated twice."}])
        result = apply_verification(one_chunk(), facts, report, gw, IdAllocator(start=2))
        assert [f.fact_id for f in result] == [1, 2]
        assert result[1].claim == "deadline is june"

    def test_remove_beats_rewrite_on_same_target(self):
        facts = [make_fact(1, "one")]
        report = report_with(
            VerificationAction(VerificationActionKind.REMOVE_UNSUPPORTED, 1, "bogus"),
            VerificationAction(VerificationActionKind.REWRITE_CONTEXT, 1, "also vague"),
        )
        gw = gateway_for()  # rewriting a removed fact must not call the model
        result = apply_verification(one_chunk(), facts, report, gw, IdAllocator(start=2))
        assert result == []


class TestIdentifyFacts:
    def test_clean_verification_keeps_extraction(self):
        gw = gateway_for(
            [{"fact": "ship friday", "context": "Said at the end."}],
            CLEAN_VERIFICATION,
        )
        facts = identify_facts([one_chunk()], gw, IdAllocator())
        assert len(facts) == 1
        assert gw.usage_totals()["calls"] == 2
        assert gw.calls_for_stage("fact_verification") == 1

    def test_verify_false_skips_the_checking_call(self):
        gw = gateway_for([{"fact": "ship friday", "context": "Said at the end."}])
        facts = identify_facts([one_chunk()], gw, IdAllocator(), verify=False)
        assert len(facts) == 1
        assert gw.usage_totals()["calls"] == 1
        assert gw.calls_for_stage("fact_verification") == 0

    def test_actions_trigger_application_pass(self):
        gw = gateway_for(
            [{"fact": "one", "context": "c"}, {"fact": "two", "context": "c"}],
            dict(
                CLEAN_VERIFICATION,
                actions=[{"action": "remove_unsupported", "target_fact": 1, "detail": "unsupported"}],
            ),
        )
        facts = identify_facts([one_chunk()], gw, IdAllocator())
        assert [f.claim for f in facts] == ["two"]

    def test_ids_continue_across_chunks(self):
        chunks = chunk_transcript(
            make_turns("a" * 120, "b" * 120), budget=35, context_tail=8
        )
        assert len(chunks) == 2
        gw = gateway_for(
            [{"fact": "first chunk fact", "context": "c"}],
            CLEAN_VERIFICATION,
            [{"fact": "second chunk fact", "context": "c"}],
            CLEAN_VERIFICATION,
        )
        facts = identify_facts(chunks, gw, IdAllocator())
        assert [(f.fact_id, f.source_chunk) for f in facts] == [(1, 0), (2, 1)]
