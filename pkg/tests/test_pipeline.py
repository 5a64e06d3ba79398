"""End-to-end pipeline wiring, call accounting, and the dry-run audit."""

from __future__ import annotations

import json

import pytest

from factmeet.gateway import Gateway
from factmeet.model import ProfileOrigin, ReaderProfile, RetentionPolicy
from factmeet.persona import SelectionEmptyError
from factmeet.pipeline import (
    RunMode,
    RunResult,
    RunSettings,
    dry_run_prompts,
    run_general,
    run_personalized,
)

from helpers import CLEAN_REVIEW, CLEAN_VERIFICATION, RecordingBackend, gateway_for, make_turns, scoring_row


TURNS = make_turns(
    "the release ships on friday",
    "rollout requires a feature flag",
    "load tests ran slowly this week",
    "lunch options were discussed",
)

EXTRACTION = [
    {"fact": "the release ships on friday", "context": "Settled at the end."},
    {"fact": "rollout requires a feature flag", "context": "Ops requirement."},
    {"fact": "load tests ran slowly this week", "context": "Perf report."},
    {"fact": "lunch options were discussed", "context": "Small talk."},
]

SCORING = [
    scoring_row(9, label="DECISION"),
    scoring_row(8, label="INSIGHT"),
    scoring_row(6, label="CONTEXT"),
    scoring_row(4, label="CONTEXT"),
]

OUTLINE_REPLY = {
    "sections": [
        {"kind": "overview", "points": [{"text": "weekly delivery sync", "support": [3]}]},
        {"kind": "key_decisions", "points": [{"text": "ship friday", "anchors": [1]}]},
        {"kind": "main_discussion", "points": [{"text": "rollout mechanics", "anchors": [2]}]},
    ]
}

GENERAL_SCRIPT = [
    EXTRACTION,
    CLEAN_VERIFICATION,
    SCORING,
    OUTLINE_REPLY,
    "The team agreed to ship on friday behind a feature flag; load tests were slow.",
    CLEAN_REVIEW,
    "Ship friday behind a flag.",
]

GENERAL_STAGES = [
    "fact_extraction",
    "fact_verification",
    "fact_scoring",
    "outline_planning",
    "summary_generation",
    "quality_assurance",
    "summary_refinement",
]

PROFILE = ReaderProfile(role="CFO", goals="track spend commitments", expertise="finance")


def exploration_reply(selection):
    lines = [f"({n}) reasoning for question {n}" for n in range(1, 10)]
    return "\n".join(lines) + "\n\n" + json.dumps(selection)


SCOPE_SELECTION = [
    {"fact": "the release ships on friday", "certainty_score": 95},
    {"fact": "rollout requires a feature flag", "certainty_score": 80},
    {"fact": "load tests ran slowly this week", "certainty_score": 70},
    {"fact": "lunch options were discussed", "certainty_score": 39},
]


def persona_row(importance, alignment, label):
    return {
        "importance_score": importance,
        "persona_alignment_score": alignment,
        "certainty_score": 85,
        "feature_type": label,
        "reasoning": "persona fit",
        "alignment_explanation": "matches the goals",
    }


PERSONA_OUTLINE_REPLY = {
    "sections": [
        {"kind": "key_decisions", "points": [{"text": "the ship decision", "anchors": [1]}]},
        {"kind": "main_discussion", "points": [{"text": "rollout", "anchors": [2], "support": [3]}]},
    ]
}

SCOPE_SCRIPT = [
    EXTRACTION,
    CLEAN_VERIFICATION,
    exploration_reply(SCOPE_SELECTION),
    [persona_row(9, 9, "DECISION"), persona_row(8, 7, "INSIGHT"), persona_row(6, 7, "CONTEXT")],
    PERSONA_OUTLINE_REPLY,
    "For the CFO: the ship date is fixed and gated by a flag.",
    CLEAN_REVIEW,
    "Ship date fixed; flag gated.",
]

SCOPE_STAGES = [
    "fact_extraction",
    "fact_verification",
    "persona_exploration",
    "persona_scoring",
    "persona_outline",
    "persona_summary",
    "quality_assurance",
    "summary_refinement",
]


class TestRunGeneral:
    def test_happy_path_produces_all_artifacts(self):
        gw = gateway_for(*GENERAL_SCRIPT)
        result = run_general(gw, TURNS)
        assert result.mode is RunMode.GENERAL
        assert result.summary == "Ship friday behind a flag."
        assert result.unresolved is False
        assert len(result.review_history) == 1
        assert len(result.bank) == 4
        assert [f.fact_id for f in result.features] == [1, 2, 3]  # relevance-4 fact dropped
        assert result.outline is not None
        assert result.trace is None and result.selection is None

    def test_stage_sequence_is_exactly_the_seven_calls(self):
        gw = gateway_for(*GENERAL_SCRIPT)
        run_general(gw, TURNS)
        assert [r.stage_tag for r in gw.usage_records] == GENERAL_STAGES

    def test_no_verification_drops_one_call(self):
        script = [s for s in GENERAL_SCRIPT if s is not CLEAN_VERIFICATION]
        gw = gateway_for(*script)
        result = run_general(gw, TURNS, RunSettings(verification=False))
        assert result.summary == "Ship friday behind a flag."
        assert [r.stage_tag for r in gw.usage_records] == [
            s for s in GENERAL_STAGES if s != "fact_verification"
        ]

    def test_no_refinement_keeps_the_reviewed_draft(self):
        gw = gateway_for(*GENERAL_SCRIPT[:-1])
        result = run_general(gw, TURNS, RunSettings(refinement=False))
        assert result.summary.startswith("The team agreed to ship")
        assert [r.stage_tag for r in gw.usage_records] == GENERAL_STAGES[:-1]

    def test_failed_review_runs_one_revision_cycle(self):
        script = list(GENERAL_SCRIPT)
        script[5] = dict(CLEAN_REVIEW, factual_accuracy=4, feedback="fix the numbers")
        script.insert(6, "Rewritten prose with correct numbers.")
        script.insert(7, CLEAN_REVIEW)
        gw = gateway_for(*script)
        result = run_general(gw, TURNS)
        assert len(result.review_history) == 2
        assert result.unresolved is False
        assert gw.calls_for_stage("summary_generation") == 2
        assert gw.calls_for_stage("quality_assurance") == 2

    def test_summary_payload_shape(self):
        gw = gateway_for(*GENERAL_SCRIPT)
        result = run_general(gw, TURNS)
        payload = result.summary_payload(gw.usage_totals())
        assert set(payload) == {"summary", "unresolved_flag", "review_history", "usage_totals"}
        assert payload["usage_totals"]["calls"] == 7


class TestRunPersonalizedScope:
    def test_scope_with_provided_profile(self):
        gw = gateway_for(*SCOPE_SCRIPT)
        result = run_personalized(gw, TURNS, profile=PROFILE)
        assert result.mode is RunMode.SCOPE
        assert result.summary == "Ship date fixed; flag gated."
        assert [r.stage_tag for r in gw.usage_records] == SCOPE_STAGES
        assert result.profile is PROFILE
        assert result.trace is not None and len(result.trace.answers) == 9
        assert result.selection is not None
        assert result.selection.kept_ids() == [1, 2, 3]
        assert [f.relevance for f in result.features] == [9, 8, 7]
        assert [f.alignment for f in result.features] == [9, 7, 7]

    def test_trace_payload_merges_answers_and_selection(self):
        gw = gateway_for(*SCOPE_SCRIPT)
        result = run_personalized(gw, TURNS, profile=PROFILE)
        payload = result.trace_payload()
        assert payload is not None
        assert len(payload["answers"]) == 9
        assert payload["selection"][0] == {"fact_id": 1, "certainty": 95}

    def test_absent_profile_is_inferred_first(self):
        inferred = {
            "role": "CFO",
            "expertise": "finance",
            "goals": "track spend commitments",
            "interests": "budget dates",
        }
        gw = gateway_for(inferred, *SCOPE_SCRIPT)
        result = run_personalized(gw, TURNS, profile=None)
        assert gw.usage_records[0].stage_tag == "profile_inference"
        assert [r.stage_tag for r in gw.usage_records][1:] == SCOPE_STAGES
        assert result.profile is not None
        assert result.profile.origin is ProfileOrigin.INFERRED

    def test_selection_feeds_persona_scoring_in_certainty_order(self):
        backend = RecordingBackend(*SCOPE_SCRIPT)
        run_personalized(Gateway(backend), TURNS, profile=PROFILE)
        scoring_prompt = backend.requests[3].user_prompt
        ship = scoring_prompt.index("the release ships on friday")
        flag = scoring_prompt.index("rollout requires a feature flag")
        load = scoring_prompt.index("load tests ran slowly this week")
        assert ship < flag < load
        assert "lunch options were discussed" not in scoring_prompt

    def test_empty_selection_raises(self):
        floor_fail = [dict(item, certainty_score=10) for item in SCOPE_SELECTION]
        gw = gateway_for(EXTRACTION, CLEAN_VERIFICATION, exploration_reply(floor_fail))
        with pytest.raises(SelectionEmptyError):
            run_personalized(gw, TURNS, profile=PROFILE)

    def test_general_mode_delegates_and_ignores_profile(self):
        gw = gateway_for(*GENERAL_SCRIPT)
        result = run_personalized(gw, TURNS, profile=PROFILE, mode=RunMode.GENERAL)
        assert result.mode is RunMode.GENERAL
        assert result.profile is None
        assert [r.stage_tag for r in gw.usage_records] == GENERAL_STAGES


class TestSingleCallBaselines:
    def test_tailor_to_is_one_call_with_provided_profile(self):
        backend = RecordingBackend("A summary tailored to the CFO.")
        gw = Gateway(backend)
        result = run_personalized(gw, TURNS, profile=PROFILE, mode=RunMode.TAILOR_TO)
        assert result.summary == "A summary tailored to the CFO."
        assert result.mode is RunMode.TAILOR_TO
        assert [r.stage_tag for r in gw.usage_records] == ["tailor_to"]
        assert result.bank is None and result.outline is None
        assert result.review_history == [] and result.trace is None
        prompt = backend.prompt(0)
        assert "Role: CFO" in prompt
        assert "ALICE: the release ships on friday" in prompt

    def test_roleplay_uses_its_own_template_tag(self):
        gw = gateway_for("Speaking as the CFO, here is what I took away.")
        result = run_personalized(gw, TURNS, profile=PROFILE, mode=RunMode.ROLEPLAY)
        assert result.mode is RunMode.ROLEPLAY
        assert [r.stage_tag for r in gw.usage_records] == ["roleplay"]

    def test_baseline_without_profile_infers_first(self):
        inferred = {"role": "Lead", "expertise": "x", "goals": "g", "interests": "i"}
        gw = gateway_for(inferred, "tailored text")
        result = run_personalized(gw, TURNS, mode=RunMode.TAILOR_TO)
        assert [r.stage_tag for r in gw.usage_records] == ["profile_inference", "tailor_to"]
        assert result.profile.origin is ProfileOrigin.INFERRED


class TestDryRunPrompts:
    def test_general_names_and_order(self):
        rendered = dry_run_prompts(TURNS)
        names = [name for name, _ in rendered]
        assert names == [
            "01_fact_extraction_chunk000.txt",
            "02_fact_verification_chunk000.txt",
            "03_fact_scoring.txt",
            "04_outline_planning.txt",
            "05_summary_generation.txt",
            "06_summary_review.txt",
            "07_summary_refinement.txt",
        ]

    def test_static_slots_render_and_model_slots_stay(self):
        rendered = dict(dry_run_prompts(TURNS))
        extraction = rendered["01_fact_extraction_chunk000.txt"]
        assert "ALICE: the release ships on friday" in extraction
        assert "{chunk}" not in extraction
        scoring = rendered["03_fact_scoring.txt"]
        assert "{facts}" in scoring  # depends on model output, stays a slot
        outline = rendered["04_outline_planning.txt"]
        assert "{important_facts}" in outline
        assert "8" in outline and "6" in outline

    def test_no_verify_drops_the_verification_prompt(self):
        names = [n for n, _ in dry_run_prompts(TURNS, RunSettings(verification=False))]
        assert names == [
            "01_fact_extraction_chunk000.txt",
            "02_fact_scoring.txt",
            "03_outline_planning.txt",
            "04_summary_generation.txt",
            "05_summary_review.txt",
            "06_summary_refinement.txt",
        ]

    def test_scope_with_profile_renders_character_material(self):
        rendered = dry_run_prompts(TURNS, mode=RunMode.SCOPE, profile=PROFILE)
        names = [n for n, _ in rendered]
        assert names == [
            "01_fact_extraction_chunk000.txt",
            "02_fact_verification_chunk000.txt",
            "03_persona_exploration.txt",
            "04_persona_scoring.txt",
            "05_persona_outline.txt",
            "06_persona_summary.txt",
            "07_summary_review.txt",
            "08_summary_refinement.txt",
        ]
        by_name = dict(rendered)
        assert "Role: CFO" in by_name["03_persona_exploration.txt"]
        assert "{atomic_facts}" in by_name["03_persona_exploration.txt"]

    def test_scope_without_profile_adds_inference_prompt(self):
        # inference leads, exactly as the live run orders its calls
        names = [n for n, _ in dry_run_prompts(TURNS, mode=RunMode.SCOPE)]
        assert names[0] == "01_profile_inference.txt"
        assert names[1] == "02_fact_extraction_chunk000.txt"
        assert len(names) == 9

    def test_baseline_mode_is_two_prompts_at_most(self):
        names = [n for n, _ in dry_run_prompts(TURNS, mode=RunMode.TAILOR_TO)]
        assert names == ["01_profile_inference.txt", "02_tailor_to.txt"]
        names = [n for n, _ in dry_run_prompts(TURNS, mode=RunMode.ROLEPLAY, profile=PROFILE)]
        assert names == ["01_roleplay.txt"]
