"""Small builders shared across test modules."""

from __future__ import annotations

import json
from typing import Any

from factmeet.chunking import TranscriptTurn
from factmeet.gateway import CompletionRequest, Gateway, ScriptedMockBackend
from factmeet.model import Fact, FunctionLabel
from factmeet.notes import ScoredFeature


def make_fact(fact_id: int, claim: str, context: str = "Said during the meeting.", **kw: Any) -> Fact:
    return Fact(fact_id=fact_id, claim=claim, context=context, **kw)


def make_feature(
    fact_id: int,
    relevance: int,
    label: FunctionLabel = FunctionLabel.INSIGHT,
    claim: str | None = None,
    **kw: Any,
) -> ScoredFeature:
    kw.setdefault("context", "Raised while reviewing the plan.")
    kw.setdefault("reasoning", "scored by fixture")
    kw.setdefault("certainty", 90)
    return ScoredFeature(
        fact_id=fact_id,
        claim=claim if claim is not None else f"fixture claim number {fact_id}",
        label=label,
        relevance=relevance,
        **kw,
    )


def make_turns(*texts: str, speaker: str = "Alice") -> list[TranscriptTurn]:
    return [TranscriptTurn(speaker=speaker, text=t, ordinal=i) for i, t in enumerate(texts)]


def gateway_for(*replies: Any) -> Gateway:
    """Gateway over a positional mock script; dicts are JSON-encoded."""
    script = [r if isinstance(r, str) else json.dumps(r) for r in replies]
    return Gateway(ScriptedMockBackend(script=script))


class RecordingBackend:
    """Wraps a positional script and keeps every request for prompt assertions."""

    def __init__(self, *replies: Any):
        script = [r if isinstance(r, str) else json.dumps(r) for r in replies]
        self._inner = ScriptedMockBackend(script=script)
        self.requests: list[CompletionRequest] = []

    def complete(self, request: CompletionRequest):
        self.requests.append(request)
        return self._inner.complete(request)

    def prompt(self, index: int) -> str:
        return self.requests[index].user_prompt


CLEAN_VERIFICATION = {
    "overall_score": 95,
    "feedback": [],
    "summary": "all facts grounded",
    "actions": [],
}

CLEAN_REVIEW = {
    "outline_adherence": 0,
    "factual_accuracy": 0,
    "information_coverage": 0,
    "formatting": 0,
    "feedback": "",
    "reasoning_trace": "checked each outline point against the draft",
    "confidence_score": 93,
}


def scoring_row(
    importance: int,
    label: str = "INSIGHT",
    certainty: int = 90,
    reasoning: str = "matters to the team",
) -> dict[str, Any]:
    return {
        "importance_score": importance,
        "certainty_score": certainty,
        "feature_type": label,
        "reasoning": reasoning,
    }
