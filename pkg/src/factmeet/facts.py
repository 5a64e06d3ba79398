"""Stage 1: fact identification.

Each transcript chunk is mined for statement-context pairs, then the
extracted set is verified against the same chunk.  The verifier reports
grounding problems as typed corrective actions; applying them removes
unsupported facts, regenerates flawed contexts, and back-fills missed
key information.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from . import prompts
from .chunking import TranscriptChunk
from .gateway import (
    DEFAULT_MAX_REPAIRS,
    CompletionRequest,
    Gateway,
    RepairExhaustedError,
    SchemaError,
)
from .model import Fact, FactValidationError, IdAllocator, validate_fact

__all__ = [
    "VerificationAction",
    "VerificationActionKind",
    "VerificationReport",
    "apply_verification",
    "extract_facts",
    "identify_facts",
    "render_fact_digest",
    "verify_facts",
]

logger = logging.getLogger(__name__)


def render_fact_digest(facts: Iterable[Fact]) -> str:
    """Facts as a JSON list with ids, the form prompts consume."""
    return json.dumps(
        [{"id": f.fact_id, "fact": f.claim, "context": f.context} for f in facts],
        indent=2,
        ensure_ascii=False,
    )


def _clean_fact_records(payload: Any) -> list[dict[str, str]]:
    if not isinstance(payload, list):
        raise SchemaError("expected a JSON list of fact objects")
    records = []
    for i, raw in enumerate(payload):
        try:
            fact = validate_fact(raw, fact_id=1)
        except FactValidationError as err:
            raise SchemaError(f"fact {i}: {err}") from err
        records.append({"fact": fact.claim, "context": fact.context})
    return records


def extract_facts(
    chunk: TranscriptChunk,
    gateway: Gateway,
    allocator: IdAllocator,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
) -> list[Fact]:
    """Mine one chunk for facts. Ids are allocated only after validation."""
    request = CompletionRequest(
        user_prompt=prompts.render(
            "fact_extraction",
            previous_chunk_context=chunk.previous_context,
            chunk=chunk.text,
        )
    )
    records = gateway.complete_json(
        request, stage_tag="fact_extraction", validator=_clean_fact_records, max_repairs=max_repairs
    )
    return [
        validate_fact(record, fact_id=allocator.next_id(), source_chunk=chunk.index)
        for record in records
    ]


class VerificationActionKind(str, Enum):
    REMOVE_UNSUPPORTED = "remove_unsupported"
    ADD_MISSED_KEY_INFO = "add_missed_key_info"
    REWRITE_CONTEXT = "rewrite_context"
    TRIM_CONTEXT = "trim_context"


@dataclass(frozen=True)
class VerificationAction:
    kind: VerificationActionKind
    target_fact: int | None
    detail: str

    def to_dict(self) -> dict[str, Any]:
        return {"action": self.kind.value, "target_fact": self.target_fact, "detail": self.detail}


@dataclass(frozen=True)
class VerificationReport:
    """Verifier output: hallucination severity (0 = fully grounded) plus fixes."""

    overall_score: int
    feedback: tuple[str, ...]
    summary: str
    actions: tuple[VerificationAction, ...]

    def __post_init__(self) -> None:
        if not 0 <= self.overall_score <= 100:
            raise ValueError(f"overall_score must be in [0, 100], got {self.overall_score}")

    @property
    def clean(self) -> bool:
        return not self.actions

    def to_dict(self) -> dict[str, Any]:
        return {
            "overall_score": self.overall_score,
            "feedback": list(self.feedback),
            "summary": self.summary,
            "actions": [a.to_dict() for a in self.actions],
        }


def _verification_validator(known_ids: set[int]):
    def validate(payload: Any) -> VerificationReport:
        if not isinstance(payload, Mapping):
            raise SchemaError("expected a JSON object")
        for key in ("overall_score", "feedback", "summary", "actions"):
            if key not in payload:
                raise SchemaError(f"missing key {key!r}")
        score = payload["overall_score"]
        if not isinstance(score, int) or not 0 <= score <= 100:
            raise SchemaError("overall_score must be an integer in [0, 100]")
        if not isinstance(payload["feedback"], list):
            raise SchemaError("feedback must be a list of strings")
        actions = []
        for i, raw in enumerate(payload["actions"]):
            if not isinstance(raw, Mapping):
                raise SchemaError(f"action {i} must be an object")
            try:
                kind = VerificationActionKind(raw.get("action"))
            except ValueError:
                allowed = ", ".join(k.value for k in VerificationActionKind)
                raise SchemaError(f"action {i}: unknown action {raw.get('action')!r}; expected one of {allowed}")
            target = raw.get("target_fact")
            if kind is VerificationActionKind.ADD_MISSED_KEY_INFO:
                target = None
            else:
                if not isinstance(target, int) or target not in known_ids:
                    raise SchemaError(
                        f"action {i}: target_fact {target!r} is not an extracted fact id "
                        f"(valid ids: {sorted(known_ids)})"
                    )
            actions.append(
                VerificationAction(kind=kind, target_fact=target, detail=str(raw.get("detail", "")))
            )
        return VerificationReport(
            overall_score=score,
            feedback=tuple(str(item) for item in payload["feedback"]),
            summary=str(payload["summary"]),
            actions=tuple(actions),
        )

    return validate


def verify_facts(
    chunk: TranscriptChunk,
    facts: Sequence[Fact],
    gateway: Gateway,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
) -> VerificationReport:
    """Check extracted facts against their source chunk."""
    request = CompletionRequest(
        user_prompt=prompts.render(
            "fact_verification",
            previous_chunk_context=chunk.previous_context,
            chunk=chunk.text,
            atomic_facts=render_fact_digest(facts),
        )
    )
    return gateway.complete_json(
        request,
        stage_tag="fact_verification",
        validator=_verification_validator({f.fact_id for f in facts}),
        max_repairs=max_repairs,
    )


def _single_fact_validator(payload: Any) -> dict[str, str]:
    if not isinstance(payload, Mapping):
        raise SchemaError("expected a single JSON fact object")
    try:
        fact = validate_fact(payload, fact_id=1)
    except FactValidationError as err:
        raise SchemaError(str(err)) from err
    return {"fact": fact.claim, "context": fact.context}


def _regenerate(
    chunk: TranscriptChunk,
    fact: Fact,
    detail: str,
    gateway: Gateway,
    max_repairs: int,
) -> Fact | None:
    """Re-prompt for a fixed version of one flagged fact; None when it keeps failing."""
    request = CompletionRequest(
        user_prompt=prompts.render(
            "fact_rewrite",
            chunk=chunk.text,
            fact_record=json.dumps({"fact": fact.claim, "context": fact.context}, ensure_ascii=False),
            detail=detail,
        )
    )
    try:
        record = gateway.complete_json(
            request,
            stage_tag="fact_regeneration",
            validator=_single_fact_validator,
            max_repairs=max_repairs,
        )
    except RepairExhaustedError:
        logger.warning("fact %d failed regeneration and was dropped", fact.fact_id)
        return None
    return fact.with_fields(claim=record["fact"], context=record["context"])


def apply_verification(
    chunk: TranscriptChunk,
    facts: Sequence[Fact],
    report: VerificationReport,
    gateway: Gateway,
    allocator: IdAllocator,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
) -> list[Fact]:
    """Apply the verifier's corrective actions to the extracted set.

    Removals first, then targeted rewrites (a fact that cannot be
    regenerated is dropped), then extraction of missed information.
    """
    by_id = {f.fact_id: f for f in facts}
    for action in report.actions:
        if action.kind is VerificationActionKind.REMOVE_UNSUPPORTED:
            by_id.pop(action.target_fact, None)
    for action in report.actions:
        if action.kind in (VerificationActionKind.REWRITE_CONTEXT, VerificationActionKind.TRIM_CONTEXT):
            target = by_id.get(action.target_fact)
            if target is None:
                continue  # already removed
            fixed = _regenerate(chunk, target, action.detail, gateway, max_repairs)
            if fixed is None:
                del by_id[action.target_fact]
            else:
                by_id[action.target_fact] = fixed
    result = list(by_id.values())
    for action in report.actions:
        if action.kind is VerificationActionKind.ADD_MISSED_KEY_INFO:
            request = CompletionRequest(
                user_prompt=prompts.render("fact_gap", chunk=chunk.text, detail=action.detail)
            )
            records = gateway.complete_json(
                request,
                stage_tag="fact_gap_extraction",
                validator=_clean_fact_records,
                max_repairs=max_repairs,
            )
            result.extend(
                validate_fact(record, fact_id=allocator.next_id(), source_chunk=chunk.index)
                for record in records
            )
    return result


def identify_facts(
    chunks: Sequence[TranscriptChunk],
    gateway: Gateway,
    allocator: IdAllocator,
    verify: bool = True,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
) -> list[Fact]:
    """Run extraction (and optionally verification) over all chunks, in order."""
    collected: list[Fact] = []
    for chunk in chunks:
        facts = extract_facts(chunk, gateway, allocator, max_repairs=max_repairs)
        if verify:
            report = verify_facts(chunk, facts, gateway, max_repairs=max_repairs)
            if not report.clean:
                facts = apply_verification(
                    chunk, facts, report, gateway, allocator, max_repairs=max_repairs
                )
        collected.extend(facts)
    return collected
