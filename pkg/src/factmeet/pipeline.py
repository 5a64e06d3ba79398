"""End-to-end runs: wiring the four stages, plus the personalized variants.

Three personalization routes share the entry point: ``tailor_to`` and
``roleplay`` are single-call baselines over the raw transcript, while
``scope`` runs the full fact pipeline with the persona selection pass
between fact identification and scoring.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

from . import prompts
from .bank import MemoryBank
from .chunking import (
    DEFAULT_CHUNK_BUDGET,
    DEFAULT_CONTEXT_TAIL,
    TokenEstimator,
    TranscriptTurn,
    chunk_transcript,
    render_turns,
)
from .facts import identify_facts
from .gateway import CompletionRequest, Gateway
from .model import IdAllocator, Outline, ReaderProfile, RetentionPolicy, ReviewReport
from .notes import ScoredFeature, group_and_consolidate, retain, score_facts
from .outline import plan_outline
from .persona import (
    PersonaSelection,
    ReasoningTrace,
    SelectionEmptyError,
    explore_and_select,
    infer_profile,
    score_for_persona,
)
from .writing import enrich, refine, review, revise

__all__ = ["RunMode", "RunResult", "RunSettings", "dry_run_prompts", "run_general", "run_personalized"]

logger = logging.getLogger(__name__)


class RunMode(str, Enum):
    GENERAL = "general"
    TAILOR_TO = "tailor_to"
    ROLEPLAY = "roleplay"
    SCOPE = "scope"


@dataclass(frozen=True)
class RunSettings:
    policy: RetentionPolicy = field(default_factory=RetentionPolicy.default)
    verification: bool = True
    refinement: bool = True
    grouping_llm: bool = False
    max_repairs: int = 2
    chunk_budget: int = DEFAULT_CHUNK_BUDGET
    context_tail: int = DEFAULT_CONTEXT_TAIL
    estimator: TokenEstimator = field(default_factory=TokenEstimator)
    max_revision_cycles: int = 1


@dataclass
class RunResult:
    mode: RunMode
    summary: str
    unresolved: bool
    review_history: list[ReviewReport]
    bank: MemoryBank | None
    outline: Outline | None
    features: list[ScoredFeature]
    profile: ReaderProfile | None = None
    trace: ReasoningTrace | None = None
    selection: PersonaSelection | None = None

    def summary_payload(self, usage_totals: dict[str, int]) -> dict[str, Any]:
        return {
            "summary": self.summary,
            "unresolved_flag": self.unresolved,
            "review_history": [r.to_dict() for r in self.review_history],
            "usage_totals": usage_totals,
        }

    def trace_payload(self) -> dict[str, Any] | None:
        if self.trace is None or self.selection is None:
            return None
        return {**self.trace.to_dict(), **self.selection.to_dict()}


def _identify(
    gateway: Gateway, turns: Sequence[TranscriptTurn], settings: RunSettings
) -> MemoryBank:
    chunks = chunk_transcript(
        turns,
        budget=settings.chunk_budget,
        context_tail=settings.context_tail,
        estimator=settings.estimator,
    )
    facts = identify_facts(
        chunks,
        gateway,
        IdAllocator(),
        verify=settings.verification,
        max_repairs=settings.max_repairs,
    )
    bank = MemoryBank()
    bank.extend(facts)
    logger.info("identified %d facts across %d chunks (%d after merging)",
                len(facts), len(chunks), len(bank))
    return bank


def _write_summary(
    gateway: Gateway,
    outline: Outline,
    features: Sequence[ScoredFeature],
    settings: RunSettings,
    template: str = "summary_generation",
    stage_tag: str = "summary_generation",
    character_sheet: str | None = None,
) -> tuple[str, list[ReviewReport], bool]:
    draft = enrich(
        outline,
        features,
        gateway,
        policy=settings.policy,
        template=template,
        stage_tag=stage_tag,
        character_sheet=character_sheet,
    )
    first = review(draft, outline, features, gateway, settings.policy, max_repairs=settings.max_repairs)
    draft, history, unresolved = revise(
        draft,
        outline,
        features,
        first,
        gateway,
        policy=settings.policy,
        max_cycles=settings.max_revision_cycles,
        max_repairs=settings.max_repairs,
        template=template,
        stage_tag=stage_tag,
        character_sheet=character_sheet,
    )
    text = draft.text
    if settings.refinement:
        text = refine(text, gateway, settings.estimator)
    return text, history, unresolved


def run_general(
    gateway: Gateway, turns: Sequence[TranscriptTurn], settings: RunSettings | None = None
) -> RunResult:
    """The full general-audience pipeline over one transcript."""
    settings = settings or RunSettings()
    bank = _identify(gateway, turns, settings)
    features = score_facts(bank.facts(), gateway, max_repairs=settings.max_repairs)
    kept = retain(features, settings.policy)
    grouped = group_and_consolidate(
        kept,
        gateway=gateway if settings.grouping_llm else None,
        use_llm=settings.grouping_llm,
        max_repairs=settings.max_repairs,
    )
    outline = plan_outline(grouped, settings.policy, gateway, max_repairs=settings.max_repairs)
    text, history, unresolved = _write_summary(gateway, outline, grouped, settings)
    return RunResult(
        mode=RunMode.GENERAL,
        summary=text,
        unresolved=unresolved,
        review_history=history,
        bank=bank,
        outline=outline,
        features=grouped,
    )


def run_personalized(
    gateway: Gateway,
    turns: Sequence[TranscriptTurn],
    settings: RunSettings | None = None,
    profile: ReaderProfile | None = None,
    mode: RunMode = RunMode.SCOPE,
) -> RunResult:
    """Personalized summarization; the profile is inferred when absent."""
    settings = settings or RunSettings()
    if mode is RunMode.GENERAL:
        logger.info("personalized entry point invoked in general mode; profile is ignored")
        return run_general(gateway, turns, settings)
    if profile is None:
        profile = infer_profile(turns, gateway, max_repairs=settings.max_repairs)

    if mode in (RunMode.TAILOR_TO, RunMode.ROLEPLAY):
        template = "tailor_to" if mode is RunMode.TAILOR_TO else "roleplay"
        text = gateway.complete(
            CompletionRequest(
                user_prompt=prompts.render(
                    template,
                    character_sheet=profile.render(),
                    transcript=render_turns(turns),
                )
            ),
            stage_tag=template,
        )
        return RunResult(
            mode=mode,
            summary=text.strip(),
            unresolved=False,
            review_history=[],
            bank=None,
            outline=None,
            features=[],
            profile=profile,
        )

    bank = _identify(gateway, turns, settings)
    trace, selection = explore_and_select(
        profile, bank.facts(), gateway, max_repairs=settings.max_repairs
    )
    if not selection.entries:
        raise SelectionEmptyError(
            "persona selection kept no facts at or above the certainty floor"
        )
    selected = [bank.get(fact_id) for fact_id in selection.kept_ids()]
    features = score_for_persona(profile, selected, gateway, max_repairs=settings.max_repairs)
    kept = retain(features, settings.policy)
    grouped = group_and_consolidate(
        kept,
        gateway=gateway if settings.grouping_llm else None,
        use_llm=settings.grouping_llm,
        max_repairs=settings.max_repairs,
    )
    outline = plan_outline(
        grouped,
        settings.policy,
        gateway,
        max_repairs=settings.max_repairs,
        template="persona_outline",
        stage_tag="persona_outline",
    )
    text, history, unresolved = _write_summary(
        gateway,
        outline,
        grouped,
        settings,
        template="persona_summary",
        stage_tag="persona_summary",
        character_sheet=profile.render(),
    )
    return RunResult(
        mode=RunMode.SCOPE,
        summary=text,
        unresolved=unresolved,
        review_history=history,
        bank=bank,
        outline=outline,
        features=grouped,
        profile=profile,
        trace=trace,
        selection=selection,
    )


def dry_run_prompts(
    turns: Sequence[TranscriptTurn],
    settings: RunSettings | None = None,
    mode: RunMode = RunMode.GENERAL,
    profile: ReaderProfile | None = None,
) -> list[tuple[str, str]]:
    """Render every prompt a run would send, without any model call.

    Prompts for stages whose inputs depend on earlier model output keep
    those slots unrendered, so the audit surface shows exactly what is
    static and what the model fills in.
    """
    settings = settings or RunSettings()
    chunks = chunk_transcript(
        turns,
        budget=settings.chunk_budget,
        context_tail=settings.context_tail,
        estimator=settings.estimator,
    )
    rendered: list[tuple[str, str]] = []
    counter = 0

    def emit(template: str, suffix: str = "", **values: object) -> None:
        nonlocal counter
        counter += 1
        name = f"{counter:02d}_{template}{suffix}.txt"
        rendered.append((name, prompts.render(template, **values)))

    sheet = profile.render() if profile is not None else None

    # mirrors the live order: a missing profile is inferred before anything else
    if mode is not RunMode.GENERAL and profile is None:
        emit("profile_inference", transcript=render_turns(turns))

    if mode in (RunMode.TAILOR_TO, RunMode.ROLEPLAY):
        template = "tailor_to" if mode is RunMode.TAILOR_TO else "roleplay"
        values: dict[str, object] = {"transcript": render_turns(turns)}
        if sheet is not None:
            values["character_sheet"] = sheet
        emit(template, **values)
        return rendered

    for chunk in chunks:
        emit(
            "fact_extraction",
            suffix=f"_chunk{chunk.index:03d}",
            previous_chunk_context=chunk.previous_context,
            chunk=chunk.text,
        )
    if settings.verification:
        for chunk in chunks:
            emit(
                "fact_verification",
                suffix=f"_chunk{chunk.index:03d}",
                previous_chunk_context=chunk.previous_context,
                chunk=chunk.text,
            )
    if mode is RunMode.SCOPE:
        explore_values: dict[str, object] = {}
        if sheet is not None:
            explore_values["character_profile"] = sheet
        emit("persona_exploration", **explore_values)
        persona_values: dict[str, object] = {}
        if sheet is not None:
            persona_values["character_sheet"] = sheet
        emit("persona_scoring", **persona_values)
        emit(
            "persona_outline",
            anchor_min=settings.policy.anchor_min,
            keep_min=settings.policy.keep_min,
        )
        summary_values = dict(persona_values)
        summary_values["feedback_prompt"] = ""
        emit("persona_summary", **summary_values)
    else:
        emit("fact_scoring")
        emit(
            "outline_planning",
            anchor_min=settings.policy.anchor_min,
            keep_min=settings.policy.keep_min,
        )
        emit("summary_generation", feedback_prompt="")
    emit("summary_review")
    if settings.refinement:
        emit("summary_refinement")
    return rendered
