"""Stage 4: summarization.

Generation is enrichment-based: the prompt carries the outline plus
the retained facts grouped under the outline points they landed in, and
the model writes prose from that material only.  A reviewer then awards
error points on four dimensions; over-budget reports trigger one
feedback-driven regeneration.  A final refinement pass compresses the
result under a hard token ceiling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from . import prompts
from .chunking import TokenEstimator
from .gateway import DEFAULT_MAX_REPAIRS, CompletionRequest, Gateway, SchemaError
from .model import (
    SECTION_TITLES,
    Outline,
    RetentionPolicy,
    ReviewReport,
    sentences,
)
from .notes import ScoredFeature

__all__ = [
    "MAX_REVISION_CYCLES",
    "REFINEMENT_TOKEN_LIMIT",
    "REVISION_BUDGETS",
    "SummaryDraft",
    "TOTAL_ERROR_BUDGET",
    "enrich",
    "needs_revision",
    "refine",
    "review",
    "revise",
    "truncate_to_token_limit",
]

logger = logging.getLogger(__name__)

# Error points a review may award per dimension before revision triggers.
REVISION_BUDGETS: dict[str, int] = {
    "outline_adherence": 4,
    "factual_accuracy": 3,
    "information_coverage": 2,
    "formatting": 1,
}
# Revision also triggers when the summed error points exceed this.
TOTAL_ERROR_BUDGET = 4

REFINEMENT_TOKEN_LIMIT = 250
MAX_REVISION_CYCLES = 1


@dataclass(frozen=True)
class SummaryDraft:
    """Generated prose plus the fact ids its prompt supplied, for audit."""

    text: str
    matched_ids: tuple[int, ...]
    unmatched_ids: tuple[int, ...]

    @property
    def supplied_ids(self) -> tuple[int, ...]:
        return self.matched_ids + self.unmatched_ids


def _split_matched(
    outline: Outline, features: Sequence[ScoredFeature], policy: RetentionPolicy
) -> tuple[list[ScoredFeature], list[ScoredFeature]]:
    """Partition enrichment-eligible features by outline membership."""
    eligible = [f for f in features if f.relevance >= policy.keep_min]
    referenced = set(outline.anchor_ids()) | set(outline.support_ids())
    matched = [f for f in eligible if f.fact_id in referenced]
    unmatched = [f for f in eligible if f.fact_id not in referenced]
    return matched, unmatched


def render_outline(outline: Outline) -> str:
    lines = []
    for section in outline.sections:
        lines.append(SECTION_TITLES[section.kind])
        for point in section.points:
            lines.append(f"- {point.text}")
    return "\n".join(lines)


def _render_matched(outline: Outline, by_id: Mapping[int, ScoredFeature]) -> str:
    blocks = []
    for section in outline.sections:
        for point in section.points:
            ids = [fid for fid in (*point.anchors, *point.support) if fid in by_id]
            if not ids:
                continue
            lines = [f"Point: {point.text}"]
            for fid in ids:
                f = by_id[fid]
                lines.append(f"  [{fid}] {f.claim} (context: {f.context})")
            blocks.append("\n".join(lines))
    return "\n".join(blocks) if blocks else "(none)"


def _render_unmatched(unmatched: Sequence[ScoredFeature]) -> str:
    if not unmatched:
        return "(none)"
    return "\n".join(f"[{f.fact_id}] {f.claim} (context: {f.context})" for f in unmatched)


def _render_feedback(feedback: str, reasoning: str) -> str:
    if not feedback and not reasoning:
        return ""
    block = "\nFeedback from the previous review; fix every problem listed:\n" + feedback
    if reasoning:
        block += "\nReviewer reasoning:\n" + reasoning
    return block + "\n"


def enrich(
    outline: Outline,
    features: Sequence[ScoredFeature],
    gateway: Gateway,
    policy: RetentionPolicy | None = None,
    feedback: str = "",
    feedback_reasoning: str = "",
    template: str = "summary_generation",
    stage_tag: str = "summary_generation",
    character_sheet: str | None = None,
) -> SummaryDraft:
    """Generate the summary from the outline and its matched facts.

    Only features at or above the policy floor enter the prompt; the
    draft records exactly which ids were supplied.
    """
    policy = policy or RetentionPolicy.default()
    matched, unmatched = _split_matched(outline, features, policy)
    by_id = {f.fact_id: f for f in matched}
    values: dict[str, Any] = {
        "outline": render_outline(outline),
        "matched_facts": _render_matched(outline, by_id),
        "unmatched_features": _render_unmatched(unmatched),
        "feedback_prompt": _render_feedback(feedback, feedback_reasoning),
    }
    if character_sheet is not None:
        values["character_sheet"] = character_sheet
    text = gateway.complete(
        CompletionRequest(user_prompt=prompts.render(template, **values)), stage_tag=stage_tag
    )
    return SummaryDraft(
        text=text.strip(),
        matched_ids=tuple(f.fact_id for f in matched),
        unmatched_ids=tuple(f.fact_id for f in unmatched),
    )


def _review_validator(payload: Any) -> ReviewReport:
    if not isinstance(payload, Mapping):
        raise SchemaError("expected a JSON object")
    counts = {}
    for key in REVISION_BUDGETS:
        value = payload.get(key)
        if not isinstance(value, int) or value < 0:
            raise SchemaError(f"{key} must be a non-negative integer, got {value!r}")
        counts[key] = value
    confidence = payload.get("confidence_score")
    if confidence is not None and (not isinstance(confidence, int) or not 0 <= confidence <= 100):
        raise SchemaError("confidence_score must be an integer in [0, 100]")
    return ReviewReport(
        outline_adherence=counts["outline_adherence"],
        factual_accuracy=counts["factual_accuracy"],
        information_coverage=counts["information_coverage"],
        formatting=counts["formatting"],
        feedback=str(payload.get("feedback", "")),
        reasoning_trace=str(payload.get("reasoning_trace", "")),
        confidence_score=confidence,
    )


def review(
    draft: SummaryDraft,
    outline: Outline,
    features: Sequence[ScoredFeature],
    gateway: Gateway,
    policy: RetentionPolicy | None = None,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
) -> ReviewReport:
    """Score the draft on the four review dimensions."""
    policy = policy or RetentionPolicy.default()
    matched, unmatched = _split_matched(outline, features, policy)
    by_id = {f.fact_id: f for f in matched}
    request = CompletionRequest(
        user_prompt=prompts.render(
            "summary_review",
            outline=render_outline(outline),
            matched_facts=_render_matched(outline, by_id),
            unmatched_features=_render_unmatched(unmatched),
            generated_summary=draft.text,
        )
    )
    return gateway.complete_json(
        request, stage_tag="quality_assurance", validator=_review_validator, max_repairs=max_repairs
    )


def needs_revision(report: ReviewReport) -> bool:
    """True when any dimension exceeds its budget or the total exceeds 4."""
    if any(getattr(report, key) > budget for key, budget in REVISION_BUDGETS.items()):
        return True
    return report.total_error_points > TOTAL_ERROR_BUDGET


def revise(
    draft: SummaryDraft,
    outline: Outline,
    features: Sequence[ScoredFeature],
    report: ReviewReport,
    gateway: Gateway,
    policy: RetentionPolicy | None = None,
    max_cycles: int = MAX_REVISION_CYCLES,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
    template: str = "summary_generation",
    stage_tag: str = "summary_generation",
    character_sheet: str | None = None,
) -> tuple[SummaryDraft, list[ReviewReport], bool]:
    """Run the feedback-regeneration loop.

    Returns the final draft, the full review history (starting with the
    given report), and whether the last review still demands revision.
    With ``max_cycles=0`` the input comes back unchanged.
    """
    history = [report]
    current = draft
    for _ in range(max_cycles):
        if not needs_revision(history[-1]):
            break
        current = enrich(
            outline,
            features,
            gateway,
            policy=policy,
            feedback=history[-1].feedback,
            feedback_reasoning=history[-1].reasoning_trace,
            template=template,
            stage_tag=stage_tag,
            character_sheet=character_sheet,
        )
        history.append(review(current, outline, features, gateway, policy, max_repairs=max_repairs))
    return current, history, needs_revision(history[-1])


def truncate_to_token_limit(text: str, estimator: TokenEstimator, max_tokens: int) -> str:
    """Cut text to the token limit at a sentence boundary where possible."""
    if estimator.estimate(text) <= max_tokens:
        return text
    parts = sentences(text)
    kept: list[str] = []
    for part in parts:
        candidate = " ".join(kept + [part])
        if estimator.estimate(candidate) > max_tokens:
            break
        kept.append(part)
    if kept:
        return " ".join(kept)
    # A single over-long sentence: fall back to a hard character cut.
    lo, hi = 0, len(text)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if estimator.estimate(text[:mid]) <= max_tokens:
            lo = mid
        else:
            hi = mid - 1
    return text[:lo].rstrip()


def refine(
    text: str,
    gateway: Gateway,
    estimator: TokenEstimator | None = None,
    max_tokens: int = REFINEMENT_TOKEN_LIMIT,
    stage_tag: str = "summary_refinement",
) -> str:
    """Compress the summary under the token ceiling.

    One re-prompt is allowed when the first pass comes back over the
    limit; after that the text is truncated at a sentence boundary and
    a warning is logged.
    """
    estimator = estimator or TokenEstimator()
    request = CompletionRequest(user_prompt=prompts.render("summary_refinement", combined_summary=text))
    refined = gateway.complete(request, stage_tag=stage_tag).strip()
    if estimator.estimate(refined) <= max_tokens:
        return refined
    retry = CompletionRequest(
        user_prompt=prompts.render("summary_refinement", combined_summary=refined)
        + f"\n\nYour previous attempt was about {estimator.estimate(refined)} tokens, over the "
        f"{max_tokens}-token limit. Shorten it further."
    )
    refined = gateway.complete(retry, stage_tag=stage_tag).strip()
    if estimator.estimate(refined) <= max_tokens:
        return refined
    logger.warning(
        "refined summary still over %d tokens after re-prompt; truncating at a sentence boundary",
        max_tokens,
    )
    return truncate_to_token_limit(refined, estimator, max_tokens)
