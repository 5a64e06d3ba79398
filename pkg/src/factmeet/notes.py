"""Stage 2: note-taking.

Facts from the bank are scored for relevance (1-10) and labeled by
function; anything under the retention floor is discarded; surviving
near-duplicates inside a (label, relevance) cell are consolidated so
the outline planner sees each piece of information once.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Any, Iterable, Mapping, Sequence

from . import prompts
from .bank import merge_contexts
from .facts import render_fact_digest
from .gateway import DEFAULT_MAX_REPAIRS, CompletionRequest, Gateway, SchemaError
from .model import Fact, FunctionLabel, RetentionPolicy
from .similarity import claim_similarity

__all__ = [
    "CountMismatchError",
    "SCORING_BATCH_LIMIT",
    "ScoredFeature",
    "group_and_consolidate",
    "render_feature_digest",
    "retain",
    "score_facts",
]

logger = logging.getLogger(__name__)

SCORING_BATCH_LIMIT = 40


class CountMismatchError(SchemaError):
    """Scoring reply has a different number of features than input facts."""


@dataclass(frozen=True)
class ScoredFeature:
    """A fact with its assessed relevance and functional role.

    ``relevance`` is the score the retention and outline tiers operate
    on.  On the persona path it is the rounded mean of ``importance``
    and ``alignment``; on the general path it equals ``importance``.
    """

    fact_id: int
    claim: str
    context: str
    label: FunctionLabel
    relevance: int
    reasoning: str
    certainty: int
    importance: int | None = None
    alignment: int | None = None
    alignment_explanation: str | None = None
    merged_from: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 1 <= self.relevance <= 10:
            raise ValueError(f"relevance must be in [1, 10], got {self.relevance}")
        if not 0 <= self.certainty <= 100:
            raise ValueError(f"certainty must be in [0, 100], got {self.certainty}")

    def to_dict(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "fact_id": self.fact_id,
            "fact": self.claim,
            "context": self.context,
            "label": self.label.value,
            "relevance": self.relevance,
            "reasoning": self.reasoning,
            "certainty": self.certainty,
        }
        if self.alignment is not None:
            payload["importance"] = self.importance
            payload["alignment"] = self.alignment
            payload["alignment_explanation"] = self.alignment_explanation
        if self.merged_from:
            payload["merged_from"] = list(self.merged_from)
        return payload


def render_feature_digest(features: Iterable[ScoredFeature]) -> str:
    """Scored features as a JSON list with ids, for downstream prompts."""
    rows = []
    for f in features:
        row: dict[str, Any] = {
            "id": f.fact_id,
            "fact": f.claim,
            "context": f.context,
            "label": f.label.value,
            "relevance": f.relevance,
        }
        if f.alignment is not None:
            row["importance"] = f.importance
            row["alignment"] = f.alignment
        rows.append(row)
    return json.dumps(rows, indent=2, ensure_ascii=False)


def _batches(items: Sequence[Fact], limit: int) -> Iterable[Sequence[Fact]]:
    for start in range(0, len(items), limit):
        yield items[start : start + limit]


def _require_int(raw: Mapping[str, Any], key: str, lo: int, hi: int, where: str) -> int:
    value = raw.get(key)
    if not isinstance(value, int) or not lo <= value <= hi:
        raise SchemaError(f"{where}: {key} must be an integer in [{lo}, {hi}], got {value!r}")
    return value


def _scored_batch_validator(expected: int):
    def validate(payload: Any) -> list[dict[str, Any]]:
        if not isinstance(payload, list):
            raise SchemaError("expected a JSON list of scored features")
        if len(payload) != expected:
            raise CountMismatchError(
                f"expected exactly {expected} scored features (one per input fact, in input "
                f"order), got {len(payload)}"
            )
        cleaned = []
        for i, raw in enumerate(payload):
            if not isinstance(raw, Mapping):
                raise SchemaError(f"feature {i} must be an object")
            where = f"feature {i}"
            importance = _require_int(raw, "importance_score", 1, 10, where)
            certainty = _require_int(raw, "certainty_score", 0, 100, where)
            try:
                label = FunctionLabel.parse(str(raw.get("feature_type")))
            except ValueError as err:
                raise SchemaError(f"{where}: {err}") from err
            cleaned.append(
                {
                    "importance": importance,
                    "certainty": certainty,
                    "label": label,
                    "reasoning": str(raw.get("reasoning", "")),
                }
            )
        return cleaned

    return validate


def score_facts(
    facts: Sequence[Fact],
    gateway: Gateway,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
) -> list[ScoredFeature]:
    """Score and label every fact, in batches, preserving input order.

    The reply must carry exactly one feature per input fact; a count
    mismatch is repaired rather than aligned best-effort, because a
    silent misalignment would corrupt fact identity.
    """
    features: list[ScoredFeature] = []
    for batch in _batches(facts, SCORING_BATCH_LIMIT):
        request = CompletionRequest(
            user_prompt=prompts.render("fact_scoring", facts=render_fact_digest(batch))
        )
        rows = gateway.complete_json(
            request,
            stage_tag="fact_scoring",
            validator=_scored_batch_validator(len(batch)),
            max_repairs=max_repairs,
        )
        for fact, row in zip(batch, rows):
            features.append(
                ScoredFeature(
                    fact_id=fact.fact_id,
                    claim=fact.claim,
                    context=fact.context,
                    label=row["label"],
                    relevance=row["importance"],
                    reasoning=row["reasoning"],
                    certainty=row["certainty"],
                )
            )
    return features


def retain(features: Sequence[ScoredFeature], policy: RetentionPolicy) -> list[ScoredFeature]:
    """Keep features at or above the policy floor, preserving order."""
    return [f for f in features if f.relevance >= policy.keep_min]


def _consolidate_cluster(members: list[ScoredFeature], context: str | None = None) -> ScoredFeature:
    rep = members[0]
    if len(members) == 1:
        return rep
    merged_context = context
    if merged_context is None:
        merged_context = rep.context
        for other in members[1:]:
            merged_context = merge_contexts(merged_context, other.context)
    return replace(
        rep,
        context=merged_context,
        certainty=max(m.certainty for m in members),
        merged_from=tuple(m.fact_id for m in members[1:]),
    )


def _llm_partition(
    cell: list[ScoredFeature], gateway: Gateway, max_repairs: int
) -> list[list[ScoredFeature]]:
    by_id = {f.fact_id: f for f in cell}

    def validate(payload: Any) -> list[list[int]]:
        if not isinstance(payload, list) or not all(isinstance(g, list) for g in payload):
            raise SchemaError("expected a JSON list of id groups")
        seen: list[int] = []
        for group in payload:
            for fid in group:
                if not isinstance(fid, int) or fid not in by_id:
                    raise SchemaError(f"unknown fact id {fid!r}; valid ids: {sorted(by_id)}")
                seen.append(fid)
        if sorted(seen) != sorted(by_id):
            raise SchemaError("groups must partition the input ids: each id in exactly one group")
        return payload

    digest = json.dumps(
        [{"id": f.fact_id, "fact": f.claim, "context": f.context} for f in cell],
        indent=2,
        ensure_ascii=False,
    )
    request = CompletionRequest(user_prompt=prompts.render("group_partition", cell_facts=digest))
    groups = gateway.complete_json(
        request, stage_tag="fact_grouping", validator=validate, max_repairs=max_repairs
    )
    return [[by_id[fid] for fid in group] for group in groups]


def _llm_synthesize(members: list[ScoredFeature], gateway: Gateway, max_repairs: int) -> str:
    def validate(payload: Any) -> str:
        if not isinstance(payload, Mapping) or not str(payload.get("context", "")).strip():
            raise SchemaError('expected a JSON object with a non-empty "context" key')
        return str(payload["context"]).strip()

    digest = json.dumps(
        [{"fact": f.claim, "context": f.context} for f in members], indent=2, ensure_ascii=False
    )
    request = CompletionRequest(user_prompt=prompts.render("group_synthesis", group_facts=digest))
    return gateway.complete_json(
        request, stage_tag="fact_grouping", validator=validate, max_repairs=max_repairs
    )


def group_and_consolidate(
    features: Sequence[ScoredFeature],
    gateway: Gateway | None = None,
    use_llm: bool = False,
    threshold: float = 0.70,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
) -> list[ScoredFeature]:
    """Collapse near-duplicate features within each (label, relevance) cell.

    The default route is deterministic: greedy clustering on claim
    similarity, contexts merged sentence-wise.  With ``use_llm`` the
    model proposes the grouping and synthesizes merged contexts instead.
    Either way the consolidated feature keeps the first member's id and
    the cell's relevance, and input order is preserved (clusters sit at
    their first member's position), so overlap-free input comes back
    unchanged.
    """
    if use_llm and gateway is None:
        raise ValueError("use_llm grouping requires a gateway")

    if use_llm:
        assert gateway is not None
        cells: dict[tuple[FunctionLabel, int], list[ScoredFeature]] = {}
        for f in features:
            cells.setdefault((f.label, f.relevance), []).append(f)
        consolidated: dict[int, ScoredFeature] = {}
        for cell in cells.values():
            groups = [[f] for f in cell] if len(cell) == 1 else _llm_partition(cell, gateway, max_repairs)
            for members in groups:
                if len(members) > 1:
                    context = _llm_synthesize(members, gateway, max_repairs)
                    consolidated[members[0].fact_id] = _consolidate_cluster(members, context)
                else:
                    consolidated[members[0].fact_id] = members[0]
        return [consolidated[f.fact_id] for f in features if f.fact_id in consolidated]

    clusters: list[list[ScoredFeature]] = []
    for f in features:
        for cluster in clusters:
            head = cluster[0]
            if (head.label, head.relevance) != (f.label, f.relevance):
                continue
            if claim_similarity(head.claim, f.claim) >= threshold:
                cluster.append(f)
                break
        else:
            clusters.append([f])
    return [_consolidate_cluster(cluster) for cluster in clusters]
