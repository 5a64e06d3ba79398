"""Stage 3: organization.

Retained features are arranged into the canonical four-section outline.
The model proposes the structure; a mechanical audit enforces the tier
rules (who may anchor, who may support, and that every anchor-eligible
feature lands in exactly one point).  Audit failures feed the repair
loop, so a sloppy placement becomes a corrective re-prompt rather than
a silent drop.
"""

from __future__ import annotations

from typing import Any, Mapping, Sequence

from . import prompts
from .gateway import DEFAULT_MAX_REPAIRS, CompletionRequest, Gateway, SchemaError
from .model import (
    Outline,
    RetentionPolicy,
    TierViolation,
    in_support_band,
    is_anchor,
)
from .notes import ScoredFeature, render_feature_digest

__all__ = ["OutlineEmptyError", "audit_outline", "plan_outline"]


class OutlineEmptyError(RuntimeError):
    """No feature qualifies as an anchor, so no outline can be built."""


def audit_outline(
    outline: Outline,
    features: Sequence[ScoredFeature],
    policy: RetentionPolicy | None = None,
) -> list[TierViolation]:
    """Check every placement in an outline against the tier rules.

    Returns one violation per problem: unknown ids, anchors below the
    anchor bar, support outside the support band, anchor-eligible
    features left out, and anchors placed in more than one point.
    """
    policy = policy or RetentionPolicy.default()
    by_id = {f.fact_id: f for f in features}
    violations: list[TierViolation] = []
    anchor_seen: dict[int, int] = {}

    for section in outline.sections:
        for point in section.points:
            for fid in point.anchors:
                feature = by_id.get(fid)
                if feature is None:
                    violations.append(
                        TierViolation(
                            kind="unknown_id",
                            message=f"anchor id {fid} is not a known feature",
                            fact_id=fid,
                            section=section.kind,
                        )
                    )
                    continue
                anchor_seen[fid] = anchor_seen.get(fid, 0) + 1
                if not is_anchor(feature, policy):
                    violations.append(
                        TierViolation(
                            kind="anchor_band",
                            message=(
                                f"fact {fid} (relevance={feature.relevance}, label={feature.label.value}) "
                                f"cannot anchor: needs relevance >= {policy.anchor_min} or a DECISION label"
                            ),
                            fact_id=fid,
                            section=section.kind,
                        )
                    )
            for fid in point.support:
                feature = by_id.get(fid)
                if feature is None:
                    violations.append(
                        TierViolation(
                            kind="unknown_id",
                            message=f"support id {fid} is not a known feature",
                            fact_id=fid,
                            section=section.kind,
                        )
                    )
                    continue
                if not in_support_band(feature, policy):
                    violations.append(
                        TierViolation(
                            kind="support_band",
                            message=(
                                f"fact {fid} (relevance={feature.relevance}) is outside the support "
                                f"band [{policy.keep_min}, {policy.anchor_min})"
                            ),
                            fact_id=fid,
                            section=section.kind,
                        )
                    )

    for feature in features:
        if not is_anchor(feature, policy):
            continue
        count = anchor_seen.get(feature.fact_id, 0)
        if count == 0:
            violations.append(
                TierViolation(
                    kind="missing_anchor",
                    message=f"anchor-eligible fact {feature.fact_id} appears in no outline point",
                    fact_id=feature.fact_id,
                )
            )
        elif count > 1:
            violations.append(
                TierViolation(
                    kind="duplicate_anchor",
                    message=f"anchor fact {feature.fact_id} appears in {count} points; exactly one allowed",
                    fact_id=feature.fact_id,
                )
            )
    return violations


def _outline_validator(features: Sequence[ScoredFeature], policy: RetentionPolicy):
    def validate(payload: Any) -> Outline:
        if not isinstance(payload, Mapping) or "sections" not in payload:
            raise SchemaError('expected a JSON object with a "sections" list')
        try:
            outline = Outline.from_dict(payload)
        except (KeyError, TypeError, ValueError) as err:
            raise SchemaError(f"malformed outline: {err}") from err
        violations = audit_outline(outline, features, policy)
        if violations:
            raise SchemaError(
                "outline violates tier rules: " + "; ".join(str(v) for v in violations)
            )
        return outline

    return validate


def plan_outline(
    features: Sequence[ScoredFeature],
    policy: RetentionPolicy,
    gateway: Gateway,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
    template: str = "outline_planning",
    stage_tag: str = "outline_planning",
) -> Outline:
    """Ask the model for the four-section outline and audit it into shape.

    ``template`` switches between the general and the persona variant;
    both share the same output schema and audit.
    """
    if not any(is_anchor(f, policy) for f in features):
        raise OutlineEmptyError(
            f"no feature reaches relevance {policy.anchor_min} or carries a DECISION label"
        )
    placeholder = "important_features" if template == "persona_outline" else "important_facts"
    request = CompletionRequest(
        user_prompt=prompts.render(
            template,
            anchor_min=policy.anchor_min,
            keep_min=policy.keep_min,
            **{placeholder: render_feature_digest(features)},
        )
    )
    return gateway.complete_json(
        request,
        stage_tag=stage_tag,
        validator=_outline_validator(features, policy),
        max_repairs=max_repairs,
    )
