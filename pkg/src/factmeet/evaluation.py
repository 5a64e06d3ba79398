"""Multi-dimensional judging of personalized summaries.

A summary is audited against the reader profile on seven dimensions.
Per dimension the judge detects concrete error instances, rates each
instance's severity on a 1-5 scale, and the dimension's impact is the
worst severity found (0 when clean).  Impacts binarize at 1 for
agreement statistics against human labels, headline metric balanced
accuracy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

from scipy import stats as _scipy_stats

from . import prompts
from .gateway import DEFAULT_MAX_REPAIRS, CompletionRequest, Gateway, SchemaError
from .model import ReaderProfile

__all__ = [
    "BINARY_IMPACT_THRESHOLD",
    "Confusion",
    "DimensionScore",
    "ErrorInstance",
    "LengthMismatchError",
    "PMesaDimension",
    "UndefinedMetricError",
    "balanced_accuracy",
    "binarize",
    "confusion",
    "dimension_agreement",
    "evaluate_summary",
    "kendall_tau",
    "read_labels_csv",
    "sample_agreement",
    "spearman_rho",
]

BINARY_IMPACT_THRESHOLD = 1
MAX_SEVERITY = 5


class PMesaDimension(str, Enum):
    FACTUALITY = "factuality"
    COMPLETENESS = "completeness"
    RELEVANCE = "relevance"
    GOAL_ALIGNMENT = "goal_alignment"
    PRIORITY_STRUCTURING = "priority_structuring"
    KNOWLEDGE_LEVEL_FIT = "knowledge_level_fit"
    CONTEXTUAL_FRAMING = "contextual_framing"


DIMENSION_TITLES: dict[PMesaDimension, str] = {
    PMesaDimension.FACTUALITY: "Factuality",
    PMesaDimension.COMPLETENESS: "Completeness",
    PMesaDimension.RELEVANCE: "Relevance",
    PMesaDimension.GOAL_ALIGNMENT: "Goal Alignment",
    PMesaDimension.PRIORITY_STRUCTURING: "Priority Structuring",
    PMesaDimension.KNOWLEDGE_LEVEL_FIT: "Knowledge-Level Fit",
    PMesaDimension.CONTEXTUAL_FRAMING: "Contextual Framing",
}

DIMENSION_CRITERIA: dict[PMesaDimension, str] = {
    PMesaDimension.FACTUALITY: (
        "Every statement in the summary must be supported by the transcript. Violations: "
        "fabricated claims, distorted numbers or dates, wrong attribution of who said or "
        "decided something, and unsupported causal links."
    ),
    PMesaDimension.COMPLETENESS: (
        "The summary must include the meeting content this reader cannot afford to miss. "
        "Violations: omitted decisions, omitted action items affecting the reader, and "
        "missing outcomes of discussions the reader tracks."
    ),
    PMesaDimension.RELEVANCE: (
        "Everything included should matter to this reader. Violations: content irrelevant "
        "to the reader's role or interests, digressions, and space spent on topics the "
        "reader already owns or presented."
    ),
    PMesaDimension.GOAL_ALIGNMENT: (
        "The summary must serve the reader's stated goals. Violations: information needs "
        "left unanswered, emphasis that works against what the reader is trying to "
        "accomplish, and framing that ignores the reader's purpose."
    ),
    PMesaDimension.PRIORITY_STRUCTURING: (
        "More important information should come first and carry more weight. Violations: "
        "critical items buried late, minor items leading, and flat ordering that hides "
        "what matters most to the reader."
    ),
    PMesaDimension.KNOWLEDGE_LEVEL_FIT: (
        "Detail and terminology must match the reader's expertise. Violations: unexplained "
        "jargon for a non-expert, condescending over-explanation for an expert, and depth "
        "mismatched to what the reader can use."
    ),
    PMesaDimension.CONTEXTUAL_FRAMING: (
        "Included facts must carry the context the reader needs to interpret them. "
        "Violations: decisions without their rationale, references the reader cannot "
        "resolve, and statements whose implications for the reader are left unclear."
    ),
}


@dataclass(frozen=True)
class ErrorInstance:
    description: str
    severity: int

    def __post_init__(self) -> None:
        if not 1 <= self.severity <= MAX_SEVERITY:
            raise ValueError(f"severity must be in [1, {MAX_SEVERITY}], got {self.severity}")

    def to_dict(self) -> dict[str, Any]:
        return {"description": self.description, "severity": self.severity}


@dataclass(frozen=True)
class DimensionScore:
    """One dimension's verdict: detected instances and their aggregate impact.

    Impact is the maximum instance severity, 0 when no instance was
    found; the invariant is enforced at construction.
    """

    dimension: PMesaDimension
    instances: tuple[ErrorInstance, ...]
    impact: int

    def __post_init__(self) -> None:
        expected = max((inst.severity for inst in self.instances), default=0)
        if self.impact != expected:
            raise ValueError(
                f"impact must equal the maximum instance severity ({expected}), got {self.impact}"
            )

    @classmethod
    def from_instances(
        cls, dimension: PMesaDimension, instances: Sequence[ErrorInstance]
    ) -> "DimensionScore":
        return cls(
            dimension=dimension,
            instances=tuple(instances),
            impact=max((inst.severity for inst in instances), default=0),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "dimension": self.dimension.value,
            "impact": self.impact,
            "instances": [inst.to_dict() for inst in self.instances],
        }


def _instances_validator(payload: Any) -> list[ErrorInstance]:
    if not isinstance(payload, Mapping) or "instances" not in payload:
        raise SchemaError('expected a JSON object with an "instances" list')
    if not isinstance(payload["instances"], list):
        raise SchemaError('"instances" must be a list')
    instances = []
    for i, raw in enumerate(payload["instances"]):
        if not isinstance(raw, Mapping):
            raise SchemaError(f"instance {i} must be an object")
        severity = raw.get("severity")
        if not isinstance(severity, int) or not 1 <= severity <= MAX_SEVERITY:
            raise SchemaError(f"instance {i}: severity must be an integer in [1, {MAX_SEVERITY}]")
        description = str(raw.get("description", "")).strip()
        if not description:
            raise SchemaError(f"instance {i}: description must be non-empty")
        instances.append(ErrorInstance(description=description, severity=severity))
    return instances


def evaluate_summary(
    summary: str,
    transcript_text: str,
    profile: ReaderProfile,
    gateway: Gateway,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
) -> list[DimensionScore]:
    """Audit a summary on all seven dimensions, in canonical order."""
    scores = []
    for dimension in PMesaDimension:
        request = CompletionRequest(
            user_prompt=prompts.render(
                "pmesa_dimension",
                dimension_name=DIMENSION_TITLES[dimension],
                dimension_criteria=DIMENSION_CRITERIA[dimension],
                reader_profile=profile.render(),
                transcript=transcript_text,
                summary=summary,
            )
        )
        instances = gateway.complete_json(
            request,
            stage_tag=f"pmesa_{dimension.value}",
            validator=_instances_validator,
            max_repairs=max_repairs,
        )
        scores.append(DimensionScore.from_instances(dimension, instances))
    return scores


def binarize(scores: Sequence[DimensionScore]) -> list[bool]:
    """Error flags: True when a dimension's impact reaches the threshold."""
    return [score.impact >= BINARY_IMPACT_THRESHOLD for score in scores]


class LengthMismatchError(ValueError):
    pass


class UndefinedMetricError(ZeroDivisionError):
    """A metric's denominator class is absent from the truth labels."""


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(predicted: Sequence[bool], truth: Sequence[bool]) -> Confusion:
    """Tally binary predictions against truth; positive means "error present"."""
    if len(predicted) != len(truth):
        raise LengthMismatchError(
            f"predicted and truth must align: {len(predicted)} vs {len(truth)} entries"
        )
    tp = fp = tn = fn = 0
    for p, t in zip(predicted, truth):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and t:
            fn += 1
        else:
            tn += 1
    return Confusion(tp=tp, fp=fp, tn=tn, fn=fn)


def balanced_accuracy(c: Confusion) -> Fraction:
    """Mean of sensitivity and specificity, exact.

    Raises :class:`UndefinedMetricError` when either truth class is
    absent, because the corresponding rate has no denominator.
    """
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("no positive truth labels: sensitivity undefined")
    if c.tn + c.fp == 0:
        raise UndefinedMetricError("no negative truth labels: specificity undefined")
    sensitivity = Fraction(c.tp, c.tp + c.fn)
    specificity = Fraction(c.tn, c.tn + c.fp)
    return (sensitivity + specificity) / 2


def spearman_rho(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation of paired scores."""
    if len(xs) != len(ys):
        raise LengthMismatchError(f"paired scores must align: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ValueError("need at least two pairs for a rank correlation")
    return float(_scipy_stats.spearmanr(xs, ys).statistic)


def kendall_tau(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Kendall tau-b rank correlation of paired scores."""
    if len(xs) != len(ys):
        raise LengthMismatchError(f"paired scores must align: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ValueError("need at least two pairs for a rank correlation")
    return float(_scipy_stats.kendalltau(xs, ys).statistic)


def read_labels_csv(path: str | Path) -> dict[str, dict[PMesaDimension, int]]:
    """Load human labels: rows of (sample_id, dimension, score), score 0-5."""
    labels: dict[str, dict[PMesaDimension, int]] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"sample_id", "dimension", "score"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"labels CSV must have columns {sorted(required)}")
        for row_number, row in enumerate(reader, start=2):
            try:
                dimension = PMesaDimension(row["dimension"].strip())
            except ValueError:
                raise ValueError(
                    f"labels CSV line {row_number}: unknown dimension {row['dimension']!r}"
                ) from None
            try:
                score = int(row["score"])
            except ValueError:
                raise ValueError(f"labels CSV line {row_number}: score must be an integer") from None
            if not 0 <= score <= MAX_SEVERITY:
                raise ValueError(
                    f"labels CSV line {row_number}: score must be in [0, {MAX_SEVERITY}]"
                )
            labels.setdefault(row["sample_id"].strip(), {})[dimension] = score
    return labels


def sample_agreement(
    scores: Sequence[DimensionScore], human: Mapping[PMesaDimension, int]
) -> dict[str, Any]:
    """Compare one judged sample against its human labels.

    Emits per-dimension flag agreement plus a confusion pooled over the
    seven dimensions; balanced accuracy is null when the human flags
    are all-positive or all-negative.
    """
    missing = [s.dimension.value for s in scores if s.dimension not in human]
    if missing:
        raise ValueError(f"human labels missing for dimensions: {', '.join(missing)}")
    per_dimension = []
    judge_flags = []
    human_flags = []
    for score in scores:
        human_score = human[score.dimension]
        judge_flag = score.impact >= BINARY_IMPACT_THRESHOLD
        human_flag = human_score >= BINARY_IMPACT_THRESHOLD
        judge_flags.append(judge_flag)
        human_flags.append(human_flag)
        per_dimension.append(
            {
                "dimension": score.dimension.value,
                "judge_impact": score.impact,
                "judge_flag": judge_flag,
                "human_score": human_score,
                "human_flag": human_flag,
                "agree": judge_flag == human_flag,
            }
        )
    pooled = confusion(judge_flags, human_flags)
    try:
        b_acc = float(balanced_accuracy(pooled))
    except UndefinedMetricError:
        b_acc = None
    return {
        "per_dimension": per_dimension,
        "confusion": pooled.to_dict(),
        "balanced_accuracy": b_acc,
    }


def dimension_agreement(
    judge: Mapping[str, Mapping[PMesaDimension, int]],
    human: Mapping[str, Mapping[PMesaDimension, int]],
) -> dict[str, Any]:
    """Per-dimension balanced accuracy of a judge across a labeled corpus.

    Only samples present on both sides enter; per dimension, samples
    missing either score are skipped.
    """
    shared = sorted(set(judge) & set(human))
    if not shared:
        raise ValueError("judge and human labels share no sample ids")
    dimensions: dict[str, Any] = {}
    for dimension in PMesaDimension:
        pred = []
        truth = []
        for sample_id in shared:
            if dimension not in judge[sample_id] or dimension not in human[sample_id]:
                continue
            pred.append(judge[sample_id][dimension] >= BINARY_IMPACT_THRESHOLD)
            truth.append(human[sample_id][dimension] >= BINARY_IMPACT_THRESHOLD)
        if not pred:
            dimensions[dimension.value] = {"samples": 0, "confusion": None, "balanced_accuracy": None}
            continue
        c = confusion(pred, truth)
        try:
            b_acc = float(balanced_accuracy(c))
        except UndefinedMetricError:
            b_acc = None
        dimensions[dimension.value] = {
            "samples": len(pred),
            "confusion": c.to_dict(),
            "balanced_accuracy": b_acc,
        }
    return {"samples": shared, "dimensions": dimensions}
