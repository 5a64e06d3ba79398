"""Core domain types for the fact-based summarization pipeline.

The unit of information everywhere downstream is the *fact*: a
self-contained claim paired with the minimal context needed to interpret
it on its own.  Everything else in this module exists to move facts
through the pipeline in a typed way: function labels, retention
policies, outline structure, reader profiles, and the review report
produced by the quality gate.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Iterable, Mapping, Protocol, Sequence

__all__ = [
    "DEFAULT_ANCHOR_MIN",
    "DEFAULT_KEEP_MIN",
    "EmptyClaimError",
    "EmptyContextError",
    "Fact",
    "FactValidationError",
    "FunctionLabel",
    "IdAllocator",
    "MissingFieldError",
    "Outline",
    "OutlinePoint",
    "OutlineSection",
    "ProfileOrigin",
    "ProfileValidationError",
    "ReaderProfile",
    "RetentionPolicy",
    "ReviewReport",
    "SECTION_TITLES",
    "SectionKind",
    "TierViolation",
    "TierViolationError",
    "fact_record",
    "sentences",
    "validate_fact",
]

DEFAULT_KEEP_MIN = 6
DEFAULT_ANCHOR_MIN = 8


class FunctionLabel(str, Enum):
    """Functional role a fact plays in the meeting.

    The values are the wire strings accepted from model output; nothing
    else parses.
    """

    DECISION = "DECISION"
    ACTION_ITEM = "ACTION"
    INSIGHT = "INSIGHT"
    CONTEXT = "CONTEXT"

    @classmethod
    def parse(cls, raw: str) -> "FunctionLabel":
        try:
            return cls(raw)
        except ValueError:
            allowed = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown function label {raw!r}; expected one of: {allowed}") from None


class FactValidationError(ValueError):
    """A raw fact record failed validation."""


class MissingFieldError(FactValidationError):
    def __init__(self, field_name: str):
        super().__init__(f"fact record is missing required field {field_name!r}")
        self.field_name = field_name


class EmptyClaimError(FactValidationError):
    def __init__(self) -> None:
        super().__init__("fact record field 'fact' is empty")
        self.field_name = "fact"


class EmptyContextError(FactValidationError):
    def __init__(self) -> None:
        super().__init__("fact record field 'context' is empty")
        self.field_name = "context"


@dataclass(frozen=True)
class Fact:
    """A statement-context pair extracted from one transcript chunk.

    ``claim`` must stand on its own; ``context`` carries just enough
    surrounding information to interpret it.  ``label``, ``relevance``
    and ``certainty`` start unassigned and are filled in by later
    stages.
    """

    fact_id: int
    claim: str
    context: str
    source_chunk: int = 0
    label: FunctionLabel | None = None
    relevance: int | None = None
    certainty: int | None = None

    def __post_init__(self) -> None:
        if not self.claim.strip():
            raise EmptyClaimError()
        if not self.context.strip():
            raise EmptyContextError()
        if self.relevance is not None and not 1 <= self.relevance <= 10:
            raise ValueError(f"relevance must be in [1, 10], got {self.relevance}")
        if self.certainty is not None and not 0 <= self.certainty <= 100:
            raise ValueError(f"certainty must be in [0, 100], got {self.certainty}")

    def with_fields(self, **changes: Any) -> "Fact":
        return replace(self, **changes)


def validate_fact(raw: Mapping[str, Any], *, fact_id: int, source_chunk: int = 0) -> Fact:
    """Turn one raw ``{"fact": ..., "context": ...}`` record into a Fact.

    Unknown keys are ignored.  Raises :class:`MissingFieldError`,
    :class:`EmptyClaimError` or :class:`EmptyContextError`.
    """
    if not isinstance(raw, Mapping):
        raise FactValidationError(f"fact record must be an object, got {type(raw).__name__}")
    for key in ("fact", "context"):
        if key not in raw:
            raise MissingFieldError(key)
        if not isinstance(raw[key], str):
            raise FactValidationError(f"fact record field {key!r} must be a string")
    return Fact(
        fact_id=fact_id,
        claim=raw["fact"].strip(),
        context=raw["context"].strip(),
        source_chunk=source_chunk,
    )


def fact_record(fact: Fact) -> dict[str, str]:
    """Canonical two-key wire form of a fact."""
    return {"fact": fact.claim, "context": fact.context}


class IdAllocator:
    """Monotone fact-id counter for one pipeline run."""

    def __init__(self, start: int = 1):
        self._next = start

    def next_id(self) -> int:
        value = self._next
        self._next += 1
        return value


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


def sentences(text: str) -> list[str]:
    """Split prose into sentences on terminal punctuation.

    Deliberately naive; it only has to be stable, not linguistically
    perfect, because it backs deterministic context merging.
    """
    parts = [p.strip() for p in _SENTENCE_SPLIT.split(text)]
    return [p for p in parts if p]


# --------------------------------------------------------------------------
# Retention policy


@dataclass(frozen=True)
class RetentionPolicy:
    """Score thresholds governing what is kept and what can anchor.

    ``keep_min`` is the minimum relevance retained after scoring;
    ``anchor_min`` is the minimum relevance for an outline anchor
    (decisions anchor regardless of score).
    """

    keep_min: int = DEFAULT_KEEP_MIN
    anchor_min: int = DEFAULT_ANCHOR_MIN
    name: str = "default"

    def __post_init__(self) -> None:
        if not 1 <= self.keep_min <= self.anchor_min <= 10:
            raise ValueError(
                f"retention policy requires 1 <= keep_min <= anchor_min <= 10, "
                f"got keep_min={self.keep_min}, anchor_min={self.anchor_min}"
            )

    @classmethod
    def default(cls) -> "RetentionPolicy":
        return cls(keep_min=6, anchor_min=8, name="default")

    @classmethod
    def low(cls) -> "RetentionPolicy":
        """Permissive profile: keeps more background, anchors sooner."""
        return cls(keep_min=3, anchor_min=6, name="low")

    @classmethod
    def high(cls) -> "RetentionPolicy":
        """Strict profile: only high-scoring material survives."""
        return cls(keep_min=8, anchor_min=10, name="high")

    @classmethod
    def from_name(cls, name: str) -> "RetentionPolicy":
        try:
            return {"default": cls.default, "low": cls.low, "high": cls.high}[name]()
        except KeyError:
            raise ValueError(f"unknown retention policy {name!r}; expected default, low or high") from None


class Scored(Protocol):
    """Anything carrying a fact id plus assigned label and relevance."""

    @property
    def fact_id(self) -> int: ...

    @property
    def label(self) -> FunctionLabel | None: ...

    @property
    def relevance(self) -> int | None: ...


def is_anchor(item: Scored, policy: RetentionPolicy) -> bool:
    """Anchor predicate: relevance at or above the anchor floor, or a decision."""
    if item.label is FunctionLabel.DECISION:
        return True
    return item.relevance is not None and item.relevance >= policy.anchor_min


def in_support_band(item: Scored, policy: RetentionPolicy) -> bool:
    rel = item.relevance
    return rel is not None and policy.keep_min <= rel < policy.anchor_min


# --------------------------------------------------------------------------
# Outline structure


class SectionKind(str, Enum):
    OVERVIEW = "overview"
    KEY_DECISIONS = "key_decisions"
    MAIN_DISCUSSION = "main_discussion"
    NEXT_STEPS = "next_steps"


SECTION_TITLES: dict[SectionKind, str] = {
    SectionKind.OVERVIEW: "Meeting Overview",
    SectionKind.KEY_DECISIONS: "Key Decisions",
    SectionKind.MAIN_DISCUSSION: "Main Discussion Points",
    SectionKind.NEXT_STEPS: "Next Steps",
}

_SECTION_ORDER = {kind: i for i, kind in enumerate(SectionKind)}


@dataclass(frozen=True)
class TierViolation:
    """One outline fact placed outside its tier, or missing from it."""

    kind: str
    message: str
    fact_id: int | None = None
    section: SectionKind | None = None

    def __str__(self) -> str:
        return self.message


class TierViolationError(ValueError):
    def __init__(self, violations: Sequence[TierViolation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class OutlinePoint:
    """One outline bullet: text plus the fact ids that anchor and support it."""

    text: str
    anchors: tuple[int, ...] = ()
    support: tuple[int, ...] = ()

    @classmethod
    def from_scored(
        cls,
        text: str,
        anchors: Iterable[Scored] = (),
        support: Iterable[Scored] = (),
        policy: RetentionPolicy | None = None,
    ) -> "OutlinePoint":
        """Build a point, rejecting facts placed outside their tier."""
        policy = policy or RetentionPolicy.default()
        violations: list[TierViolation] = []
        anchor_ids: list[int] = []
        support_ids: list[int] = []
        for item in anchors:
            if not is_anchor(item, policy):
                violations.append(
                    TierViolation(
                        kind="anchor_band",
                        message=(
                            f"fact {item.fact_id} (relevance={item.relevance}, label={item.label}) "
                            f"cannot anchor: needs relevance >= {policy.anchor_min} or a decision label"
                        ),
                        fact_id=item.fact_id,
                    )
                )
            anchor_ids.append(item.fact_id)
        for item in support:
            if not in_support_band(item, policy):
                violations.append(
                    TierViolation(
                        kind="support_band",
                        message=(
                            f"fact {item.fact_id} (relevance={item.relevance}) is outside the support "
                            f"band [{policy.keep_min}, {policy.anchor_min})"
                        ),
                        fact_id=item.fact_id,
                    )
                )
            support_ids.append(item.fact_id)
        if violations:
            raise TierViolationError(violations)
        return cls(text=text, anchors=tuple(anchor_ids), support=tuple(support_ids))

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "anchors": list(self.anchors), "support": list(self.support)}


@dataclass(frozen=True)
class OutlineSection:
    kind: SectionKind
    points: tuple[OutlinePoint, ...] = ()

    @property
    def title(self) -> str:
        return SECTION_TITLES[self.kind]

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "points": [p.to_dict() for p in self.points]}


@dataclass(frozen=True)
class Outline:
    """Ordered sections; each kind appears at most once and in canonical order."""

    sections: tuple[OutlineSection, ...]

    def __post_init__(self) -> None:
        kinds = [s.kind for s in self.sections]
        if len(set(kinds)) != len(kinds):
            raise ValueError("outline repeats a section kind")
        order = [_SECTION_ORDER[k] for k in kinds]
        if order != sorted(order):
            raise ValueError("outline sections out of canonical order")

    def points(self) -> list[OutlinePoint]:
        return [p for s in self.sections for p in s.points]

    def anchor_ids(self) -> list[int]:
        return [fid for p in self.points() for fid in p.anchors]

    def support_ids(self) -> list[int]:
        return [fid for p in self.points() for fid in p.support]

    def to_dict(self) -> dict[str, Any]:
        return {"sections": [s.to_dict() for s in self.sections]}

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "Outline":
        sections = []
        for raw_section in payload["sections"]:
            points = tuple(
                OutlinePoint(
                    text=str(p["text"]),
                    anchors=tuple(int(a) for a in p.get("anchors", [])),
                    support=tuple(int(s) for s in p.get("support", [])),
                )
                for p in raw_section.get("points", [])
            )
            sections.append(OutlineSection(kind=SectionKind(raw_section["kind"]), points=points))
        return cls(sections=tuple(sections))


# --------------------------------------------------------------------------
# Review report


@dataclass(frozen=True)
class ReviewReport:
    """Error points per review dimension plus the reviewer's commentary.

    ``confidence_score`` is advisory only; revision decisions are made
    from the four error-point counts.
    """

    outline_adherence: int
    factual_accuracy: int
    information_coverage: int
    formatting: int
    feedback: str
    reasoning_trace: str = ""
    confidence_score: int | None = None

    def __post_init__(self) -> None:
        for name in ("outline_adherence", "factual_accuracy", "information_coverage", "formatting"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"review count {name} must be a non-negative integer, got {value!r}")

    @property
    def total_error_points(self) -> int:
        return (
            self.outline_adherence
            + self.factual_accuracy
            + self.information_coverage
            + self.formatting
        )

    def to_dict(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "outline_adherence": self.outline_adherence,
            "factual_accuracy": self.factual_accuracy,
            "information_coverage": self.information_coverage,
            "formatting": self.formatting,
            "feedback": self.feedback,
            "reasoning_trace": self.reasoning_trace,
        }
        if self.confidence_score is not None:
            payload["confidence_score"] = self.confidence_score
        return payload


# --------------------------------------------------------------------------
# Reader profile


class ProfileOrigin(str, Enum):
    PROVIDED = "provided"
    INFERRED = "inferred"


class ProfileValidationError(ValueError):
    pass


@dataclass(frozen=True)
class ReaderProfile:
    """Who the summary is for.

    ``origin`` records whether the profile was supplied by the caller or
    inferred from the transcript; it is metadata and never rendered into
    prompts.
    """

    role: str
    goals: str
    expertise: str = ""
    interests: str = ""
    constraints: str | None = None
    origin: ProfileOrigin = ProfileOrigin.PROVIDED

    def __post_init__(self) -> None:
        if not self.role.strip():
            raise ProfileValidationError("reader profile requires a non-empty role")
        if not self.goals.strip():
            raise ProfileValidationError("reader profile requires non-empty goals")

    def to_record(self) -> dict[str, str]:
        record = {
            "role": self.role,
            "expertise": self.expertise,
            "goals": self.goals,
            "interests": self.interests,
        }
        if self.constraints is not None:
            record["constraints"] = self.constraints
        return record

    @classmethod
    def from_record(
        cls, raw: Mapping[str, Any], origin: ProfileOrigin = ProfileOrigin.PROVIDED
    ) -> "ReaderProfile":
        if not isinstance(raw, Mapping):
            raise ProfileValidationError("profile must be a JSON object")
        missing = [k for k in ("role", "goals") if not str(raw.get(k, "")).strip()]
        if missing:
            raise ProfileValidationError(f"profile is missing required fields: {', '.join(missing)}")
        constraints = raw.get("constraints")
        return cls(
            role=str(raw["role"]).strip(),
            goals=str(raw["goals"]).strip(),
            expertise=str(raw.get("expertise", "")).strip(),
            interests=str(raw.get("interests", "")).strip(),
            constraints=str(constraints).strip() if constraints is not None else None,
            origin=origin,
        )

    def render(self) -> str:
        """Prompt-facing rendering. Excludes origin metadata."""
        lines = [
            f"Role: {self.role}",
            f"Expertise: {self.expertise or 'not specified'}",
            f"Goals: {self.goals}",
            f"Interests: {self.interests or 'not specified'}",
        ]
        if self.constraints:
            lines.append(f"Constraints: {self.constraints}")
        return "\n".join(lines)
