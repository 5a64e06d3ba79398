"""Persona-guided fact selection and scoring.

Personalization front-loads a metacognitive pass: before any scoring,
the model answers a fixed nine-question protocol from the target
reader's perspective (planning, assessment, controlling, evaluation)
and then selects the facts that reader would keep, each with a
certainty score.  Selections below the certainty floor are dropped at
validation.  The surviving facts are re-scored for the persona along
two axes, importance and alignment, whose rounded mean drives the usual
retention and outline tiers.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from . import prompts
from .chunking import TranscriptTurn, render_turns
from .facts import render_fact_digest
from .gateway import DEFAULT_MAX_REPAIRS, CompletionRequest, Gateway, SchemaError
from .model import Fact, FunctionLabel, ProfileOrigin, ProfileValidationError, ReaderProfile
from .notes import SCORING_BATCH_LIMIT, CountMismatchError, ScoredFeature

__all__ = [
    "CERTAINTY_FLOOR",
    "PersonaSelection",
    "Phase",
    "QuestionAnswer",
    "ReasoningTrace",
    "SelectionEmptyError",
    "SelectionEntry",
    "TraceValidationError",
    "combined_score",
    "explore_and_select",
    "infer_profile",
    "score_for_persona",
]

logger = logging.getLogger(__name__)

CERTAINTY_FLOOR = 40


class Phase(str, Enum):
    PLANNING = "planning"
    INITIAL_ASSESSMENT = "initial_assessment"
    CONTROLLING = "controlling"
    EVALUATION = "evaluation"


#: Which protocol phase each of the nine questions belongs to.
QUESTION_PHASES: dict[int, Phase] = {
    1: Phase.PLANNING,
    2: Phase.PLANNING,
    3: Phase.PLANNING,
    4: Phase.INITIAL_ASSESSMENT,
    5: Phase.INITIAL_ASSESSMENT,
    6: Phase.INITIAL_ASSESSMENT,
    7: Phase.INITIAL_ASSESSMENT,
    8: Phase.CONTROLLING,
    9: Phase.EVALUATION,
}


class TraceValidationError(ValueError):
    pass


@dataclass(frozen=True)
class QuestionAnswer:
    number: int
    phase: Phase
    text: str

    def to_dict(self) -> dict[str, Any]:
        return {"question": f"Q{self.number}", "phase": self.phase.value, "answer": self.text}


@dataclass(frozen=True)
class ReasoningTrace:
    """The nine protocol answers, in order."""

    answers: tuple[QuestionAnswer, ...]

    def __post_init__(self) -> None:
        numbers = [a.number for a in self.answers]
        if numbers != list(range(1, 10)):
            missing = sorted(set(range(1, 10)) - set(numbers))
            raise TraceValidationError(
                f"trace must answer questions 1-9 in order; missing or misordered: {missing or numbers}"
            )
        for answer in self.answers:
            if answer.phase is not QUESTION_PHASES[answer.number]:
                raise TraceValidationError(
                    f"question {answer.number} belongs to phase "
                    f"{QUESTION_PHASES[answer.number].value}, got {answer.phase.value}"
                )
            if not answer.text.strip():
                raise TraceValidationError(f"question {answer.number} has an empty answer")

    @classmethod
    def from_texts(cls, texts: Sequence[str]) -> "ReasoningTrace":
        return cls(
            answers=tuple(
                QuestionAnswer(number=i, phase=QUESTION_PHASES[i], text=text)
                for i, text in enumerate(texts, start=1)
            )
        )

    def to_dict(self) -> dict[str, Any]:
        return {"answers": [a.to_dict() for a in self.answers]}


@dataclass(frozen=True)
class SelectionEntry:
    fact_id: int
    certainty: int

    def to_dict(self) -> dict[str, int]:
        return {"fact_id": self.fact_id, "certainty": self.certainty}


@dataclass(frozen=True)
class PersonaSelection:
    """Facts kept for the persona, certainty-sorted, floor-enforced."""

    entries: tuple[SelectionEntry, ...]

    def __post_init__(self) -> None:
        for entry in self.entries:
            if entry.certainty < CERTAINTY_FLOOR:
                raise ValueError(
                    f"selection entry for fact {entry.fact_id} has certainty "
                    f"{entry.certainty} below the floor of {CERTAINTY_FLOOR}"
                )
        certainties = [e.certainty for e in self.entries]
        if certainties != sorted(certainties, reverse=True):
            raise ValueError("selection entries must be sorted by certainty, descending")

    @classmethod
    def from_raw(cls, pairs: Iterable[tuple[int, int]]) -> "PersonaSelection":
        """Normalize raw (fact_id, certainty) pairs: drop sub-floor, sort."""
        kept = []
        for fact_id, certainty in pairs:
            if certainty < CERTAINTY_FLOOR:
                logger.info(
                    "dropping fact %d from persona selection: certainty %d below %d",
                    fact_id, certainty, CERTAINTY_FLOOR,
                )
                continue
            kept.append(SelectionEntry(fact_id=fact_id, certainty=certainty))
        kept.sort(key=lambda e: -e.certainty)
        return cls(entries=tuple(kept))

    def kept_ids(self) -> list[int]:
        return [e.fact_id for e in self.entries]

    def to_dict(self) -> dict[str, Any]:
        return {"selection": [e.to_dict() for e in self.entries]}


class SelectionEmptyError(RuntimeError):
    """The persona kept nothing above the certainty floor."""


_ANSWER_MARKER = re.compile(r"^[ \t*#>-]*\((\d)\)", re.MULTILINE)


def parse_exploration_reply(text: str, facts: Sequence[Fact]) -> tuple[ReasoningTrace, PersonaSelection]:
    """Split the two-part exploration reply into trace and selection.

    Part 1 must answer all nine questions, each introduced by its
    ``(n)`` marker at a line start; part 2 is a JSON list whose fact
    texts must match provided facts verbatim.  Violations raise
    :class:`SchemaError` so the repair loop can re-prompt.
    """
    markers: dict[int, re.Match[str]] = {}
    for match in _ANSWER_MARKER.finditer(text):
        number = int(match.group(1))
        if 1 <= number <= 9 and number not in markers:
            markers[number] = match
    missing = [n for n in range(1, 10) if n not in markers]
    if missing:
        raise SchemaError(
            f"reasoning must answer all nine questions; missing markers for: "
            f"{', '.join(f'({n})' for n in missing)}"
        )
    positions = [markers[n].start() for n in range(1, 10)]
    if positions != sorted(positions):
        raise SchemaError("question answers must appear in order (1) through (9)")

    tail = text[markers[9].end() :]
    payload = None
    for match in re.finditer(r"\[", tail):
        try:
            candidate, _ = json.JSONDecoder().raw_decode(tail[match.start() :])
        except json.JSONDecodeError:
            continue
        if isinstance(candidate, list):
            payload = candidate
            json_start = markers[9].end() + match.start()
            break
    if payload is None:
        raise SchemaError("reply must end with a JSON list of selected facts")

    boundaries = positions[1:] + [json_start]
    texts = []
    for n in range(1, 10):
        start = markers[n].end()
        end = boundaries[n - 1]
        answer = text[start:end].strip()
        if not answer:
            raise SchemaError(f"question ({n}) has an empty answer")
        texts.append(answer)
    try:
        trace = ReasoningTrace.from_texts(texts)
    except TraceValidationError as err:
        raise SchemaError(str(err)) from err

    by_claim = {f.claim: f.fact_id for f in facts}
    pairs: list[tuple[int, int]] = []
    for i, item in enumerate(payload):
        if not isinstance(item, Mapping) or "fact" not in item or "certainty_score" not in item:
            raise SchemaError(f'selection item {i} must carry "fact" and "certainty_score"')
        raw_fact = item["fact"]
        claim = raw_fact.get("fact") if isinstance(raw_fact, Mapping) else raw_fact
        if not isinstance(claim, str):
            raise SchemaError(f"selection item {i} has no fact text")
        fact_id = by_claim.get(claim)
        if fact_id is None:
            raise SchemaError(
                f"selection item {i} does not match any provided fact verbatim: {claim[:80]!r}"
            )
        certainty = item["certainty_score"]
        if not isinstance(certainty, int) or not 0 <= certainty <= 100:
            raise SchemaError(f"selection item {i}: certainty_score must be an integer in [0, 100]")
        pairs.append((fact_id, certainty))
    return trace, PersonaSelection.from_raw(pairs)


def explore_and_select(
    profile: ReaderProfile,
    facts: Sequence[Fact],
    gateway: Gateway,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
) -> tuple[ReasoningTrace, PersonaSelection]:
    """Run the nine-question reasoning pass and collect the persona's picks."""
    request = CompletionRequest(
        user_prompt=prompts.render(
            "persona_exploration",
            character_profile=profile.render(),
            atomic_facts=render_fact_digest(facts),
        )
    )
    return gateway.complete_parsed(
        request,
        stage_tag="persona_exploration",
        parser=lambda text: parse_exploration_reply(text, facts),
        max_repairs=max_repairs,
    )


def _profile_validator(payload: Any) -> ReaderProfile:
    if not isinstance(payload, Mapping):
        raise SchemaError("expected a JSON profile object")
    for key in ("role", "expertise", "goals", "interests"):
        if not str(payload.get(key, "")).strip():
            raise SchemaError(f"profile field {key!r} must be a non-empty string")
    try:
        return ReaderProfile.from_record(payload, origin=ProfileOrigin.INFERRED)
    except ProfileValidationError as err:
        raise SchemaError(str(err)) from err


def infer_profile(
    turns: Sequence[TranscriptTurn],
    gateway: Gateway,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
) -> ReaderProfile:
    """Derive the most plausible reader profile from the transcript."""
    request = CompletionRequest(
        user_prompt=prompts.render("profile_inference", transcript=render_turns(turns))
    )
    return gateway.complete_json(
        request,
        stage_tag="profile_inference",
        validator=_profile_validator,
        max_repairs=max_repairs,
    )


def combined_score(importance: int, alignment: int) -> int:
    """Rounded (half-up) mean of importance and alignment, staying on the 1-10 scale."""
    return (importance + alignment + 1) // 2


def _persona_batch_validator(expected: int):
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
            row: dict[str, Any] = {}
            for key, lo, hi in (
                ("importance_score", 1, 10),
                ("persona_alignment_score", 1, 10),
                ("certainty_score", 0, 100),
            ):
                value = raw.get(key)
                if not isinstance(value, int) or not lo <= value <= hi:
                    raise SchemaError(f"{where}: {key} must be an integer in [{lo}, {hi}], got {value!r}")
                row[key] = value
            try:
                row["label"] = FunctionLabel.parse(str(raw.get("feature_type")))
            except ValueError as err:
                raise SchemaError(f"{where}: {err}") from err
            row["reasoning"] = str(raw.get("reasoning", ""))
            row["alignment_explanation"] = str(raw.get("alignment_explanation", ""))
            cleaned.append(row)
        return cleaned

    return validate


def score_for_persona(
    profile: ReaderProfile,
    facts: Sequence[Fact],
    gateway: Gateway,
    max_repairs: int = DEFAULT_MAX_REPAIRS,
) -> list[ScoredFeature]:
    """Score facts on importance and persona alignment, in batches.

    The feature's working relevance is the rounded mean of the two
    axes, which keeps the 1-10 scale so retention policies apply
    unchanged; both raw scores are preserved on the feature.
    """
    features: list[ScoredFeature] = []
    for start in range(0, len(facts), SCORING_BATCH_LIMIT):
        batch = facts[start : start + SCORING_BATCH_LIMIT]
        request = CompletionRequest(
            user_prompt=prompts.render(
                "persona_scoring",
                character_sheet=profile.render(),
                atomic_facts=render_fact_digest(batch),
            )
        )
        rows = gateway.complete_json(
            request,
            stage_tag="persona_scoring",
            validator=_persona_batch_validator(len(batch)),
            max_repairs=max_repairs,
        )
        for fact, row in zip(batch, rows):
            importance = row["importance_score"]
            alignment = row["persona_alignment_score"]
            features.append(
                ScoredFeature(
                    fact_id=fact.fact_id,
                    claim=fact.claim,
                    context=fact.context,
                    label=row["label"],
                    relevance=combined_score(importance, alignment),
                    reasoning=row["reasoning"],
                    certainty=row["certainty_score"],
                    importance=importance,
                    alignment=alignment,
                    alignment_explanation=row["alignment_explanation"],
                )
            )
    return features
