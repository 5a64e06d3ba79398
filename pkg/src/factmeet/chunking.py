"""Transcript loading and turn-aligned chunking.

Long transcripts are split greedily into chunks that fit a token
budget, never breaking inside a speaker turn.  Each chunk after the
first carries a verbatim tail of the previous chunk so the extraction
prompt sees local continuity.  Token counts come from a cheap
character-ratio estimate by default; an exact tokenizer can be plugged
in through :class:`TokenEstimator`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

__all__ = [
    "DEFAULT_CHUNK_BUDGET",
    "DEFAULT_CONTEXT_TAIL",
    "HEURISTIC_CHARS_PER_TOKEN",
    "TokenEstimator",
    "TranscriptChunk",
    "TranscriptFormatError",
    "TranscriptTurn",
    "TurnExceedsBudgetError",
    "chunk_transcript",
    "load_transcript_file",
    "load_turns",
    "render_turn",
    "render_turns",
]

DEFAULT_CHUNK_BUDGET = 24_000
DEFAULT_CONTEXT_TAIL = 512
HEURISTIC_CHARS_PER_TOKEN = 4.0


class TranscriptFormatError(ValueError):
    """Input transcript is not a list of speaker/text records."""


class TurnExceedsBudgetError(ValueError):
    """A single turn cannot fit in any chunk."""

    def __init__(self, ordinal: int, estimate: int, budget: int):
        super().__init__(
            f"turn {ordinal} alone is estimated at {estimate} tokens, "
            f"over the chunk budget of {budget}"
        )
        self.ordinal = ordinal
        self.estimate = estimate
        self.budget = budget


@dataclass(frozen=True)
class TranscriptTurn:
    speaker: str
    text: str
    ordinal: int


def load_turns(payload: Any) -> list[TranscriptTurn]:
    """Parse the wire transcript: a JSON array of {"speaker", "text"} records."""
    if not isinstance(payload, list):
        raise TranscriptFormatError("transcript must be a JSON array of turn records")
    turns = []
    for i, raw in enumerate(payload):
        if not isinstance(raw, Mapping) or "speaker" not in raw or "text" not in raw:
            raise TranscriptFormatError(f"turn {i} must be an object with 'speaker' and 'text'")
        speaker = str(raw["speaker"]).strip()
        text = str(raw["text"]).strip()
        if not speaker or not text:
            raise TranscriptFormatError(f"turn {i} has an empty speaker or text")
        turns.append(TranscriptTurn(speaker=speaker, text=text, ordinal=i))
    return turns


def load_transcript_file(path: str | Path) -> list[TranscriptTurn]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TranscriptFormatError(f"transcript file is not valid JSON: {exc}") from exc
    return load_turns(payload)


def render_turn(turn: TranscriptTurn) -> str:
    return f"{turn.speaker.upper()}: {turn.text}"


def render_turns(turns: Iterable[TranscriptTurn]) -> str:
    return "\n".join(render_turn(t) for t in turns)


class TokenEstimator:
    """Token counter: a character-ratio heuristic, or a wrapped tokenizer.

    The heuristic divides character length by ``chars_per_token`` and
    rounds up.  ``count_fn`` replaces it with an exact count (clamped to
    at least 1 for non-empty text, so budget math never sees zeros).
    """

    def __init__(
        self,
        chars_per_token: float = HEURISTIC_CHARS_PER_TOKEN,
        count_fn: Callable[[str], int] | None = None,
    ):
        if chars_per_token <= 0:
            raise ValueError("chars_per_token must be positive")
        self.chars_per_token = chars_per_token
        self.count_fn = count_fn

    def estimate(self, text: str) -> int:
        if not text:
            return 0
        if self.count_fn is not None:
            return max(1, int(self.count_fn(text)))
        return math.ceil(len(text) / self.chars_per_token)

    def tail(self, text: str, max_tokens: int) -> str:
        """Longest suffix of ``text`` estimated at most ``max_tokens``."""
        if max_tokens <= 0 or not text:
            return ""
        if self.estimate(text) <= max_tokens:
            return text
        # Longer suffixes never estimate lower, so binary search works.
        lo, hi = 0, len(text)  # suffix length in chars
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.estimate(text[len(text) - mid :]) <= max_tokens:
                lo = mid
            else:
                hi = mid - 1
        return text[len(text) - lo :] if lo else ""


@dataclass(frozen=True)
class TranscriptChunk:
    """A contiguous run of whole turns plus carried context from the prior chunk."""

    index: int
    turns: tuple[TranscriptTurn, ...]
    previous_context: str
    token_estimate: int

    @property
    def text(self) -> str:
        return render_turns(self.turns)


def chunk_transcript(
    turns: Sequence[TranscriptTurn],
    budget: int = DEFAULT_CHUNK_BUDGET,
    context_tail: int = DEFAULT_CONTEXT_TAIL,
    estimator: TokenEstimator | None = None,
) -> list[TranscriptChunk]:
    """Split turns into chunks whose rendered text fits ``budget`` tokens.

    Greedy fill: turns are appended in order until the next one would
    push the chunk over budget.  Raises :class:`TurnExceedsBudgetError`
    if any single turn is over budget on its own.
    """
    if budget <= 0:
        raise ValueError("chunk budget must be positive")
    if context_tail < 0:
        raise ValueError("context_tail must be non-negative")
    est = estimator or TokenEstimator()

    for turn in turns:
        solo = est.estimate(render_turn(turn))
        if solo > budget:
            raise TurnExceedsBudgetError(turn.ordinal, solo, budget)

    chunks: list[TranscriptChunk] = []
    pending: list[TranscriptTurn] = []
    pending_text = ""

    def close_chunk() -> None:
        nonlocal pending, pending_text
        if not pending:
            return
        previous = chunks[-1].text if chunks else ""
        chunks.append(
            TranscriptChunk(
                index=len(chunks),
                turns=tuple(pending),
                previous_context=est.tail(previous, context_tail) if previous else "",
                token_estimate=est.estimate(pending_text),
            )
        )
        pending = []
        pending_text = ""

    for turn in turns:
        candidate = f"{pending_text}\n{render_turn(turn)}" if pending_text else render_turn(turn)
        if pending and est.estimate(candidate) > budget:
            close_chunk()
            candidate = render_turn(turn)
        pending.append(turn)
        pending_text = candidate
    close_chunk()
    return chunks
