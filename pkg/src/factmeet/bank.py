"""Run-scoped fact store with near-duplicate merging.

Facts arrive chunk by chunk.  On insertion the bank compares the
incoming claim against every stored claim; at or above the merge
threshold the pair collapses into the stored fact, whose context is
extended sentence-wise and whose relevance keeps the higher of the two
scores.  Every merge is logged so the dedup behavior stays auditable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

from .model import Fact, FunctionLabel, sentences
from .similarity import claim_similarity

__all__ = ["MERGE_THRESHOLD", "MemoryBank", "MergeEvent", "merge_contexts"]

MERGE_THRESHOLD = 0.70


@dataclass(frozen=True)
class MergeEvent:
    kept: int
    absorbed: int
    similarity: float

    def to_dict(self) -> dict[str, Any]:
        return {"kept": self.kept, "absorbed": self.absorbed, "similarity": self.similarity}


def merge_contexts(kept: str, incoming: str) -> str:
    """Sentence-wise union of two contexts, first-seen order, deduplicated."""
    seen: list[str] = []
    for part in sentences(kept) + sentences(incoming):
        if part not in seen:
            seen.append(part)
    return " ".join(seen)


def _max_optional(a: int | None, b: int | None) -> int | None:
    """Max of two optional scores, treating unassigned as lowest."""
    if a is None:
        return b
    if b is None:
        return a
    return max(a, b)


class MemoryBank:
    """Insertion-ordered fact store merging claims above a similarity threshold."""

    def __init__(self, merge_threshold: float = MERGE_THRESHOLD):
        if not 0.0 < merge_threshold <= 1.0:
            raise ValueError("merge_threshold must be in (0, 1]")
        self.merge_threshold = merge_threshold
        self._facts: dict[int, Fact] = {}
        self.merge_log: list[MergeEvent] = []

    def __len__(self) -> int:
        return len(self._facts)

    def __contains__(self, fact_id: int) -> bool:
        return fact_id in self._facts

    def get(self, fact_id: int) -> Fact:
        return self._facts[fact_id]

    def facts(self) -> list[Fact]:
        """Stored facts in insertion order."""
        return list(self._facts.values())

    def insert(self, fact: Fact) -> int | None:
        """Store a fact, merging into the first stored near-duplicate.

        Returns the id of the stored fact the incoming one merged into,
        or None if it was stored as new.
        """
        if fact.fact_id in self._facts:
            raise ValueError(f"fact id {fact.fact_id} already stored")
        for stored in self._facts.values():
            score = claim_similarity(stored.claim, fact.claim)
            if score >= self.merge_threshold:
                self._facts[stored.fact_id] = stored.with_fields(
                    context=merge_contexts(stored.context, fact.context),
                    relevance=_max_optional(stored.relevance, fact.relevance),
                    certainty=_max_optional(stored.certainty, fact.certainty),
                    label=stored.label if stored.label is not None else fact.label,
                )
                self.merge_log.append(
                    MergeEvent(kept=stored.fact_id, absorbed=fact.fact_id, similarity=score)
                )
                return stored.fact_id
        self._facts[fact.fact_id] = fact
        return None

    def extend(self, facts: Iterable[Fact]) -> None:
        for fact in facts:
            self.insert(fact)

    def snapshot(self) -> dict[str, Any]:
        return {
            "merge_threshold": self.merge_threshold,
            "facts": [
                {
                    "fact_id": f.fact_id,
                    "fact": f.claim,
                    "context": f.context,
                    "source_chunk": f.source_chunk,
                    "label": f.label.value if f.label else None,
                    "relevance": f.relevance,
                    "certainty": f.certainty,
                }
                for f in self._facts.values()
            ],
            "merge_log": [e.to_dict() for e in self.merge_log],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.snapshot(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_snapshot(cls, payload: Mapping[str, Any]) -> "MemoryBank":
        bank = cls(merge_threshold=float(payload.get("merge_threshold", MERGE_THRESHOLD)))
        for raw in payload["facts"]:
            fact = Fact(
                fact_id=int(raw["fact_id"]),
                claim=raw["fact"],
                context=raw["context"],
                source_chunk=int(raw.get("source_chunk", 0)),
                label=FunctionLabel(raw["label"]) if raw.get("label") else None,
                relevance=raw.get("relevance"),
                certainty=raw.get("certainty"),
            )
            bank._facts[fact.fact_id] = fact
        bank.merge_log = [
            MergeEvent(kept=int(e["kept"]), absorbed=int(e["absorbed"]), similarity=float(e["similarity"]))
            for e in payload.get("merge_log", [])
        ]
        return bank
