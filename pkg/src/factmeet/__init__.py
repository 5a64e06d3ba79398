"""Fact-based meeting summarization.

The package turns raw meeting transcripts into concise summaries by running
them through four stages — fact identification, note-taking, outline
organization, and summary generation — with an optional persona layer that
tailors the result to a specific reader.  A small evaluation module scores
finished summaries along seven quality dimensions and compares automated
judgments against human labels.

Most callers want :func:`factmeet.pipeline.run_general` or
:func:`factmeet.pipeline.run_personalized`; the ``factmeet`` console script
wraps both.
"""

from .bank import MemoryBank, MergeEvent
from .chunking import TranscriptChunk, TurnExceedsBudgetError, chunk_transcript
from .gateway import (
    CompletionRequest,
    Gateway,
    HttpChatBackend,
    RepairExhaustedError,
    ScriptedMockBackend,
)
from .model import (
    Fact,
    FactValidationError,
    FunctionLabel,
    Outline,
    ReaderProfile,
    RetentionPolicy,
    ReviewReport,
    SectionKind,
)
from .pipeline import RunMode, RunResult, RunSettings, run_general, run_personalized
from .similarity import claim_similarity, lcs_ratio, token_jaccard

__version__ = "0.1.0"

__all__ = [
    "CompletionRequest",
    "Fact",
    "FactValidationError",
    "FunctionLabel",
    "Gateway",
    "HttpChatBackend",
    "MemoryBank",
    "MergeEvent",
    "Outline",
    "ReaderProfile",
    "RepairExhaustedError",
    "RetentionPolicy",
    "ReviewReport",
    "RunMode",
    "RunResult",
    "RunSettings",
    "ScriptedMockBackend",
    "SectionKind",
    "TranscriptChunk",
    "TurnExceedsBudgetError",
    "chunk_transcript",
    "claim_similarity",
    "lcs_ratio",
    "run_general",
    "run_personalized",
    "token_jaccard",
    "__version__",
]
