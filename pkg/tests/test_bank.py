"""Memory bank: near-duplicate merging, score propagation, snapshots."""

from __future__ import annotations

import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factmeet.bank import MERGE_THRESHOLD, MemoryBank, MergeEvent, merge_contexts
from factmeet.model import FunctionLabel
from factmeet.similarity import claim_similarity

from helpers import make_fact
from oracles import SIMILARITY_BOUNDARY_ABOVE, SIMILARITY_BOUNDARY_BELOW, similarity_oracle


def test_threshold_constant():
    assert MERGE_THRESHOLD == 0.70


def test_fresh_claims_are_stored_as_new():
    bank = MemoryBank()
    assert bank.insert(make_fact(1, "budget approved for the quarter")) is None
    assert bank.insert(make_fact(2, "migration deferred until security review")) is None
    assert len(bank) == 2
    assert [f.fact_id for f in bank.facts()] == [1, 2]
    assert bank.merge_log == []


def test_exact_duplicate_merges_at_similarity_one():
    bank = MemoryBank()
    bank.insert(make_fact(1, "ship the fix on friday", context="Sprint review."))
    kept = bank.insert(make_fact(2, "ship the fix on friday", context="Closing discussion."))
    assert kept == 1
    assert len(bank) == 1
    assert bank.merge_log == [MergeEvent(kept=1, absorbed=2, similarity=1.0)]
    assert bank.get(1).context == "Sprint review. Closing discussion."


def test_boundary_pair_below_threshold_stays_separate():
    case = SIMILARITY_BOUNDARY_BELOW
    bank = MemoryBank()
    bank.insert(make_fact(1, case["a"]))
    assert bank.insert(make_fact(2, case["b"])) is None
    assert len(bank) == 2


def test_boundary_pair_at_or_above_threshold_merges():
    case = SIMILARITY_BOUNDARY_ABOVE
    bank = MemoryBank()
    bank.insert(make_fact(1, case["a"]))
    assert bank.insert(make_fact(2, case["b"])) == 1
    assert len(bank) == 1
    event = bank.merge_log[0]
    assert event.similarity >= MERGE_THRESHOLD
    assert event.similarity == pytest.approx(case["expected"], abs=1e-9)


def test_merge_keeps_higher_relevance_and_certainty():
    bank = MemoryBank()
    bank.insert(make_fact(1, "release slips one week", relevance=5, certainty=60))
    bank.insert(make_fact(2, "release slips one week", relevance=9, certainty=40))
    merged = bank.get(1)
    assert merged.relevance == 9
    assert merged.certainty == 60


def test_unassigned_scores_are_treated_as_lowest():
    bank = MemoryBank()
    bank.insert(make_fact(1, "release slips one week", relevance=None))
    bank.insert(make_fact(2, "release slips one week", relevance=7))
    assert bank.get(1).relevance == 7
    bank2 = MemoryBank()
    bank2.insert(make_fact(1, "release slips one week", relevance=7))
    bank2.insert(make_fact(2, "release slips one week", relevance=None))
    assert bank2.get(1).relevance == 7


def test_merge_fills_missing_label_but_never_overwrites():
    bank = MemoryBank()
    bank.insert(make_fact(1, "release slips one week"))
    bank.insert(make_fact(2, "release slips one week", label=FunctionLabel.DECISION))
    assert bank.get(1).label is FunctionLabel.DECISION
    bank.insert(make_fact(3, "release slips one week", label=FunctionLabel.CONTEXT))
    assert bank.get(1).label is FunctionLabel.DECISION


def test_merge_contexts_deduplicates_sentences_first_seen_order():
    kept = "Raised in standup. Deadline is firm."
    incoming = "Deadline is firm. Client asked twice."
    assert merge_contexts(kept, incoming) == (
        "Raised in standup. Deadline is firm. Client asked twice."
    )


def test_duplicate_fact_id_is_rejected():
    bank = MemoryBank()
    bank.insert(make_fact(1, "alpha beta"))
    with pytest.raises(ValueError, match="already stored"):
        bank.insert(make_fact(1, "totally different claim"))


def test_incoming_claim_merges_into_first_match_in_insertion_order():
    bank = MemoryBank()
    bank.insert(make_fact(1, "the team will ship the fix first"))
    bank.insert(make_fact(2, "the team will ship the fix first thing"))
    # id 2 merged into 1 already, so the bank holds one fact
    assert len(bank) == 1
    kept = bank.insert(make_fact(3, "the team will ship the fix first"))
    assert kept == 1


def test_invalid_threshold_rejected():
    with pytest.raises(ValueError):
        MemoryBank(merge_threshold=0.0)
    with pytest.raises(ValueError):
        MemoryBank(merge_threshold=1.5)


claims = st.lists(
    st.text(alphabet="abcdef gh", min_size=1, max_size=30).filter(lambda s: s.strip()),
    min_size=1,
    max_size=12,
)


@settings(max_examples=60)
@given(claims=claims)
def test_surviving_claims_are_pairwise_below_threshold(claims):
    """After any insertion sequence, no two stored claims still merge."""
    bank = MemoryBank()
    for i, claim in enumerate(claims, start=1):
        bank.insert(make_fact(i, claim))
    stored = [f.claim for f in bank.facts()]
    for a, b in itertools.combinations(stored, 2):
        assert claim_similarity(a, b) < MERGE_THRESHOLD


@settings(max_examples=60)
@given(claims=claims, relevances=st.lists(st.integers(1, 10) | st.none(), min_size=12, max_size=12))
def test_merged_relevance_is_max_of_contributors(claims, relevances):
    bank = MemoryBank()
    contributors: dict[int, list[int | None]] = {}
    for i, claim in enumerate(claims, start=1):
        fact = make_fact(i, claim, relevance=relevances[i - 1])
        kept = bank.insert(fact)
        key = kept if kept is not None else i
        contributors.setdefault(key, []).append(fact.relevance)
    for fact in bank.facts():
        scores = [r for r in contributors[fact.fact_id] if r is not None]
        assert fact.relevance == (max(scores) if scores else None)


@settings(max_examples=60)
@given(claims=claims)
def test_insert_decision_matches_similarity_oracle(claims):
    """The merge/no-merge decision agrees with an independent similarity oracle."""
    bank = MemoryBank()
    for i, claim in enumerate(claims, start=1):
        expected = None
        for stored in bank.facts():
            if similarity_oracle(stored.claim, claim) >= MERGE_THRESHOLD:
                expected = stored.fact_id
                break
        assert bank.insert(make_fact(i, claim)) == expected


def test_snapshot_save_and_restore_round_trip(tmp_path):
    bank = MemoryBank()
    bank.insert(make_fact(1, "kick off the audit", relevance=8, label=FunctionLabel.ACTION_ITEM))
    bank.insert(make_fact(2, "kick off the audit", certainty=75))
    bank.insert(make_fact(3, "unrelated remark about lunch"))
    path = tmp_path / "bank.json"
    bank.save(path)

    raw = path.read_text()
    assert raw.endswith("\n")
    payload = json.loads(raw)
    assert [f["fact"] for f in payload["facts"]] == [
        "kick off the audit",
        "unrelated remark about lunch",
    ]
    assert payload["facts"][0]["label"] == "ACTION"
    assert payload["merge_log"] == [{"kept": 1, "absorbed": 2, "similarity": 1.0}]

    restored = MemoryBank.from_snapshot(payload)
    assert restored.facts() == bank.facts()
    assert restored.merge_log == bank.merge_log
    assert restored.merge_threshold == bank.merge_threshold
