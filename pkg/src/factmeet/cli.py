"""Command-line entry points: summarize, personalize, evaluate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

from .chunking import TranscriptFormatError, load_transcript_file, render_turns
from .config import AppConfig, ConfigError, build_gateway, load_config, make_settings
from .evaluation import (
    PMesaDimension,
    dimension_agreement,
    evaluate_summary,
    read_labels_csv,
    sample_agreement,
)
from .gateway import Gateway, MockExhaustedError, RepairExhaustedError, TransportError
from .model import ProfileValidationError, ReaderProfile
from .outline import OutlineEmptyError
from .persona import SelectionEmptyError
from .pipeline import RunMode, RunResult, dry_run_prompts, run_general, run_personalized

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_REPAIR_EXHAUSTED = 3
EXIT_UNRESOLVED_QA = 4
EXIT_PIPELINE_ERROR = 5

_INPUT_ERRORS = (
    ConfigError,
    TranscriptFormatError,
    ProfileValidationError,
    FileNotFoundError,
    json.JSONDecodeError,
    ValueError,
)
_PIPELINE_ERRORS = (
    TransportError,
    MockExhaustedError,
    OutlineEmptyError,
    SelectionEmptyError,
)

logger = logging.getLogger(__name__)


def _write_json(path: Path, payload: Any) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def _write_artifacts(out_dir: Path, artifacts: dict[str, Any]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, payload in artifacts.items():
        _write_json(out_dir / name, payload)


def _require_file(path: Path, what: str) -> Path:
    if path.is_file():
        return path
    detail = "is not a regular file" if path.exists() else "not found"
    raise FileNotFoundError(f"{what} {detail}: {path}")


def _load_profile(path: str | None) -> ReaderProfile | None:
    if path is None:
        return None
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return ReaderProfile.from_record(raw)


def _collect_artifacts(result: RunResult, gateway: Gateway) -> dict[str, Any]:
    artifacts: dict[str, Any] = {
        "summary.json": result.summary_payload(gateway.usage_totals()),
        "usage.json": {
            "records": [r.to_dict() for r in gateway.usage_records],
            "totals": gateway.usage_totals(),
        },
    }
    if result.bank is not None:
        artifacts["bank.json"] = result.bank.snapshot()
    if result.outline is not None:
        artifacts["outline.json"] = result.outline.to_dict()
    trace = result.trace_payload()
    if trace is not None:
        artifacts["trace.json"] = trace
    return artifacts


def _run_one_meeting(
    config: AppConfig, transcript: Path, out_dir: Path, args: argparse.Namespace
) -> int:
    turns = load_transcript_file(transcript)
    settings = make_settings(
        config, policy_name=args.policy, no_verify=args.no_verify, no_refine=args.no_refine
    )

    if args.command == "personalize":
        profile = _load_profile(args.profile)
        mode = RunMode(args.mode)
    else:
        profile = None
        mode = RunMode.GENERAL

    if args.dry_run:
        prompt_dir = out_dir / "prompts"
        prompt_dir.mkdir(parents=True, exist_ok=True)
        for name, text in dry_run_prompts(turns, settings, mode=mode, profile=profile):
            (prompt_dir / name).write_text(text, encoding="utf-8")
        print(f"dry run: prompts rendered to {prompt_dir}")
        return EXIT_OK

    gateway = build_gateway(config)
    if args.command == "personalize":
        result = run_personalized(gateway, turns, settings, profile=profile, mode=mode)
    else:
        result = run_general(gateway, turns, settings)

    _write_artifacts(out_dir, _collect_artifacts(result, gateway))
    if result.unresolved:
        print(
            f"summary written to {out_dir} but review flags remain unresolved", file=sys.stderr
        )
        return EXIT_UNRESOLVED_QA
    print(f"summary written to {out_dir}")
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    transcript = Path(args.transcript)
    out_dir = Path(args.out)

    if args.batch:
        if not transcript.is_dir():
            raise TranscriptFormatError("--batch expects --transcript to be a directory")
        meetings = sorted(transcript.glob("*.json"))
        if not meetings:
            raise TranscriptFormatError(f"no *.json transcripts in {transcript}")
        workers = args.workers or config.workers
        statuses: list[int] = []
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_one_meeting, config, meeting, out_dir / meeting.stem, args)
                for meeting in meetings
            ]
            for future in futures:
                statuses.append(future.result())
        return max(statuses)

    _require_file(transcript, "transcript")
    return _run_one_meeting(config, transcript, out_dir, args)


def cmd_personalize(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    transcript = _require_file(Path(args.transcript), "transcript")
    if args.profile is not None:
        _require_file(Path(args.profile), "profile")
    return _run_one_meeting(config, transcript, Path(args.out), args)


def _load_summary_text(path: Path) -> str:
    text = path.read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError:
        return text.strip()
    if isinstance(payload, dict) and isinstance(payload.get("summary"), str):
        return payload["summary"]
    raise ValueError(f"{path} is JSON but has no 'summary' string field")


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    summary_path = Path(args.summary)
    transcript_path = Path(args.transcript)
    for path in (summary_path, transcript_path, Path(args.profile)):
        _require_file(path, "input")
    summary = _load_summary_text(summary_path)
    turns = load_transcript_file(transcript_path)
    profile = _load_profile(args.profile)
    assert profile is not None
    human = None
    if args.labels:
        human = read_labels_csv(_require_file(Path(args.labels), "labels CSV"))
    judge_history = None
    if args.judge_scores:
        judge_history = read_labels_csv(_require_file(Path(args.judge_scores), "judge scores CSV"))

    gateway = build_gateway(config)
    scores = evaluate_summary(
        summary, render_turns(turns), profile, gateway, max_repairs=config.max_repairs
    )

    report: dict[str, Any] = {
        "sample_id": args.sample_id,
        "scores": [s.to_dict() for s in scores],
        "flags": {s.dimension.value: bool(s.impact >= 1) for s in scores},
        "usage_totals": gateway.usage_totals(),
    }
    if human is not None:
        if judge_history is not None:
            judge: dict[str, dict[PMesaDimension, int]] = {
                sample: dict(dims) for sample, dims in judge_history.items()
            }
            judge.setdefault(args.sample_id, {}).update(
                {s.dimension: s.impact for s in scores}
            )
            report["agreement"] = dimension_agreement(judge, human)
        else:
            if args.sample_id not in human:
                raise ValueError(
                    f"labels CSV has no rows for sample_id {args.sample_id!r}"
                )
            report["agreement"] = sample_agreement(scores, human[args.sample_id])

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "pmesa_report.json", report)
    print(f"evaluation report written to {out_dir / 'pmesa_report.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="factmeet",
        description="Fact-based meeting summarization: general, personalized, and judged.",
    )
    parser.add_argument("--verbose", action="store_true", help="log pipeline progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="run-config JSON file")
        p.add_argument("--transcript", required=True, help="transcript JSON file")
        p.add_argument("--out", default="factmeet_out", help="artifact output directory")
        p.add_argument(
            "--policy",
            choices=["default", "low", "high"],
            default=None,
            help="retention threshold profile (overrides config)",
        )
        p.add_argument("--no-verify", action="store_true", help="skip fact verification")
        p.add_argument("--no-refine", action="store_true", help="skip summary refinement")
        p.add_argument(
            "--dry-run",
            action="store_true",
            help="render every prompt to disk without calling the model",
        )

    p_sum = sub.add_parser("summarize", help="general-audience summary of one meeting")
    add_run_flags(p_sum)
    p_sum.add_argument("--batch", action="store_true", help="treat --transcript as a directory")
    p_sum.add_argument("--workers", type=int, default=0, help="worker pool size for --batch")

    p_per = sub.add_parser("personalize", help="personalized summary for a reader profile")
    add_run_flags(p_per)
    p_per.add_argument("--profile", default=None, help="reader profile JSON (inferred when absent)")
    p_per.add_argument(
        "--mode",
        choices=[m.value for m in RunMode],
        default=RunMode.SCOPE.value,
        help="personalization route",
    )

    p_eval = sub.add_parser("evaluate", help="judge a summary on the seven reader dimensions")
    p_eval.add_argument("--config", required=True, help="run-config JSON file")
    p_eval.add_argument("--summary", required=True, help="summary artifact (JSON) or plain text file")
    p_eval.add_argument("--transcript", required=True, help="transcript JSON file")
    p_eval.add_argument("--profile", required=True, help="reader profile JSON file")
    p_eval.add_argument("--labels", default=None, help="human labels CSV (sample_id,dimension,score)")
    p_eval.add_argument(
        "--judge-scores",
        default=None,
        help="prior judge scores CSV, same schema as --labels, for corpus-level agreement",
    )
    p_eval.add_argument("--sample-id", default="sample", help="sample id of this summary")
    p_eval.add_argument("--out", default="factmeet_out", help="artifact output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "summarize": cmd_summarize,
        "personalize": cmd_personalize,
        "evaluate": cmd_evaluate,
    }
    try:
        return handlers[args.command](args)
    except RepairExhaustedError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_REPAIR_EXHAUSTED
    except _PIPELINE_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PIPELINE_ERROR
    except _INPUT_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except OSError as err:
        # anything path-shaped the guards above missed (--out colliding with
        # a file, unreadable inputs) is still the caller's argument, not a crash
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
