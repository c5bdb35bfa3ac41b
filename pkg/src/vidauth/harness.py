"""Benchmark-style evaluation: top-1, recall/F1 (fake positive), step error, reports."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import policy
from .core import AnswerLabel, AnswerSpace, Kind, VideoSample, answer_transcript, parse_answer, progress
from .errors import EmptySplit, IOFailure, MalformedRecord, ParseFailure
from .policy import PolicyParams

REAL_IDX, FAKE_IDX = 0, 1


@dataclass
class EvalReport:
    n: int
    top1: float
    precision: float
    recall: float
    f1: float
    # rows: truth (real, fake); columns: prediction (real, fake)
    confusion: list[list[int]]
    per_source: dict[str, float] = field(default_factory=dict)
    step_mae: Optional[float] = None
    parse_failures: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(**d)


def source_tag(sample: VideoSample) -> str:
    if sample.artifact is not None:
        return sample.artifact.kind.value
    return str(sample.truth)


def _kind_idx(label: AnswerLabel) -> int:
    return REAL_IDX if label.kind is Kind.REAL else FAKE_IDX


def summarize(
    truths: Sequence[AnswerLabel],
    preds: Sequence[Optional[AnswerLabel]],
    tags: Sequence[str],
    space: Optional[AnswerSpace] = None,
) -> EvalReport:
    """Metrics from aligned truth/prediction lists; ``None`` predictions are failures.

    A failed prediction is scored as the wrong real/fake class.
    """
    n = len(truths)
    if n == 0:
        raise EmptySplit("nothing to evaluate")
    confusion = [[0, 0], [0, 0]]
    hits = defaultdict(list)
    errors = []
    failures = 0
    for truth, pred, tag in zip(truths, preds, tags):
        t = _kind_idx(truth)
        if pred is None:
            failures += 1
            p = 1 - t
        else:
            p = _kind_idx(pred)
        confusion[t][p] += 1
        hits[tag].append(t == p)
        if (
            space is not None
            and pred is not None
            and t == p == FAKE_IDX
            and truth.step is not None
            and pred.step is not None
        ):
            errors.append(abs(progress(pred, space) - progress(truth, space)))
    tp, fn = confusion[FAKE_IDX][FAKE_IDX], confusion[FAKE_IDX][REAL_IDX]
    fp = confusion[REAL_IDX][FAKE_IDX]
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(
        n=n,
        top1=(confusion[0][0] + confusion[1][1]) / n,
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=confusion,
        per_source={tag: float(np.mean(v)) for tag, v in sorted(hits.items())},
        step_mae=float(np.mean(errors)) if errors else None,
        parse_failures=failures,
    )


def evaluate(params: PolicyParams, samples: Sequence[VideoSample], space: Optional[AnswerSpace] = None) -> EvalReport:
    """Greedy (argmax) answers of the policy on ``samples``."""
    if not samples:
        raise EmptySplit("evaluation split is empty")
    feats = np.array([policy.featurize(s) for s in samples])
    best = policy.answer_logprobs(params, feats).argmax(axis=1)
    preds = [params.classes[i] for i in best]
    return summarize([s.truth for s in samples], preds, [source_tag(s) for s in samples], space)


def greedy_transcripts(params: PolicyParams, samples: Iterable[VideoSample]) -> list[dict]:
    return [
        {
            "id": s.id,
            "truth": str(s.truth),
            "transcript": "<think>greedy</think>"
            + answer_transcript(policy.greedy_answer(params, policy.featurize(s))),
        }
        for s in samples
    ]


def score_transcripts(path, space: AnswerSpace) -> EvalReport:
    """Score a JSON-lines file of ``{"id", "truth", "transcript"}`` records."""
    truths, preds, tags = [], [], []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise IOFailure(str(exc)) from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            truth = AnswerLabel.parse(rec["truth"])
            transcript = rec["transcript"]
            rec["id"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(lineno, f"{type(exc).__name__}: {exc}") from None
        if not isinstance(transcript, str):
            raise MalformedRecord(lineno, "transcript must be a string")
        try:
            pred = parse_answer(transcript, space)
        except ParseFailure:
            pred = None
        truths.append(truth)
        preds.append(pred)
        tags.append(str(truth))
    return summarize(truths, preds, tags, space)


# --- reports -----------------------------------------------------------------------


def metric_rows(report: EvalReport) -> list[tuple[str, float]]:
    rows = [
        ("n", report.n),
        ("top1", report.top1),
        ("precision", report.precision),
        ("recall", report.recall),
        ("f1", report.f1),
        ("parse_failures", report.parse_failures),
    ]
    names = ("real", "fake")
    for t in range(2):
        for p in range(2):
            rows.append((f"confusion_{names[t]}_as_{names[p]}", report.confusion[t][p]))
    if report.step_mae is not None:
        rows.append(("step_mae", report.step_mae))
    return rows


def write_report_csv(report: EvalReport, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["section", "key", "value"])
            for key, value in metric_rows(report):
                writer.writerow(["metric", key, value])
            for tag, top1 in report.per_source.items():
                writer.writerow(["per_source", tag, top1])
    except OSError as exc:
        raise IOFailure(str(exc)) from exc


def read_log(path) -> list[dict]:
    try:
        return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    except OSError as exc:
        raise IOFailure(str(exc)) from exc


def plot_log(records: Sequence[dict], path) -> None:
    """Reward and accuracy curves from a training log, as a reproducible SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [r["step"] for r in records]
    series = [k for k in ("mean_reward", "accuracy", "p_tilde", "margin", "kl") if any(k in r for r in records)]
    with matplotlib.rc_context({"svg.hashsalt": "vidauth", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for key in series:
            ax.plot(steps, [r.get(key, np.nan) for r in records], label=key, linewidth=1)
        ax.set_xlabel("step")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise IOFailure(str(exc)) from exc
        finally:
            plt.close(fig)
