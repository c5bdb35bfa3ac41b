"""Answer space, sample and response value types, answer parsing."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import ConfigError, ParseFailure, RealHasNoProgress, UnknownStep

if TYPE_CHECKING:
    from .artifacts import ArtifactRecord


class Kind(str, enum.Enum):
    REAL = "real"
    FAKE = "fake"


@dataclass(frozen=True, order=False)
class AnswerLabel:
    kind: Kind
    step: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.REAL and self.step is not None:
            raise ValueError("a real label carries no step")
        if self.step is not None and self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")

    @classmethod
    def real(cls) -> "AnswerLabel":
        return cls(Kind.REAL)

    @classmethod
    def fake(cls, step: Optional[int] = None) -> "AnswerLabel":
        return cls(Kind.FAKE, step)

    @classmethod
    def parse(cls, text: str) -> "AnswerLabel":
        """Parse the canonical form ``real | fake | fake-<step>``."""
        m = _LABEL_RE.fullmatch(text.strip().lower())
        if m is None:
            raise ValueError(f"not a label: {text!r}")
        if m.group(1) == "real":
            if m.group(2) is not None:
                raise ValueError(f"not a label: {text!r}")
            return cls.real()
        return cls.fake(None if m.group(2) is None else int(m.group(2)))

    @property
    def is_real(self) -> bool:
        return self.kind is Kind.REAL

    def __str__(self) -> str:
        if self.kind is Kind.REAL:
            return "real"
        return "fake" if self.step is None else f"fake-{self.step}"


_LABEL_RE = re.compile(r"(real|fake)(?:-(\d+))?")

REAL = AnswerLabel.real()
FAKE = AnswerLabel.fake()


@dataclass(frozen=True)
class AnswerSpace:
    """Quality-graded answer space: ``{real} + {fake-s : s in step_grid}``."""

    max_step: int = 50
    step_grid: tuple[int, ...] = (10, 20, 30, 40, 50)
    quality_labels: dict[int, float] = field(
        default_factory=lambda: {10: 20.0, 20: 40.0, 30: 60.0, 40: 80.0, 50: 95.0}
    )

    def __post_init__(self):
        grid = tuple(int(s) for s in self.step_grid)
        object.__setattr__(self, "step_grid", grid)
        object.__setattr__(
            self, "quality_labels", {int(k): float(v) for k, v in self.quality_labels.items()}
        )
        if self.max_step <= 0:
            raise ConfigError("max_step must be positive")
        if not grid:
            raise ConfigError("step_grid must be non-empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("step_grid must be strictly increasing")
        if grid[0] <= 0 or grid[-1] > self.max_step:
            raise ConfigError("step_grid entries must lie in (0, max_step]")
        if set(self.quality_labels) != set(grid):
            raise ConfigError("quality_labels keys must equal step_grid")

    def __hash__(self):
        return hash((self.max_step, self.step_grid, tuple(sorted(self.quality_labels.items()))))

    def graded_labels(self) -> tuple[AnswerLabel, ...]:
        return (REAL,) + tuple(AnswerLabel.fake(s) for s in self.step_grid)

    def labels(self, graded: bool = True) -> tuple[AnswerLabel, ...]:
        """Answer classes: the graded space, or ``(real, fake)`` for the binary task."""
        return self.graded_labels() if graded else (REAL, FAKE)

    def check(self, label: AnswerLabel) -> None:
        if label.step is not None and label.step not in self.step_grid:
            raise UnknownStep(f"step {label.step} not in grid {self.step_grid}")


def progress(label: AnswerLabel, space: AnswerSpace) -> float:
    """Fraction of diffusion steps used to produce a fake label."""
    if label.is_real:
        raise RealHasNoProgress("progress is defined only for fake labels")
    if label.step is None:
        raise UnknownStep("fake label without a step has no progress value")
    space.check(label)
    return label.step / space.max_step


def is_binary_correct(answer: AnswerLabel, truth: AnswerLabel) -> bool:
    return answer.kind is truth.kind


_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.IGNORECASE | re.DOTALL)


def parse_answer(transcript: str, space: AnswerSpace) -> AnswerLabel:
    """Extract the final ``<answer>...</answer>`` section of a transcript.

    The last answer section wins. Steps outside ``space.step_grid`` are not
    recognized.
    """
    sections = _ANSWER_RE.findall(transcript)
    if not sections:
        raise ParseFailure("no <answer> section")
    token = sections[-1].strip()
    try:
        label = AnswerLabel.parse(token)
    except ValueError:
        raise ParseFailure(f"unrecognized answer token {token!r}") from None
    if label.step is not None and label.step not in space.step_grid:
        raise ParseFailure(f"step {label.step} not in grid")
    return label


def answer_transcript(label: AnswerLabel) -> str:
    return f"<answer>{label}</answer>"


@dataclass(frozen=True)
class VideoMeta:
    frame_count: int
    fps: float
    width: int
    height: int


@dataclass(frozen=True, eq=False)
class VideoSample:
    id: str
    frames: np.ndarray
    meta: VideoMeta
    truth: AnswerLabel
    pair_id: str
    artifact: Optional["ArtifactRecord"] = None  # noqa: F821 (artifacts.ArtifactRecord)
    split: Optional[str] = None

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ValueError("frames must be a (frame_count, dim) array")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        if frames.shape[0] != self.meta.frame_count:
            raise ValueError(
                f"{self.id}: {frames.shape[0]} frames but meta.frame_count={self.meta.frame_count}"
            )


class LengthBucket(str, enum.Enum):
    SHORT = "short"
    MID = "mid"
    LONG = "long"


LENGTH_BUCKETS = (LengthBucket.SHORT, LengthBucket.MID, LengthBucket.LONG)
# midpoints of [0, 320), [320, 512], (512, 768]
BUCKET_LENGTH = {LengthBucket.SHORT: 160, LengthBucket.MID: 416, LengthBucket.LONG: 640}


def bucket_for_length(length: int, l_min: int = 320, l_max: int = 512) -> LengthBucket:
    if length < l_min:
        return LengthBucket.SHORT
    if length <= l_max:
        return LengthBucket.MID
    return LengthBucket.LONG


@dataclass(frozen=True)
class Response:
    answer: AnswerLabel
    length_bucket: LengthBucket = LengthBucket.MID
    length: Optional[int] = None
    logprob: float = 0.0
    transcript: Optional[str] = None

    def __post_init__(self):
        bucket = LengthBucket(self.length_bucket)
        object.__setattr__(self, "length_bucket", bucket)
        if self.length is None:
            object.__setattr__(self, "length", BUCKET_LENGTH[bucket])
        if self.length <= 0:
            raise ValueError("length must be positive")
        if bucket_for_length(self.length) is not bucket:
            raise ValueError(f"length {self.length} outside bucket {bucket.value}")
        if self.logprob > 0:
            raise ValueError(f"logprob must be <= 0, got {self.logprob}")


@dataclass(frozen=True)
class RolloutGroup:
    input_id: str
    responses: tuple[Response, ...]
    truth: AnswerLabel
    manipulated_responses: Optional[tuple[Response, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "responses", tuple(self.responses))
        if not self.responses:
            raise ValueError("a rollout group needs at least one response")
        if self.manipulated_responses is not None:
            object.__setattr__(self, "manipulated_responses", tuple(self.manipulated_responses))
