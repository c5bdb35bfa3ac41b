"""Temporal artifact injection: segment repetition and segment reversal."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .core import FAKE, AnswerLabel, VideoSample
from .errors import ConfigError, InvalidWindow, TooShort

MIN_FRAMES = 8


class ArtifactKind(str, enum.Enum):
    REPEAT = "repeat"
    REVERSE = "reverse"


@dataclass(frozen=True)
class ArtifactRecord:
    kind: ArtifactKind
    window_start: int
    window_len: int
    source_truth: AnswerLabel

    def __post_init__(self):
        object.__setattr__(self, "kind", ArtifactKind(self.kind))

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "window_start": self.window_start,
            "window_len": self.window_len,
            "source_truth": str(self.source_truth),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ArtifactRecord":
        return cls(
            ArtifactKind(d["kind"]),
            int(d["window_start"]),
            int(d["window_len"]),
            AnswerLabel.parse(d["source_truth"]),
        )


@dataclass(frozen=True)
class ArtifactConfig:
    p_repeat: float = 0.5
    center_mean_frac: float = 0.5
    center_std_frac: float = 0.25
    len_min_frac: float = 0.125
    len_max_frac: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.p_repeat <= 1.0:
            raise ConfigError("p_repeat must lie in [0, 1]")
        if not 0.0 < self.len_min_frac <= self.len_max_frac < 0.5:
            raise ConfigError("need 0 < len_min_frac <= len_max_frac < 0.5")
        if self.center_std_frac < 0:
            raise ConfigError("center_std_frac must be non-negative")


class Window(NamedTuple):
    start: int
    length: int


def draw_center(frame_count: int, cfg: ArtifactConfig, rng: np.random.Generator) -> float:
    return rng.normal(cfg.center_mean_frac * frame_count, cfg.center_std_frac * frame_count)


def sample_window(
    frame_count: int,
    cfg: ArtifactConfig,
    rng: np.random.Generator,
    repeat: bool = False,
) -> Window:
    """Draw a window length uniformly, then place its center by a Gaussian.

    Out-of-range placements are clamped. With ``repeat=True`` the window is
    clamped so that its overwritten copy also fits.
    """
    if frame_count < MIN_FRAMES:
        raise TooShort(f"need at least {MIN_FRAMES} frames, got {frame_count}")
    lo = max(2, math.ceil(cfg.len_min_frac * frame_count))
    hi = max(lo, math.floor(cfg.len_max_frac * frame_count))
    length = int(rng.integers(lo, hi + 1))
    center = draw_center(frame_count, cfg, rng)
    start = math.floor(center - length / 2 + 0.5)
    last = frame_count - (2 * length if repeat else length)
    start = min(max(start, 0), last)
    return Window(int(start), length)


def _check(frames: np.ndarray, window: Window, span: int) -> None:
    start, length = window
    if length < 1 or start < 0 or start + span > len(frames):
        raise InvalidWindow(f"window {tuple(window)} does not fit {len(frames)} frames")


def inject_reverse(frames, window) -> np.ndarray:
    frames = np.asarray(frames)
    window = Window(*window)
    _check(frames, window, window.length)
    out = frames.copy()
    s, n = window
    out[s : s + n] = frames[s : s + n][::-1]
    return out


def inject_repeat(frames, window) -> np.ndarray:
    """Copy the window over the ``length`` frames that follow it."""
    frames = np.asarray(frames)
    window = Window(*window)
    _check(frames, window, 2 * window.length)
    out = frames.copy()
    s, n = window
    out[s + n : s + 2 * n] = frames[s : s + n]
    return out


def inject(sample: VideoSample, cfg: ArtifactConfig, rng: np.random.Generator) -> VideoSample:
    """Apply one randomly chosen temporal artifact; the result is always fake."""
    repeat = bool(rng.random() < cfg.p_repeat)
    window = sample_window(sample.meta.frame_count, cfg, rng, repeat=repeat)
    if repeat:
        frames, kind = inject_repeat(sample.frames, window), ArtifactKind.REPEAT
    else:
        frames, kind = inject_reverse(sample.frames, window), ArtifactKind.REVERSE
    record = ArtifactRecord(kind, window.start, window.length, sample.truth)
    return replace(
        sample,
        id=f"{sample.id}~{kind.value}",
        frames=frames,
        truth=FAKE,
        artifact=record,
    )
