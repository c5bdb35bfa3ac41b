"""Synthetic paired real/fake corpus and DPO preference pairs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .artifacts import ArtifactRecord
from .core import (
    FAKE,
    REAL,
    AnswerLabel,
    AnswerSpace,
    Kind,
    VideoMeta,
    VideoSample,
    answer_transcript,
)
from .errors import ConfigError, EmptyVideo, IOFailure, UnknownStep, UnpairedSample

OBS_NOISE = 0.05
JITTER_FRAMES = 0.2


@dataclass(frozen=True)
class DatagenConfig:
    n_pairs: int = 100
    frame_count: int = 49
    fps: float = 8.0
    width: int = 720
    height: int = 480
    feature_dim: int = 16
    noise_base: float = 1.0
    seed: int = 0
    quality_mode: bool = False
    test_frac: float = 0.1
    space: AnswerSpace = field(default_factory=AnswerSpace)

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ConfigError("n_pairs must be at least 1")
        if self.frame_count < 8:
            raise ConfigError("frame_count must be at least 8")
        if not 0.0 <= self.test_frac < 1.0:
            raise ConfigError("test_frac must lie in [0, 1)")


def _meta(cfg: DatagenConfig) -> VideoMeta:
    return VideoMeta(cfg.frame_count, float(cfg.fps), cfg.width, cfg.height)


def pair_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def gen_real(cfg: DatagenConfig, rng: np.random.Generator, id: str = "real") -> VideoSample:
    """Slow sinusoidal motion per channel plus small observation noise."""
    t = np.arange(cfg.frame_count)[:, None] / cfg.frame_count
    amp = rng.uniform(0.5, 1.5, cfg.feature_dim)
    freq = rng.uniform(0.25, 1.0, cfg.feature_dim)
    phase = rng.uniform(0.0, 2 * np.pi, cfg.feature_dim)
    clean = amp * np.sin(2 * np.pi * freq * t + phase)
    frames = clean + OBS_NOISE * rng.standard_normal(clean.shape)
    return VideoSample(id, frames, _meta(cfg), REAL, pair_id=id)


def amplitude_factor(step: int, space: AnswerSpace) -> float:
    if step not in space.quality_labels:
        raise UnknownStep(f"step {step} not in grid {space.step_grid}")
    return 1.0 - space.quality_labels[step] / 100.0


def gen_fake(
    real: VideoSample,
    step: int,
    cfg: DatagenConfig,
    rng: np.random.Generator,
    graded: bool = True,
) -> VideoSample:
    """Fake conditioned on a real video: same first frame and trajectory.

    Generation noise scales with ``1 - quality/100`` of the step; a small
    per-frame time jitter perturbs the motion.
    """
    amp = cfg.noise_base * amplitude_factor(step, cfg.space)
    x = real.frames
    velocity = np.gradient(x, axis=0)
    jitter = JITTER_FRAMES * rng.standard_normal((x.shape[0], 1))
    frames = x + jitter * velocity + amp * rng.standard_normal(x.shape)
    frames[0] = x[0]
    truth = AnswerLabel.fake(step) if graded else FAKE
    return VideoSample(f"{real.id}-f{step}", frames, real.meta, truth, pair_id=real.id)


@dataclass(frozen=True)
class Annotation:
    answer: AnswerLabel
    transcript: str

    @classmethod
    def of(cls, label: AnswerLabel) -> "Annotation":
        return cls(label, answer_transcript(label))


@dataclass(frozen=True)
class PreferencePair:
    input_id: str
    preferred: Annotation
    dispreferred: Annotation

    def __post_init__(self):
        if self.preferred.answer.kind is self.dispreferred.answer.kind:
            raise ValueError("preferred and dispreferred answers must differ in kind")

    def to_json(self) -> dict:
        return {
            "input_id": self.input_id,
            "preferred": {"answer": str(self.preferred.answer), "transcript": self.preferred.transcript},
            "dispreferred": {
                "answer": str(self.dispreferred.answer),
                "transcript": self.dispreferred.transcript,
            },
        }

    @classmethod
    def from_json(cls, d: dict) -> "PreferencePair":
        def ann(x):
            return Annotation(AnswerLabel.parse(x["answer"]), x["transcript"])

        return cls(d["input_id"], ann(d["preferred"]), ann(d["dispreferred"]))


@dataclass
class Corpus:
    samples: list[VideoSample]

    def __len__(self):
        return len(self.samples)

    def __iter__(self) -> Iterator[VideoSample]:
        return iter(self.samples)

    def split(self, name: str) -> list[VideoSample]:
        return [s for s in self.samples if s.split == name]

    @property
    def train(self) -> list[VideoSample]:
        return self.split("train")

    @property
    def test(self) -> list[VideoSample]:
        return self.split("test")

    @property
    def graded(self) -> bool:
        """True when fake labels carry diffusion steps."""
        return any(s.truth.kind is Kind.FAKE and s.truth.step is not None for s in self.samples)

    def by_id(self) -> dict[str, VideoSample]:
        return {s.id: s for s in self.samples}


def build_corpus(cfg: DatagenConfig) -> Corpus:
    """Real videos with their fake variants, split by pair into train/test.

    Binary mode emits one step-50-style fake per real (the last grid step);
    quality mode emits one fake per grid step. Whole pairs go to the same
    split, so every split has the same label mix.
    """
    n_test = int(round(cfg.test_frac * cfg.n_pairs))
    order = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED])).permutation(cfg.n_pairs)
    test_pairs = set(order[:n_test].tolist())
    steps = cfg.space.step_grid if cfg.quality_mode else cfg.space.step_grid[-1:]
    samples = []
    for i in range(cfg.n_pairs):
        rng = pair_rng(cfg.seed, i)
        split = "test" if i in test_pairs else "train"
        real = gen_real(cfg, rng, id=f"r{i:06d}")
        samples.append(replace(real, split=split))
        for step in steps:
            fake = gen_fake(real, step, cfg, rng, graded=cfg.quality_mode)
            samples.append(replace(fake, split=split))
    return Corpus(samples)


def build_preference_pairs(samples: Iterable[VideoSample]) -> list[PreferencePair]:
    """Swap the annotations of each real/fake pair in both directions."""
    samples = list(samples)
    ids = {s.id: s for s in samples}
    pairs = []
    for s in samples:
        if s.truth.is_real:
            continue
        real = ids.get(s.pair_id)
        if real is None or real.id == s.id:
            raise UnpairedSample(f"{s.id}: pair_id {s.pair_id!r} does not resolve to a real sample")
        real_ann, fake_ann = Annotation.of(real.truth), Annotation.of(s.truth)
        pairs.append(PreferencePair(real.id, real_ann, fake_ann))
        pairs.append(PreferencePair(s.id, fake_ann, real_ann))
    return pairs


def standardize_metadata(sample: VideoSample, cfg: DatagenConfig) -> VideoSample:
    """Nearest-index temporal resampling to ``cfg.frame_count`` frames."""
    n = sample.frames.shape[0]
    if n == 0:
        raise EmptyVideo(f"{sample.id} has no frames")
    idx = (np.arange(cfg.frame_count) * n) // cfg.frame_count
    return replace(sample, frames=sample.frames[idx], meta=_meta(cfg))


# --- JSON-lines records -------------------------------------------------------


def sample_to_json(s: VideoSample) -> dict:
    rec = {
        "id": s.id,
        "pair_id": s.pair_id,
        "truth": str(s.truth),
        "split": s.split,
        "meta": {
            "frame_count": s.meta.frame_count,
            "fps": s.meta.fps,
            "width": s.meta.width,
            "height": s.meta.height,
        },
        "frames": s.frames.tolist(),
    }
    if s.artifact is not None:
        rec["artifact"] = s.artifact.to_json()
    return rec


def sample_from_json(d: dict) -> VideoSample:
    meta = d["meta"]
    frames = np.asarray(d["frames"], dtype=np.float64)
    if frames.size == 0:
        frames = frames.reshape(0, 0)
    return VideoSample(
        id=d["id"],
        frames=frames,
        meta=VideoMeta(int(meta["frame_count"]), float(meta["fps"]), int(meta["width"]), int(meta["height"])),
        truth=AnswerLabel.parse(d["truth"]),
        pair_id=d["pair_id"],
        artifact=ArtifactRecord.from_json(d["artifact"]) if d.get("artifact") else None,
        split=d.get("split"),
    )


def write_jsonl(path, records: Iterable[dict]) -> None:
    try:
        with open(path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    except OSError as exc:
        raise IOFailure(str(exc)) from exc


def read_jsonl(path) -> list[dict]:
    try:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise IOFailure(str(exc)) from exc


SAMPLES_FILE = "samples.jsonl"
PREFERENCES_FILE = "preferences.jsonl"


def write_corpus(corpus: Corpus, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / SAMPLES_FILE, (sample_to_json(s) for s in corpus))
    write_jsonl(out / PREFERENCES_FILE, (p.to_json() for p in build_preference_pairs(corpus.train)))


def load_corpus(data_dir) -> Corpus:
    path = Path(data_dir)
    if path.is_dir():
        path = path / SAMPLES_FILE
    return Corpus([sample_from_json(d) for d in read_jsonl(path)])


def load_preferences(data_dir) -> list[PreferencePair]:
    return [PreferencePair.from_json(d) for d in read_jsonl(Path(data_dir) / PREFERENCES_FILE)]
