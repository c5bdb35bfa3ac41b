"""Command-line entry point: ``vidauth <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import harness
from .artifacts import ArtifactConfig, inject
from .config import load_config, to_dict
from .core import AnswerSpace
from .datagen import (
    DatagenConfig,
    build_corpus,
    load_corpus,
    load_preferences,
    pair_rng,
    read_jsonl,
    sample_from_json,
    sample_to_json,
    write_corpus,
    write_jsonl,
)
from .errors import ConfigError, VidAuthError
from .rewards import RewardConfig, reward_table_csv
from .trainer import (
    Mode,
    Trainer,
    TrainConfig,
    checkpoint_config,
    load_checkpoint,
    save_checkpoint,
)

log = logging.getLogger("vidauth")


@dataclass(frozen=True)
class RewardTableConfig:
    space: AnswerSpace = field(default_factory=AnswerSpace)
    reward: RewardConfig = field(default_factory=RewardConfig)


@dataclass(frozen=True)
class ScoreConfig:
    space: AnswerSpace = field(default_factory=AnswerSpace)


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def cmd_datagen(args) -> None:
    cfg = load_config(DatagenConfig, args.config)
    corpus = build_corpus(cfg)
    write_corpus(corpus, args.out)
    _write_json(Path(args.out) / "manifest.json", {"config": to_dict(cfg), "n_samples": len(corpus)})
    log.info("wrote %d samples to %s", len(corpus), args.out)


def cmd_inject(args) -> None:
    cfg = load_config(ArtifactConfig, args.config) if args.config else ArtifactConfig()
    out = []
    for i, rec in enumerate(read_jsonl(args.inp)):
        out.append(sample_to_json(inject(sample_from_json(rec), cfg, pair_rng(args.seed, i))))
    write_jsonl(args.out, out)


def cmd_train(args) -> None:
    cfg = load_config(TrainConfig, args.config)
    cfg = dataclasses.replace(cfg, mode=Mode(args.mode))
    corpus = load_corpus(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = load_preferences(args.data) if cfg.mode is Mode.DPO else None
    if args.resume:
        state = load_checkpoint(args.resume, cfg)
        trainer = Trainer(cfg, corpus, pairs=pairs, state=state)
        log_mode = "a"
    else:
        params0 = load_checkpoint(cfg.init_checkpoint).params if cfg.init_checkpoint else None
        trainer = Trainer(cfg, corpus, pairs=pairs, params0=params0)
        log_mode = "w"
    with open(out / "log.jsonl", log_mode) as fh:
        every = cfg.checkpoint_every
        while trainer.state.step < cfg.steps:
            rec = trainer.step()
            fh.write(json.dumps(rec) + "\n")
            if every and trainer.state.step % every == 0:
                save_checkpoint(trainer.state, cfg, out / f"ckpt_{trainer.state.step:06d}.json")
    save_checkpoint(trainer.state, cfg, out / "checkpoint.json")
    log.info("trained %s to step %d", cfg.mode.value, trainer.state.step)


def cmd_eval(args) -> None:
    cfg = checkpoint_config(args.ckpt)
    params = load_checkpoint(args.ckpt).params
    samples = load_corpus(args.data).split(args.split)
    report = harness.evaluate(params, samples, cfg.space)
    _write_json(args.out, report.to_json())
    print(f"top1={report.top1:.4f} recall={report.recall:.4f} f1={report.f1:.4f}")


def cmd_score(args) -> None:
    space = load_config(ScoreConfig, args.config).space if args.config else AnswerSpace()
    report = harness.score_transcripts(args.transcripts, space)
    _write_json(args.out, report.to_json())
    print(f"top1={report.top1:.4f} parse_failures={report.parse_failures}")


def cmd_reward_table(args) -> None:
    cfg = load_config(RewardTableConfig, args.config) if args.config else RewardTableConfig()
    Path(args.out).write_text(reward_table_csv(cfg.space, cfg.reward))


def cmd_report(args) -> None:
    if bool(args.log) == bool(args.eval):
        raise ConfigError("report needs exactly one of --log or --eval")
    if args.log:
        harness.plot_log(harness.read_log(args.log), args.out)
    else:
        report = harness.EvalReport.from_json(json.loads(Path(args.eval).read_text()))
        harness.write_report_csv(report, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidauth", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic paired corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("inject", help="add temporal artifacts to a JSON-lines sample file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="artifact config JSON")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("train", help="run sft / dpo / grpo / grpo-ta / grpo-q")
    p.add_argument("--mode", required=True, choices=[m.value for m in Mode])
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score externally produced transcripts")
    p.add_argument("--transcripts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON with an optional answer 'space'")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("reward-table", help="write the graded reward table as CSV")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reward_table)

    p = sub.add_parser("report", help="SVG curves from a log, or CSV from an eval report")
    p.add_argument("--log")
    p.add_argument("--eval")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except VidAuthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
