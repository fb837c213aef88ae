"""Command-line entry point.

Exit codes: 0 success, 1 user error (bad arguments or files), 2 numeric failure.
The log level can be set with the ``WGANSING_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys

import numpy as np

from .errors import NumericError, UserError

log = logging.getLogger("wgansing")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UserError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _deterministic(enabled: bool):
    if not enabled:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1)


def cmd_make_toy_corpus(args) -> int:
    from .data import make_toy_corpus
    m = make_toy_corpus(args.out, seed=args.seed, n_singers=args.singers, n_phonemes=args.phonemes,
                        n_tracks=args.tracks, n_frames=args.frames, n_holdout=args.holdout,
                        noise_std=args.noise_std)
    log.info("wrote %d tracks to %s (holdout: %s)", len(m.tracks), args.out, ", ".join(m.holdout) or "none")
    return 0


def cmd_train(args) -> int:
    from .data import load_corpus
    from .training import TrainingConfig, train
    cfg = TrainingConfig.from_file(args.config, _overrides(args.set))
    dataset = load_corpus(args.corpus)
    with _deterministic(args.deterministic):
        result = train(dataset, cfg, args.out, resume_from=args.resume)
    if result.history:
        last = result.history[-1]
        log.info("finished epoch %d: recon=%.6g total=%.6g", last.epoch, last.recon_loss, last.total_loss)
    return 0


def _resolve_singer(spec: str, singers: list[str]) -> int:
    if spec in singers:
        return singers.index(spec)
    try:
        idx = int(spec)
    except ValueError:
        raise UserError(f"unknown singer {spec!r}; known: {', '.join(singers)}") from None
    if not 0 <= idx < len(singers):
        raise UserError(f"singer index {idx} outside [0, {len(singers)})")
    return idx


def cmd_synthesize(args) -> int:
    from .checkpoint import read_checkpoint
    from .data import parse_annotations
    from .inference import export_features, synthesize_track
    ck = read_checkpoint(args.checkpoint)
    singer = _resolve_singer(args.singer, ck.singers)
    ann = parse_annotations(args.annotations, singer, ck.header.get("hop_ms", 5.0))
    cfg = ck.model_config()
    ann.validate(cfg.conditioning.n_phonemes, cfg.conditioning.n_singers, cfg.conditioning.f0_min,
                 cfg.conditioning.f0_max)
    noise = ck.config.inference_noise and not args.no_noise
    with _deterministic(args.deterministic):
        feats = synthesize_track(ann, ck.networks(), ck.stats, args.seed, semitones=args.transpose_semitones,
                                 noise=noise)
    export_features(feats, args.out, text=args.text)
    log.info("wrote %d frames to %s", feats.shape[1], args.out)
    return 0


def cmd_evaluate(args) -> int:
    from .data import load_corpus
    from .evaluation import evaluate_holdout
    dataset = load_corpus(args.corpus)
    ckpts = {"WGAN + L_recon": args.checkpoint}
    if args.checkpoint_no_recon:
        ckpts["WGAN"] = args.checkpoint_no_recon
    lo = 0 if args.include_energy else 1
    with _deterministic(args.deterministic):
        report = evaluate_holdout(ckpts, dataset, args.seed, (lo, 60), args.voiced_only)
    if report.status == "empty":
        raise UserError("the corpus has no hold-out tracks; nothing to evaluate")
    report.write_csv(args.out)
    print(report.table(), file=sys.stderr)
    return 0


def cmd_inspect(args) -> int:
    from .checkpoint import read_checkpoint
    ck = read_checkpoint(args.checkpoint)
    h = ck.header
    summary = {
        "epoch": h["epoch"],
        "config_hash": h["config_hash"],
        "config": h["config"],
        "counters": h["counters"],
        "phonemes": len(h["phonemes"]),
        "singers": h["singers"],
        "holdout": h["holdout"],
        "parameters": {e["name"]: e["shape"] for e in h["arrays"]
                       if not e["name"].startswith(("opt.", "norm."))},
        "n_parameters": int(sum(np.prod(e["shape"]) for e in h["arrays"]
                                if not e["name"].startswith(("opt.", "norm.")))),
    }
    text = json.dumps(summary, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wgansing", description="Block-wise WGAN singing-voice feature synthesizer")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-toy-corpus", help="write a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--singers", type=int, default=2)
    s.add_argument("--phonemes", type=int, default=10)
    s.add_argument("--tracks", type=int, default=8)
    s.add_argument("--frames", type=int, default=512)
    s.add_argument("--holdout", type=int, default=2)
    s.add_argument("--noise-std", type=float, default=0.01)
    s.set_defaults(func=cmd_make_toy_corpus)

    s = sub.add_parser("train", help="train generator and critic")
    s.add_argument("--config", required=True, help="flat key = value file of training settings")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    s.add_argument("--resume", metavar="CHECKPOINT")
    s.add_argument("--deterministic", action="store_true", help="single-threaded numerics")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("synthesize", help="generate features for an annotation file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--annotations", required=True)
    s.add_argument("--singer", required=True, help="singer name or index")
    s.add_argument("--transpose-semitones", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-noise", action="store_true", help="zero the noise channels")
    s.add_argument("--text", action="store_true", help="write the plain-text debug format")
    s.add_argument("--deterministic", action="store_true")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("evaluate", help="MCD on the corpus hold-out tracks")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--checkpoint-no-recon", help="second checkpoint trained without L_recon")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--include-energy", action="store_true", help="also compare coefficient 0")
    s.add_argument("--voiced-only", action="store_true")
    s.add_argument("--deterministic", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("inspect-checkpoint", help="print a checkpoint summary as JSON")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = os.environ.get("WGANSING_LOG_LEVEL") or ("DEBUG" if args.verbose > 1 else
                                                     "INFO" if args.verbose else "WARNING")
    logging.basicConfig(level=level.upper(), stream=sys.stderr, format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"wgansing: numeric failure: {exc}", file=sys.stderr)
        return 2
    except UserError as exc:
        print(f"wgansing: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
