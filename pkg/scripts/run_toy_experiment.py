#!/usr/bin/env python3
"""Train the toy preset with and without the reconstruction term and print a
hold-out MCD table (epoch 0 vs final epoch for each run).

    python3 scripts/run_toy_experiment.py --out runs/toy
"""

import argparse
import logging
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from wgansing.data import load_corpus, make_toy_corpus
from wgansing.evaluation import evaluate_holdout
from wgansing.training import TrainingConfig, read_loss_csv, train

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--config", default=str(HERE.parent / "configs" / "toy.cfg"))
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0, help="corpus seed")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    make_toy_corpus(out / "corpus", seed=args.seed)
    dataset = load_corpus(out / "corpus")
    cfg = TrainingConfig.from_file(args.config)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)

    final = f"checkpoints/epoch_{cfg.epochs:05d}.ckpt"
    rows = []
    with threadpool_limits(limits=1):
        for label, lam in (("WGAN + L_recon", cfg.lambda_recon), ("WGAN", 0.0)):
            run = out / ("recon" if lam else "no_recon")
            t0 = time.perf_counter()
            train(dataset, cfg.replace(lambda_recon=lam), run)
            hist = read_loss_csv(run / "losses.csv")
            rep = evaluate_holdout({"start": run / "checkpoints/epoch_00000.ckpt", "end": run / final}, dataset)
            for a, b in zip(rep.results["start"], rep.results["end"]):
                rows.append((label, a.track_id, a.mcd_db, b.mcd_db))
            print(f"{label}: recon {hist[0].recon_loss:.1f} -> {hist[-1].recon_loss:.1f} "
                  f"in {time.perf_counter() - t0:.0f}s")

    print(f"\n{'model':<16}{'track':<10}{'epoch 0':>10}{f'epoch {cfg.epochs}':>12}")
    for label, tid, m0, m1 in rows:
        print(f"{label:<16}{tid:<10}{m0:>7.2f} dB{m1:>9.2f} dB")


if __name__ == "__main__":
    main()
