"""Sweep caption budgets and masking over synthetic corpora.

For each seed, builds one labeled corpus and scores it four ways (masked and
unmasked alt-texts, full and single caption budgets), then evaluates AUC and
precision at the default selected fraction. One JSON line per (seed, arm):

    python3 scripts/signal_quality_sweep.py --n 10000 --seeds 1-20 --out sweep.jsonl
"""

import argparse
import json
import sys

from sieve.backends import MockBackend
from sieve.config import PipelineConfig
from sieve.corpus_io import ScoreRow
from sieve.pipeline import caption_cosine_stream, fuse_rows, sieve_score_stream
from sieve.scoring import FusionWeights
from sieve.synth import SynthSpec, detection_metrics, generate_synthetic_corpus


def parse_seeds(text: str) -> list[int]:
    if "-" in text:
        low, high = text.split("-", 1)
        return list(range(int(low), int(high) + 1))
    return [int(part) for part in text.split(",") if part]


def score_arms(corpus, config: PipelineConfig) -> dict[str, dict[str, float]]:
    backend = MockBackend()
    per_caption = dict(
        caption_cosine_stream(iter(corpus.records), backend, config, mask=True)
    )
    arms = {
        "sieve_masked_r%d" % config.r: {u: max(c) for u, c in per_caption.items()},
        "sieve_masked_r1": {u: c[0] for u, c in per_caption.items()},
        "sieve_unmasked_r%d" % config.r: dict(
            sieve_score_stream(iter(corpus.records), backend, config, mask=False)
        ),
        "clip": {r.uid: r.clip_score for r in corpus.records},
    }
    fused = fuse_rows(
        [
            ScoreRow(uid=uid, sieve_raw=arms["sieve_masked_r%d" % config.r][uid],
                     clip_raw=arms["clip"][uid])
            for uid in sorted(arms["clip"])
        ],
        FusionWeights(alpha=config.alpha),
    )
    arms["fused"] = {row.uid: row.fused for row in fused}
    return arms


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=10_000)
    parser.add_argument("--rate", type=float, default=0.3)
    parser.add_argument("--seeds", default="1-20", help="range 1-20 or list 1,5,9")
    parser.add_argument("--r", type=int, default=8)
    parser.add_argument("--k", type=float, default=0.2)
    parser.add_argument("--out", default="-")
    args = parser.parse_args()

    config = PipelineConfig(r=args.r, k=args.k)
    sink = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf-8")
    try:
        for seed in parse_seeds(args.seeds):
            corpus = generate_synthetic_corpus(
                SynthSpec(n=args.n, misalignment_rate=args.rate, seed=seed)
            )
            for arm, scores in score_arms(corpus, config).items():
                metrics = detection_metrics(scores, corpus.labels, ks=(args.k,))
                sink.write(json.dumps({
                    "seed": seed,
                    "arm": arm,
                    "auc": round(metrics["auc"], 6),
                    "precision_at_k": round(metrics["precision_at_k"][args.k], 6),
                }) + "\n")
            sink.flush()
    finally:
        if sink is not sys.stdout:
            sink.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
