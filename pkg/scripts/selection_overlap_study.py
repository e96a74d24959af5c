"""How much do the scorers agree on what to keep?

Scores one synthetic corpus, then reports the pairwise selection IoU of the
sieve-only, CLIPScore-only, and fused rankings across a k sweep. Prints a
small table; low sieve/clip overlap at small k is the whole reason fusion
exists.

    python3 scripts/selection_overlap_study.py --n 5000 --seed 3
"""

import argparse
import sys

from sieve.backends import MockBackend
from sieve.config import PipelineConfig
from sieve.corpus_io import ScoreRow
from sieve.pipeline import fuse_rows, sieve_score_stream
from sieve.pruning import rank_and_select, selection_iou
from sieve.scoring import FusionWeights
from sieve.synth import SynthSpec, generate_synthetic_corpus


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=5_000)
    parser.add_argument("--rate", type=float, default=0.3)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--r", type=int, default=8)
    parser.add_argument("--ks", default="0.05,0.1,0.2,0.4,0.8")
    args = parser.parse_args()

    config = PipelineConfig(r=args.r)
    corpus = generate_synthetic_corpus(
        SynthSpec(n=args.n, misalignment_rate=args.rate, seed=args.seed)
    )
    sieve = dict(sieve_score_stream(iter(corpus.records), MockBackend(), config))
    clip = {record.uid: record.clip_score for record in corpus.records}
    fused_rows = fuse_rows(
        [ScoreRow(uid=uid, sieve_raw=sieve[uid], clip_raw=clip[uid])
         for uid in sorted(sieve)],
        FusionWeights(alpha=config.alpha),
    )
    columns = {
        "sieve": sieve,
        "clip": clip,
        "fused": {row.uid: row.fused for row in fused_rows},
    }

    names = list(columns)
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
    header = "k      " + "".join(f"{a}/{b}".ljust(14) for a, b in pairs)
    print(header)
    for k_text in args.ks.split(","):
        k = float(k_text)
        selected = {
            name: set(rank_and_select(iter(scores.items()), k, args.n, name).uids)
            for name, scores in columns.items()
        }
        cells = "".join(
            f"{selection_iou(selected[a], selected[b]):.4f}".ljust(14) for a, b in pairs
        )
        print(f"{k:<7.2f}{cells}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
