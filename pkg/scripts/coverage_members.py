"""Emit the uid set that survives the text-coverage filter.

Reads a manifest whose records carry text_coverage (fraction of image area
covered by rendered text) and keeps the configured fraction with the least
coverage. The output is one uid per line, ready for `sieve intersect --b`:

    python3 scripts/coverage_members.py --manifest c.manifest.jsonl --out keep.txt
    sieve intersect --a run.selection.jsonl --b keep.txt --out final.selection.jsonl
"""

import argparse
import sys

from sieve.corpus_io import read_manifest
from sieve.errors import DataError
from sieve.pruning import coverage_filter


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--keep-fraction", type=float, default=0.8)
    parser.add_argument("--out", default="-")
    args = parser.parse_args()

    def fractions():
        for record in read_manifest(args.manifest):
            if record.text_coverage is None:
                raise DataError(f"uid {record.uid!r} has no text_coverage")
            yield record.uid, record.text_coverage

    kept = coverage_filter(fractions(), keep_fraction=args.keep_fraction)
    sink = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf-8")
    try:
        for uid in sorted(kept):
            sink.write(uid + "\n")
    finally:
        if sink is not sys.stdout:
            sink.close()
    print(f"kept {len(kept)} uids", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
