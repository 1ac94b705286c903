"""Toy end-to-end run: search, derive, fine-tune, and compare against an
all-Alt3 baseline trained from scratch with the same budget."""

import argparse
import json
import logging
from pathlib import Path

from denoise_nas.config import load_config
from denoise_nas.experiments import toy_search

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=ROOT / "configs" / "toy.yaml", type=Path)
    ap.add_argument("--out", type=Path, help="write the summary JSON here as well as to stdout")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    summary = toy_search(load_config(args.config)).summary()
    text = json.dumps(summary, indent=2)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text + "\n")
    print(text)


if __name__ == "__main__":
    main()
