"""Analytic cost of the width-64 base network and the network derived from
an alpha file (default: configs/reference_alphas.json) at 256x256."""

import argparse
import json
from pathlib import Path

from denoise_nas.costs import network_cost
from denoise_nas.nn import reference_base_config
from denoise_nas.search import default_rosters, derive_architecture

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alphas", default=ROOT / "configs" / "reference_alphas.json", type=Path)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--resolution", type=int, nargs=2, default=(256, 256), metavar=("H", "W"))
    args = ap.parse_args()

    base = reference_base_config(args.width)
    rosters = default_rosters(base)
    doc = json.loads(args.alphas.read_text())
    alphas = {s: list(col.values()) for s, col in doc["alphas"].items()}
    derived = derive_architecture(alphas, rosters, base)
    res = tuple(args.resolution)
    b, d = network_cost(base, res), network_cost(derived, res)
    print(json.dumps({
        "derived": {s: derived.spec_for(s).id for s in derived.stage_ids},
        "base_gmacs": round(b.gmacs, 3),
        "derived_gmacs": round(d.gmacs, 3),
        "mac_ratio": round(d.macs / b.macs, 4),
        "base_params": b.params,
        "derived_params": d.params,
        "param_change_pct": round(100 * (d.params - b.params) / b.params, 2),
    }, indent=2))


if __name__ == "__main__":
    main()
