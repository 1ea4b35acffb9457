#!/usr/bin/env python
"""Generate a synthetic BankSim-shaped CSV for demos and tests.

The full variant reproduces the documented corpus shape (594,643 rows,
4,112 customers, 7,200 fraud rows); --small emits a few thousand rows for
quick smoke runs.
"""

import argparse
from pathlib import Path

from fraudsig.synthdata import SynthSpec, generate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output CSV path")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--small", action="store_true", help="emit the ~2k-row variant")
    args = ap.parse_args()
    spec = SynthSpec.small() if args.small else SynthSpec()
    generate(Path(args.out), spec, seed=args.seed)
    print(f"wrote {args.out} ({spec.n_rows} rows, {spec.n_customers} customers)")


if __name__ == "__main__":
    main()
