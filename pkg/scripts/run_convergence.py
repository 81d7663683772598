"""Spatial convergence table for the validation case with optional overrides.

    python scripts/run_convergence.py --n 8 16 32 64
    python scripts/run_convergence.py --n 8 16 32 --a1 0.1
    python scripts/run_convergence.py --n 8 16 32 64 --warn
"""

import argparse
import logging
from pathlib import Path

from bf_transport_fem.cli import run_convergence
from bf_transport_fem.config import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, nargs="+", default=[8, 16, 32, 64])
    ap.add_argument("--a1", type=float, default=None, help="override the membrane coefficient a1")
    ap.add_argument("--warn", action="store_true", help="accept non-converged Picard steps")
    ap.add_argument("--out", default="out/convergence")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = RunConfig.from_dict({
        "scenario": "convergence", "manufactured": True,
        "mesh": {"builtin": "unit_square", "n": args.n},
        "model": {} if args.a1 is None else {"a1": args.a1},
        "solver": {"on_nonconvergence": "warn" if args.warn else "abort"},
        "output": {"directory": args.out},
    })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table, failed = run_convergence(cfg, out)
    print(table.format())
    if failed:
        print(f"aborted rows: n = {failed}")


if __name__ == "__main__":
    main()
