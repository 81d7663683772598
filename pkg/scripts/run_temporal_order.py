"""Temporal order of the velocity at a fixed mesh against a fine-step reference.

    python scripts/run_temporal_order.py --n 64
    python scripts/run_temporal_order.py --n 64 --a1 0.1 --warn
"""

import argparse
import logging
import time

from bf_transport_fem.cli import run_temporal_order
from bf_transport_fem.scenarios import validation_params
from bf_transport_fem.time_solver import SolverConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--a1", type=float, default=None, help="override the membrane coefficient a1")
    ap.add_argument("--warn", action="store_true", help="accept non-converged Picard steps")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    overrides = {} if args.a1 is None else {"a1": args.a1}
    start = time.perf_counter()
    study = run_temporal_order(
        n=args.n,
        solver_config=SolverConfig(on_nonconvergence="warn" if args.warn else "abort"),
        params_factory=lambda dt, t_final: validation_params(dt=dt, t_final=t_final, **overrides),
    )
    for dt, e in zip(study.dts, study.errors):
        print(f"dt={dt:.5f}  |u(dt) - u(ref)|_L4 = {e:.4e}")
    print(f"order {study.order:.3f}  ({time.perf_counter() - start:.0f}s)")


if __name__ == "__main__":
    main()
