"""Update norms of the first fixed-point solve of the validation case.

    python scripts/picard_history.py --n 64
    python scripts/picard_history.py --n 8 --max-iter 200
"""

import argparse
import warnings

from bf_transport_fem.mesh import build_unit_square
from bf_transport_fem.scenarios import VALIDATION_SIDES, ManufacturedSolution, validation_params
from bf_transport_fem.time_solver import Problem, Solver, SolverConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--dt", type=float, default=None, help="time step (default 1/n)")
    ap.add_argument("--a1", type=float, default=None)
    ap.add_argument("--max-iter", type=int, default=50)
    args = ap.parse_args()
    dt = args.dt or 1.0 / args.n
    params = validation_params(dt=dt, **({} if args.a1 is None else {"a1": args.a1}))
    exact = ManufacturedSolution(params)
    problem = Problem(build_unit_square(args.n, VALIDATION_SIDES), params, exact.boundary_data(), exact.sources())
    solver = Solver(problem, SolverConfig(picard_max_iter=args.max_iter, on_nonconvergence="warn"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, report = solver.picard_solve(solver.project_initial(), dt, dt)
    norms = report.update_norms
    ratios = [b / a for a, b in zip(norms, norms[1:]) if a > 0]
    print(f"converged={report.converged} iterations={report.iterations}")
    print("updates: " + " ".join(f"{v:.2e}" for v in norms))
    if len(ratios) >= 5:
        print(f"mean contraction over the last five sweeps: {sum(ratios[-5:]) / 5:.3f}")


if __name__ == "__main__":
    main()
