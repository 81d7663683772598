"""Is there a discrete transport solution near the exact multiplier?

With the velocity frozen at the exact field, the transport step is a quadratic system in
the multiplier. A least-squares solve started from the exact data shows whether a root
exists close to it, and the printed ratio ``|a1 lam / (a2 + a1 lam)|`` is the local
amplification of the lagged multiplier iteration (above one means that branch repels).

    python scripts/membrane_branch_check.py --n 8 16
"""

import argparse

import numpy as np
from scipy.optimize import least_squares

from bf_transport_fem.forms import project_p0
from bf_transport_fem.mesh import build_unit_square
from bf_transport_fem.scenarios import VALIDATION_SIDES, ManufacturedSolution, validation_params
from bf_transport_fem.time_solver import Problem, Solver


def check(n: int, t: float = 0.5) -> None:
    dt = 1.0 / n
    params = validation_params(dt=dt)
    exact = ManufacturedSolution(params)
    solver = Solver(Problem(build_unit_square(n, VALIDATION_SIDES), params, exact.boundary_data(), exact.sources()))
    ctx, part, lay = solver.ctx, solver.problem.partition, solver.layout
    ue = project_p0(ctx, lambda x: exact.u(x, t), (2,))
    z = np.concatenate([ue[:, 0], ue[:, 1]])
    lam = exact.lam(part.vertex_coords[part.free_vertices], t)
    prev = project_p0(ctx, lambda x: exact.phi(x, t - dt))

    def residual(x):
        system = solver.transport_system(z, x[lay.lam], prev, t, dt)
        return system.matrix @ x - system.rhs

    rho, phi, _ = solver.transport_step(z, lam, prev, t)
    fit = least_squares(residual, np.concatenate([rho, phi, lam]), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    amp = np.abs(params.a1 * lam / (params.a2 + params.a1 * lam)).max()
    print(f"n={n}: min |F| = {np.linalg.norm(fit.fun):.2e}, "
          f"max |lam - lam_exact| = {np.abs(fit.x[lay.lam] - lam).max():.2e}, amplification {amp:.2f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, nargs="+", default=[8, 16])
    for n in ap.parse_args().n:
        check(n)


if __name__ == "__main__":
    main()
