"""Backward Euler time stepping with the decoupled fixed-point (Picard) iteration.

Each sweep freezes the velocity ``z`` and multiplier ``chi``, solves the transport
system, then solves the flow system with the freshly computed multiplier.  Both
linear systems are assembled monolithically. The diagonal P0 blocks are condensed
out before the direct factorization. Convection enters the velocity and
concentration rows with the sign of the transport terms ``(grad u) u`` and
``u . grad phi``, so that the solute is carried downstream.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import (
    AssemblyContext,
    BoundaryData,
    ModelParams,
    Sources,
    SparseSystem,
    assemble_AC,
    assemble_AF,
    assemble_BC,
    assemble_BF,
    assemble_boundary_flux,
    assemble_CC,
    assemble_FC,
    assemble_FF,
    assemble_mass,
    assemble_O1C,
    assemble_O1F,
    assemble_O2C,
    assemble_O2F,
    assemble_sources,
    assemble_trace_functional,
    outlet_sigma_values,
    project_p0,
)
from .mesh import Mesh, MultiplierPartition, build_multiplier_partition
from .quadrature import triangle_rule

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class PicardError(SolverError):
    """The fixed-point iteration hit its iteration cap."""

    def __init__(self, message: str, report: "PicardReport", step: int | None = None):
        super().__init__(message)
        self.report = report
        self.step = step


@dataclass
class SolverConfig:
    picard_tol: float = 1e-8
    picard_max_iter: int = 50
    linear_solver: Literal["direct", "iterative"] = "direct"
    linear_tol: float = 1e-10
    initial_guess: Literal["previous", "zero"] = "previous"
    on_nonconvergence: Literal["abort", "warn"] = "abort"
    # direct solver: precondition GMRES with the previous factorization before refactorizing
    reuse_factorization: bool = True

    def __post_init__(self):
        if not self.picard_tol > 0 or not self.linear_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.picard_max_iter < 1:
            raise ValueError("picard_max_iter must be at least 1")
        if self.linear_solver not in ("direct", "iterative"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")
        if self.initial_guess not in ("previous", "zero"):
            raise ValueError(f"unknown initial guess policy {self.initial_guess!r}")
        if self.on_nonconvergence not in ("abort", "warn"):
            raise ValueError(f"unknown non-convergence policy {self.on_nonconvergence!r}")


@dataclass
class DiscreteState:
    sigma: np.ndarray
    u: np.ndarray
    rho: np.ndarray
    phi: np.ndarray
    lam: np.ndarray
    t: float

    def copy(self) -> "DiscreteState":
        return DiscreteState(
            self.sigma.copy(), self.u.copy(), self.rho.copy(), self.phi.copy(), self.lam.copy(), self.t
        )

    def velocity(self) -> np.ndarray:
        """(M, 2) elementwise velocity."""
        return self.u.reshape(2, -1).T


@dataclass
class PicardReport:
    iterations: int = 0
    update_norms: list[float] = field(default_factory=list)
    converged: bool = False
    final_residual: float = float("nan")


@dataclass(eq=False)
class Problem:
    """Everything that defines one run apart from solver settings."""

    mesh: Mesh
    params: ModelParams
    data: BoundaryData
    sources: Sources = field(default_factory=Sources)
    partition: MultiplierPartition | None = None

    def __post_init__(self):
        if self.partition is None:
            self.partition = build_multiplier_partition(self.mesh)


def _check_compatibility(problem: Problem, tol: float = 1e-8) -> None:
    """Warn when the inlet datum does not vanish where inlet and wall meet."""
    from .mesh import BoundaryTag

    mesh = problem.mesh
    inlet = set(mesh.edges[mesh.tagged_edges(BoundaryTag.INLET)].ravel().tolist())
    wall = set(mesh.edges[mesh.tagged_edges(BoundaryTag.WALL)].ravel().tolist())
    for v in sorted(inlet & wall):
        x = mesh.vertices[v : v + 1]
        val = np.asarray(problem.data.g(x, 0.0, np.zeros((1, 2)), BoundaryTag.INLET), dtype=float)
        if np.abs(val).max() > tol:
            warnings.warn(
                f"inlet velocity is {val.ravel().tolist()} at the inlet/wall junction vertex {v}; "
                "the datum is expected to vanish there",
                stacklevel=3,
            )


class Solver:
    def __init__(self, problem: Problem, config: SolverConfig | None = None):
        self.problem = problem
        self.config = config or SolverConfig()
        self.params = problem.params
        self.ctx = AssemblyContext(problem.mesh, problem.partition, problem.params)
        ctx = self.ctx
        self.layout = ctx.layout
        self.AF = assemble_AF(ctx)
        self.BF = assemble_BF(ctx)
        self.AC = assemble_AC(ctx)
        self.BCv, self.BCb = assemble_BC(ctx)
        self.CC = assemble_CC(ctx)
        self.FC = assemble_FC(ctx)
        self.Mu, self.Mphi = assemble_mass(ctx)
        self.trace = assemble_trace_functional(ctx) if self.layout.trace_constraint else None
        self._factors: dict[str, spla.SuperLU] = {}
        _check_compatibility(problem)

    # ---- initial data ----------------------------------------------------------

    def project_initial(self) -> DiscreteState:
        ctx, lay = self.ctx, self.layout
        rule = triangle_rule(max(ctx.rule.degree, 7))
        u0 = project_p0(ctx, self.problem.data.u0, (2,), rule)
        phi0 = project_p0(ctx, self.problem.data.phi0, (), rule)
        part = self.problem.partition
        lam0 = np.zeros(len(part.free_vertices))
        return DiscreteState(
            sigma=np.zeros(2 * lay.n_edges),
            u=np.concatenate([u0[:, 0], u0[:, 1]]),
            rho=np.zeros(lay.n_edges),
            phi=phi0,
            lam=lam0,
            t=0.0,
        )

    # ---- linear algebra --------------------------------------------------------

    def _solve(self, A: sp.spmatrix, b: np.ndarray, what: str) -> np.ndarray:
        bnorm = np.abs(b).max() if b.size else 0.0
        if bnorm == 0.0:
            return np.zeros_like(b)
        A = A.tocsc()
        tol = self.config.linear_tol
        if self.config.linear_solver == "direct":
            x = self._recycled_solve(A, b, bnorm, what)
            if x is not None:
                return x
            try:
                lu = spla.splu(A, permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SolverError(f"{what}: factorization failed ({exc}); n = {A.shape[0]}") from exc
            if self.config.reuse_factorization:
                self._factors[what] = lu
            x = lu.solve(b)
            r = b - A @ x
            if np.abs(r).max() > tol * bnorm:
                x += lu.solve(r)
                r = b - A @ x
        else:
            ilu = spla.spilu(A, drop_tol=1e-5, fill_factor=20)
            prec = spla.LinearOperator(A.shape, ilu.solve)
            x, info = spla.gmres(A, b, M=prec, rtol=tol, atol=0.0, restart=200, maxiter=50)
            if info != 0:
                raise SolverError(f"{what}: GMRES did not converge (info={info})")
            r = b - A @ x
        rel = np.abs(r).max() / bnorm
        if not np.isfinite(rel) or rel > max(tol, 1e-10) * 10:
            raise SolverError(f"{what}: linear residual {rel:.2e} exceeds tolerance {tol:.0e}")
        return x

    def _recycled_solve(self, A, b: np.ndarray, bnorm: float, what: str) -> np.ndarray | None:
        """GMRES preconditioned by the last factorization of this subproblem, or ``None``.

        Consecutive Picard sweeps change the frozen blocks only slightly, so the old
        factors are an excellent preconditioner. Falls back to refactorization when the
        residual does not reach the linear tolerance within a few iterations.
        """
        lu = self._factors.get(what) if self.config.reuse_factorization else None
        if lu is None or lu.shape != A.shape:
            return None
        tol = self.config.linear_tol
        prec = spla.LinearOperator(A.shape, lu.solve)
        x, _ = spla.gmres(A, b, x0=lu.solve(b), M=prec, rtol=0.01 * tol, atol=0.0, restart=20, maxiter=1)
        if not np.all(np.isfinite(x)) or np.abs(b - A @ x).max() > tol * bnorm:
            return None
        return x

    def _solve_condensed(self, A: sp.spmatrix, b: np.ndarray, elim: np.ndarray, what: str) -> np.ndarray:
        """Eliminate the unknowns ``elim`` whose diagonal block is diagonal, then solve.

        The P0 velocity and concentration blocks are diagonal, so the Schur complement
        on the remaining unknowns is sparse and much cheaper to factorize.
        """
        A = A.tocsr()
        mask = np.ones(A.shape[0], dtype=bool)
        mask[elim] = False
        keep = np.flatnonzero(mask)
        D = A[elim][:, elim]
        d = D.diagonal()
        if self.config.linear_solver != "direct" or abs(D - sp.diags(d)).max() > 0 or np.any(d == 0):
            return self._solve(A, b, what)
        A_ke, A_ek = A[keep][:, elim], A[elim][:, keep]
        dinv = sp.diags(1.0 / d)
        S = A[keep][:, keep] - A_ke @ dinv @ A_ek
        xk = self._solve(S, b[keep] - A_ke @ (b[elim] / d), what)
        x = np.empty_like(b)
        x[keep] = xk
        x[elim] = (b[elim] - A_ek @ xk) / d
        bnorm = np.abs(b).max()
        rel = np.abs(b - A @ x).max() / bnorm if bnorm > 0 else 0.0
        if not np.isfinite(rel) or rel > max(self.config.linear_tol, 1e-10) * 10:
            raise SolverError(f"{what}: linear residual {rel:.2e} after condensation")
        return x

    # ---- subproblems -----------------------------------------------------------

    def flow_system(self, z, chi, prev_u, t: float, dt: float | None = None) -> SparseSystem:
        """Full (unreduced) flow system; constrained rows are left as assembled."""
        dt = dt or self.params.dt
        ctx = self.ctx
        src = self.problem.sources
        K = sp.bmat(
            [
                [self.AF, self.BF.T],
                [-self.BF + assemble_O1F(ctx, z), self.Mu / dt + assemble_O2F(ctx, z)],
            ],
            format="csr",
        )
        fu, _ = assemble_sources(ctx, src.momentum, None, t)
        rhs = np.concatenate(
            [assemble_FF(ctx, self.problem.data, chi, t), self.Mu @ prev_u / dt + fu]
        )
        return SparseSystem(K, rhs, {"sigma": self.layout.sigma, "u": self.layout.u})

    def flow_step(self, z, chi, prev_u, t: float, dt: float | None = None):
        lay = self.layout
        system = self.flow_system(z, chi, prev_u, t, dt)
        K, b = system.matrix, system.rhs
        fixed = outlet_sigma_values(self.ctx, self.problem.sources.outlet_traction, t)
        free, con = lay.free_flow, lay.constrained_sigma
        Kf = K[free][:, free]
        bf = b[free]
        if len(con):
            bf = bf - K[free][:, con] @ fixed
        if self.trace is not None:
            tv = self.trace[free[free < 2 * lay.n_edges]]
            col = np.zeros(len(free))
            col[: len(tv)] = tv
            Kf = sp.bmat([[Kf, sp.csr_matrix(col[:, None])], [sp.csr_matrix(col[None, :]), None]])
            bf = np.append(bf, 0.0)
        xf = self._solve_condensed(Kf, bf, np.flatnonzero(free >= 2 * lay.n_edges), "flow step")
        x = np.zeros(lay.n_flow)
        x[free] = xf[: len(free)]
        x[con] = fixed
        return x[lay.sigma].copy(), x[lay.u].copy()

    def transport_system(self, z, chi, prev_phi, t: float, dt: float | None = None) -> SparseSystem:
        """Transport system with the velocity and the membrane factor frozen at ``z``, ``chi``."""
        dt = dt or self.params.dt
        ctx, lay = self.ctx, self.layout
        src = self.problem.sources
        K = sp.bmat(
            [
                [self.AC, self.BCv.T, self.BCb.T],
                [-self.BCv + assemble_O1C(ctx, z), self.Mphi / dt, None],
                [-self.BCb, None, self.CC + assemble_O2C(ctx, chi)],
            ],
            format="csr",
        )
        _, fp = assemble_sources(ctx, None, src.transport, t)
        rhs = np.concatenate(
            [
                np.zeros(lay.n_edges),
                self.Mphi @ prev_phi / dt + fp,
                self.FC + assemble_boundary_flux(ctx, src.boundary_flux, t),
            ]
        )
        if lay.n_multipliers == 0:
            K = K[: lay.n_edges + lay.n_triangles][:, : lay.n_edges + lay.n_triangles]
            rhs = rhs[: lay.n_edges + lay.n_triangles]
        return SparseSystem(K.tocsr(), rhs, {"rho": lay.rho, "phi": lay.phi, "lam": lay.lam})

    def transport_step(self, z, chi, prev_phi, t: float, dt: float | None = None):
        lay = self.layout
        system = self.transport_system(z, chi, prev_phi, t, dt)
        elim = np.arange(lay.n_edges, lay.n_edges + lay.n_triangles)
        x = self._solve_condensed(system.matrix, system.rhs, elim, "transport step")
        x = np.concatenate([x, np.zeros(lay.n_transport - len(x))])
        return x[lay.rho].copy(), x[lay.phi].copy(), x[lay.lam].copy()

    # ---- nonlinear step --------------------------------------------------------

    def picard_solve(self, prev: DiscreteState, t: float, dt: float | None = None):
        """One backward Euler step from ``prev`` to time ``t``."""
        dt = dt or self.params.dt
        cfg = self.config
        if cfg.initial_guess == "previous":
            z, chi = prev.u.copy(), prev.lam.copy()
        else:
            z, chi = np.zeros_like(prev.u), np.zeros_like(prev.lam)
        report = PicardReport()
        state = None
        for it in range(1, cfg.picard_max_iter + 1):
            rho, phi, lam = self.transport_step(z, chi, prev.phi, t, dt)
            sigma, u = self.flow_step(z, lam, prev.u, t, dt)
            update = float(np.sqrt(np.sum((u - z) ** 2) + np.sum((lam - chi) ** 2)))
            report.update_norms.append(update)
            report.iterations = it
            state = DiscreteState(sigma, u, rho, phi, lam, t)
            z, chi = u, lam
            log.debug("t=%.6g picard %d update %.3e", t, it, update)
            if update < cfg.picard_tol:
                report.converged = True
                break
        report.final_residual = self.coupled_residual(state, prev, dt)
        if not report.converged:
            msg = (
                f"fixed-point iteration did not converge at t={t:.6g} after {report.iterations} "
                f"iterations (last update {report.update_norms[-1]:.3e})"
            )
            if cfg.on_nonconvergence == "abort":
                raise PicardError(msg, report)
            warnings.warn(msg, stacklevel=2)
        return state, report

    def coupled_residual(self, state: DiscreteState, prev: DiscreteState, dt: float | None = None) -> float:
        """Relative residual of the fully coupled step equations at ``state``.

        Both subsystems are assembled with the state's own velocity and multiplier as the
        frozen arguments, so a fixed point of the iteration gives zero.
        """
        lay = self.layout
        fl = self.flow_system(state.u, state.lam, prev.u, state.t, dt)
        xf = np.concatenate([state.sigma, state.u])
        rf = (fl.matrix @ xf - fl.rhs)[lay.free_flow]
        bf = fl.rhs[lay.free_flow]
        if self.trace is not None:
            # the trace multiplier absorbs the component of the residual along the trace mode
            tv = np.zeros(lay.n_flow)
            tv[lay.sigma] = self.trace
            tv = tv[lay.free_flow]
            rf = rf - (rf @ tv) / (tv @ tv) * tv
        tr = self.transport_system(state.u, state.lam, prev.phi, state.t, dt)
        xt = np.concatenate([state.rho, state.phi, state.lam])[: tr.matrix.shape[0]]
        rt = tr.matrix @ xt - tr.rhs
        r = np.sqrt(rf @ rf + rt @ rt)
        b = np.sqrt(bf @ bf + tr.rhs @ tr.rhs)
        return float(r / b) if b > 0 else float(r)

    # ---- time loop -------------------------------------------------------------

    def time_grid(self) -> np.ndarray:
        p = self.params
        n = p.n_steps
        grid = np.arange(1, n + 1) * p.dt
        if abs(grid[-1] - p.t_final) > 1e-12 * max(1.0, p.t_final):
            warnings.warn(
                f"t_final={p.t_final} is not a multiple of dt={p.dt}; the last step is shortened",
                stacklevel=2,
            )
            grid[-1] = p.t_final
        return grid

    def march(self, initial: DiscreteState | None = None) -> Iterator[tuple[DiscreteState, PicardReport]]:
        """Yield ``(state, report)`` for every time level after the initial one."""
        state = initial or self.project_initial()
        for n, t in enumerate(self.time_grid(), start=1):
            dt = t - state.t
            try:
                state, report = self.picard_solve(state, float(t), dt)
            except PicardError as exc:
                exc.step = n
                raise
            log.info(
                "step %d t=%.6g picard=%d update=%.3e residual=%.2e",
                n, t, report.iterations, report.update_norms[-1], report.final_residual,
            )
            yield state, report


def march(problem: Problem, config: SolverConfig | None = None) -> list[tuple[DiscreteState, PicardReport]]:
    return list(Solver(problem, config).march())
