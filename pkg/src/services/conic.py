"""
Convex program description and the solver seam behind it.

Builders describe a subproblem as a :class:`ConvexProgram` over a real decision
vector ``x`` plus optional real symmetric PSD blocks ``S_b``; :func:`solve`
hands it to a :class:`ConicBackend` (cvxpy by default) and certifies the
answer by recomputing the primal residual independently of the backend and
checking the complementarity gap of the returned duals.

Complex lifting convention, shared by all builders:

* a complex vector ``w`` is stored as its real part followed by its imaginary
  part, so ``g^T w`` has real and imaginary rows given by :func:`complex_rows`;
* a Hermitian matrix variable ``V`` of order ``m`` is carried as a real
  symmetric block ``S`` of order ``2m``; ``Re Tr(M V) = Tr(hermitian_lift(M) S)``
  and ``V`` is read back with :func:`hermitian_from_lifted`.
"""
import enum
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, TextIO

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from src.conf.config import config

logger = logging.getLogger(__name__)

_dump_counter = itertools.count()
GAP_FACTOR = 10.0


class SolveStatus(str, enum.Enum):
    optimal = "optimal"
    infeasible = "infeasible"
    max_iters = "max_iters"


@dataclass(frozen=True)
class AffineForm:
    """``val @ x[idx] + const + sum_b Tr(C_b S_b)``."""
    idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    val: np.ndarray = field(default_factory=lambda: np.zeros(0))
    const: float = 0.0
    blocks: tuple[tuple[int, np.ndarray], ...] = ()

    def value(self, x: np.ndarray, mats=()) -> float:
        total = self.const + float(self.val @ x[self.idx]) if len(self.idx) else self.const
        for b, C in self.blocks:
            total += float(np.sum(C * mats[b]))
        return total

    def magnitude(self, x: np.ndarray, mats=()) -> float:
        """Size of the largest term, used to scale residuals."""
        terms = [abs(self.const)]
        if len(self.idx):
            terms.append(float(np.max(np.abs(self.val * x[self.idx]))))
        for b, C in self.blocks:
            terms.append(float(np.max(np.abs(C * mats[b]))))
        return max(terms)


def affine(*parts, const: float = 0.0, blocks=()) -> AffineForm:
    """Concatenates ``(indices, coefficients)`` pairs into one form; scalars broadcast over indices."""
    idx, val = [], []
    for indices, coefficients in parts:
        indices = np.atleast_1d(np.asarray(indices, dtype=int))
        idx.append(indices)
        val.append(np.broadcast_to(np.asarray(coefficients, dtype=float), indices.shape))
    if not idx:
        return AffineForm(const=float(const), blocks=tuple(blocks))
    return AffineForm(np.concatenate(idx), np.concatenate(val).astype(float), float(const), tuple(blocks))


@dataclass(frozen=True)
class LinearConstraint:
    form: AffineForm
    equality: bool = False
    label: str = ""


@dataclass(frozen=True)
class QuadraticConstraint:
    """``||A x[cols] + b||^2 <= rhs``."""
    cols: np.ndarray
    A: np.ndarray
    b: np.ndarray
    rhs: AffineForm
    label: str = ""


@dataclass(frozen=True)
class ConeConstraint:
    """``||A x[cols] + b||_2 <= rhs``."""
    cols: np.ndarray
    A: np.ndarray
    b: np.ndarray
    rhs: AffineForm
    label: str = ""


@dataclass(frozen=True)
class LogConstraint:
    """``x[rate] <= scale * log2(1 + x[sinr])``."""
    rate: int
    sinr: int
    scale: float = 1.0
    label: str = ""


@dataclass(frozen=True)
class ConvexProgram:
    n: int
    objective: AffineForm
    lower: np.ndarray
    upper: np.ndarray
    linear: tuple[LinearConstraint, ...] = ()
    quadratic: tuple[QuadraticConstraint, ...] = ()
    cones: tuple[ConeConstraint, ...] = ()
    logs: tuple[LogConstraint, ...] = ()
    psd_orders: tuple[int, ...] = ()
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.lower.shape != (self.n,) or self.upper.shape != (self.n,):
            raise ValueError("bounds must have one entry per variable")
        forms = [self.objective] + [c.form for c in self.linear] + [c.rhs for c in self.quadratic + self.cones]
        for form in forms:
            if len(form.idx) and (form.idx.min() < 0 or form.idx.max() >= self.n):
                raise ValueError("affine form references an undeclared variable")
            if any(b >= len(self.psd_orders) for b, _ in form.blocks):
                raise ValueError("affine form references an undeclared PSD block")
        for con in self.quadratic + self.cones:
            if con.A.shape != (len(con.b), len(con.cols)):
                raise ValueError(f"constraint {con.label!r} has inconsistent dimensions")
        for con in self.logs:
            if not (0 <= con.rate < self.n and 0 <= con.sinr < self.n):
                raise ValueError(f"log constraint {con.label!r} references an undeclared variable")

    @property
    def constraint_count(self) -> int:
        return len(self.linear) + len(self.quadratic) + len(self.cones) + len(self.logs) + len(self.psd_orders)

    def residual(self, x: np.ndarray, mats=()) -> float:
        """Largest primal violation, each term scaled by ``1 + magnitude`` of the constraint."""
        worst = float(np.max(np.concatenate([self.lower - x, x - self.upper, [0.0]])))
        for con in self.linear:
            value = con.form.value(x, mats)
            excess = abs(value) if con.equality else max(value, 0.0)
            worst = max(worst, excess / (1.0 + con.form.magnitude(x, mats)))
        for con in self.quadratic:
            lhs = float(np.sum((con.A @ x[con.cols] + con.b) ** 2))
            rhs = con.rhs.value(x, mats)
            worst = max(worst, max(lhs - rhs, 0.0) / (1.0 + lhs + con.rhs.magnitude(x, mats)))
        for con in self.cones:
            lhs = float(np.linalg.norm(con.A @ x[con.cols] + con.b))
            rhs = con.rhs.value(x, mats)
            worst = max(worst, max(lhs - rhs, 0.0) / (1.0 + lhs + con.rhs.magnitude(x, mats)))
        for con in self.logs:
            bound = con.scale * math.log2(1.0 + max(x[con.sinr], 0.0))
            worst = max(worst, max(x[con.rate] - bound, 0.0) / (1.0 + abs(bound)), max(-x[con.sinr], 0.0))
        for S in mats:
            eig_min = float(np.linalg.eigvalsh(S)[0])
            worst = max(worst, max(-eig_min, 0.0) / (1.0 + float(np.max(np.abs(S)))))
        return worst


class ProgramBuilder:
    """Declares variables and collects constraints for a :class:`ConvexProgram`."""

    def __init__(self):
        self._lower: list[np.ndarray] = []
        self._upper: list[np.ndarray] = []
        self._names: list[str] = []
        self._n = 0
        self.linear: list[LinearConstraint] = []
        self.quadratic: list[QuadraticConstraint] = []
        self.cones: list[ConeConstraint] = []
        self.logs: list[LogConstraint] = []
        self.psd_orders: list[int] = []

    @property
    def n(self) -> int:
        return self._n

    def variables(self, name: str, shape, lower=-np.inf, upper=np.inf) -> np.ndarray:
        count = int(np.prod(shape))
        idx = np.arange(self._n, self._n + count).reshape(shape)
        self._lower.append(np.broadcast_to(np.asarray(lower, dtype=float), shape).reshape(-1))
        self._upper.append(np.broadcast_to(np.asarray(upper, dtype=float), shape).reshape(-1))
        self._names.extend(f"{name}{list(i) if len(shape) else ''}" for i in np.ndindex(*shape))
        self._n += count
        return idx

    def fix(self, idx, value=0.0):
        lower = np.concatenate(self._lower)
        upper = np.concatenate(self._upper)
        lower[np.asarray(idx).reshape(-1)] = value
        upper[np.asarray(idx).reshape(-1)] = value
        self._lower, self._upper = [lower], [upper]

    def psd_block(self, order: int) -> int:
        self.psd_orders.append(order)
        return len(self.psd_orders) - 1

    def add_linear(self, form: AffineForm, equality: bool = False, label: str = ""):
        self.linear.append(LinearConstraint(form, equality, label))

    def add_quadratic(self, cols, A, b, rhs: AffineForm, label: str = ""):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self.quadratic.append(QuadraticConstraint(np.asarray(cols, dtype=int).reshape(-1), A,
                                                  np.asarray(b, dtype=float).reshape(-1), rhs, label))

    def add_cone(self, cols, A, b, rhs: AffineForm, label: str = ""):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self.cones.append(ConeConstraint(np.asarray(cols, dtype=int).reshape(-1), A,
                                         np.asarray(b, dtype=float).reshape(-1), rhs, label))

    def add_log(self, rate: int, sinr: int, scale: float = 1.0, label: str = ""):
        self.logs.append(LogConstraint(int(rate), int(sinr), float(scale), label))

    def build(self, objective: AffineForm) -> ConvexProgram:
        return ConvexProgram(self._n, objective, np.concatenate(self._lower) if self._lower else np.zeros(0),
                             np.concatenate(self._upper) if self._upper else np.zeros(0),
                             tuple(self.linear), tuple(self.quadratic), tuple(self.cones), tuple(self.logs),
                             tuple(self.psd_orders), tuple(self._names))


@dataclass(frozen=True)
class Solution:
    status: SolveStatus
    x: np.ndarray
    mats: tuple[np.ndarray, ...]
    objective: float
    residual: float
    solver: str = ""
    message: str = ""
    gap: float = math.nan

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.optimal


class ConicBackend(Protocol):
    def solve(self, program: ConvexProgram, tol: float, max_iters: int) -> Solution:
        ...


def complex_rows(g: np.ndarray) -> np.ndarray:
    """Real rows of ``[Re(g^T w); Im(g^T w)]`` acting on ``[Re w; Im w]``."""
    g = np.asarray(g, dtype=complex)
    return np.array([np.concatenate([g.real, -g.imag]), np.concatenate([g.imag, g.real])])


def hermitian_lift(M: np.ndarray) -> np.ndarray:
    P, Q = M.real, M.imag
    return 0.5 * np.block([[P, -Q], [Q, P]])


def hermitian_from_lifted(S: np.ndarray) -> np.ndarray:
    m = S.shape[0] // 2
    A, B, C, D = S[:m, :m], S[:m, m:], S[m:, :m], S[m:, m:]
    V = 0.5 * (A + D) + 0.5j * (C - B)
    return 0.5 * (V + V.conj().T)


class CvxpyBackend:
    """Solves programs with cvxpy, trying ``fallback`` when the primary solver errors out."""

    def __init__(self, solver: str | None = None, fallback: str | None = None, feas_tol: float | None = None):
        self.solver = solver or config.SOLVER
        self.fallback = fallback if fallback is not None else config.SOLVER_FALLBACK
        self.feas_tol = feas_tol if feas_tol is not None else config.SOLVER_FEAS_TOL

    @staticmethod
    def _options(solver: str, tol: float, max_iters: int) -> dict:
        if solver == "CLARABEL":
            return {"max_iter": max_iters, "tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol}
        if solver == "SCS":
            eps = max(tol, 1e-6)
            return {"max_iters": 100 * max_iters, "eps_abs": eps, "eps_rel": eps}
        return {}

    @staticmethod
    def _translate(program: ConvexProgram):
        x = cp.Variable(program.n)
        mats = [cp.Variable((m, m), symmetric=True) for m in program.psd_orders]

        def expr(form: AffineForm):
            e = form.const
            if len(form.idx):
                e = e + x[form.idx] @ form.val
            for b, C in form.blocks:
                e = e + cp.sum(cp.multiply(C, mats[b]))
            return e

        constraints = []
        finite_lower = np.isfinite(program.lower)
        finite_upper = np.isfinite(program.upper)
        fixed = finite_lower & finite_upper & (program.lower == program.upper)
        if fixed.any():
            constraints.append(x[np.flatnonzero(fixed)] == program.lower[fixed])
        if (finite_lower & ~fixed).any():
            sel = np.flatnonzero(finite_lower & ~fixed)
            constraints.append(x[sel] >= program.lower[sel])
        if (finite_upper & ~fixed).any():
            sel = np.flatnonzero(finite_upper & ~fixed)
            constraints.append(x[sel] <= program.upper[sel])

        for equality in (False, True):
            plain = [c.form for c in program.linear if c.equality == equality and not c.form.blocks]
            if plain:
                rows = np.concatenate([np.full(len(f.idx), r) for r, f in enumerate(plain)])
                cols = np.concatenate([f.idx for f in plain])
                vals = np.concatenate([f.val for f in plain])
                A = sp.csr_matrix((vals, (rows, cols)), shape=(len(plain), program.n))
                b = np.array([f.const for f in plain])
                constraints.append(A @ x + b == 0 if equality else A @ x + b <= 0)
            for con in program.linear:
                if con.equality == equality and con.form.blocks:
                    constraints.append(expr(con.form) == 0 if equality else expr(con.form) <= 0)

        for con in program.quadratic:
            constraints.append(cp.sum_squares(con.A @ x[con.cols] + con.b) <= expr(con.rhs))
        for con in program.cones:
            constraints.append(cp.norm(con.A @ x[con.cols] + con.b, 2) <= expr(con.rhs))
        for con in program.logs:
            constraints.append(x[con.rate] <= (con.scale / math.log(2.0)) * cp.log(1 + x[con.sinr]))
        for S in mats:
            constraints.append(S >> 0)
        return cp.Problem(cp.Minimize(expr(program.objective)), constraints), x, mats

    def solve(self, program: ConvexProgram, tol: float, max_iters: int) -> Solution:
        problem, x, mats = self._translate(program)
        solvers = [self.solver] + ([self.fallback] if self.fallback and self.fallback != self.solver else [])
        message = ""
        for solver in solvers:
            try:
                problem.solve(solver=solver, verbose=False, **self._options(solver, tol, max_iters))
            except cp.error.SolverError as err:
                message = f"{solver}: {err}"
                logger.warning("conic solver %s failed: %s", solver, err)
                continue
            return self._certify(program, problem, x, mats, solver, tol)
        return Solution(SolveStatus.max_iters, np.full(program.n, np.nan), (), math.nan, math.inf, "", message)

    def _certify(self, program: ConvexProgram, problem, x, mats, solver: str, tol: float) -> Solution:
        status = problem.status
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return Solution(SolveStatus.infeasible, np.full(program.n, np.nan), (), math.nan, math.inf, solver,
                            status)
        if x.value is None or any(S.value is None for S in mats):
            return Solution(SolveStatus.max_iters, np.full(program.n, np.nan), (), math.nan, math.inf, solver,
                            status)
        x_val = np.asarray(x.value, dtype=float)
        mat_vals = tuple(np.asarray(S.value, dtype=float) for S in mats)
        if not np.all(np.isfinite(x_val)) or not all(np.all(np.isfinite(S)) for S in mat_vals):
            return Solution(SolveStatus.max_iters, x_val, mat_vals, math.nan, math.inf, solver, "non-finite primal")
        residual = program.residual(x_val, mat_vals)
        objective = program.objective.value(x_val, mat_vals)
        gap = complementarity_gap(problem.constraints)
        ok = status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) and residual <= self.feas_tol
        if status == cp.OPTIMAL_INACCURATE:
            logger.debug("conic solver %s returned an inaccurate optimum, residual %.3g", solver, residual)
        gap_tol = GAP_FACTOR * self._effective_tol(solver, tol) * max(1.0, abs(objective))
        if ok and gap > gap_tol:
            logger.warning("conic solver %s left a duality gap %.3g above %.3g", solver, gap, gap_tol)
            ok, status = False, f"duality gap {gap:.3g} above {gap_tol:.3g}"
        return Solution(SolveStatus.optimal if ok else SolveStatus.max_iters, x_val, mat_vals, objective, residual,
                        solver, status, gap)

    @staticmethod
    def _effective_tol(solver: str, tol: float) -> float:
        return max(tol, 1e-6) if solver == "SCS" else tol


def complementarity_gap(constraints) -> float:
    """
    Weak-duality gap of a solved cvxpy problem, summed over its inequality and PSD constraints.

    Each inequality contributes its multiplier times its slack and each PSD constraint the trace of its dual
    times its matrix. Equalities and constraints without a dual value contribute nothing.
    """
    total = 0.0
    for con in constraints:
        dual = con.dual_value
        if dual is None:
            continue
        if isinstance(con, cp.constraints.PSD):
            total += float(np.sum(np.asarray(dual) * np.asarray(con.args[0].value)))
        elif isinstance(con, cp.constraints.Inequality):
            slack = np.asarray(con.args[1].value) - np.asarray(con.args[0].value)
            total += float(np.sum(np.asarray(dual) * slack))
    return abs(total)


def dump_program(program: ConvexProgram, stream: TextIO):
    """
    Writes a program in the plain-text format documented in ``docs/formats.rst``.

    One record per line: ``var``, ``psd``, ``objective``, ``linear``, ``quadratic``, ``cone`` and ``log``;
    affine forms are written as ``const`` followed by ``index:coefficient`` pairs and ``block:b`` matrices.
    """
    def form_text(form: AffineForm) -> str:
        parts = [f"{form.const:.17g}"] + [f"{i}:{v:.17g}" for i, v in zip(form.idx, form.val)]
        for b, C in form.blocks:
            parts.append(f"block:{b}:" + ",".join(f"{c:.17g}" for c in C.reshape(-1)))
        return " ".join(parts)

    def matrix_text(cols, A, b) -> str:
        return (" cols " + ",".join(str(c) for c in cols) + " A " + ",".join(f"{a:.17g}" for a in A.reshape(-1))
                + " b " + ",".join(f"{v:.17g}" for v in b))

    stream.write(f"program n={program.n} psd={len(program.psd_orders)}\n")
    for i in range(program.n):
        name = program.names[i] if i < len(program.names) else f"x{i}"
        stream.write(f"var {i} {name} {program.lower[i]:.17g} {program.upper[i]:.17g}\n")
    for b, order in enumerate(program.psd_orders):
        stream.write(f"psd {b} {order}\n")
    stream.write(f"objective min {form_text(program.objective)}\n")
    for con in program.linear:
        stream.write(f"linear {'eq' if con.equality else 'le'} {con.label or '-'} {form_text(con.form)}\n")
    for con in program.quadratic:
        stream.write(f"quadratic {con.label or '-'}{matrix_text(con.cols, con.A, con.b)} rhs {form_text(con.rhs)}\n")
    for con in program.cones:
        stream.write(f"cone {con.label or '-'}{matrix_text(con.cols, con.A, con.b)} rhs {form_text(con.rhs)}\n")
    for con in program.logs:
        stream.write(f"log {con.label or '-'} {con.rate} {con.sinr} {con.scale:.17g}\n")


def solve(p: ConvexProgram, tol: float | None = None, max_iters: int | None = None,
          backend: ConicBackend | None = None) -> Solution:
    """
    Solves a convex program and certifies the answer.

    :param p: ConvexProgram: The program, objective minimized.
    :param tol: float | None: Solver tolerance, ``config.SOLVER_TOL`` when None.
    :param max_iters: int | None: Iteration cap, ``config.SOLVER_MAX_ITERS`` when None.
    :param backend: ConicBackend | None: Solver seam, cvxpy when None.
    :return: Solution: Status, primal values, objective and scaled primal residual.
    """
    tol = config.SOLVER_TOL if tol is None else tol
    max_iters = config.SOLVER_MAX_ITERS if max_iters is None else max_iters
    if config.PROGRAM_DUMP_DIR:
        path = Path(config.PROGRAM_DUMP_DIR) / f"program_{next(_dump_counter):06d}.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as stream:
            dump_program(p, stream)
    solution = (backend or CvxpyBackend()).solve(p, tol, max_iters)
    if not solution.optimal:
        logger.debug("conic solve ended with status=%s residual=%.3g message=%s", solution.status.value,
                     solution.residual, solution.message)
    return solution
