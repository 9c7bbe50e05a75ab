"""Thin LP/MILP backend bridge.

Every optimization model in this package is assembled through :class:`ModelHandle`
and solved with :func:`solve`, so the backend (SciPy's bundled HiGHS) is swappable
behind one seam.  The bridge also centralizes all numerical tolerances.

Dual values are reported in the *sensitivity* convention: ``dual[r]`` is the
derivative of the stated objective (min or max, as declared on the model) with
respect to the stated right-hand side of row ``r``.  For a minimization with a
``>=`` row this is the classic nonnegative multiplier.  Duals exist only for
pure LPs solved to optimality; querying them on an integer model raises.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

log = logging.getLogger("greencap.solver")

# Centralized tolerances (see module docstring).
LP_TOL = 1e-6            # LP feasibility / strong-duality tolerance
PRICING_MIP_GAP = 1e-9   # pricing problems decide cut generation: solve tight
MASTER_MIP_GAP = 1e-6    # outer master MILPs (TOL/10 for TOL = 1e-5)

CONTINUOUS = "continuous"
INTEGER = "integer"
BINARY = "binary"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
TIME_LIMIT = "time-limit"

_KNOWN_BACKENDS = ("highs",)


class SolverError(Exception):
    pass


class BackendUnavailableError(SolverError):
    pass


class NumericalFailureError(SolverError):
    """Backend returned no usable status."""


class DualsUnavailableError(SolverError):
    """Dual values requested from an integer model or a non-optimal solve."""


def backend_name() -> str:
    """Selected backend; only 'highs' ships.  Env var GREENCAP_SOLVER overrides."""
    name = os.environ.get("GREENCAP_SOLVER", "highs").lower()
    if name not in _KNOWN_BACKENDS:
        raise BackendUnavailableError(
            f"unknown solver backend {name!r}; available: {_KNOWN_BACKENDS}"
        )
    return name


class ModelHandle:
    """A linear model under construction: variables, rows, one linear objective.

    Handles are plain data and share no state, so distinct handles may be
    solved concurrently; a single handle is not thread-safe.
    """

    def __init__(self, name: str = "model", sense: str = "min"):
        if sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        self.name = name
        self.sense = sense
        self._var_names: list[str] = []
        self._var_index: dict[str, int] = {}
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._integrality: list[int] = []
        self._obj: dict[int, float] = {}
        self._row_names: list[str] = []
        self._row_index: dict[str, int] = {}
        self._senses: list[str] = []
        self._rhs: list[float] = []
        self._tr: list[int] = []   # triplet rows
        self._tc: list[int] = []   # triplet cols
        self._tv: list[float] = [] # triplet values

    # -- variables ---------------------------------------------------------

    def add_var(self, name: str, lb: float = 0.0, ub: float | None = None,
                kind: str = CONTINUOUS) -> int:
        if name in self._var_index:
            raise ValueError(f"duplicate variable name {name!r}")
        ubv = np.inf if ub is None else float(ub)
        lbv = float(lb)
        if kind == BINARY:
            lbv, ubv = max(lbv, 0.0), min(ubv, 1.0)
        if lbv > ubv:
            raise ValueError(f"variable {name!r}: lower bound {lbv} > upper bound {ubv}")
        idx = len(self._var_names)
        self._var_names.append(name)
        self._var_index[name] = idx
        self._lb.append(lbv)
        self._ub.append(ubv)
        self._integrality.append(0 if kind == CONTINUOUS else 1)
        return idx

    def add_vars(self, prefix: str, n: int, lb=0.0, ub=None, kind: str = CONTINUOUS) -> np.ndarray:
        lbs = np.broadcast_to(np.asarray(lb, dtype=float), (n,))
        ubs = np.broadcast_to(np.asarray(np.inf if ub is None else ub, dtype=float), (n,))
        return np.array([self.add_var(f"{prefix}[{i}]", lbs[i], ubs[i], kind) for i in range(n)])

    # -- constraints -------------------------------------------------------

    def add_constr(self, name: str, coefs, sense: str, rhs: float) -> int:
        """``coefs``: mapping var-index -> coefficient, or (index, coef) pairs."""
        if name in self._row_index:
            raise ValueError(f"duplicate constraint name {name!r}")
        if sense not in ("<=", ">=", "=="):
            raise ValueError(f"bad sense {sense!r}")
        row = len(self._row_names)
        self._row_names.append(name)
        self._row_index[name] = row
        self._senses.append(sense)
        self._rhs.append(float(rhs))
        items = coefs.items() if isinstance(coefs, dict) else coefs
        for j, v in items:
            if v != 0.0:
                self._tr.append(row)
                self._tc.append(int(j))
                self._tv.append(float(v))
        return row

    def add_block(self, prefix: str, rows, cols, vals, senses, rhs) -> np.ndarray:
        """Bulk-add rows from triplets; ``rows`` are 0-based within the block."""
        rhs = np.asarray(rhs, dtype=float)
        nrows = len(rhs)
        if isinstance(senses, str):
            senses = [senses] * nrows
        base = len(self._row_names)
        for i in range(nrows):
            name = f"{prefix}[{i}]"
            if name in self._row_index:
                raise ValueError(f"duplicate constraint name {name!r}")
            self._row_names.append(name)
            self._row_index[name] = base + i
            self._senses.append(senses[i])
            self._rhs.append(float(rhs[i]))
        self._tr.extend(int(r) + base for r in rows)
        self._tc.extend(int(c) for c in cols)
        self._tv.extend(float(v) for v in vals)
        return np.arange(base, base + nrows)

    def set_objective(self, coefs) -> None:
        items = coefs.items() if isinstance(coefs, dict) else enumerate(np.asarray(coefs, dtype=float))
        for j, v in items:
            if v != 0.0:
                self._obj[int(j)] = self._obj.get(int(j), 0.0) + float(v)

    # -- introspection -----------------------------------------------------

    @property
    def num_vars(self) -> int:
        return len(self._var_names)

    @property
    def num_constrs(self) -> int:
        return len(self._row_names)

    @property
    def is_mip(self) -> bool:
        return any(self._integrality)

    def var_index(self, name: str) -> int:
        return self._var_index[name]

    def row_index(self, name: str) -> int:
        return self._row_index[name]


@dataclass
class SolveResult:
    """Outcome of one solve.

    ``objective`` is the incumbent value; ``bound`` is the proven dual bound
    (equal to ``objective`` for LPs, possibly looser for MILPs stopped at a gap).
    """

    status: str
    objective: float | None
    x: np.ndarray | None
    wall_time: float
    bound: float | None = None
    _duals: np.ndarray | None = None
    _model: ModelHandle | None = field(default=None, repr=False)

    @property
    def duals(self) -> np.ndarray:
        if self._duals is None:
            raise DualsUnavailableError(
                "dual values are only available for pure LPs solved to optimality"
            )
        return self._duals

    def value(self, name: str) -> float:
        return float(self.x[self._model.var_index(name)])

    def dual(self, name: str) -> float:
        return float(self.duals[self._model.row_index(name)])


def _assemble(model: ModelHandle):
    n = model.num_vars
    c = np.zeros(n)
    for j, v in model._obj.items():
        c[j] = v
    if model.sense == "max":
        c = -c
    A = sp.csr_matrix(
        (model._tv, (model._tr, model._tc)), shape=(model.num_constrs, n)
    )
    senses = np.asarray(model._senses)
    rhs = np.asarray(model._rhs, dtype=float)
    lb = np.asarray(model._lb, dtype=float)
    ub = np.asarray(model._ub, dtype=float)
    return c, A, senses, rhs, lb, ub


def solve(model: ModelHandle, time_limit: float | None = None,
          mip_gap: float | None = None, phase: str = "") -> SolveResult:
    """Solve the model; deterministic for identical inputs (single-seed HiGHS)."""
    backend_name()  # validates selection
    if model.num_vars == 0:
        raise SolverError("model has no variables")
    c, A, senses, rhs, lb, ub = _assemble(model)
    t0 = time.perf_counter()
    if model.is_mip:
        res, duals = _solve_milp(model, c, A, senses, rhs, lb, ub, time_limit, mip_gap)
    else:
        res, duals = _solve_lp(model, c, A, senses, rhs, lb, ub, time_limit)
    res.wall_time = time.perf_counter() - t0
    res._duals = duals
    res._model = model
    log.info("solve phase=%s name=%s status=%s objective=%s time=%.6f",
             phase, model.name, res.status, res.objective, res.wall_time)
    return res


_LP_STATUS = {0: OPTIMAL, 1: TIME_LIMIT, 2: INFEASIBLE, 3: UNBOUNDED}


class RepeatedGeLp:
    """Bridge fast path for min c'y s.t. A y >= rhs, y >= 0 with a fixed
    (c, A) and a stream of right-hand sides (recourse evaluations dominate the
    solve count, so per-call model assembly is worth skipping).  Duals follow
    the same sensitivity convention as :func:`solve`.
    """

    def __init__(self, c, A):
        self.c = np.asarray(c, dtype=float)
        self.A_ub = (-A).tocsc()
        n = A.shape[1]
        self.bounds = np.column_stack([np.zeros(n), np.full(n, np.inf)])

    def solve(self, rhs, phase: str = "") -> SolveResult:
        backend_name()
        t0 = time.perf_counter()
        res = linprog(self.c, A_ub=self.A_ub, b_ub=-np.asarray(rhs, dtype=float),
                      bounds=self.bounds, method="highs", options={"presolve": True})
        if res.status not in _LP_STATUS:
            raise NumericalFailureError(f"backend returned status {res.status}: {res.message}")
        status = _LP_STATUS[res.status]
        objective = float(res.fun) if status == OPTIMAL else None
        duals = -res.ineqlin.marginals if status == OPTIMAL else None
        out = SolveResult(status=status, objective=objective, x=res.x,
                          wall_time=time.perf_counter() - t0, bound=objective,
                          _duals=duals)
        log.debug("solve phase=%s name=repeated-ge-lp status=%s objective=%s time=%.6f",
                  phase, status, objective, out.wall_time)
        return out


def _solve_lp(model, c, A, senses, rhs, lb, ub, time_limit):
    le = senses == "<="
    ge = senses == ">="
    eq = senses == "=="
    A_ub = sp.vstack([A[le], -A[ge]]) if (le.any() or ge.any()) else None
    b_ub = np.concatenate([rhs[le], -rhs[ge]]) if A_ub is not None else None
    A_eq = A[eq] if eq.any() else None
    b_eq = rhs[eq] if A_eq is not None else None
    options = {"presolve": True}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=np.column_stack([lb, ub]), method="highs", options=options)
    if res.status not in _LP_STATUS:
        raise NumericalFailureError(f"backend returned status {res.status}: {res.message}")
    status = _LP_STATUS[res.status]
    duals = None
    objective = None
    if status == OPTIMAL:
        objective = float(res.fun)
        # Reassemble duals in original row order, sensitivity convention.
        duals = np.zeros(len(senses))
        m_ub = res.ineqlin.marginals if A_ub is not None else np.zeros(0)
        n_le = int(le.sum())
        duals[le] = m_ub[:n_le]
        duals[ge] = -m_ub[n_le:]
        if A_eq is not None:
            duals[eq] = res.eqlin.marginals
        if model.sense == "max":
            objective = -objective
            duals = -duals
    elif status == TIME_LIMIT and res.x is not None:
        objective = float(res.fun) if model.sense == "min" else -float(res.fun)
    return SolveResult(status=status, objective=objective,
                       x=res.x, wall_time=0.0, bound=objective), duals


def _solve_milp(model, c, A, senses, rhs, lb, ub, time_limit, mip_gap):
    con_lb = np.where(senses == "<=", -np.inf, rhs)
    con_ub = np.where(senses == ">=", np.inf, rhs)
    constraints = [LinearConstraint(A, con_lb, con_ub)] if A.shape[0] else []
    options = {"presolve": True, "mip_rel_gap": MASTER_MIP_GAP if mip_gap is None else float(mip_gap)}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = milp(c=c, constraints=constraints,
               integrality=np.asarray(model._integrality),
               bounds=Bounds(lb, ub), options=options)
    if res.status == 2:
        # HiGHS presolve can misreport infeasibility on wide-coefficient
        # (big-M) models; confirm without presolve before trusting it.
        log.info("milp %s reported infeasible; re-solving with presolve off",
                 model.name)
        res = milp(c=c, constraints=constraints,
                   integrality=np.asarray(model._integrality),
                   bounds=Bounds(lb, ub), options={**options, "presolve": False})
    if res.status not in _LP_STATUS and res.status != 4:
        raise NumericalFailureError(f"backend returned status {res.status}: {res.message}")
    if res.status == 4:
        raise NumericalFailureError(f"backend reported numerical trouble: {res.message}")
    status = _LP_STATUS[res.status]
    objective = bound = None
    if res.x is not None and res.fun is not None:
        sgn = 1.0 if model.sense == "min" else -1.0
        objective = sgn * float(res.fun)
        raw_bound = getattr(res, "mip_dual_bound", None)
        bound = sgn * float(raw_bound) if raw_bound is not None else objective
    return SolveResult(status=status, objective=objective, x=res.x,
                       wall_time=0.0, bound=bound), None
