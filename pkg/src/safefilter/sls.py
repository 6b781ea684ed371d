"""Robust synthesis over finite horizons via system-response parameterization.

Given per-step LTV dynamics with a symmetric residual envelope (module
``crown``), this module assembles and solves a soft-constrained quadratic
program whose decision variables are the closed-loop response operators
(block-lower-triangular ``phi_x``, ``phi_u``), a virtual-disturbance filter
``psi``, a nominal plan ``(h, v)``, and slack variables.  All slacks at zero
certify that the state-feedback policy ``u = K (x - h) + v`` keeps every
admissible realization of the uncertainty inside the state, input, and trust
region constraints for the whole horizon.

Block indexing convention: for a causal operator ``R`` over the horizon,
``R^{t,l}`` denotes the block in block-row ``t`` at lag ``l`` (block-column
``t - l``).  The diagonal (lag 0) blocks of ``phi_x`` and ``psi`` are
structurally ``diag(psi_{t-1})`` with ``psi^{0,0} = I``; they are never free
variables.  One-norms of decision rows are linearized exactly with
elementwise absolute-value epigraph auxiliaries.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from .crown import UncertaintyModel
from .network import Matrix, Vector

DEFAULT_PENALTY_CONSTRAINT = 1e4
DEFAULT_PENALTY_TRUST = 1e3
DEFAULT_PSI_MIN = 1e-6
DEFAULT_REGULARIZATION = 1e-8
DEFAULT_PSI_PRESSURE = 1e-3
SLACK_ZERO_TOL = 1e-7


class SolverError(RuntimeError):
    """Numerical failure reported by the underlying QP solver."""


class InfeasibleProblemError(SolverError):
    """The program is infeasible, which indicates an assembly bug: the
    soft-constrained program is feasible by construction."""


class PolicyError(RuntimeError):
    """Feedback policy misuse (out-of-order or out-of-horizon calls)."""


@dataclass(frozen=True)
class SoftPolytope:
    """Polyhedron ``{x | F x <= b}`` whose rows may be violated at a price."""

    f: Matrix
    b: Vector

    def __post_init__(self) -> None:
        object.__setattr__(self, "f", np.atleast_2d(np.asarray(self.f, dtype=float)))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        if self.f.shape[0] != self.b.shape[0]:
            raise ValueError("row count mismatch between F and b")
        if self.f.shape[0] < 1:
            raise ValueError("polytope needs at least one row")
        if not (np.isfinite(self.f).all() and np.isfinite(self.b).all()):
            raise ValueError("polytope data must be finite")

    @property
    def num_rows(self) -> int:
        return self.f.shape[0]

    @property
    def dim(self) -> int:
        return self.f.shape[1]

    def contains(self, x: Vector, tol: float = 1e-9) -> bool:
        return bool(np.all(self.f @ np.asarray(x, dtype=float) <= self.b + tol))

    def margins(self, x: Vector) -> Vector:
        """Signed slack ``b - F x`` per row (negative means violated)."""
        return self.b - self.f @ np.asarray(x, dtype=float)

    @staticmethod
    def box(lower, upper) -> "SoftPolytope":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        n = lower.shape[0]
        eye = np.eye(n)
        return SoftPolytope(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))


class BltOperator:
    """Block-lower-triangular operator stored as per-row lag blocks."""

    def __init__(self, blocks: list[list[Matrix]]):
        self.blocks = blocks
        p, q = blocks[0][0].shape
        self.block_shape = (p, q)
        for t, row in enumerate(blocks):
            if len(row) != t + 1:
                raise ValueError(f"row {t} must have {t + 1} blocks, got {len(row)}")

    @property
    def n_rows(self) -> int:
        return len(self.blocks)

    def block(self, t: int, lag: int) -> Matrix:
        return self.blocks[t][lag]

    def to_dense(self, n_block_cols: int | None = None) -> Matrix:
        p, q = self.block_shape
        n_cols = self.n_rows if n_block_cols is None else n_block_cols
        out = np.zeros((self.n_rows * p, n_cols * q))
        for t, row in enumerate(self.blocks):
            for lag, blk in enumerate(row):
                col = t - lag
                out[t * p : (t + 1) * p, col * q : (col + 1) * q] = blk
        return out


@dataclass
class SlsProblem:
    """One instance of the soft-constrained robust synthesis program."""

    uncertainty: UncertaintyModel
    state_set: SoftPolytope
    input_set: SoftPolytope
    trust_x: list[SoftPolytope]  # per-step state part of the trust region
    trust_u: list[SoftPolytope]  # per-step input part
    x0: Vector
    u_ref: Vector
    penalty_constraint: float = DEFAULT_PENALTY_CONSTRAINT
    penalty_trust: float = DEFAULT_PENALTY_TRUST
    psi_min: float = DEFAULT_PSI_MIN
    regularization: float = DEFAULT_REGULARIZATION
    # small linear cost on the filter magnitudes: picks the least conservative
    # disturbance over-approximation among otherwise equivalent optima and
    # pins psi to its floor when the envelope vanishes (excluded from the
    # reported objective)
    psi_pressure: float = DEFAULT_PSI_PRESSURE

    def __post_init__(self) -> None:
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        self.u_ref = np.atleast_1d(np.asarray(self.u_ref, dtype=float))
        unc = self.uncertainty
        if self.state_set.dim != unc.nx:
            raise ValueError("state set dimension mismatch")
        if self.input_set.dim != unc.nu:
            raise ValueError("input set dimension mismatch")
        if len(self.trust_x) != unc.horizon or len(self.trust_u) != unc.horizon:
            raise ValueError("trust region count must equal the horizon")
        if self.x0.shape != (unc.nx,):
            raise ValueError("x0 dimension mismatch")
        if self.u_ref.shape != (unc.nu,):
            raise ValueError("u_ref dimension mismatch")
        if not (np.isfinite(self.x0).all() and np.isfinite(self.u_ref).all()):
            raise ValueError("x0 and u_ref must be finite")


class _Layout:
    """Flat variable layout for the assembled program."""

    def __init__(self) -> None:
        self.n = 0
        self.counts: dict[str, int] = {}

    def alloc(self, group: str, count: int) -> int:
        offset = self.n
        self.n += count
        self.counts[group] = self.counts.get(group, 0) + count
        return offset


class _Rows:
    """Triplet accumulator for one constraint matrix."""

    def __init__(self) -> None:
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.rhs: list[float] = []
        self.m = 0

    def add(self, cols: list[int], vals: list[float], rhs: float) -> None:
        self.rows.extend([self.m] * len(cols))
        self.cols.extend(cols)
        self.vals.extend(vals)
        self.rhs.append(rhs)
        self.m += 1

    def matrix(self, n: int) -> sparse.csc_matrix:
        return sparse.csc_matrix(
            (self.vals, (self.rows, self.cols)), shape=(self.m, n)
        )


@dataclass
class QuadraticProgram:
    """Standard-form program: minimize 0.5 x'Px + q'x + const subject to
    ``a_eq x = b_eq`` and ``a_in x <= b_in``."""

    p_diag: Vector
    q: Vector
    const: float
    a_eq: sparse.csc_matrix
    b_eq: Vector
    a_in: sparse.csc_matrix
    b_in: Vector
    layout: dict
    counts: dict

    @property
    def num_vars(self) -> int:
        return self.q.shape[0]

    @property
    def num_constraints(self) -> int:
        return self.b_eq.shape[0] + self.b_in.shape[0]

    def osqp_form(self):
        """(P, q, A, l, u) with stacked equality and inequality rows."""
        a = sparse.vstack([self.a_eq, self.a_in], format="csc")
        l = np.concatenate([self.b_eq, np.full(self.b_in.shape[0], -np.inf)])
        u = np.concatenate([self.b_eq, self.b_in])
        return sparse.diags(self.p_diag, format="csc"), self.q, a, l, u

    def export(self, path) -> None:
        """Text export of (P, q; A, l, u) as sparse triplets."""
        p, q, a, l, u = self.osqp_form()
        a = a.tocoo()
        p = p.tocoo()
        with open(path, "w") as fh:
            fh.write("# minimize 0.5 x'Px + q'x + const  s.t.  l <= A x <= u\n")
            fh.write(f"nvar {self.num_vars}\n")
            fh.write(f"nconstr {a.shape[0]}\n")
            fh.write(f"const {self.const!r}\n")
            fh.write(f"P {p.nnz}\n")
            for i, j, v in zip(p.row, p.col, p.data):
                fh.write(f"{i} {j} {float(v)!r}\n")
            fh.write("q\n")
            for v in q:
                fh.write(f"{float(v)!r}\n")
            fh.write(f"A {a.nnz}\n")
            for i, j, v in zip(a.row, a.col, a.data):
                fh.write(f"{i} {j} {float(v)!r}\n")
            fh.write("l\n")
            for v in l:
                fh.write(f"{float(v)!r}\n")
            fh.write("u\n")
            for v in u:
                fh.write(f"{float(v)!r}\n")


def assemble(problem: SlsProblem) -> QuadraticProgram:
    """Build the quadratic program for one synthesis instance.

    Variable groups (in layout order): strictly-causal blocks of phi_x, phi_u
    (including its diagonal), strictly-causal psi blocks, the psi diagonal
    vectors, the nominal plan h and v, slack vectors, then the epigraph
    auxiliaries introduced by the one-norm linearizations.
    """
    unc = problem.uncertainty
    nx, nu, horizon = unc.nx, unc.nu, unc.horizon
    t_end = horizon  # states run 0..t_end, inputs 0..t_end-1
    mx = problem.state_set.num_rows
    mu = problem.input_set.num_rows
    sigma_w = unc.sigma_w

    layout = _Layout()
    phix = {
        (t, lag): layout.alloc("phi_x", nx * nx)
        for t in range(1, t_end + 1)
        for lag in range(1, t + 1)
    }
    phiu = {
        (t, lag): layout.alloc("phi_u", nu * nx)
        for t in range(t_end)
        for lag in range(t + 1)
    }
    psib = {
        (t, lag): layout.alloc("psi", nx * nx)
        for t in range(1, t_end + 1)
        for lag in range(1, t + 1)
    }
    psid = {t: layout.alloc("psi_diag", nx) for t in range(t_end)}
    h_off = {t: layout.alloc("h", nx) for t in range(t_end + 1)}
    v_off = {t: layout.alloc("v", nu) for t in range(t_end)}
    eps_x = {t: layout.alloc("eps_x", mx) for t in range(t_end + 1)}
    eps_u = {t: layout.alloc("eps_u", mu) for t in range(t_end)}
    sig_x = {t: layout.alloc("sig_x", problem.trust_x[t].num_rows) for t in range(t_end)}
    sig_u = {t: layout.alloc("sig_u", problem.trust_u[t].num_rows) for t in range(t_end)}

    eq = _Rows()
    ineq = _Rows()

    # initial nominal state
    for r in range(nx):
        eq.add([h_off[0] + r], [1.0], float(problem.x0[r]))

    # nominal dynamics h_{t+1} = A_t h_t + B_t v_t + c_t
    for t in range(t_end):
        a_t, b_t, c_t = unc.a[t], unc.b[t], unc.c[t]
        for r in range(nx):
            cols = [h_off[t + 1] + r]
            vals = [1.0]
            for c in range(nx):
                cols.append(h_off[t] + c)
                vals.append(-a_t[r, c])
            for c in range(nu):
                cols.append(v_off[t] + c)
                vals.append(-b_t[r, c])
            eq.add(cols, vals, float(c_t[r]))

    # response parameterization, blockwise: for every row t >= 1 and lag >= 1,
    # phi_x^{t,l} - A_{t-1} phi_x^{t-1,l-1} - B_{t-1} phi_u^{t-1,l-1} = psi^{t,l}
    # (lag-0 blocks are the structural identities / diag(psi) and need no rows)
    for t in range(1, t_end + 1):
        a_prev, b_prev = unc.a[t - 1], unc.b[t - 1]
        for lag in range(1, t + 1):
            for r in range(nx):
                for c in range(nx):
                    cols = [phix[(t, lag)] + r * nx + c, psib[(t, lag)] + r * nx + c]
                    vals = [1.0, -1.0]
                    rhs = 0.0
                    if lag == 1:
                        if t == 1:
                            rhs += a_prev[r, c]  # phi_x^{0,0} = I
                        else:
                            cols.append(psid[t - 2] + c)
                            vals.append(-a_prev[r, c])
                    else:
                        for m in range(nx):
                            cols.append(phix[(t - 1, lag - 1)] + m * nx + c)
                            vals.append(-a_prev[r, m])
                    for m in range(nu):
                        cols.append(phiu[(t - 1, lag - 1)] + m * nx + c)
                        vals.append(-b_prev[r, m])
                    eq.add(cols, vals, rhs)

    # psi floor and slack nonnegativity
    for t in range(t_end):
        for i in range(nx):
            ineq.add([psid[t] + i], [-1.0], -problem.psi_min)
    for t in range(t_end + 1):
        for j in range(mx):
            ineq.add([eps_x[t] + j], [-1.0], 0.0)
    for t in range(t_end):
        for j in range(mu):
            ineq.add([eps_u[t] + j], [-1.0], 0.0)
        for j in range(problem.trust_x[t].num_rows):
            ineq.add([sig_x[t] + j], [-1.0], 0.0)
        for j in range(problem.trust_u[t].num_rows):
            ineq.add([sig_u[t] + j], [-1.0], 0.0)

    aux_start = layout.n

    def abs_aux(expr_cols: list[int], expr_vals: list[float]) -> int:
        """Allocate s >= |expr| via two rows; returns the variable index."""
        s = layout.alloc("aux_abs", 1)
        ineq.add(expr_cols + [s], expr_vals + [-1.0], 0.0)
        ineq.add(expr_cols + [s], [-v for v in expr_vals] + [-1.0], 0.0)
        return s

    def phi_x_column_expr(t: int, col: int, weight_row: Vector, r: int):
        """Columns/values of sum_c weight[c] * phi_x^{t, t-col}[c, r]."""
        lag = t - col
        cols: list[int] = []
        vals: list[float] = []
        if lag == 0:
            # diagonal block diag(psi_{t-1}) (t >= 1 whenever col == t >= 1)
            if weight_row[r] != 0.0:
                cols.append(psid[t - 1] + r)
                vals.append(float(weight_row[r]))
        else:
            for c in range(nx):
                if weight_row[c] != 0.0:
                    cols.append(phix[(t, lag)] + c * nx + r)
                    vals.append(float(weight_row[c]))
        return cols, vals

    def phi_u_column_expr(t: int, col: int, weight_row: Vector, r: int):
        lag = t - col
        cols: list[int] = []
        vals: list[float] = []
        for c in range(nu):
            if weight_row[c] != 0.0:
                cols.append(phiu[(t, lag)] + c * nx + r)
                vals.append(float(weight_row[c]))
        return cols, vals

    # residual over-approximation rows: the filtered virtual disturbance must
    # dominate the worst-case lumped residual componentwise
    for t in range(t_end):
        dxu = (unc.d_up_x[t], unc.d_up_u[t], unc.d_up[t])
        dxl = (unc.d_low_x[t], unc.d_low_u[t], unc.d_low[t])
        for i in range(nx):
            for sign, (dx, du, dc) in (("up", dxu), ("low", dxl)):
                s_mul = 1.0 if sign == "up" else -1.0
                cols = [psid[t] + i]
                vals = [-1.0]
                for c in range(nx):
                    if dx[i, c] != 0.0:
                        cols.append(h_off[t] + c)
                        vals.append(s_mul * dx[i, c])
                for c in range(nu):
                    if du[i, c] != 0.0:
                        cols.append(v_off[t] + c)
                        vals.append(s_mul * du[i, c])
                rhs = -sigma_w - s_mul * dc[i]
                if t >= 1:
                    for col in range(1, t + 1):
                        for r in range(nx):
                            e_cols, e_vals = phi_x_column_expr(t, col, dx[i], r)
                            u_cols, u_vals = phi_u_column_expr(t, col, du[i], r)
                            e_cols += u_cols
                            e_vals += u_vals
                            # minus the matching filter block psi^{t+1, t+1-col}
                            e_cols.append(psib[(t + 1, t + 1 - col)] + i * nx + r)
                            e_vals.append(-1.0)
                            s = abs_aux(e_cols, e_vals)
                            cols.append(s)
                            vals.append(1.0)
                ineq.add(cols, vals, rhs)

    def tighten_state(t: int, poly: SoftPolytope, slack_off: int) -> None:
        """Rows of ``poly`` on the state at step t, worst case over the tube."""
        for j in range(poly.num_rows):
            row = poly.f[j]
            cols = [h_off[t] + c for c in range(nx) if row[c] != 0.0]
            vals = [float(row[c]) for c in range(nx) if row[c] != 0.0]
            if t >= 1:
                # lag-0 response is diag(psi_{t-1}): contributes |row| . psi
                for r in range(nx):
                    if row[r] != 0.0:
                        cols.append(psid[t - 1] + r)
                        vals.append(abs(float(row[r])))
                for col in range(1, t):
                    for r in range(nx):
                        e_cols, e_vals = phi_x_column_expr(t, col, row, r)
                        if e_cols:
                            s = abs_aux(e_cols, e_vals)
                            cols.append(s)
                            vals.append(1.0)
            cols.append(slack_off + j)
            vals.append(-1.0)
            ineq.add(cols, vals, float(poly.b[j]))

    def tighten_input(t: int, poly: SoftPolytope, slack_off: int) -> None:
        for j in range(poly.num_rows):
            row = poly.f[j]
            cols = [v_off[t] + c for c in range(nu) if row[c] != 0.0]
            vals = [float(row[c]) for c in range(nu) if row[c] != 0.0]
            for col in range(1, t + 1):
                for r in range(nx):
                    e_cols, e_vals = phi_u_column_expr(t, col, row, r)
                    if e_cols:
                        s = abs_aux(e_cols, e_vals)
                        cols.append(s)
                        vals.append(1.0)
            cols.append(slack_off + j)
            vals.append(-1.0)
            ineq.add(cols, vals, float(poly.b[j]))

    for t in range(t_end + 1):
        tighten_state(t, problem.state_set, eps_x[t])
    for t in range(t_end):
        tighten_input(t, problem.input_set, eps_u[t])
        tighten_state(t, problem.trust_x[t], sig_x[t])
        tighten_input(t, problem.trust_u[t], sig_u[t])

    n = layout.n
    reg = 2.0 * problem.regularization
    p_diag = np.zeros(n)
    for group, off_map, size in (
        ("phi_x", phix, nx * nx),
        ("phi_u", phiu, nu * nx),
        ("psi", psib, nx * nx),
    ):
        for off in off_map.values():
            p_diag[off : off + size] = reg
    for off in psid.values():
        p_diag[off : off + nx] = reg
    p_diag[aux_start:n] = reg
    p_diag[v_off[0] : v_off[0] + nu] = 2.0

    q = np.zeros(n)
    q[v_off[0] : v_off[0] + nu] = -2.0 * problem.u_ref
    for off in psid.values():
        q[off : off + nx] = problem.psi_pressure
    # the same pressure on the epigraph auxiliaries actively minimizes every
    # linearized one-norm, i.e. the tube widths and tightening margins
    q[aux_start:n] = problem.psi_pressure
    for t in range(t_end + 1):
        q[eps_x[t] : eps_x[t] + mx] = problem.penalty_constraint
    for t in range(t_end):
        q[eps_u[t] : eps_u[t] + mu] = problem.penalty_constraint
        q[sig_x[t] : sig_x[t] + problem.trust_x[t].num_rows] = problem.penalty_trust
        q[sig_u[t] : sig_u[t] + problem.trust_u[t].num_rows] = problem.penalty_trust

    layout_info = {
        "nx": nx,
        "nu": nu,
        "horizon": t_end,
        "mx": mx,
        "mu": mu,
        "phix": phix,
        "phiu": phiu,
        "psib": psib,
        "psid": psid,
        "h": h_off,
        "v": v_off,
        "eps_x": eps_x,
        "eps_u": eps_u,
        "sig_x": sig_x,
        "sig_u": sig_u,
        "trust_rows_x": [p.num_rows for p in problem.trust_x],
        "trust_rows_u": [p.num_rows for p in problem.trust_u],
        "u_ref": problem.u_ref.copy(),
        "penalty_constraint": problem.penalty_constraint,
        "penalty_trust": problem.penalty_trust,
        "psi_min": problem.psi_min,
    }
    return QuadraticProgram(
        p_diag=p_diag,
        q=q,
        const=float(problem.u_ref @ problem.u_ref),
        a_eq=eq.matrix(n),
        b_eq=np.array(eq.rhs),
        a_in=ineq.matrix(n),
        b_in=np.array(ineq.rhs),
        layout=layout_info,
        counts=dict(layout.counts),
    )


@dataclass
class SlsSolution:
    """Solved synthesis instance with materialized operators."""

    phi_x: BltOperator
    phi_u: BltOperator
    psi_op: BltOperator
    psi: list[Vector]  # diagonal vectors psi_0 .. psi_{T-1}
    h: Matrix  # (T+1, nx)
    v: Matrix  # (T, nu)
    eps_x: Matrix
    eps_u: Matrix
    sig_x: list[Vector]
    sig_u: list[Vector]
    objective: float
    status: str
    solve_time: float
    psi_min: float
    u_ref: Vector

    @property
    def horizon(self) -> int:
        return self.v.shape[0]

    def slack_values(self) -> Vector:
        parts = [self.eps_x.ravel(), self.eps_u.ravel()]
        parts.extend(self.sig_x)
        parts.extend(self.sig_u)
        return np.concatenate(parts)


def max_slack(solution: SlsSolution, tol: float = SLACK_ZERO_TOL) -> float:
    """Largest slack entry; values below ``tol`` count as exactly zero."""
    value = float(np.max(solution.slack_values(), initial=0.0))
    return 0.0 if value < tol else value


def _solve_clarabel(qp: QuadraticProgram):
    import clarabel

    a = sparse.vstack([qp.a_eq, qp.a_in], format="csc")
    b = np.concatenate([qp.b_eq, qp.b_in])
    cones = [
        clarabel.ZeroConeT(qp.b_eq.shape[0]),
        clarabel.NonnegativeConeT(qp.b_in.shape[0]),
    ]
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    # tight tolerances: downstream invariants are checked at 1e-6 and the
    # linear pressure terms need a small complementarity gap to pin variables
    settings.tol_gap_abs = 1e-11
    settings.tol_gap_rel = 1e-11
    settings.tol_feas = 1e-10
    solver = clarabel.DefaultSolver(
        sparse.diags(qp.p_diag, format="csc"), qp.q, a, b, cones, settings
    )
    sol = solver.solve()
    status = str(sol.status)
    if status in ("Solved", "AlmostSolved"):
        return np.asarray(sol.x), status
    if "Infeasible" in status:
        raise InfeasibleProblemError(f"solver reports {status}")
    raise SolverError(f"solver failed with status {status}")


def _solve_osqp(qp: QuadraticProgram):
    import osqp

    p, q, a, l, u = qp.osqp_form()
    solver = osqp.OSQP()
    solver.setup(
        P=p, q=q, A=a, l=l, u=u,
        eps_abs=1e-9, eps_rel=1e-9,
        max_iter=200_000, polishing=True, verbose=False,
    )
    res = solver.solve(raise_error=False)
    status = str(res.info.status)
    if "infeasible" in status:
        raise InfeasibleProblemError(f"solver reports {status}")
    if "solved" not in status:
        raise SolverError(f"solver failed with status {status}")
    return np.asarray(res.x), status


def solve_qp(qp: QuadraticProgram, solver: str = "clarabel") -> SlsSolution:
    """Solve an assembled program and materialize the solution operators."""
    started = time.perf_counter()
    if solver == "clarabel":
        x, status = _solve_clarabel(qp)
    elif solver == "osqp":
        x, status = _solve_osqp(qp)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    elapsed = time.perf_counter() - started

    lay = qp.layout
    nx, nu, t_end = lay["nx"], lay["nu"], lay["horizon"]
    psi = [x[lay["psid"][t] : lay["psid"][t] + nx].copy() for t in range(t_end)]

    def blt_from(group: dict, p: int, q_: int, n_rows: int, diag) -> BltOperator:
        rows = []
        for t in range(n_rows):
            row = []
            for lag in range(t + 1):
                if lag == 0 and diag is not None:
                    row.append(np.eye(p) if t == 0 else np.diag(diag[t - 1]))
                else:
                    off = group[(t, lag)]
                    row.append(x[off : off + p * q_].reshape(p, q_).copy())
            rows.append(row)
        return BltOperator(rows)

    phi_x = blt_from(lay["phix"], nx, nx, t_end + 1, psi)
    psi_op = blt_from(lay["psib"], nx, nx, t_end + 1, psi)
    phi_u = blt_from(lay["phiu"], nu, nx, t_end, None)

    h = np.vstack([x[lay["h"][t] : lay["h"][t] + nx] for t in range(t_end + 1)])
    v = np.vstack([x[lay["v"][t] : lay["v"][t] + nu] for t in range(t_end)])
    mx, mu = lay["mx"], lay["mu"]
    eps_x = np.vstack(
        [x[lay["eps_x"][t] : lay["eps_x"][t] + mx] for t in range(t_end + 1)]
    )
    eps_u = np.vstack([x[lay["eps_u"][t] : lay["eps_u"][t] + mu] for t in range(t_end)])
    sig_x = [
        x[lay["sig_x"][t] : lay["sig_x"][t] + lay["trust_rows_x"][t]].copy()
        for t in range(t_end)
    ]
    sig_u = [
        x[lay["sig_u"][t] : lay["sig_u"][t] + lay["trust_rows_u"][t]].copy()
        for t in range(t_end)
    ]

    solution = SlsSolution(
        phi_x=phi_x, phi_u=phi_u, psi_op=psi_op, psi=psi,
        h=h, v=v, eps_x=eps_x, eps_u=eps_u, sig_x=sig_x, sig_u=sig_u,
        objective=0.0, status=status, solve_time=elapsed,
        psi_min=lay["psi_min"], u_ref=lay["u_ref"].copy(),
    )
    # objective recomputed from the solution values; slack entries below the
    # numerical zero tolerance are treated as zero
    eps_total = float(np.sum(eps_x[eps_x >= SLACK_ZERO_TOL])) + float(
        np.sum(eps_u[eps_u >= SLACK_ZERO_TOL])
    )
    sig_all = np.concatenate(sig_x + sig_u) if sig_x or sig_u else np.zeros(0)
    sig_total = float(np.sum(sig_all[sig_all >= SLACK_ZERO_TOL]))
    tracking = float(np.sum((v[0] - lay["u_ref"]) ** 2))
    solution.objective = (
        tracking
        + lay["penalty_constraint"] * eps_total
        + lay["penalty_trust"] * sig_total
    )
    return solution


def affine_residual(solution: SlsSolution, unc: UncertaintyModel) -> float:
    """Infinity norm of the response-parameterization defect.

    Rebuilds the block equation ``[I - Z A, -Z B] [phi_x; phi_u] - psi``
    densely, independent of the assembly path.
    """
    nx, nu, t_end = unc.nx, unc.nu, unc.horizon
    n = (t_end + 1) * nx
    phi_x = solution.phi_x.to_dense()
    psi_d = solution.psi_op.to_dense()
    phi_u = np.zeros(((t_end + 1) * nu, n))
    phi_u[: t_end * nu, :] = solution.phi_u.to_dense(t_end + 1)
    # Z A and Z B act blockwise: block-row t picks up A_{t-1}, B_{t-1}
    za = np.zeros((n, n))
    zb = np.zeros((n, (t_end + 1) * nu))
    for t in range(1, t_end + 1):
        za[t * nx : (t + 1) * nx, (t - 1) * nx : t * nx] = unc.a[t - 1]
        zb[t * nx : (t + 1) * nx, (t - 1) * nu : t * nu] = unc.b[t - 1]
    residual = phi_x - za @ phi_x - zb @ phi_u - psi_d
    return float(np.abs(residual).max())


class FeedbackPolicy:
    """Realized policy ``u = K (x - h) + v`` via virtual-disturbance
    reconstruction; the gain is never formed explicitly.

    Calls must be made with consecutive time indices starting at zero.  The
    policy holds mutable reconstruction state; confine an instance to one
    rollout at a time and ``reset()`` it between rollouts.
    """

    def __init__(
        self,
        phi_x: BltOperator,
        phi_u: BltOperator,
        psi: list[Vector],
        h: Matrix,
        v: Matrix,
        psi_min: float = DEFAULT_PSI_MIN,
    ):
        for t, entry in enumerate(psi):
            if np.any(entry < psi_min - 1e-9):
                raise PolicyError(
                    f"psi_{t} entry {entry.min():.3e} below the floor {psi_min:.3e}"
                )
        self.phi_x = phi_x
        self.phi_u = phi_u
        self.psi = [np.asarray(p, dtype=float) for p in psi]
        self.h = np.asarray(h, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.psi_min = psi_min
        self._wtilde: list[Vector] = []
        self._next_t = 0

    @property
    def horizon(self) -> int:
        return self.v.shape[0]

    def reset(self) -> None:
        self._wtilde = []
        self._next_t = 0

    @property
    def virtual_disturbances(self) -> list[Vector]:
        """Reconstructed virtual disturbances observed so far."""
        return [w.copy() for w in self._wtilde]

    def _reconstruct(self, t: int, x_t: Vector) -> Vector:
        """Recover wtilde_{t-1} from the observed state error at time t."""
        acc = np.asarray(x_t, dtype=float) - self.h[t]
        for i in range(1, t):
            acc = acc - self.phi_x.block(t, t - i) @ self._wtilde[i - 1]
        return acc / self.psi[t - 1]

    def apply(self, t: int, x_t: Vector) -> Vector:
        if t != self._next_t:
            raise PolicyError(f"expected call for t={self._next_t}, got t={t}")
        if t >= self.horizon:
            raise PolicyError(f"t={t} beyond policy horizon {self.horizon}")
        self._next_t += 1
        if t == 0:
            return self.v[0].copy()
        self._wtilde.append(self._reconstruct(t, x_t))
        u = self.v[t].copy()
        for i in range(1, t + 1):
            u = u + self.phi_u.block(t, t - i) @ self._wtilde[i - 1]
        return u

    def finalize(self, x_end: Vector) -> list[Vector]:
        """Reconstruct the last virtual disturbance from the terminal state."""
        t = self._next_t
        if t != self.horizon:
            raise PolicyError(f"finalize called at t={t}, expected {self.horizon}")
        self._wtilde.append(self._reconstruct(t, x_end))
        self._next_t += 1
        return self.virtual_disturbances


def extract_policy(solution: SlsSolution) -> FeedbackPolicy:
    """Materialize the feedback policy from a solved instance."""
    return FeedbackPolicy(
        phi_x=solution.phi_x,
        phi_u=solution.phi_u,
        psi=solution.psi,
        h=solution.h,
        v=solution.v,
        psi_min=solution.psi_min,
    )
