"""Box-constrained iterative LQR over the learned dynamics, plus the
soft-constrained variant used as the second primary controller.

The planner linearizes the model analytically (plant matrices plus network
Jacobians), runs the standard backward recursion with Levenberg-style
regularization, and enforces the control box by clamping in the forward pass.
State constraints are deliberately ignored by the nominal variant; the
soft-constrained variant adds hinge penalties ``rho * max(0, F x - b)`` per
polytope row to the running and terminal cost.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .network import Matrix, MlpNetwork, Vector
from .sls import SoftPolytope


class IlqrDivergence(RuntimeError):
    """Planner cost became non-finite; carries the iteration trace."""

    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


@dataclass
class NnDynamicsModel:
    """Learned dynamics ``x+ = A x + B u + f(x, u)`` with analytic Jacobians."""

    a: Matrix
    b: Matrix
    net: MlpNetwork | None = None

    @property
    def nx(self) -> int:
        return self.a.shape[0]

    @property
    def nu(self) -> int:
        return self.b.shape[1]

    def step(self, x: Vector, u: Vector) -> Vector:
        nxt = self.a @ x + self.b @ u
        if self.net is not None:
            nxt = nxt + self.net.forward(np.concatenate([x, u]))
        return nxt

    def linearize(self, x: Vector, u: Vector) -> tuple[Matrix, Matrix]:
        if self.net is None:
            return self.a, self.b
        jac = self.net.jacobian(np.concatenate([x, u]))
        return self.a + jac[:, : self.nx], self.b + jac[:, self.nx :]


@dataclass(frozen=True)
class IlqrSpec:
    """Cost, constraints, and solver schedule for one planning problem."""

    horizon: int
    q: Matrix
    r: Matrix
    q_terminal: Matrix
    x_ref: Matrix  # (horizon+1, nx) tracking reference
    u_min: Vector
    u_max: Vector
    rho: float = 0.0  # hinge weight; 0 disables the soft state constraints
    state_set: SoftPolytope | None = None
    tolerance: float = 1e-8
    max_iterations: int = 80
    reg_init: float = 1e-6
    reg_min: float = 1e-9
    reg_max: float = 1e8

    def __post_init__(self) -> None:
        if self.rho < 0.0:
            raise ValueError("rho must be non-negative")
        if self.rho > 0.0 and self.state_set is None:
            raise ValueError("soft constraints need a state polytope")
        eig_r = np.linalg.eigvalsh(self.r)
        if eig_r.min() <= 0.0:
            raise ValueError("R must be positive definite")
        if np.linalg.eigvalsh(self.q).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")


def make_spec(
    horizon: int,
    q_diag,
    r_diag,
    target: Vector,
    u_limit: float,
    rho: float = 0.0,
    state_set: SoftPolytope | None = None,
    qf_scale: float = 1.0,
) -> IlqrSpec:
    """Convenience builder for constant-target tracking."""
    q = np.diag(np.atleast_1d(np.asarray(q_diag, dtype=float)))
    r = np.diag(np.atleast_1d(np.asarray(r_diag, dtype=float)))
    target = np.atleast_1d(np.asarray(target, dtype=float))
    x_ref = np.tile(target, (horizon + 1, 1))
    nu = r.shape[0]
    return IlqrSpec(
        horizon=horizon, q=q, r=r, q_terminal=qf_scale * q, x_ref=x_ref,
        u_min=-u_limit * np.ones(nu), u_max=u_limit * np.ones(nu),
        rho=rho, state_set=state_set,
    )


def _hinge_cost(spec: IlqrSpec, x: Vector) -> float:
    if spec.rho == 0.0:
        return 0.0
    viol = np.maximum(spec.state_set.f @ x - spec.state_set.b, 0.0)
    return spec.rho * float(viol.sum())


def _hinge_grad(spec: IlqrSpec, x: Vector) -> Vector:
    if spec.rho == 0.0:
        return np.zeros_like(x)
    active = (spec.state_set.f @ x - spec.state_set.b) > 0.0
    return spec.rho * spec.state_set.f[active].sum(axis=0)


def sc_cost(spec: IlqrSpec, x: Vector, u: Vector, t: int) -> float:
    """Running cost at step t, including the hinge penalty when enabled."""
    dx = x - spec.x_ref[t]
    return float(dx @ spec.q @ dx + u @ spec.r @ u) + _hinge_cost(spec, x)


def trajectory_cost(spec: IlqrSpec, states: Matrix, controls: Matrix) -> float:
    total = 0.0
    for t in range(spec.horizon):
        total += sc_cost(spec, states[t], controls[t], t)
    dx = states[-1] - spec.x_ref[-1]
    total += float(dx @ spec.q_terminal @ dx) + _hinge_cost(spec, states[-1])
    return total


def _rollout(model: NnDynamicsModel, x0: Vector, controls: Matrix) -> Matrix:
    states = np.zeros((controls.shape[0] + 1, model.nx))
    states[0] = x0
    for t in range(controls.shape[0]):
        states[t + 1] = model.step(states[t], controls[t])
    return states


def ilqr_plan(
    model: NnDynamicsModel,
    spec: IlqrSpec,
    x0: Vector,
    u_init: Matrix | None = None,
) -> Matrix:
    """Plan a control sequence minimizing the tracking cost under the box.

    Returns controls of shape (horizon, nu), always inside the box.
    """
    x0 = np.asarray(x0, dtype=float)
    horizon, nu, nx = spec.horizon, model.nu, model.nx
    if u_init is None:
        controls = np.zeros((horizon, nu))
    else:
        controls = np.clip(np.asarray(u_init, dtype=float).copy(), spec.u_min, spec.u_max)
        if controls.shape != (horizon, nu):
            raise ValueError(f"warm start has shape {controls.shape}")
    states = _rollout(model, x0, controls)
    cost = trajectory_cost(spec, states, controls)
    trace = [cost]
    if not np.isfinite(cost):
        raise IlqrDivergence("initial rollout cost is not finite", trace)

    reg = spec.reg_init
    for _ in range(spec.max_iterations):
        # backward pass on the linearized model
        gains_k = np.zeros((horizon, nu))
        gains_cl = np.zeros((horizon, nu, nx))
        dx_term = states[-1] - spec.x_ref[-1]
        vx = 2.0 * spec.q_terminal @ dx_term + _hinge_grad(spec, states[-1])
        vxx = 2.0 * spec.q_terminal
        failed = False
        for t in range(horizon - 1, -1, -1):
            fx, fu = model.linearize(states[t], controls[t])
            dx = states[t] - spec.x_ref[t]
            lx = 2.0 * spec.q @ dx + _hinge_grad(spec, states[t])
            lu = 2.0 * spec.r @ controls[t]
            lxx = 2.0 * spec.q
            luu = 2.0 * spec.r
            qx = lx + fx.T @ vx
            qu = lu + fu.T @ vx
            qxx = lxx + fx.T @ vxx @ fx
            quu = luu + fu.T @ vxx @ fu + reg * np.eye(nu)
            qux = fu.T @ vxx @ fx
            try:
                quu_inv = np.linalg.inv(quu)
            except np.linalg.LinAlgError:
                failed = True
                break
            k = -quu_inv @ qu
            cl = -quu_inv @ qux
            gains_k[t] = k
            gains_cl[t] = cl
            vx = qx + cl.T @ quu @ k + cl.T @ qu + qux.T @ k
            vxx = qxx + cl.T @ quu @ cl + cl.T @ qux + qux.T @ cl
            vxx = 0.5 * (vxx + vxx.T)
        if failed:
            reg = min(reg * 10.0, spec.reg_max)
            continue

        # forward pass with clamping
        new_controls = np.zeros_like(controls)
        new_states = np.zeros_like(states)
        new_states[0] = x0
        for t in range(horizon):
            u = controls[t] + gains_k[t] + gains_cl[t] @ (new_states[t] - states[t])
            new_controls[t] = np.clip(u, spec.u_min, spec.u_max)
            new_states[t + 1] = model.step(new_states[t], new_controls[t])
        new_cost = trajectory_cost(spec, new_states, new_controls)
        if not np.isfinite(new_cost):
            raise IlqrDivergence(
                f"cost diverged after {len(trace)} iterations", trace
            )

        if new_cost < cost:
            improvement = (cost - new_cost) / max(1.0, abs(cost))
            states, controls, cost = new_states, new_controls, new_cost
            trace.append(cost)
            reg = max(reg * 0.5, spec.reg_min)
            if improvement < spec.tolerance:
                break
        else:
            reg = reg * 10.0
            if reg > spec.reg_max:
                break
    return controls


class RecedingHorizonController:
    """Replans each step (warm-started) and exposes the planned tail.

    This is the primary controller interface the safety filter wraps: it is
    performance-oriented and unaware of state constraints unless the
    soft-constrained penalty is enabled.
    """

    def __init__(self, model: NnDynamicsModel, spec: IlqrSpec):
        self.model = model
        self.spec = spec
        self._last_plan: Matrix | None = None

    def reset(self) -> None:
        self._last_plan = None

    def set_target(self, target: Vector) -> None:
        x_ref = np.tile(np.asarray(target, dtype=float), (self.spec.horizon + 1, 1))
        if not np.array_equal(x_ref, self.spec.x_ref):
            self.spec = replace(self.spec, x_ref=x_ref)
            self._last_plan = None  # replan from scratch on target change

    def step(self, x: Vector, tail: int) -> tuple[Vector, Matrix]:
        """Returns (first input, planned controls of length ``tail``)."""
        warm = None
        if self._last_plan is not None:
            warm = np.vstack([self._last_plan[1:], self._last_plan[-1:]])
        plan = ilqr_plan(self.model, self.spec, x, u_init=warm)
        self._last_plan = plan
        if tail > plan.shape[0]:
            raise ValueError(f"planner horizon {plan.shape[0]} shorter than {tail}")
        return plan[0].copy(), plan[:tail].copy()
