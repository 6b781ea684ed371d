"""Outer safety-filter loop: reference rollout, trust-region growth, and
best-slack selection over repeated convex solves.

Each call builds trust regions around a reference trajectory of the learned
model, extracts per-step envelopes, solves the robust synthesis program, and
either certifies (all slacks zero) or re-centers the reference by rolling out
the newly synthesized policy and growing the trust radius.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .crown import TrustRegion, bounds_along_trajectory, extract_uncertainty
from .network import Matrix, MlpNetwork, Vector
from .sls import (
    DEFAULT_PENALTY_CONSTRAINT,
    DEFAULT_PENALTY_TRUST,
    DEFAULT_PSI_MIN,
    FeedbackPolicy,
    SlsProblem,
    SoftPolytope,
    SolverError,
    assemble,
    extract_policy,
    max_slack,
    solve_qp,
)

log = logging.getLogger("safefilter.psf")


@dataclass(frozen=True)
class FilterConfig:
    """Tuning knobs of the outer loop."""

    horizon: int = 10
    iterations: int = 5
    initial_radius: float = 0.1
    growth: float = 2.0
    penalty_constraint: float = DEFAULT_PENALTY_CONSTRAINT
    penalty_trust: float = DEFAULT_PENALTY_TRUST
    psi_min: float = DEFAULT_PSI_MIN
    slack_tolerance: float = 1e-7
    # stop at the first certified iteration; turning this off reproduces the
    # literal fixed-iteration loop
    early_exit: bool = True
    solver: str = "clarabel"

    def __post_init__(self) -> None:
        if self.horizon < 1 or self.iterations < 1:
            raise ValueError("horizon and iterations must be at least 1")
        if self.initial_radius <= 0.0:
            raise ValueError("initial_radius must be positive")
        if self.growth <= 1.0:
            raise ValueError("growth factor must exceed 1")


@dataclass
class IterationDiagnostics:
    iteration: int
    radius: float
    max_slack: float
    objective: float
    status: str
    solve_ms: float
    certified: bool


@dataclass
class FilterResult:
    """Outcome of one filter call."""

    u0: Vector
    safe_cert: bool
    best_slack: float
    policy: FeedbackPolicy
    iterations: list[IterationDiagnostics] = field(default_factory=list)

    @property
    def objective(self) -> float:
        for diag in self.iterations:
            if diag.certified:
                return diag.objective
        finite = [d.objective for d in self.iterations if np.isfinite(d.objective)]
        return min(finite) if finite else float("nan")


def rollout_nominal(
    net: MlpNetwork | None,
    a_plant: Matrix,
    b_plant: Matrix,
    x0: Vector,
    controls: Matrix,
) -> Matrix:
    """Disturbance-free rollout of the learned model under fixed controls."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    steps = controls.shape[0]
    nx = a_plant.shape[0]
    states = np.zeros((steps + 1, nx))
    states[0] = np.asarray(x0, dtype=float)
    for t in range(steps):
        x, u = states[t], controls[t]
        nxt = a_plant @ x + b_plant @ u
        if net is not None:
            nxt = nxt + net.forward(np.concatenate([x, u]))
        if not np.isfinite(nxt).all():
            raise FloatingPointError(f"non-finite state at step {t + 1}: {nxt}")
        states[t + 1] = nxt
    return states


def rollout_policy(
    net: MlpNetwork | None,
    a_plant: Matrix,
    b_plant: Matrix,
    x0: Vector,
    policy: FeedbackPolicy,
) -> tuple[Matrix, Matrix]:
    """Closed-loop disturbance-free rollout of the learned model.

    Resets the policy's reconstruction state before and after use.
    """
    steps = policy.horizon
    nx = a_plant.shape[0]
    nu = b_plant.shape[1]
    states = np.zeros((steps + 1, nx))
    controls = np.zeros((steps, nu))
    states[0] = np.asarray(x0, dtype=float)
    policy.reset()
    try:
        for t in range(steps):
            u = policy.apply(t, states[t])
            controls[t] = u
            nxt = a_plant @ states[t] + b_plant @ u
            if net is not None:
                nxt = nxt + net.forward(np.concatenate([states[t], u]))
            if not np.isfinite(nxt).all():
                raise FloatingPointError(f"non-finite state at step {t + 1}: {nxt}")
            states[t + 1] = nxt
    finally:
        policy.reset()
    return states, controls


def trust_region_polytopes(
    centers: Matrix, radius: float, nx: int
) -> tuple[list[TrustRegion], list[SoftPolytope], list[SoftPolytope]]:
    regions = [TrustRegion(center, radius) for center in centers]
    trust_x = [
        SoftPolytope.box(c[:nx] - radius, c[:nx] + radius) for c in centers
    ]
    trust_u = [
        SoftPolytope.box(c[nx:] - radius, c[nx:] + radius) for c in centers
    ]
    return regions, trust_x, trust_u


def filter_step(
    x_k: Vector,
    u_ref: Vector,
    init_controls: Matrix,
    net: MlpNetwork,
    a_plant: Matrix,
    b_plant: Matrix,
    state_set: SoftPolytope,
    input_set: SoftPolytope,
    config: FilterConfig,
    sigma_w: float,
) -> FilterResult:
    """One filtered control computation at state ``x_k``.

    ``init_controls`` is the primary controller's planned sequence over the
    filter horizon; it seeds the reference trajectory.  Returns the first
    input of the least-slack certified-or-incumbent policy together with the
    certificate flag.
    """
    x_k = np.asarray(x_k, dtype=float)
    u_ref = np.atleast_1d(np.asarray(u_ref, dtype=float))
    init_controls = np.atleast_2d(np.asarray(init_controls, dtype=float))
    horizon = config.horizon
    if init_controls.shape[0] < horizon:
        raise ValueError(
            f"need {horizon} planned controls, got {init_controls.shape[0]}"
        )
    init_controls = init_controls[:horizon]
    nx = a_plant.shape[0]

    states = rollout_nominal(net, a_plant, b_plant, x_k, init_controls)
    centers = np.hstack([states[:horizon], init_controls])
    radius = config.initial_radius

    best_slack = np.inf
    winner = None
    certified = False
    diagnostics: list[IterationDiagnostics] = []

    for iteration in range(1, config.iterations + 1):
        regions, trust_x, trust_u = trust_region_polytopes(centers, radius, nx)
        started = time.perf_counter()
        try:
            bounds = bounds_along_trajectory(net, regions)
            model = extract_uncertainty(a_plant, b_plant, bounds, sigma_w)
            problem = SlsProblem(
                uncertainty=model,
                state_set=state_set,
                input_set=input_set,
                trust_x=trust_x,
                trust_u=trust_u,
                x0=x_k,
                u_ref=u_ref,
                penalty_constraint=config.penalty_constraint,
                penalty_trust=config.penalty_trust,
                psi_min=config.psi_min,
            )
            solution = solve_qp(assemble(problem), solver=config.solver)
        except SolverError as exc:
            log.warning("iteration %d skipped: %s", iteration, exc)
            diagnostics.append(
                IterationDiagnostics(
                    iteration=iteration, radius=radius, max_slack=float("nan"),
                    objective=float("nan"), status=f"failed: {exc}",
                    solve_ms=1e3 * (time.perf_counter() - started), certified=False,
                )
            )
            radius *= config.growth
            continue
        elapsed_ms = 1e3 * (time.perf_counter() - started)

        slack = max_slack(solution, tol=config.slack_tolerance)
        is_zero = slack == 0.0
        diagnostics.append(
            IterationDiagnostics(
                iteration=iteration, radius=radius, max_slack=slack,
                objective=solution.objective, status=solution.status,
                solve_ms=elapsed_ms, certified=is_zero,
            )
        )
        log.debug(
            "iteration %d: radius=%.4g slack=%.4g objective=%.6g",
            iteration, radius, slack, solution.objective,
        )

        if is_zero:
            winner = solution
            certified = True
            best_slack = 0.0
            if config.early_exit:
                break
            # the literal loop neither re-centers nor grows after certifying,
            # so remaining iterations re-solve the same program
            continue
        if not certified:
            policy = extract_policy(solution)
            new_states, new_controls = rollout_policy(
                net, a_plant, b_plant, x_k, policy
            )
            centers = np.hstack([new_states[:horizon], new_controls])
            radius *= config.growth
            if slack <= best_slack:
                best_slack = slack
                winner = solution

    if winner is None:
        raise SolverError("every filter iteration failed to solve")
    return FilterResult(
        u0=winner.v[0].copy(),
        safe_cert=certified,
        best_slack=0.0 if certified else float(best_slack),
        policy=extract_policy(winner),
        iterations=diagnostics,
    )
