"""Closed-loop pendulum benchmark: four scenarios, four control schemes,
violation metrics, and CSV outputs.

Schemes: ``ilqr`` (box-constrained tracking, state-constraint-unaware),
``sc-ilqr`` (hinge penalties on state constraints), and their safe-filtered
variants where the planned sequence seeds the filter's reference trajectory
and the filtered first input is applied.

Constraint sets and controller weights are recorded configuration: the
evaluation sets are deliberately sized so the unfiltered planner violates
them on the benchmark scenarios.  The filter enforces a slightly tightened
copy of the state set; the buffer absorbs model mismatch and the finite
lookahead of the certificate (no terminal invariant set is synthesized).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ilqr import NnDynamicsModel, RecedingHorizonController, make_spec
from .network import Matrix, MlpNetwork, Vector
from .pendulum import TEST_CASES, PendulumParams, TestCase, linearized_plant, step_true
from .psf import FilterConfig, filter_step
from .sls import SoftPolytope

log = logging.getLogger("safefilter.bench")

SCHEMES = ("ilqr", "sc-ilqr", "safe-ilqr", "safe-sc-ilqr")


@dataclass(frozen=True)
class BenchConfig:
    """Recorded defaults for the full benchmark."""

    # ground-truth plant; the fixed linearization and the bundled residual
    # network correspond to these values
    mass: float = 0.75
    length: float = 2.0
    gravity: float = 9.81
    dt: float = 0.05
    # evaluation constraint sets
    theta_max: float = 3.6
    theta_dot_max: float = 3.2
    torque_max: float = 15.0
    # the filter enforces the state set shrunk by these margins; the buffer
    # absorbs model mismatch plus best-effort excursions on uncertified steps
    filter_state_margin: tuple[float, float] = (0.15, 0.35)
    # disturbance bound handed to the filter: injected noise plus an
    # allowance for the residual-model mismatch
    model_error_margin: float = 0.04
    # primary controller
    ilqr_horizon: int = 20
    q_diag: tuple[float, float] = (20.0, 1.0)
    r_diag: tuple[float, ...] = (0.01,)
    sc_rho: float = 100.0
    # filter loop per noise level: {sigma_w: (horizon, iterations, r0, growth)}
    filter_per_sigma: dict = field(
        default_factory=lambda: {
            0.05: (4, 5, 0.3, 1.5),
            0.1: (3, 5, 0.45, 1.5),
        }
    )
    reference_switch_time: float = 1.0
    solver: str = "clarabel"

    def state_set(self) -> SoftPolytope:
        return SoftPolytope.box(
            [-self.theta_max, -self.theta_dot_max],
            [self.theta_max, self.theta_dot_max],
        )

    def filter_state_set(self) -> SoftPolytope:
        m_th, m_thd = self.filter_state_margin
        return SoftPolytope.box(
            [-self.theta_max + m_th, -self.theta_dot_max + m_thd],
            [self.theta_max - m_th, self.theta_dot_max - m_thd],
        )

    def input_set(self) -> SoftPolytope:
        return SoftPolytope.box([-self.torque_max], [self.torque_max])

    def filter_config(self, sigma_w: float) -> FilterConfig:
        key = min(self.filter_per_sigma, key=lambda s: abs(s - sigma_w))
        horizon, iterations, r0, growth = self.filter_per_sigma[key]
        return FilterConfig(
            horizon=horizon, iterations=iterations,
            initial_radius=r0, growth=growth, solver=self.solver,
        )

    def to_json(self) -> str:
        doc = asdict(self)
        doc["filter_per_sigma"] = {
            str(k): list(v) for k, v in self.filter_per_sigma.items()
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(text: str) -> "BenchConfig":
        doc = json.loads(text)
        if "filter_per_sigma" in doc:
            doc["filter_per_sigma"] = {
                float(k): tuple(v) for k, v in doc["filter_per_sigma"].items()
            }
        for key in ("q_diag", "r_diag", "filter_state_margin"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return BenchConfig(**doc)


@dataclass
class TrajectoryLog:
    """Closed-loop record of one benchmark run."""

    case_id: int
    scheme: str
    sigma_w: float
    seed: int
    states: Matrix  # (steps+1, 2)
    u_ref: Matrix  # (steps, 1) primary controller outputs
    u_applied: Matrix  # (steps, 1)
    certified: list[bool | None]  # None for unfiltered schemes
    max_slack: list[float]
    filter_diagnostics: list[list] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.u_applied.shape[0]


def violation_pct(log_: TrajectoryLog, state_set: SoftPolytope, tol: float = 1e-9) -> float:
    """Percent of logged states outside the state set (tolerance 1e-9)."""
    outside = sum(
        0 if state_set.contains(x, tol=tol) else 1 for x in log_.states
    )
    return 100.0 * outside / log_.states.shape[0]


def _target_for(case: TestCase, k: int, dt: float, switch_time: float) -> Vector:
    t = k * dt
    theta = case.theta_ref1 if t < switch_time else case.theta_ref2
    return np.array([theta, 0.0])


def run_case(
    case: TestCase,
    scheme: str,
    sigma_w: float,
    seed: int,
    net: MlpNetwork,
    config: BenchConfig | None = None,
) -> TrajectoryLog:
    """Simulate one scenario under one scheme for its full duration."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    config = config or BenchConfig()
    params = PendulumParams(
        m=config.mass, l=config.length, g=config.gravity, dt=config.dt,
        sigma_w=sigma_w,
    )
    a_plant, b_plant = linearized_plant()
    model = NnDynamicsModel(a_plant, b_plant, net)
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, case.id, SCHEMES.index(scheme), int(sigma_w * 1000)])
    )

    soft_constrained = scheme.endswith("sc-ilqr")
    filtered = scheme.startswith("safe-")
    spec = make_spec(
        horizon=config.ilqr_horizon,
        q_diag=config.q_diag,
        r_diag=config.r_diag,
        target=np.array([case.theta_ref1, 0.0]),
        u_limit=config.torque_max,
        rho=config.sc_rho if soft_constrained else 0.0,
        state_set=config.state_set() if soft_constrained else None,
    )
    controller = RecedingHorizonController(model, spec)

    filter_cfg = config.filter_config(sigma_w)
    filter_sigma = sigma_w + config.model_error_margin
    state_set_f = config.filter_state_set()
    input_set = config.input_set()

    steps = int(round(case.duration / params.dt))
    states = np.zeros((steps + 1, 2))
    states[0] = case.x0
    u_ref_log = np.zeros((steps, 1))
    u_applied = np.zeros((steps, 1))
    certificates: list[bool | None] = []
    slacks: list[float] = []
    diagnostics: list[list] = []

    for k in range(steps):
        controller.set_target(_target_for(case, k, params.dt, config.reference_switch_time))
        u_ref, plan = controller.step(states[k], tail=filter_cfg.horizon)
        u_ref_log[k] = u_ref
        if filtered:
            result = filter_step(
                states[k], u_ref, plan, net, a_plant, b_plant,
                state_set_f, input_set, filter_cfg, filter_sigma,
            )
            u_applied[k] = result.u0
            certificates.append(result.safe_cert)
            slacks.append(result.best_slack)
            diagnostics.append(result.iterations)
        else:
            u_applied[k] = u_ref
            certificates.append(None)
            slacks.append(0.0)
            diagnostics.append([])
        states[k + 1] = step_true(states[k], float(u_applied[k, 0]), params, rng)

    return TrajectoryLog(
        case_id=case.id, scheme=scheme, sigma_w=sigma_w, seed=seed,
        states=states, u_ref=u_ref_log, u_applied=u_applied,
        certified=certificates, max_slack=slacks, filter_diagnostics=diagnostics,
    )


def run_suite(
    net: MlpNetwork,
    sigmas=(0.05, 0.1),
    seeds=(0, 1, 2),
    schemes=SCHEMES,
    cases=TEST_CASES,
    config: BenchConfig | None = None,
) -> list[dict]:
    """Full benchmark grid; returns one row per (scheme, sigma, case, seed)."""
    config = config or BenchConfig()
    state_set = config.state_set()
    rows = []
    for scheme in schemes:
        for sigma in sigmas:
            for case in cases:
                for seed in seeds:
                    log.info(
                        "running case %d scheme %s sigma %.2f seed %d",
                        case.id, scheme, sigma, seed,
                    )
                    traj = run_case(case, scheme, sigma, seed, net, config)
                    rows.append(
                        {
                            "scheme": scheme,
                            "sigma_w": sigma,
                            "case": case.id,
                            "seed": seed,
                            "violation_pct": violation_pct(traj, state_set),
                            "certified_steps": sum(1 for c in traj.certified if c),
                            "steps": traj.steps,
                        }
                    )
    return rows


def suite_to_csv(rows: list[dict], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["scheme", "sigma_w", "case", "seed",
                            "violation_pct", "certified_steps", "steps"]
        )
        writer.writeheader()
        writer.writerows(rows)


def trajectory_to_csv(traj: TrajectoryLog, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "theta", "theta_dot", "u_ref", "u", "cert", "max_slack"])
        for k in range(traj.steps):
            cert = traj.certified[k]
            writer.writerow(
                [
                    k,
                    repr(float(traj.states[k, 0])),
                    repr(float(traj.states[k, 1])),
                    repr(float(traj.u_ref[k, 0])),
                    repr(float(traj.u_applied[k, 0])),
                    "" if cert is None else int(cert),
                    repr(float(traj.max_slack[k])),
                ]
            )
        writer.writerow(
            [
                traj.steps,
                repr(float(traj.states[-1, 0])),
                repr(float(traj.states[-1, 1])),
                "", "", "", "",
            ]
        )


def filter_diagnostics_to_csv(traj: TrajectoryLog, path: str | Path) -> None:
    """Per-iteration filter diagnostics (one row per solve)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["k", "iteration", "radius", "max_slack", "objective", "solve_ms", "certified"]
        )
        for k, iterations in enumerate(traj.filter_diagnostics):
            for diag in iterations:
                writer.writerow(
                    [
                        k, diag.iteration, repr(diag.radius),
                        repr(diag.max_slack), repr(diag.objective),
                        repr(diag.solve_ms), int(diag.certified),
                    ]
                )
