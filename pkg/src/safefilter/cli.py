"""Command-line interface: benchmark suite, single simulations, dataset
export, self-checks, and QP export for cross-checking against other solvers.

Log verbosity is controlled by the SAFEFILTER_LOG environment variable
(debug, info, warning; default warning).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import assets
from .bench import (
    SCHEMES,
    BenchConfig,
    filter_diagnostics_to_csv,
    run_case,
    run_suite,
    suite_to_csv,
    trajectory_to_csv,
    violation_pct,
)
from .crown import (
    LinearBounds,
    TrustRegion,
    bounds_along_trajectory,
    dump_bounds_csv,
    extract_uncertainty,
    relax,
)
from .network import load_network, random_network
from .pendulum import TEST_CASES, PendulumParams, export_dataset, linearized_plant
from .psf import FilterConfig, filter_step, rollout_nominal, trust_region_polytopes
from .sls import SlsProblem, SoftPolytope, affine_residual, assemble, solve_qp


def _setup_logging() -> None:
    level = os.environ.get("SAFEFILTER_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _load_config(path: str | None) -> BenchConfig:
    if path is None:
        return BenchConfig()
    return BenchConfig.from_json(Path(path).read_text())


def _load_net(path: str | None):
    if path is not None:
        return load_network(path)
    return load_network(assets.default_weights_path())


def cmd_bench(args) -> int:
    config = _load_config(args.config)
    net = _load_net(args.weights)
    sigmas = tuple(args.sigma) if args.sigma else (0.05, 0.1)
    seeds = tuple(args.seeds)
    rows = run_suite(net, sigmas=sigmas, seeds=seeds, config=config)
    suite_to_csv(rows, args.out)
    state_set = config.state_set()
    print(f"wrote {args.out}")
    for sigma in sigmas:
        print(f"sigma_w = {sigma}")
        for scheme in SCHEMES:
            per_case = []
            for case in TEST_CASES:
                vals = [
                    r["violation_pct"]
                    for r in rows
                    if r["scheme"] == scheme
                    and r["sigma_w"] == sigma
                    and r["case"] == case.id
                ]
                per_case.append(f"case {case.id}: {np.mean(vals):6.2f}%")
            print(f"  {scheme:14s} " + "  ".join(per_case))
    return 0


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    net = _load_net(args.weights)
    case = next(c for c in TEST_CASES if c.id == args.case)
    traj = run_case(case, args.scheme, args.sigma, args.seed, net, config)
    trajectory_to_csv(traj, args.out)
    print(f"wrote {args.out}")
    if args.diagnostics:
        filter_diagnostics_to_csv(traj, args.diagnostics)
        print(f"wrote {args.diagnostics}")
    if args.dump_bounds:
        # per-step envelopes of the first filter call along the initial plan
        filter_cfg = config.filter_config(args.sigma)
        a_plant, b_plant = linearized_plant()
        controls = np.tile(traj.u_ref[0], (filter_cfg.horizon, 1))
        states = rollout_nominal(net, a_plant, b_plant, case.x0, controls)
        centers = np.hstack([states[: filter_cfg.horizon], controls])
        regions = [TrustRegion(c, filter_cfg.initial_radius) for c in centers]
        dump_bounds_csv(bounds_along_trajectory(net, regions), args.dump_bounds)
        print(f"wrote {args.dump_bounds}")
    print(f"violation_pct = {violation_pct(traj, config.state_set()):.4f}")
    return 0


def cmd_export_dataset(args) -> int:
    params = PendulumParams()
    path = export_dataset(
        params, duration=args.duration, seed=args.seed, path=args.out,
        torque_limit=args.torque_limit,
    )
    print(f"wrote {path}")
    return 0


def cmd_dump_qp(args) -> int:
    config = _load_config(args.config)
    net = _load_net(args.weights)
    case = next(c for c in TEST_CASES if c.id == args.case)
    filter_cfg = config.filter_config(args.sigma)
    a_plant, b_plant = linearized_plant()
    controls = np.zeros((filter_cfg.horizon, 1))
    states = rollout_nominal(net, a_plant, b_plant, case.x0, controls)
    centers = np.hstack([states[: filter_cfg.horizon], controls])
    regions, trust_x, trust_u = trust_region_polytopes(
        centers, filter_cfg.initial_radius, 2
    )
    bounds = bounds_along_trajectory(net, regions)
    model = extract_uncertainty(
        a_plant, b_plant, bounds, args.sigma + config.model_error_margin
    )
    problem = SlsProblem(
        uncertainty=model,
        state_set=config.filter_state_set(),
        input_set=config.input_set(),
        trust_x=trust_x,
        trust_u=trust_u,
        x0=case.x0,
        u_ref=np.zeros(1),
    )
    qp = assemble(problem)
    qp.export(args.out)
    print(f"wrote {args.out} ({qp.num_vars} variables, {qp.num_constraints} rows)")
    return 0


def cmd_check(args) -> int:
    """Self-contained property battery printing one PASS/FAIL line each."""
    rng = np.random.default_rng(0)
    failures = 0

    def report(name: str, ok: bool, detail: str = "") -> None:
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}: {name}" + (f"  ({detail})" if detail else ""))
        failures += 0 if ok else 1

    # envelope soundness on random networks
    worst = 0.0
    for _ in range(5):
        net = random_network([3, 32, 32, 2], rng)
        region = TrustRegion(rng.uniform(-1, 1, size=3), rng.uniform(0.1, 0.8))
        bounds = relax(net, region)
        z = region.sample(2000, rng)
        f = net.forward_batch(z)
        worst = max(
            worst,
            float((bounds.lower_at(z) - f).max()),
            float((f - bounds.upper_at(z)).max()),
        )
    report("envelope soundness (random nets)", worst <= 1e-9, f"worst slack {worst:.2e}")

    # envelope symmetry after extraction
    net = random_network([3, 16, 2], rng)
    bounds = bounds_along_trajectory(
        net, [TrustRegion(rng.uniform(-1, 1, size=3), 0.3) for _ in range(4)]
    )
    model = extract_uncertainty(np.eye(2), np.zeros((2, 1)), bounds, 0.05)
    symmetric = all(
        np.array_equal(model.d_low_x[t], -model.d_up_x[t])
        and np.array_equal(model.d_low[t], -model.d_up[t])
        for t in range(4)
    )
    report("envelope symmetry (bitwise)", symmetric)

    # scalar synthesis oracle and parameterization residual
    unc = extract_uncertainty(
        np.array([[1.0]]),
        np.array([[1.0]]),
        [
            LinearBounds(
                a_low=np.zeros((1, 2)), a_up=np.zeros((1, 2)),
                b_low=np.zeros(1), b_up=np.zeros(1),
            )
            for _ in range(3)
        ],
        0.0,
    )
    big = [SoftPolytope.box([-100.0], [100.0]) for _ in range(3)]
    problem = SlsProblem(
        unc, SoftPolytope.box([-2.0], [2.0]), SoftPolytope.box([-1.0], [1.0]),
        big, big, x0=np.zeros(1), u_ref=np.array([5.0]),
    )
    solution = solve_qp(assemble(problem))
    ok = abs(solution.v[0, 0] - 1.0) < 1e-6 and abs(solution.objective - 16.0) < 1e-6
    report("scalar box-projection oracle", ok,
           f"v0 {solution.v[0, 0]:.8f} objective {solution.objective:.8f}")
    residual = affine_residual(solution, unc)
    report("response parameterization residual", residual <= 1e-6, f"{residual:.2e}")

    # one filtered pendulum call certifies and its policy is realizable
    net = _load_net(args.weights)
    a_plant, b_plant = linearized_plant()
    cfg = FilterConfig(horizon=3, iterations=5, initial_radius=0.45, growth=1.5)
    result = filter_step(
        np.array([0.4, 0.2]), np.zeros(1), np.zeros((3, 1)), net,
        a_plant, b_plant,
        SoftPolytope.box([-3.45, -2.85], [3.45, 2.85]),
        SoftPolytope.box([-15.0], [15.0]),
        cfg, sigma_w=0.09,
    )
    report("pendulum certification", result.safe_cert,
           f"best slack {result.best_slack:.2e}")
    return 1 if failures else 0


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="safefilter",
        description="Convex predictive safety filter for neural-network dynamics",
    )
    parser.add_argument("--weights", help="network weight file (default: bundled)")
    parser.add_argument("--config", help="benchmark config JSON")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="run the full benchmark grid")
    p.add_argument("--out", default="table2.csv")
    p.add_argument("--sigma", type=float, nargs="*", help="noise levels")
    p.add_argument("--seeds", type=int, nargs="*", default=[0, 1, 2])
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("simulate", help="simulate one case under one scheme")
    p.add_argument("--case", type=int, required=True, choices=[1, 2, 3, 4])
    p.add_argument("--scheme", required=True, choices=list(SCHEMES))
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="trajectory.csv")
    p.add_argument("--diagnostics", help="write per-iteration filter CSV here")
    p.add_argument("--dump-bounds", help="write per-step envelope CSV here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export-dataset", help="export residual training data")
    p.add_argument("--duration", type=float, default=15.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--torque-limit", type=float, default=15.0)
    p.add_argument("--out", default="dataset.csv")
    p.set_defaults(func=cmd_export_dataset)

    p = sub.add_parser("check", help="run the built-in property battery")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("dump-qp", help="export one assembled QP as text triplets")
    p.add_argument("--case", type=int, default=1, choices=[1, 2, 3, 4])
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--out", default="qp.txt")
    p.set_defaults(func=cmd_dump_qp)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
