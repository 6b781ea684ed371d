"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``.  The full-benchmark
criterion dominates the runtime (several minutes); everything else finishes
in well under two minutes.
"""

import time

import numpy as np
import pytest

from conftest import scalar_integrator_problem
from safefilter.bench import BenchConfig, run_suite
from safefilter.crown import TrustRegion, bounds_along_trajectory, extract_uncertainty, relax
from safefilter.ilqr import NnDynamicsModel, ilqr_plan, make_spec
from safefilter.network import random_network
from safefilter.psf import FilterConfig, filter_step
from safefilter.sls import SoftPolytope, affine_residual, assemble, max_slack, solve_qp

CERT_BOX_LOW = (-1.2, -1.6)
CERT_BOX_HIGH = (1.2, 1.6)
CERT_SIGMA = 0.05
CERT_CONFIG = FilterConfig(horizon=4, iterations=5, initial_radius=0.3, growth=1.5)
CERT_STATE_SET = SoftPolytope.box([-3.45, -2.85], [3.45, 2.85])
CERT_INPUT_SET = SoftPolytope.box([-15.0], [15.0])


def batch_policy_rollouts(policy, net, a_plant, b_plant, x0, sigma_w, n, rng):
    """Vectorized disturbance rollouts of the learned dynamics under the
    policy, reconstructing the virtual disturbances along the way.

    Returns (states per step, inputs per step, all wtilde arrays), where
    states[t] has shape (n, nx).
    """
    horizon = policy.horizon
    nx = a_plant.shape[0]
    x = np.tile(np.asarray(x0, dtype=float), (n, 1))
    states = [x.copy()]
    inputs = []
    wtildes = []
    for t in range(horizon):
        if t == 0:
            u = np.tile(policy.v[0], (n, 1))
        else:
            acc = x - policy.h[t]
            for i in range(1, t):
                acc = acc - wtildes[i - 1] @ policy.phi_x.block(t, t - i).T
            wtildes.append(acc / policy.psi[t - 1])
            u = np.tile(policy.v[t], (n, 1))
            for i in range(1, t + 1):
                u = u + wtildes[i - 1] @ policy.phi_u.block(t, t - i).T
        inputs.append(u)
        z = np.hstack([x, u])
        noise = rng.uniform(-sigma_w, sigma_w, size=(n, nx))
        x = x @ a_plant.T + u @ b_plant.T + net.forward_batch(z) + noise
        states.append(x.copy())
    acc = x - policy.h[horizon]
    for i in range(1, horizon):
        acc = acc - wtildes[i - 1] @ policy.phi_x.block(horizon, horizon - i).T
    wtildes.append(acc / policy.psi[horizon - 1])
    return states, inputs, wtildes


@pytest.fixture(scope="module")
def certified_instances(asset_net, plant):
    """200 certified filter calls at seeded random pendulum states."""
    a_plant, b_plant = plant
    rng = np.random.default_rng(2024)
    instances = []
    attempts = 0
    while len(instances) < 200 and attempts < 400:
        attempts += 1
        x0 = rng.uniform(CERT_BOX_LOW, CERT_BOX_HIGH)
        result = filter_step(
            x0, np.zeros(1), np.zeros((CERT_CONFIG.horizon, 1)), asset_net,
            a_plant, b_plant, CERT_STATE_SET, CERT_INPUT_SET,
            CERT_CONFIG, sigma_w=CERT_SIGMA,
        )
        if result.safe_cert:
            instances.append((x0, result))
    assert len(instances) == 200, f"only {len(instances)} of 200 states certified"
    return instances


class TestAcceptance:
    def test_crown_soundness(self):
        """20 seeded nets x 20 regions x 1e4 samples: zero envelope violations."""
        started = time.perf_counter()
        rng = np.random.default_rng(11)
        worst = -np.inf
        for net_idx in range(20):
            depth = int(rng.integers(1, 4))
            width = int(rng.choice([16, 32, 64]))
            n_in = int(rng.integers(2, 7))
            n_out = int(rng.integers(1, 4))
            dims = [n_in] + [width] * depth + [n_out]
            net = random_network(dims, rng)
            for _ in range(20):
                region = TrustRegion(
                    rng.uniform(-2.0, 2.0, size=n_in), float(rng.uniform(0.05, 1.0))
                )
                bounds = relax(net, region)
                z = region.sample(10_000, rng)
                f = net.forward_batch(z)
                worst = max(
                    worst,
                    float((bounds.lower_at(z) - f).max()),
                    float((f - bounds.upper_at(z)).max()),
                )
        elapsed = time.perf_counter() - started
        assert worst <= 1e-9, f"worst envelope violation {worst:.3e}"
        assert elapsed < 120.0, f"soundness sweep took {elapsed:.1f} s"
        print(f"\nPASS: envelope soundness (worst slack {worst:.2e}, {elapsed:.1f} s)")

    def test_symmetry_bitwise(self, asset_net, plant):
        """Extracted residual envelopes are exact negations, bitwise."""
        a_plant, b_plant = plant
        rng = np.random.default_rng(12)
        checked = 0
        for _ in range(10):
            regions = [
                TrustRegion(rng.uniform(-1.5, 1.5, size=3), float(rng.uniform(0.05, 0.8)))
                for _ in range(6)
            ]
            bounds = bounds_along_trajectory(asset_net, regions)
            model = extract_uncertainty(a_plant, b_plant, bounds, 0.05)
            for t in range(model.horizon):
                assert np.array_equal(model.d_low_x[t], -model.d_up_x[t])
                assert np.array_equal(model.d_low_u[t], -model.d_up_u[t])
                assert np.array_equal(model.d_low[t], -model.d_up[t])
                checked += 1
        print(f"\nPASS: envelope symmetry bitwise ({checked} steps)")

    def test_sls_parameterization(self, asset_net, plant):
        """Response-parameterization residual <= 1e-6 on every solution."""
        worst = 0.0
        rng = np.random.default_rng(13)
        from conftest import pendulum_problem

        net = asset_net
        for _ in range(25):
            x0 = rng.uniform(CERT_BOX_LOW, CERT_BOX_HIGH)
            problem = pendulum_problem(
                net, x0, rng.uniform(-3, 3, size=1),
                horizon=int(rng.integers(2, 6)),
                radius=float(rng.uniform(0.15, 0.5)), sigma_w=0.05,
            )
            solution = solve_qp(assemble(problem))
            worst = max(worst, affine_residual(solution, problem.uncertainty))
        for horizon, u_ref in ((1, 0.5), (3, 2.0), (6, -1.0)):
            problem = scalar_integrator_problem(horizon, u_ref, x_bound=5.0)
            solution = solve_qp(assemble(problem))
            worst = max(worst, affine_residual(solution, problem.uncertainty))
        assert worst <= 1e-6, f"worst residual {worst:.3e}"
        print(f"\nPASS: response parameterization residual ({worst:.2e})")

    def test_containment(self, certified_instances, asset_net, plant):
        """200 certified instances x 1000 true-dynamics realizations: the
        reconstructed virtual disturbance never leaves the unit ball."""
        a_plant, b_plant = plant
        started = time.perf_counter()
        rng = np.random.default_rng(14)
        worst = 0.0
        for idx, (x0, result) in enumerate(certified_instances):
            policy = result.policy
            policy.reset()
            _, _, wtildes = batch_policy_rollouts(
                policy, asset_net, a_plant, b_plant, x0, CERT_SIGMA, 1000, rng
            )
            worst = max(worst, max(float(np.abs(w).max()) for w in wtildes))
            if idx == 0:
                # cross-check the vectorized recursion against the policy path
                check_rng = np.random.default_rng(15)
                states, inputs, wt_batch = batch_policy_rollouts(
                    policy, asset_net, a_plant, b_plant, x0, CERT_SIGMA, 1, check_rng
                )
                policy.reset()
                replay_rng = np.random.default_rng(15)
                x = x0.copy()
                for t in range(policy.horizon):
                    u = policy.apply(t, x)
                    np.testing.assert_allclose(u, inputs[t][0], atol=1e-10)
                    z = np.concatenate([x, u])
                    x = (
                        a_plant @ x + b_plant @ u + asset_net.forward(z)
                        + replay_rng.uniform(-CERT_SIGMA, CERT_SIGMA, size=(1, 2))[0]
                    )
                single = policy.finalize(x)
                for w_single, w_batch in zip(single, wt_batch):
                    np.testing.assert_allclose(w_single, w_batch[0], atol=1e-10)
        elapsed = time.perf_counter() - started
        assert worst <= 1.0 + 1e-6, f"worst |wtilde| {worst:.8f}"
        print(f"\nPASS: containment ({len(certified_instances)} instances, "
              f"worst |wtilde| {worst:.6f}, {elapsed:.1f} s)")

    def test_certificate_soundness(self, certified_instances, asset_net, plant):
        """Certified calls keep 1000 disturbance rollouts of the learned
        dynamics inside the state and input sets for the whole horizon."""
        a_plant, b_plant = plant
        rng = np.random.default_rng(16)
        fx, bx = CERT_STATE_SET.f, CERT_STATE_SET.b
        fu, bu = CERT_INPUT_SET.f, CERT_INPUT_SET.b
        worst_state = -np.inf
        worst_input = -np.inf
        for x0, result in certified_instances:
            assert result.safe_cert
            policy = result.policy
            policy.reset()
            states, inputs, _ = batch_policy_rollouts(
                policy, asset_net, a_plant, b_plant, x0, CERT_SIGMA, 1000, rng
            )
            for x in states:
                worst_state = max(worst_state, float((x @ fx.T - bx).max()))
            for u in inputs:
                worst_input = max(worst_input, float((u @ fu.T - bu).max()))
        assert worst_state <= 1e-9, f"state violation margin {worst_state:.3e}"
        assert worst_input <= 1e-9, f"input violation margin {worst_input:.3e}"
        print(f"\nPASS: certificate soundness (state margin {worst_state:.2e}, "
              f"input margin {worst_input:.2e})")

    def test_scalar_qp_oracle(self):
        """Hand-derivable instances: pass-through and box projection."""
        solution = solve_qp(assemble(scalar_integrator_problem(1, 0.5)))
        assert abs(solution.v[0, 0] - 0.5) <= 1e-6
        assert abs(solution.objective) <= 1e-6
        assert max_slack(solution) == 0.0
        projected = solve_qp(assemble(scalar_integrator_problem(1, 5.0, x_bound=2.0)))
        assert abs(projected.v[0, 0] - 1.0) <= 1e-6
        assert abs(projected.objective - 16.0) <= 1e-6
        assert max_slack(projected) == 0.0
        print("\nPASS: scalar QP oracle (v0=0.5 passthrough, v0=1 projection)")

    def test_ilqr_vs_riccati(self):
        """Planner equals the finite-horizon LQR solution on a linear plant."""
        a = np.array([[1.0, 0.1], [0.0, 1.0]])
        b = np.array([[0.005], [0.1]])
        model = NnDynamicsModel(a, b, None)
        spec = make_spec(15, [10.0, 1.0], [0.1], np.zeros(2), u_limit=1e9)
        x0 = np.array([1.0, -0.5])
        plan = ilqr_plan(model, spec, x0)
        p = spec.q_terminal.copy()
        gains = []
        for _ in range(spec.horizon):
            k = np.linalg.solve(spec.r + b.T @ p @ b, b.T @ p @ a)
            p = spec.q + a.T @ p @ (a - b @ k)
            p = 0.5 * (p + p.T)
            gains.append(k)
        gains.reverse()
        x = x0.copy()
        worst = 0.0
        for t, k in enumerate(gains):
            u = -k @ x
            worst = max(worst, float(np.abs(plan[t] - u).max()))
            x = a @ x + b @ u
        assert worst <= 1e-6, f"max deviation {worst:.3e}"
        print(f"\nPASS: planner vs Riccati oracle (max deviation {worst:.2e})")

    def test_table2_property(self, asset_net):
        """Full benchmark grid: filtered schemes are violation-free, the
        unfiltered planner is not, and soft constraints help."""
        started = time.perf_counter()
        config = BenchConfig()
        rows = run_suite(
            asset_net, sigmas=(0.05, 0.1), seeds=(0, 1, 2), config=config
        )
        elapsed = time.perf_counter() - started
        assert elapsed < 1800.0, f"benchmark took {elapsed:.0f} s"

        def mean_violation(scheme, sigma, case=None):
            vals = [
                r["violation_pct"]
                for r in rows
                if r["scheme"] == scheme
                and r["sigma_w"] == sigma
                and (case is None or r["case"] == case)
            ]
            return float(np.mean(vals))

        for sigma in (0.05, 0.1):
            for scheme in ("safe-ilqr", "safe-sc-ilqr"):
                for row in rows:
                    if row["scheme"] == scheme and row["sigma_w"] == sigma:
                        assert row["violation_pct"] == 0.0, (
                            f"{scheme} sigma={sigma} case={row['case']} "
                            f"seed={row['seed']}: {row['violation_pct']}%"
                        )
            violating_cases = sum(
                1 for case in (1, 2, 3, 4) if mean_violation("ilqr", sigma, case) > 0.0
            )
            assert violating_cases >= 3, (
                f"unfiltered planner violated on only {violating_cases} cases"
            )
            assert mean_violation("sc-ilqr", sigma) <= mean_violation("ilqr", sigma)
        print(f"\nPASS: benchmark property (48 filtered runs at 0.0%, "
              f"unfiltered violating, {elapsed:.0f} s)")
