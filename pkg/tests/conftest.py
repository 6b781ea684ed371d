import numpy as np
import pytest

from safefilter.assets import default_weights_path
from safefilter.crown import UncertaintyModel, bounds_along_trajectory, extract_uncertainty
from safefilter.network import load_network
from safefilter.pendulum import linearized_plant
from safefilter.psf import rollout_nominal, trust_region_polytopes
from safefilter.sls import SlsProblem, SoftPolytope


@pytest.fixture(scope="session")
def asset_net():
    return load_network(default_weights_path())


@pytest.fixture(scope="session")
def plant():
    return linearized_plant()


def zero_envelope_model(a, b, horizon, sigma_w=0.0):
    """Uncertainty model of an exactly known LTV system."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    nx, nu = a.shape[0], b.shape[1]
    zero_x = np.zeros((nx, nx))
    zero_u = np.zeros((nx, nu))
    zero_c = np.zeros(nx)
    return UncertaintyModel(
        a=[a.copy() for _ in range(horizon)],
        b=[b.copy() for _ in range(horizon)],
        c=[zero_c.copy() for _ in range(horizon)],
        d_up_x=[zero_x.copy() for _ in range(horizon)],
        d_up_u=[zero_u.copy() for _ in range(horizon)],
        d_up=[zero_c.copy() for _ in range(horizon)],
        d_low_x=[zero_x.copy() for _ in range(horizon)],
        d_low_u=[zero_u.copy() for _ in range(horizon)],
        d_low=[zero_c.copy() for _ in range(horizon)],
        sigma_w=sigma_w,
    )


def scalar_integrator_problem(
    horizon,
    u_ref,
    x_bound=1.0,
    u_bound=1.0,
    trust_radius=100.0,
    sigma_w=0.0,
    x0=0.0,
    **kwargs,
):
    """x+ = x + u with box sets and (by default) non-binding trust regions."""
    unc = zero_envelope_model([[1.0]], [[1.0]], horizon, sigma_w)
    trust = [SoftPolytope.box([-trust_radius], [trust_radius]) for _ in range(horizon)]
    return SlsProblem(
        uncertainty=unc,
        state_set=SoftPolytope.box([-x_bound], [x_bound]),
        input_set=SoftPolytope.box([-u_bound], [u_bound]),
        trust_x=trust,
        trust_u=[SoftPolytope.box([-trust_radius], [trust_radius]) for _ in range(horizon)],
        x0=np.array([float(x0)]),
        u_ref=np.array([float(u_ref)]),
        **kwargs,
    )


def pendulum_problem(net, x0, u_ref, horizon, radius, sigma_w, state_set=None, input_set=None):
    """Build one synthesis instance along a held-input reference."""
    a_plant, b_plant = linearized_plant()
    controls = np.tile(np.atleast_1d(u_ref), (horizon, 1))
    states = rollout_nominal(net, a_plant, b_plant, x0, controls)
    centers = np.hstack([states[:horizon], controls])
    regions, trust_x, trust_u = trust_region_polytopes(centers, radius, 2)
    bounds = bounds_along_trajectory(net, regions)
    model = extract_uncertainty(a_plant, b_plant, bounds, sigma_w)
    return SlsProblem(
        uncertainty=model,
        state_set=state_set or SoftPolytope.box([-3.45, -2.85], [3.45, 2.85]),
        input_set=input_set or SoftPolytope.box([-15.0], [15.0]),
        trust_x=trust_x,
        trust_u=trust_u,
        x0=np.asarray(x0, dtype=float),
        u_ref=np.atleast_1d(np.asarray(u_ref, dtype=float)),
    )


def reconstruct_via_filter(solution, etas):
    """Independent reconstruction oracle through the filter blocks.

    Solves eta_t = sum_i psi^{t+1,t+1-i} w_{i-1} + diag(psi_t) w_t step by
    step, which must agree with the policy-side recursion through phi_x.
    """
    wtilde = []
    for t, eta in enumerate(etas):
        acc = np.asarray(eta, dtype=float).copy()
        for i in range(1, t + 1):
            acc -= solution.psi_op.block(t + 1, t + 1 - i) @ wtilde[i - 1]
        wtilde.append(acc / solution.psi[t])
    return wtilde
