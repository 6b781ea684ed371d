"""Ground-truth pendulum plant, its discrete linearization, and datasets.

The continuous dynamics are ``theta_dd = 3 g sin(theta) / (2 l) + 3 tau /
(m l^2)`` with the angle measured from the upright position.  The default
physical parameters make the two coefficients 7.3575 and 1.0, which is what
the fixed discrete linearization below corresponds to at a 0.05 s sampling
time.

Ground truth integrates the nonlinear dynamics with RK4 (zero-order-hold
torque) and adds uniform, bounded process noise to the state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .network import Matrix, Vector


@dataclass(frozen=True)
class PendulumParams:
    """Physical parameters, sampling time, and the disturbance bound."""

    m: float = 0.75
    l: float = 2.0
    g: float = 9.81
    dt: float = 0.05
    sigma_w: float = 0.0

    def __post_init__(self) -> None:
        for name in ("m", "l", "g", "dt"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_w < 0.0:
            raise ValueError("sigma_w must be non-negative")

    @property
    def gravity_gain(self) -> float:
        return 3.0 * self.g / (2.0 * self.l)

    @property
    def torque_gain(self) -> float:
        return 3.0 / (self.m * self.l**2)


def accel(x: Vector, u: float, params: PendulumParams) -> float:
    return params.gravity_gain * np.sin(x[0]) + params.torque_gain * u


def _ode(x: Vector, u: float, params: PendulumParams) -> Vector:
    return np.array([x[1], accel(x, u, params)])


def rk4_step(x: Vector, u: float, params: PendulumParams) -> Vector:
    """One RK4 step of the nonlinear dynamics with held torque."""
    dt = params.dt
    k1 = _ode(x, u, params)
    k2 = _ode(x + 0.5 * dt * k1, u, params)
    k3 = _ode(x + 0.5 * dt * k2, u, params)
    k4 = _ode(x + dt * k3, u, params)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_true(
    x: Vector, u: float, params: PendulumParams, rng: np.random.Generator | None = None
) -> Vector:
    """Ground-truth step: RK4 plus uniform state noise in [-sigma_w, sigma_w]^2."""
    x_next = rk4_step(np.asarray(x, dtype=float), float(u), params)
    if params.sigma_w > 0.0:
        if rng is None:
            raise ValueError("rng required when sigma_w > 0")
        x_next = x_next + rng.uniform(-params.sigma_w, params.sigma_w, size=2)
    return x_next


def energy(x: Vector, params: PendulumParams) -> float:
    """Total energy of the unforced rod pendulum (upright angle convention)."""
    inertia = params.m * params.l**2 / 3.0
    return 0.5 * inertia * x[1] ** 2 + 0.5 * params.m * params.g * params.l * np.cos(x[0])


# Fixed discrete-time linearization about the origin at dt = 0.05 s.  These
# entries are the published operating values; exact_discretization() below
# reproduces them to four significant digits from the default parameters.
_A_LIN = np.array([[1.0092, 0.05015], [0.369, 1.0092]])
_B_LIN = np.array([[0.00125], [0.05015]])


def linearized_plant() -> tuple[Matrix, Matrix]:
    """The fixed (A, B) pair used by the filter and the residual dataset."""
    return _A_LIN.copy(), _B_LIN.copy()


def exact_discretization(params: PendulumParams) -> tuple[Matrix, Matrix]:
    """Zero-order-hold discretization of the linearized continuous dynamics."""
    a_c = np.array([[0.0, 1.0], [params.gravity_gain, 0.0]])
    b_c = np.array([[0.0], [params.torque_gain]])
    block = np.zeros((3, 3))
    block[:2, :2] = a_c
    block[:2, 2:] = b_c
    phi = expm(block * params.dt)
    return phi[:2, :2], phi[:2, 2:]


@dataclass(frozen=True)
class TestCase:
    """Benchmark scenario: initial condition and two reference angles."""

    id: int
    x0_deg: tuple[float, float]
    theta_ref1_deg: float
    theta_ref2_deg: float
    duration: float = 2.0

    @property
    def x0(self) -> Vector:
        return np.deg2rad(np.array(self.x0_deg))

    @property
    def theta_ref1(self) -> float:
        return float(np.deg2rad(self.theta_ref1_deg))

    @property
    def theta_ref2(self) -> float:
        return float(np.deg2rad(self.theta_ref2_deg))


TEST_CASES = (
    TestCase(1, (57.3, -120.3), 120.0, -50.0),
    TestCase(2, (-85.9, -85.9), -150.0, 40.0),
    TestCase(3, (-85.9, -114.6), -100.0, -180.0),
    TestCase(4, (85.9, 57.3), 100.0, 180.0),
)


def export_dataset(
    params: PendulumParams,
    duration: float = 15.0,
    seed: int = 0,
    path: str | Path = "dataset.csv",
    torque_limit: float = 15.0,
) -> Path:
    """Simulate the noiseless plant under random excitation and export residuals.

    Each row is ``theta, theta_dot, torque, r0, r1`` where r is the one-step
    residual ``x_next - A x - B u`` against the fixed linearization.  The
    excitation is low-pass-filtered uniform torque; the state restarts inside
    a moderate box whenever it leaves a generous one, keeping coverage around
    the operating region.
    """
    rng = np.random.default_rng(seed)
    a_lin, b_lin = linearized_plant()
    n_rows = int(round(duration / params.dt))
    clean = PendulumParams(m=params.m, l=params.l, g=params.g, dt=params.dt, sigma_w=0.0)

    def restart() -> Vector:
        return rng.uniform((-3.6, -5.5), (3.6, 5.5))

    x = restart()
    u = 0.0
    rows = []
    for _ in range(n_rows):
        u = float(np.clip(0.7 * u + 0.6 * rng.uniform(-torque_limit, torque_limit),
                          -torque_limit, torque_limit))
        x_next = rk4_step(x, u, clean)
        residual = x_next - a_lin @ x - b_lin[:, 0] * u
        rows.append((x[0], x[1], u, residual[0], residual[1]))
        x = x_next
        if abs(x[0]) > 4.2 or abs(x[1]) > 7.5:
            x = restart()
            u = 0.0
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "theta_dot", "torque", "res_theta", "res_theta_dot"])
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
    return path


def load_dataset(path: str | Path) -> tuple[Matrix, Matrix]:
    """Read an exported dataset into (inputs, residual targets)."""
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    if data.ndim == 1:
        data = data[None, :]
    return data[:, :3], data[:, 3:]
