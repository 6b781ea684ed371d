"""Sound linear relaxation of ReLU networks over box input regions.

Backward bound propagation produces affine envelopes ``A_L z + b_L <= f(z)
<= A_U z + b_U`` valid on an l-infinity ball around a reference point.  Each
hidden layer's pre-activation interval is obtained by running the same
backward pass on the truncated sub-network, so the per-neuron relaxations are
as tight as the single-pass scheme allows.

Per-neuron ReLU relaxation on a pre-activation interval [l, u]:
  * u <= 0 (inactive):  both lines are 0.
  * l >= 0 (active):    both lines are the identity.
  * l < 0 < u:          upper line has slope u/(u-l) through (l, 0); the
                        lower line is y = a*z with a = 1 if u >= |l| else 0,
                        which minimizes the relaxation area.

The envelopes are then recentered into a nominal LTV model plus a symmetric
residual envelope that downstream robust synthesis treats as disturbance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Matrix, MlpNetwork, Vector


@dataclass(frozen=True)
class TrustRegion:
    """l-infinity ball around a stacked state-input point."""

    center: Vector
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not np.isfinite(self.center).all():
            raise ValueError("trust region center must be finite")
        if not (self.radius > 0.0):
            raise ValueError(f"trust region radius must be positive, got {self.radius}")

    def sample(self, n: int, rng: np.random.Generator) -> Matrix:
        """Uniform samples from the ball, one per row."""
        dim = self.center.shape[0]
        return self.center + self.radius * rng.uniform(-1.0, 1.0, size=(n, dim))

    def as_box(self) -> tuple[Vector, Vector]:
        return self.center - self.radius, self.center + self.radius


@dataclass(frozen=True)
class LinearBounds:
    """Affine envelope of a network over one trust region.

    ``a_low @ z + b_low <= f(z) <= a_up @ z + b_up`` elementwise for every z
    in the region the bounds were computed for.
    """

    a_low: Matrix
    a_up: Matrix
    b_low: Vector
    b_up: Vector

    def state_input_split(self, nx: int) -> tuple[Matrix, Matrix, Matrix, Matrix]:
        """Partition coefficient matrices into state and input columns."""
        return (
            self.a_low[:, :nx],
            self.a_low[:, nx:],
            self.a_up[:, :nx],
            self.a_up[:, nx:],
        )

    def lower_at(self, z: Matrix) -> Matrix:
        return z @ self.a_low.T + self.b_low

    def upper_at(self, z: Matrix) -> Matrix:
        return z @ self.a_up.T + self.b_up


def _relu_lines(lb: Vector, ub: Vector) -> tuple[Vector, Vector, Vector]:
    """Per-neuron relaxation lines (lower slope, upper slope, upper intercept).

    Lower intercepts are always zero for ReLU.  Degenerate [0, 0] intervals
    fall into the inactive branch.
    """
    n = lb.shape[0]
    sl = np.zeros(n)
    su = np.zeros(n)
    cu = np.zeros(n)
    inactive = ub <= 0.0  # includes the degenerate [0, 0] interval
    active = (~inactive) & (lb >= 0.0)
    unstable = (~inactive) & (~active)
    sl[active] = 1.0
    su[active] = 1.0
    l_u = lb[unstable]
    u_u = ub[unstable]
    slope = u_u / (u_u - l_u)
    su[unstable] = slope
    cu[unstable] = -l_u * slope
    sl[unstable] = (u_u >= -l_u).astype(float)
    return sl, su, cu


def _backward_affine(
    weights: tuple[Matrix, ...],
    biases: tuple[Vector, ...],
    lines: list[tuple[Vector, Vector, Vector]],
    depth: int,
) -> tuple[Matrix, Vector, Matrix, Vector]:
    """Backward pass for the sub-network ending at affine layer ``depth``.

    Returns (a_low, b_low, a_up, b_up) expressing the layer's pre-activation
    output as affine functions of the network input.  ``lines`` must hold the
    relaxations for hidden layers 0..depth-1.
    """
    a_up = weights[depth].copy()
    d_up = biases[depth].copy()
    a_lo = weights[depth].copy()
    d_lo = biases[depth].copy()
    for j in range(depth - 1, -1, -1):
        sl, su, cu = lines[j]
        pos_u = np.maximum(a_up, 0.0)
        neg_u = np.minimum(a_up, 0.0)
        d_up = d_up + pos_u @ cu
        a_up = pos_u * su + neg_u * sl
        pos_l = np.maximum(a_lo, 0.0)
        neg_l = np.minimum(a_lo, 0.0)
        d_lo = d_lo + neg_l @ cu
        a_lo = pos_l * sl + neg_l * su
        d_up = d_up + a_up @ biases[j]
        a_up = a_up @ weights[j]
        d_lo = d_lo + a_lo @ biases[j]
        a_lo = a_lo @ weights[j]
    return a_lo, d_lo, a_up, d_up


def _concretize(
    a: Matrix, d: Vector, center: Vector, radius: float, upper: bool
) -> Vector:
    """Extreme value of ``a z + d`` over the box, per output row."""
    nominal = a @ center + d
    spread = radius * np.abs(a).sum(axis=1)
    return nominal + spread if upper else nominal - spread


def relax(net: MlpNetwork, region: TrustRegion) -> LinearBounds:
    """Sound affine envelope of ``net`` over ``region``."""
    if region.center.shape[0] != net.input_dim:
        raise ValueError(
            f"region dimension {region.center.shape[0]} != network input "
            f"{net.input_dim}"
        )
    weights, biases = net.weights, net.biases
    n_hidden = net.num_layers - 1
    lines: list[tuple[Vector, Vector, Vector]] = []
    for depth in range(n_hidden):
        a_lo, d_lo, a_up, d_up = _backward_affine(weights, biases, lines, depth)
        lb = _concretize(a_lo, d_lo, region.center, region.radius, upper=False)
        ub = _concretize(a_up, d_up, region.center, region.radius, upper=True)
        lines.append(_relu_lines(lb, ub))
    a_lo, d_lo, a_up, d_up = _backward_affine(weights, biases, lines, n_hidden)
    return LinearBounds(a_low=a_lo, a_up=a_up, b_low=d_lo, b_up=d_up)


def bounds_along_trajectory(
    net: MlpNetwork, regions: list[TrustRegion]
) -> list[LinearBounds]:
    """Independent per-step envelopes along a reference trajectory."""
    return [relax(net, region) for region in regions]


@dataclass(frozen=True)
class UncertaintyModel:
    """Per-step LTV dynamics with a symmetric residual envelope.

    The nominal matrices absorb the envelope means; what is left of the
    network output is confined, for every z in step t's trust region, to
    ``d_low_x[t] x + d_low_u[t] u + d_low[t] <= residual <= (upper analog)``
    with the lower terms being exact negations of the upper ones.
    """

    a: list[Matrix]  # nominal state matrices, one per step
    b: list[Matrix]  # nominal input matrices
    c: list[Vector]  # nominal offsets
    d_up_x: list[Matrix]
    d_up_u: list[Matrix]
    d_up: list[Vector]
    d_low_x: list[Matrix]
    d_low_u: list[Matrix]
    d_low: list[Vector]
    sigma_w: float

    @property
    def horizon(self) -> int:
        return len(self.a)

    @property
    def nx(self) -> int:
        return self.a[0].shape[0]

    @property
    def nu(self) -> int:
        return self.b[0].shape[1]

    def residual_box(self, t: int, z: Matrix) -> tuple[Matrix, Matrix]:
        """Envelope interval of the residual at stacked points ``z`` (rows)."""
        nx = self.nx
        x, u = z[:, :nx], z[:, nx:]
        lo = x @ self.d_low_x[t].T + u @ self.d_low_u[t].T + self.d_low[t]
        hi = x @ self.d_up_x[t].T + u @ self.d_up_u[t].T + self.d_up[t]
        return lo, hi


def extract_uncertainty(
    a_plant: Matrix,
    b_plant: Matrix,
    bounds: list[LinearBounds],
    sigma_w: float,
) -> UncertaintyModel:
    """Split envelopes into nominal LTV dynamics plus symmetric residuals.

    The mean of each affine envelope is merged into the plant matrices; the
    half-gap becomes the residual envelope.  Lower envelope terms are stored
    as exact negations of the upper ones so the symmetry is bitwise.
    """
    a_plant = np.asarray(a_plant, dtype=float)
    b_plant = np.asarray(b_plant, dtype=float)
    nx = a_plant.shape[0]
    nu = b_plant.shape[1]
    a_list: list[Matrix] = []
    b_list: list[Matrix] = []
    c_list: list[Vector] = []
    dux, duu, du = [], [], []
    dlx, dlu, dl = [], [], []
    for lb in bounds:
        if lb.a_low.shape != (nx, nx + nu):
            raise ValueError(
                f"bounds have shape {lb.a_low.shape}, expected {(nx, nx + nu)}"
            )
        gx_lo, gu_lo, gx_up, gu_up = lb.state_input_split(nx)
        a_list.append(a_plant + 0.5 * (gx_lo + gx_up))
        b_list.append(b_plant + 0.5 * (gu_lo + gu_up))
        c_list.append(0.5 * (lb.b_low + lb.b_up))
        half_x = 0.5 * (gx_up - gx_lo)
        half_u = 0.5 * (gu_up - gu_lo)
        half_c = 0.5 * (lb.b_up - lb.b_low)
        dux.append(half_x)
        duu.append(half_u)
        du.append(half_c)
        dlx.append(-half_x)
        dlu.append(-half_u)
        dl.append(-half_c)
    return UncertaintyModel(
        a=a_list, b=b_list, c=c_list,
        d_up_x=dux, d_up_u=duu, d_up=du,
        d_low_x=dlx, d_low_u=dlu, d_low=dl,
        sigma_w=float(sigma_w),
    )


def dump_bounds_csv(bounds: list[LinearBounds], path) -> None:
    """Debug dump: one row per (step, output row, input col) coefficient."""
    with open(path, "w") as fh:
        fh.write("step,row,col,a_l,a_u,b_l,b_u\n")
        for t, lb in enumerate(bounds):
            rows, cols = lb.a_low.shape
            for i in range(rows):
                for j in range(cols):
                    fh.write(
                        f"{t},{i},{j},{float(lb.a_low[i, j])!r},"
                        f"{float(lb.a_up[i, j])!r},{float(lb.b_low[i])!r},"
                        f"{float(lb.b_up[i])!r}\n"
                    )
