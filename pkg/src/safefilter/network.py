"""Feedforward ReLU networks: loading, saving, evaluation and Jacobians.

The residual dynamics are represented by a fully connected network with ReLU
hidden activations and an affine output layer.  Weights travel in a portable
JSON schema so they can be produced by an external training stack:

    {"input_dim": int, "output_dim": int, "activation": "relu",
     "layers": [{"weights": [[...], ...], "bias": [...]}, ...]}

Weight matrices are row-major with one row per output neuron.  The network is
immutable after construction and safe to evaluate from multiple threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt

Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]


class WeightFileError(ValueError):
    """Malformed weight file or schema violation."""


@dataclass(frozen=True)
class MlpNetwork:
    """ReLU MLP ``f: R^in -> R^out`` with an affine (no activation) last layer."""

    weights: tuple[Matrix, ...]
    biases: tuple[Vector, ...]

    def __post_init__(self) -> None:
        if not self.weights:
            raise WeightFileError("network must have at least one layer")
        if len(self.weights) != len(self.biases):
            raise WeightFileError("weights/biases length mismatch")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1:
                raise WeightFileError(f"layer {i}: weights must be 2-d, bias 1-d")
            if w.shape[0] != b.shape[0]:
                raise WeightFileError(
                    f"layer {i}: bias length {b.shape[0]} != rows {w.shape[0]}"
                )
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise WeightFileError(
                    f"layer {i}: expects {w.shape[1]} inputs but layer {i - 1} "
                    f"produces {self.weights[i - 1].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise WeightFileError(f"layer {i}: non-finite entry")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def forward(self, z: Vector) -> Vector:
        """Evaluate the network at a single input vector."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.input_dim,):
            raise ValueError(f"input has shape {z.shape}, expected ({self.input_dim},)")
        a = z
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(w @ a + b, 0.0)
        return self.weights[-1] @ a + self.biases[-1]

    def forward_batch(self, z: Matrix) -> Matrix:
        """Evaluate a batch of inputs, one per row of ``z``."""
        z = np.asarray(z, dtype=float)
        if z.ndim != 2 or z.shape[1] != self.input_dim:
            raise ValueError(f"batch has shape {z.shape}, expected (*, {self.input_dim})")
        a = z
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w.T + b, 0.0)
        return a @ self.weights[-1].T + self.biases[-1]

    def jacobian(self, z: Vector) -> Matrix:
        """Jacobian df/dz at ``z``.

        ReLU units at exactly zero pre-activation use subgradient 0, matching
        the inactive branch of the linear relaxation.
        """
        z = np.asarray(z, dtype=float)
        if z.shape != (self.input_dim,):
            raise ValueError(f"input has shape {z.shape}, expected ({self.input_dim},)")
        a = z
        jac = np.eye(self.input_dim)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            pre = w @ a + b
            mask = (pre > 0.0).astype(float)
            jac = (w * mask[:, None]) @ jac
            a = np.maximum(pre, 0.0)
        return self.weights[-1] @ jac


def load_network(path: str | Path) -> MlpNetwork:
    """Load and validate a network from the JSON weight schema."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"cannot read weight file {path}: {exc}") from exc
    for key in ("input_dim", "output_dim", "activation", "layers"):
        if key not in doc:
            raise WeightFileError(f"missing field {key!r}")
    if doc["activation"] != "relu":
        raise WeightFileError(f"unsupported activation tag {doc['activation']!r}")
    if not isinstance(doc["layers"], list) or not doc["layers"]:
        raise WeightFileError("layers must be a non-empty list")
    weights = []
    biases = []
    for i, layer in enumerate(doc["layers"]):
        try:
            w = np.asarray(layer["weights"], dtype=float)
            b = np.asarray(layer["bias"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise WeightFileError(f"layer {i}: {exc}") from exc
        weights.append(w)
        biases.append(b)
    net = MlpNetwork(tuple(weights), tuple(biases))
    if net.input_dim != doc["input_dim"]:
        raise WeightFileError(
            f"declared input_dim {doc['input_dim']} != actual {net.input_dim}"
        )
    if net.output_dim != doc["output_dim"]:
        raise WeightFileError(
            f"declared output_dim {doc['output_dim']} != actual {net.output_dim}"
        )
    return net


def save_network(net: MlpNetwork, path: str | Path) -> None:
    """Write a network in the JSON weight schema (exact float round-trip)."""
    doc = {
        "input_dim": net.input_dim,
        "output_dim": net.output_dim,
        "activation": "relu",
        "layers": [
            {"weights": w.tolist(), "bias": b.tolist()}
            for w, b in zip(net.weights, net.biases)
        ],
    }
    Path(path).write_text(json.dumps(doc))


def random_network(
    layer_dims: list[int], rng: np.random.Generator, scale: float = 1.0
) -> MlpNetwork:
    """Random network with the given layer widths, Glorot-style scaling."""
    weights = []
    biases = []
    for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
        w = rng.standard_normal((n_out, n_in)) * scale / np.sqrt(n_in)
        b = rng.standard_normal(n_out) * 0.1 * scale
        weights.append(w)
        biases.append(b)
    return MlpNetwork(tuple(weights), tuple(biases))
