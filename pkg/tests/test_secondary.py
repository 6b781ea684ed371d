"""Trainer handshake checks.

The primary suite runs entirely against the checked-in weight file; the
parity test activates only when the trainer has been built and has left its
artifact bundle behind.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from safefilter.assets import default_weights_path
from safefilter.network import load_network

TRAINER_OUT = Path(__file__).parent.parent / "trainer" / "out"


def test_primary_runs_on_checked_in_weights():
    net = load_network(default_weights_path())
    assert net.input_dim == 3
    assert net.output_dim == 2
    assert [w.shape[0] for w in net.weights[:-1]] == [64, 64, 64]
    out = net.forward(np.zeros(3))
    assert np.isfinite(out).all()


def test_trainer_export_parity():
    bundle_path = TRAINER_OUT / "parity.json"
    weights_path = TRAINER_OUT / "pendulum_net.json"
    if not (bundle_path.exists() and weights_path.exists()):
        pytest.skip("trainer artifacts not present; secondary not built/run")
    bundle = json.loads(bundle_path.read_text())
    assert bundle["val_mse"] <= 1e-3
    net = load_network(weights_path)
    points = np.asarray(bundle["points"], dtype=float)
    trainer_outputs = np.asarray(bundle["outputs"], dtype=float)
    assert points.shape[0] == 1000
    ours = net.forward_batch(points)
    gap = float(np.abs(ours - trainer_outputs).max())
    assert gap <= 1e-6, f"cross-runtime forward gap {gap:.3e}"
