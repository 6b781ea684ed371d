"""Bundled data files."""

from pathlib import Path


def default_weights_path() -> Path:
    """Pre-trained pendulum residual network shipped with the package."""
    return Path(__file__).parent / "pendulum_net.json"
