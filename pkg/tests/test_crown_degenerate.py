import numpy as np

from safefilter.crown import _relu_lines


def test_degenerate_zero_interval_is_inactive():
    sl, su, cu = _relu_lines(np.array([0.0, -1.0, 0.5]), np.array([0.0, 2.0, 2.0]))
    # pinned-at-zero neuron uses the zero lines, not the identity
    assert sl[0] == 0.0 and su[0] == 0.0 and cu[0] == 0.0
    # unstable and active neighbors keep their usual relaxations
    assert su[1] == 2.0 / 3.0
    assert sl[2] == 1.0 and su[2] == 1.0
