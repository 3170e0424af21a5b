"""Synthetic smooth-motion pose sequences for toy training runs."""
from __future__ import annotations

import numpy as np


def toy_sequences(rng, count, frames, joints):
    """Return (poses2d, poses3d) of shapes (count, F, J, 2) and (count, F, J, 3).

    Every joint oscillates around a fixed rest position as the sum of two
    sinusoids per image axis. Depth follows the quadrature of the first
    horizontal sinusoid, so it is recoverable from temporal context but not
    from a single frame. The 2D input is the orthographic projection of the
    3D ground truth.
    """
    rest = rng.uniform(-0.5, 0.5, size=(joints, 3))
    t = np.arange(frames, dtype=np.float64)[:, None]
    poses3d = np.empty((count, frames, joints, 3))
    for s in range(count):
        w = rng.uniform(0.05, 0.3, size=2)
        amp = rng.uniform(0.05, 0.2, size=(4, joints))
        phase = rng.uniform(0.0, 2 * np.pi, size=(4, joints))
        lead = w[0] * t + phase[0]
        poses3d[s, :, :, 0] = amp[0] * np.sin(lead) + amp[1] * np.sin(w[1] * t + phase[1])
        poses3d[s, :, :, 1] = amp[2] * np.sin(w[0] * t + phase[2]) + amp[3] * np.sin(w[1] * t + phase[3])
        poses3d[s, :, :, 2] = amp[0] * np.cos(lead)
    poses3d += rest
    return poses3d[..., :2].copy(), poses3d
