"""Unit-direction encoding for the color decoder.

A degree-4 real spherical-harmonics basis (16 values) evaluated at a
unit vector, with its analytic Jacobian so gradients can flow from the
color network back into the direction (and from there into Gaussian
positions).
"""

from __future__ import annotations

import numpy as np

ENCODING_DIM = 16

_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
       -1.0925484305920792, 0.5462742152960396)
_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
       0.3731763325901154, -0.4570457994644658, 1.445305721320277,
       -0.5900435899266435)


def encode_directions(dirs: np.ndarray) -> np.ndarray:
    """(N, 3) unit directions -> (N, 16) basis values."""
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    out = np.empty((d.shape[0], ENCODING_DIM))
    out[:, 0] = _C0
    out[:, 1] = -_C1 * y
    out[:, 2] = _C1 * z
    out[:, 3] = -_C1 * x
    out[:, 4] = _C2[0] * x * y
    out[:, 5] = _C2[1] * y * z
    out[:, 6] = _C2[2] * (2.0 * zz - xx - yy)
    out[:, 7] = _C2[3] * x * z
    out[:, 8] = _C2[4] * (xx - yy)
    out[:, 9] = _C3[0] * y * (3.0 * xx - yy)
    out[:, 10] = _C3[1] * x * y * z
    out[:, 11] = _C3[2] * y * (4.0 * zz - xx - yy)
    out[:, 12] = _C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[:, 13] = _C3[4] * x * (4.0 * zz - xx - yy)
    out[:, 14] = _C3[5] * z * (xx - yy)
    out[:, 15] = _C3[6] * x * (xx - 3.0 * yy)
    return out


def encode_jacobian(dirs: np.ndarray) -> np.ndarray:
    """(N, 3) unit directions -> (N, 16, 3) d(basis)/d(direction)."""
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    n = d.shape[0]
    jac = np.zeros((n, ENCODING_DIM, 3))
    jac[:, 1, 1] = -_C1
    jac[:, 2, 2] = _C1
    jac[:, 3, 0] = -_C1
    jac[:, 4, 0] = _C2[0] * y
    jac[:, 4, 1] = _C2[0] * x
    jac[:, 5, 1] = _C2[1] * z
    jac[:, 5, 2] = _C2[1] * y
    jac[:, 6, 0] = _C2[2] * (-2.0 * x)
    jac[:, 6, 1] = _C2[2] * (-2.0 * y)
    jac[:, 6, 2] = _C2[2] * (4.0 * z)
    jac[:, 7, 0] = _C2[3] * z
    jac[:, 7, 2] = _C2[3] * x
    jac[:, 8, 0] = _C2[4] * (2.0 * x)
    jac[:, 8, 1] = _C2[4] * (-2.0 * y)
    jac[:, 9, 0] = _C3[0] * 6.0 * x * y
    jac[:, 9, 1] = _C3[0] * (3.0 * xx - 3.0 * yy)
    jac[:, 10, 0] = _C3[1] * y * z
    jac[:, 10, 1] = _C3[1] * x * z
    jac[:, 10, 2] = _C3[1] * x * y
    jac[:, 11, 0] = _C3[2] * (-2.0 * x * y)
    jac[:, 11, 1] = _C3[2] * (4.0 * zz - xx - 3.0 * yy)
    jac[:, 11, 2] = _C3[2] * (8.0 * y * z)
    jac[:, 12, 0] = _C3[3] * (-6.0 * x * z)
    jac[:, 12, 1] = _C3[3] * (-6.0 * y * z)
    jac[:, 12, 2] = _C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
    jac[:, 13, 0] = _C3[4] * (4.0 * zz - 3.0 * xx - yy)
    jac[:, 13, 1] = _C3[4] * (-2.0 * x * y)
    jac[:, 13, 2] = _C3[4] * (8.0 * x * z)
    jac[:, 14, 0] = _C3[5] * (2.0 * x * z)
    jac[:, 14, 1] = _C3[5] * (-2.0 * y * z)
    jac[:, 14, 2] = _C3[5] * (xx - yy)
    jac[:, 15, 0] = _C3[6] * (3.0 * xx - 3.0 * yy)
    jac[:, 15, 1] = _C3[6] * (-6.0 * x * y)
    return jac
