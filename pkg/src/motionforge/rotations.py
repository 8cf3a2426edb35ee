"""6D rotation algebra.

Rotations are encoded as the first two columns of the rotation matrix,
flattened to a 6-vector [col0; col1].  Decoding runs Gram-Schmidt on the
two halves and completes the frame with a cross product, so any pair of
non-parallel, non-zero halves maps onto SO(3).

All functions accept a trailing-axis layout: (..., 6) for encodings and
(..., 3, 3) for matrices.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateRotation, NotARotation

DEGENERACY_EPS = 1e-8
ORTHONORMALITY_TOL = 1e-5

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def rot6d_to_matrix(r) -> np.ndarray:
    """Decode a 6D rotation into a 3x3 rotation matrix.

    Raises DegenerateRotation when either half is near-zero or the halves
    are parallel (residual after projection below 1e-8).
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 6:
        raise ValueError(f"expected (..., 6) input, got {r.shape}")
    a, b = r[..., :3], r[..., 3:]

    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na <= DEGENERACY_EPS):
        raise DegenerateRotation("first half of 6D rotation is near-zero")
    x = a / na

    b_orth = b - np.sum(x * b, axis=-1, keepdims=True) * x
    nb = np.linalg.norm(b_orth, axis=-1, keepdims=True)
    if np.any(nb <= DEGENERACY_EPS):
        raise DegenerateRotation("6D rotation halves are parallel or second half near-zero")
    y = b_orth / nb

    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)  # columns x, y, z


def matrix_to_rot6d(m) -> np.ndarray:
    """Encode a rotation matrix as its first two columns, flattened.

    Raises NotARotation when the input is not orthonormal within 1e-5 or
    has negative determinant.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) input, got {m.shape}")
    gram = np.einsum("...ij,...ik->...jk", m, m)
    eye = np.eye(3)
    if np.max(np.abs(gram - eye)) > ORTHONORMALITY_TOL:
        raise NotARotation("matrix is not orthonormal within 1e-5")
    if np.any(np.linalg.det(m) < 0.0):
        raise NotARotation("matrix has negative determinant")
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def renormalize_rot6d(r) -> np.ndarray:
    """Project a (possibly blended) 6D block back onto the rotation manifold."""
    return matrix_to_rot6d_unchecked(rot6d_to_matrix(r))


def matrix_to_rot6d_unchecked(m) -> np.ndarray:
    """Column extraction without the orthonormality check (internal use)."""
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def rotation_z(angle) -> np.ndarray:
    """Rotation about the world z axis. Accepts scalars or arrays."""
    angle = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    zero = np.zeros_like(c)
    one = np.ones_like(c)
    rows = np.stack(
        [
            np.stack([c, -s, zero], axis=-1),
            np.stack([s, c, zero], axis=-1),
            np.stack([zero, zero, one], axis=-1),
        ],
        axis=-2,
    )
    return rows


def rotation_x(angle) -> np.ndarray:
    angle = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    zero = np.zeros_like(c)
    one = np.ones_like(c)
    return np.stack(
        [
            np.stack([one, zero, zero], axis=-1),
            np.stack([zero, c, -s], axis=-1),
            np.stack([zero, s, c], axis=-1),
        ],
        axis=-2,
    )


def rotation_y(angle) -> np.ndarray:
    angle = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    zero = np.zeros_like(c)
    one = np.ones_like(c)
    return np.stack(
        [
            np.stack([c, zero, s], axis=-1),
            np.stack([zero, one, zero], axis=-1),
            np.stack([-s, zero, c], axis=-1),
        ],
        axis=-2,
    )


def axis_angle(axis, angle) -> np.ndarray:
    """Rotation matrix for a rotation of `angle` radians about `axis`.

    The axis is normalized internally; a near-zero axis raises
    DegenerateRotation.
    """
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n <= DEGENERACY_EPS:
        raise DegenerateRotation("axis-angle rotation with near-zero axis")
    x, y, z = axis / n
    c, s = np.cos(angle), np.sin(angle)
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix (QR of a Gaussian, sign-fixed)."""
    g = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diagonal(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def rotation_angle(m) -> np.ndarray:
    """Rotation angle in radians of a rotation matrix, in [0, pi]."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m, axis1=-2, axis2=-1)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


def matrix_to_quaternion(m) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), batched."""
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    m = m.reshape((-1, 3, 3))
    q = np.empty((m.shape[0], 4))
    t = np.trace(m, axis1=-2, axis2=-1)
    for i in range(m.shape[0]):
        r = m[i]
        if t[i] > 0:
            s = np.sqrt(t[i] + 1.0) * 2.0
            q[i] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
            q[i] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
            q[i] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
            q[i] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return q.reshape(batch + (4,))
