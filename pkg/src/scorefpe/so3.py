"""Core SO(3) / so(3) arithmetic: hat/vee maps, exponential and logarithm,
geodesic distance, and uniform (Haar) sampling.

Conventions used throughout the package:

* Rotations are plain 3x3 numpy arrays with R^T R = I and det R = +1.
* Tangent vectors are length-3 coefficient arrays v; the associated group
  perturbation of R is R @ exp_map(v) (right multiplication).
* The inner product on the Lie algebra is <A, B> = trace(A^T B) / 2, which
  makes hat an isometry: ||hat(v)|| = ||v||.  Under this metric the Brownian
  motion variance parameter coincides with the angle variance used by the
  isotropic Gaussian kernel, and the basis returned by :func:`basis` is
  orthonormal.
"""

from __future__ import annotations

import numpy as np

# Below this angle exp/log switch to their Taylor branches.
SMALL_ANGLE = 1e-4
# Above pi - NEAR_PI_ANGLE the logarithm uses the symmetric-part extraction.
NEAR_PI_ANGLE = 1e-3


def hat(v: np.ndarray) -> np.ndarray:
    """Map a coefficient vector to its skew-symmetric matrix.

    Supports a leading batch dimension: (..., 3) -> (..., 3, 3).
    """
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`hat`; extracts coefficients from a skew matrix."""
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def basis() -> np.ndarray:
    """The three skew-symmetric generators E_1, E_2, E_3, shape (3, 3, 3).

    Orthonormal under <A, B> = trace(A^T B) / 2 and satisfying
    [E_a, E_b] = sum_c eps_abc E_c.
    """
    return hat(np.eye(3))


def algebra_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product <A, B> = trace(A^T B) / 2 on so(3)."""
    return 0.5 * float(np.trace(a.T @ b))


def exp_map(v: np.ndarray) -> np.ndarray:
    """Rodrigues-formula exponential, coefficient vector(s) -> rotation(s).

    Accepts (3,) or (..., 3); Taylor branches keep the small-angle case
    accurate without dividing by the angle.
    """
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    k = hat(v)
    k2 = k @ k
    t2 = theta * theta
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(theta < SMALL_ANGLE, 1.0 - t2 / 6.0, np.sin(theta) / np.where(theta == 0, 1.0, theta))
        b = np.where(theta < SMALL_ANGLE, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / np.where(theta == 0, 1.0, t2))
    out = np.broadcast_to(np.eye(3), k.shape).copy()
    out += a[..., None, None] * k + b[..., None, None] * k2
    return out


def _log_near_pi(r: np.ndarray, theta: float) -> np.ndarray:
    # Axis from the symmetric part: (R + R^T)/2 - cos(theta) I = (1-cos) u u^T.
    sym = 0.5 * (r + r.T)
    c = np.cos(theta)
    outer = (sym - c * np.eye(3)) / (1.0 - c)
    diag = np.clip(np.diag(outer), 0.0, None)
    u = np.sqrt(diag)
    # Relative signs from the off-diagonal products u_i u_k with u_k > 0.
    k = int(np.argmax(u))
    signs = np.sign(outer[:, k])
    signs[k] = 1.0
    u *= np.where(signs == 0.0, 1.0, signs)
    u /= max(np.linalg.norm(u), 1e-300)
    # Global sign from the skew part, vee(R - R^T) = 2 sin(theta) u.
    s = vee(r - r.T)
    if np.dot(s, u) < 0.0:
        u = -u
    return theta * u


def log_map(r: np.ndarray) -> np.ndarray:
    """Principal logarithm, rotation -> coefficient vector with norm in [0, pi].

    Three branches: Taylor near the identity, the standard sine formula in
    the bulk, and a symmetric-part extraction near theta = pi where the skew
    part is too small to carry the axis.
    """
    r = np.asarray(r, dtype=float)
    s = vee(r - r.T)
    sin_theta = 0.5 * np.linalg.norm(s)
    cos_theta = 0.5 * (np.trace(r) - 1.0)
    theta = float(np.arctan2(sin_theta, np.clip(cos_theta, -1.0, 1.0)))
    if theta < SMALL_ANGLE:
        return 0.5 * s * (1.0 + theta * theta / 6.0)
    if theta > np.pi - NEAR_PI_ANGLE:
        return _log_near_pi(r, theta)
    return 0.5 * theta / np.sin(theta) * s


def log_map_batch(rs: np.ndarray) -> np.ndarray:
    """Vectorized :func:`log_map` over a leading batch axis, shape (M, 3, 3)."""
    rs = np.asarray(rs, dtype=float)
    s = vee(rs - np.swapaxes(rs, -1, -2))
    sin_theta = 0.5 * np.linalg.norm(s, axis=-1)
    cos_theta = 0.5 * (np.trace(rs, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(sin_theta, np.clip(cos_theta, -1.0, 1.0))
    scale = np.empty_like(theta)
    small = theta < SMALL_ANGLE
    scale[small] = 0.5 * (1.0 + theta[small] ** 2 / 6.0)
    rest = ~small
    scale[rest] = 0.5 * theta[rest] / np.sin(theta[rest])
    out = scale[..., None] * s
    near_pi = theta > np.pi - NEAR_PI_ANGLE
    if np.any(near_pi):
        idx = np.nonzero(near_pi)[0]
        for i in idx:
            out[i] = _log_near_pi(rs[i], float(theta[i]))
    return out


def rotation_angle(r: np.ndarray) -> float:
    """Rotation angle in [0, pi], computed via the stable atan2 form."""
    r = np.asarray(r, dtype=float)
    sin_theta = 0.5 * np.linalg.norm(vee(r - r.T))
    cos_theta = 0.5 * (np.trace(r) - 1.0)
    return float(np.arctan2(sin_theta, np.clip(cos_theta, -1.0, 1.0)))


def rotation_angle_batch(rs: np.ndarray) -> np.ndarray:
    rs = np.asarray(rs, dtype=float)
    s = vee(rs - np.swapaxes(rs, -1, -2))
    sin_theta = 0.5 * np.linalg.norm(s, axis=-1)
    cos_theta = 0.5 * (np.trace(rs, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(sin_theta, np.clip(cos_theta, -1.0, 1.0))


def geodesic_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """||log(R1^T R2)||: bi-invariant geodesic distance in radians."""
    return rotation_angle(np.asarray(r1).T @ np.asarray(r2))


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    """Check orthonormality and unit determinant entrywise within tol."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        return False
    ortho = np.max(np.abs(r.T @ r - np.eye(3))) < tol
    return bool(ortho and abs(np.linalg.det(r) - 1.0) < tol)


def project_to_so3(m: np.ndarray) -> np.ndarray:
    """Nearest rotation in Frobenius norm via SVD polar projection."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def sample_haar(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Uniform (Haar) rotation(s) via normalized random quaternions.

    Returns a single (3, 3) matrix when n is None, else (n, 3, 3).
    The rotation-angle marginal has density (1 - cos w) / pi on [0, pi].
    """
    m = 1 if n is None else n
    q = rng.standard_normal((m, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((m, 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - z * w)
    r[:, 0, 2] = 2 * (x * z + y * w)
    r[:, 1, 0] = 2 * (x * y + z * w)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - x * w)
    r[:, 2, 0] = 2 * (x * z - y * w)
    r[:, 2, 1] = 2 * (y * z + x * w)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r[0] if n is None else r
