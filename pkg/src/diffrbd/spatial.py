"""Spatial (se(3)/dse(3)) vector algebra for rigid-body dynamics.

Conventions used throughout the package:

* Spatial motion vectors (twists, screw axes, accelerations) are 6-vectors
  ordered ``[angular; linear]``.
* Spatial force vectors (wrenches) are 6-vectors ordered ``[torque; force]``.
* ``Transform`` maps coordinates of a child frame into its parent frame:
  ``x_parent = R @ x_child + p``.
* ``adjoint(T)`` re-expresses a motion vector from the child frame in the
  parent frame; ``dual_adjoint(T)`` does the same for force vectors and
  preserves the power pairing ``F . V``.

Everything here is a pure function of numpy arrays; nothing is mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_EPS_ORTHO = 1e-9
_SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 cross-product matrix: skew(v) @ w == cross(v, w)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


@dataclass(frozen=True)
class Transform:
    """Rigid transform: rotation (3x3, det +1) plus translation (meters)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    @staticmethod
    def identity() -> "Transform":
        return Transform()

    def compose(self, other: "Transform") -> "Transform":
        """self applied after other: maps other's child frame into self's parent."""
        return Transform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Transform":
        rt = self.rotation.T
        return Transform(rt, -rt @ self.translation)

    def apply(self, point: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def rotate(self, direction: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(direction, dtype=float)

    def is_valid(self, tol: float = 1e-12) -> bool:
        r = self.rotation
        return (
            np.allclose(r.T @ r, np.eye(3), atol=max(tol, _EPS_ORTHO))
            and np.linalg.det(r) > 0.0
            and np.all(np.isfinite(self.translation))
        )


def rotation_from_quaternion(q: np.ndarray) -> np.ndarray:
    """Unit quaternion [w, x, y, z] -> rotation matrix. Normalizes once."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quaternion_from_rotation(r: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion [w, x, y, z], w >= 0."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(1.0 + r[i, i] - r[j, j] - r[k, k]) * 2
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def rotation_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues' formula with a series fallback below the small-angle cutoff.

    1 - cos(theta) is evaluated as 2 sin^2(theta/2) so the closed form stays
    accurate arbitrarily close to the cutoff."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    k = skew(omega)
    if theta < _SMALL_ANGLE:
        # exp(k) ~ I + k + k^2/2; error O(theta^3) is below double precision here
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    half = np.sin(0.5 * theta)
    b = 2.0 * half * half / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def transform_exp(twist: np.ndarray) -> Transform:
    """SE(3) exponential of a twist [omega; v]."""
    twist = np.asarray(twist, dtype=float)
    omega, v = twist[:3], twist[3:]
    theta = np.linalg.norm(omega)
    k = skew(omega)
    r = rotation_exp(omega)
    if theta < _SMALL_ANGLE:
        g = np.eye(3) + 0.5 * k + (k @ k) / 6.0
    else:
        t2 = theta * theta
        half = np.sin(0.5 * theta)
        g = (np.eye(3)
             + (2.0 * half * half / t2) * k
             + ((theta - np.sin(theta)) / (t2 * theta)) * (k @ k))
    return Transform(r, g @ v)


def adjoint(t: Transform) -> np.ndarray:
    """6x6 adjoint mapping motion vectors from child to parent coordinates."""
    r = t.rotation
    ad = np.zeros((6, 6))
    ad[:3, :3] = r
    ad[3:, 3:] = r
    ad[3:, :3] = skew(t.translation) @ r
    return ad


def dual_adjoint(t: Transform) -> np.ndarray:
    """6x6 map for force vectors, child to parent: adjoint(inverse(t)).T."""
    r = t.rotation
    ad = np.zeros((6, 6))
    ad[:3, :3] = r
    ad[3:, 3:] = r
    ad[:3, 3:] = skew(t.translation) @ r
    return ad


def ad_matrix(v: np.ndarray) -> np.ndarray:
    """6x6 matrix of the Lie bracket: ad_matrix(v) @ w == lie_bracket(v, w)."""
    w, u = np.asarray(v[:3]), np.asarray(v[3:])
    m = np.zeros((6, 6))
    m[:3, :3] = skew(w)
    m[3:, 3:] = skew(w)
    m[3:, :3] = skew(u)
    return m


def lie_bracket(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """se(3) bracket [v, w] of two motion vectors."""
    a, b = np.asarray(v, dtype=float), np.asarray(w, dtype=float)
    out = np.empty(6)
    out[:3] = np.cross(a[:3], b[:3])
    out[3:] = np.cross(a[:3], b[3:]) + np.cross(a[3:], b[:3])
    return out


def dual_bracket(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    """dse(3) action paired so <dual_bracket(v,F), w> == -<F, lie_bracket(v,w)>."""
    return -ad_matrix(v).T @ np.asarray(f, dtype=float)


def coad(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    """ad_matrix(v).T @ f, the transpose action used by the dynamics recursions."""
    a, b = np.asarray(v, dtype=float), np.asarray(f, dtype=float)
    out = np.empty(6)
    out[:3] = -np.cross(a[:3], b[:3]) - np.cross(a[3:], b[3:])
    out[3:] = -np.cross(a[:3], b[3:])
    return out


def coad_matrix_of_force(f: np.ndarray) -> np.ndarray:
    """Matrix C(f) with C(f) @ v == coad(v, f); linearizes coad in its twist slot."""
    t, g = np.asarray(f[:3]), np.asarray(f[3:])
    m = np.zeros((6, 6))
    m[:3, :3] = skew(t)
    m[:3, 3:] = skew(g)
    m[3:, :3] = skew(g)
    return m


@dataclass(frozen=True)
class SpatialInertia:
    """Mass, center of mass offset, and rotational inertia about the com."""

    mass: float
    com: np.ndarray
    inertia: np.ndarray  # 3x3 symmetric positive-definite, about the com

    def __post_init__(self):
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float))
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float))
        if not self.mass > 0.0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not np.allclose(self.inertia, self.inertia.T, atol=1e-12):
            raise ValueError("rotational inertia must be symmetric")
        if np.any(np.linalg.eigvalsh(self.inertia) <= 0.0):
            raise ValueError("rotational inertia must be positive-definite")

    def matrix(self) -> np.ndarray:
        """Induced 6x6 spatial inertia, momentum = matrix() @ [omega; v]."""
        c = skew(self.com)
        g = np.zeros((6, 6))
        g[:3, :3] = self.inertia - self.mass * (c @ c)
        g[:3, 3:] = self.mass * c
        g[3:, :3] = self.mass * c.T
        g[3:, 3:] = self.mass * np.eye(3)
        return g
