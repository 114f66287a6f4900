"""Articulated tree dynamics in generalized coordinates.

Supports forests of single-dof joints (revolute or prismatic). Free bodies
are modeled as stacked prismatic/revolute joints, so joint screws are
constant in their own coordinate (``dS_i/dq_j = 0`` and ``Sdot_i = 0``),
which keeps every recursion below exact.

Provides forward kinematics, the mass matrix, Coriolis/gravity forces, an
articulated-body solve for ``M^-1 z``, and analytic derivatives of
``M^-1 z`` and ``c`` with respect to the joint state. All derivatives are
verified against finite-difference oracles in the test suite; none of this
module is produced by automatic differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .spatial import (
    SpatialInertia,
    Transform,
    ad_matrix,
    adjoint,
    coad,
    coad_matrix_of_force,
    lie_bracket,
    rotation_exp,
)

REVOLUTE = "revolute"
PRISMATIC = "prismatic"

# Per-body inertial parameter layout: [mass, com_x, com_y, com_z,
# Ixx, Ixy, Ixz, Iyy, Iyz, Izz] (inertia about the com).
PARAMS_PER_BODY = 10


class SingularMassError(RuntimeError):
    """A pivot in the articulated-body sweep was not invertible."""


@dataclass(frozen=True)
class JointDef:
    kind: str
    axis: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=float))
        if self.kind not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint kind {self.kind!r}")
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-12:
            raise ValueError("joint axis must be unit length")

    def screw(self) -> np.ndarray:
        s = np.zeros(6)
        if self.kind == REVOLUTE:
            s[:3] = self.axis
        else:
            s[3:] = self.axis
        return s

    def motion(self, q: float) -> Transform:
        if self.kind == REVOLUTE:
            return Transform(rotation_exp(self.axis * q), np.zeros(3))
        return Transform(np.eye(3), self.axis * q)


@dataclass(frozen=True)
class Body:
    inertia: SpatialInertia
    parent: int  # index of the parent body, -1 for the world
    joint: JointDef
    offset: Transform = field(default_factory=Transform.identity)
    name: str = ""


@dataclass(frozen=True)
class Skeleton:
    bodies: tuple
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        object.__setattr__(self, "bodies", tuple(self.bodies))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float))
        for i, body in enumerate(self.bodies):
            if not -1 <= body.parent < i:
                raise ValueError(
                    f"body {i}: parent index {body.parent} does not precede it")
        object.__setattr__(self, "_children", self._child_lists())
        object.__setattr__(self, "_ancestor_mask", self._ancestors())

    @property
    def n(self) -> int:
        return len(self.bodies)

    def _child_lists(self):
        children = [[] for _ in self.bodies]
        for i, body in enumerate(self.bodies):
            if body.parent >= 0:
                children[body.parent].append(i)
        return tuple(tuple(c) for c in children)

    def _ancestors(self):
        # mask[j, b]: joint j lies on the path from the root to body b
        # (inclusive of body b's own joint).
        n = self.n
        mask = np.zeros((n, n), dtype=bool)
        for b in range(n):
            j = b
            while j >= 0:
                mask[j, b] = True
                j = self.bodies[j].parent
        return mask

    def children(self, i: int):
        return self._children[i]

    def joint_supports_body(self, joint: int, body: int) -> bool:
        return bool(self._ancestor_mask[joint, body])

    def screws(self) -> np.ndarray:
        return np.stack([b.joint.screw() for b in self.bodies])

    def inertial_params(self) -> np.ndarray:
        """Flatten per-body [mass, com, Ixx, Ixy, Ixz, Iyy, Iyz, Izz]."""
        mu = np.empty(self.n * PARAMS_PER_BODY)
        for i, body in enumerate(self.bodies):
            g = body.inertia
            iu = g.inertia[np.triu_indices(3)]
            mu[i * PARAMS_PER_BODY:(i + 1) * PARAMS_PER_BODY] = np.concatenate(
                ([g.mass], g.com, iu))
        return mu

    def with_inertial_params(self, mu: np.ndarray) -> "Skeleton":
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (self.n * PARAMS_PER_BODY,):
            raise ValueError(f"expected {self.n * PARAMS_PER_BODY} parameters")
        bodies = []
        for i, body in enumerate(self.bodies):
            chunk = mu[i * PARAMS_PER_BODY:(i + 1) * PARAMS_PER_BODY]
            inertia = np.zeros((3, 3))
            inertia[np.triu_indices(3)] = chunk[4:]
            inertia = inertia + np.triu(inertia, 1).T
            bodies.append(replace(body, inertia=SpatialInertia(
                mass=float(chunk[0]), com=chunk[1:4], inertia=inertia)))
        return Skeleton(tuple(bodies), self.gravity)


@dataclass
class WorldState:
    q: np.ndarray
    qd: np.ndarray
    tau: np.ndarray
    dt: float

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qd = np.asarray(self.qd, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)
        if not (self.q.shape == self.qd.shape == self.tau.shape):
            raise ValueError("q, qd, tau must share one dimension")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        for name, arr in (("q", self.q), ("qd", self.qd), ("tau", self.tau)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")


class ArticulatedCache:
    """Configuration-dependent quantities shared by the dynamics routines.

    Owned by one evaluation context; rebuilt whenever (q, mu) changes.
    """

    def __init__(self, skeleton: Skeleton, q: np.ndarray):
        q = np.asarray(q, dtype=float)
        if q.shape != (skeleton.n,):
            raise ValueError("q has wrong dimension")
        self.skeleton = skeleton
        self.q = q.copy()
        self.local = []        # T_{parent(i), i}
        self.world = []        # T_{world, i}
        self.X = []            # motion map: parent frame -> body i frame
        self.XT = []           # its transpose: force map body i -> parent
        self.inertia6 = []     # spatial inertia of body i in its own frame
        for i, body in enumerate(skeleton.bodies):
            t_local = body.offset.compose(body.joint.motion(q[i]))
            t_parent = self.world[body.parent] if body.parent >= 0 else Transform.identity()
            x = adjoint(t_local.inverse())
            self.local.append(t_local)
            self.world.append(t_parent.compose(t_local))
            self.X.append(x)
            self.XT.append(x.T)
            self.inertia6.append(body.inertia.matrix())
        self.screws = skeleton.screws()
        self.world_screws = np.stack(
            [adjoint(self.world[i]) @ self.screws[i] for i in range(skeleton.n)])

    def world_screw_derivatives(self) -> np.ndarray:
        """dA[i, :, j] = d(world screw of joint i)/dq_j.

        A joint's world screw moves only with the joints strictly above it in
        the tree; its own coordinate leaves it invariant.
        """
        n = self.skeleton.n
        out = np.zeros((n, 6, n))
        for i, body in enumerate(self.skeleton.bodies):
            b = body.parent
            if b < 0:
                continue
            j = b
            while j >= 0:
                out[i, :, j] = lie_bracket(self.world_screws[j], self.world_screws[i])
                j = self.skeleton.bodies[j].parent
        return out


def forward_kinematics(skeleton: Skeleton, q: np.ndarray):
    """World transforms of all bodies and world-frame joint screws."""
    cache = ArticulatedCache(skeleton, q)
    return list(cache.world), cache.world_screws.copy()


def _spatial_gravity(skeleton: Skeleton) -> np.ndarray:
    # Fictitious base acceleration -g; folds gravity into the recursions.
    out = np.zeros(6)
    out[3:] = -skeleton.gravity
    return out


def inverse_dynamics(skeleton: Skeleton, q, qd, qdd, gravity: bool = True,
                     cache: ArticulatedCache | None = None) -> np.ndarray:
    """Recursive Newton-Euler: tau such that M qdd + c = tau."""
    cache = cache or ArticulatedCache(skeleton, q)
    qd = np.asarray(qd, dtype=float)
    qdd = np.asarray(qdd, dtype=float)
    n = skeleton.n
    v = [np.zeros(6)] * n
    a = [np.zeros(6)] * n
    base_a = _spatial_gravity(skeleton) if gravity else np.zeros(6)
    for i, body in enumerate(skeleton.bodies):
        s = cache.screws[i]
        vp = v[body.parent] if body.parent >= 0 else np.zeros(6)
        ap = a[body.parent] if body.parent >= 0 else base_a
        v[i] = cache.X[i] @ vp + s * qd[i]
        a[i] = cache.X[i] @ ap + lie_bracket(v[i], s * qd[i]) + s * qdd[i]
    tau = np.zeros(n)
    f = [np.zeros(6)] * n
    for i in range(n - 1, -1, -1):
        g = cache.inertia6[i]
        fi = g @ a[i] - coad(v[i], g @ v[i])
        for l in skeleton.children(i):
            fi = fi + cache.XT[l] @ f[l]
        f[i] = fi
        tau[i] = cache.screws[i] @ fi
    return tau


def coriolis_gravity(skeleton: Skeleton, q, qd,
                     cache: ArticulatedCache | None = None) -> np.ndarray:
    """c(q, qd) with the sign convention M qdd + c = tau."""
    return inverse_dynamics(skeleton, q, np.asarray(qd, dtype=float),
                            np.zeros(skeleton.n), gravity=True, cache=cache)


def mass_matrix(skeleton: Skeleton, q,
                cache: ArticulatedCache | None = None) -> np.ndarray:
    """Composite-rigid-body mass matrix (symmetric positive-definite)."""
    cache = cache or ArticulatedCache(skeleton, q)
    n = skeleton.n
    composite = [g.copy() for g in cache.inertia6]
    m = np.zeros((n, n))
    for i in range(n - 1, -1, -1):
        for l in skeleton.children(i):
            composite[i] += cache.XT[l] @ composite[l] @ cache.X[l]
        f = composite[i] @ cache.screws[i]
        m[i, i] = cache.screws[i] @ f
        j = i
        while skeleton.bodies[j].parent >= 0:
            f = cache.XT[j] @ f
            j = skeleton.bodies[j].parent
            m[i, j] = m[j, i] = cache.screws[j] @ f
    return m


class _AbaFactors:
    """Backward-sweep factors of the articulated-body inverse (z-independent)."""

    def __init__(self, skeleton: Skeleton, cache: ArticulatedCache):
        n = skeleton.n
        self.ai = [None] * n      # articulated inertia per body
        self.psi = np.zeros(n)    # 1 / (S^T AI S)
        self.ais = [None] * n     # AI @ S
        pi = [None] * n
        for i in range(n - 1, -1, -1):
            ai = cache.inertia6[i].copy()
            for l in skeleton.children(i):
                ai += cache.XT[l] @ pi[l] @ cache.X[l]
            s = cache.screws[i]
            ais = ai @ s
            pivot = float(s @ ais)
            if abs(pivot) < 1e-12:
                raise SingularMassError(f"singular articulated pivot at joint {i}")
            self.ai[i] = ai
            self.ais[i] = ais
            self.psi[i] = 1.0 / pivot
            pi[i] = ai - np.outer(ais, ais) * self.psi[i]


def _aba_solve(skeleton: Skeleton, cache: ArticulatedCache,
               factors: _AbaFactors, z: np.ndarray) -> np.ndarray:
    n = skeleton.n
    bias = [np.zeros(6)] * n
    alpha = np.zeros(n)
    beta = [None] * n
    for i in range(n - 1, -1, -1):
        b = np.zeros(6)
        for l in skeleton.children(i):
            b = b + cache.XT[l] @ beta[l]
        bias[i] = b
        alpha[i] = z[i] - cache.screws[i] @ b
        beta[i] = b + factors.ais[i] * (factors.psi[i] * alpha[i])
    out = np.zeros(n)
    acc = [np.zeros(6)] * n
    for i, body in enumerate(skeleton.bodies):
        ap = cache.X[i] @ (acc[body.parent] if body.parent >= 0 else np.zeros(6))
        out[i] = factors.psi[i] * (alpha[i] - factors.ais[i] @ ap)
        acc[i] = ap + cache.screws[i] * out[i]
    return out


def minv_times(skeleton: Skeleton, q, z,
               cache: ArticulatedCache | None = None) -> np.ndarray:
    """M(q)^-1 z via the recursive articulated-body sweep."""
    cache = cache or ArticulatedCache(skeleton, q)
    z = np.asarray(z, dtype=float)
    factors = _AbaFactors(skeleton, cache)
    return _aba_solve(skeleton, cache, factors, z)


def minv_matrix(skeleton: Skeleton, q,
                cache: ArticulatedCache | None = None) -> np.ndarray:
    """Full M^-1, column by column through the same recursive sweep."""
    cache = cache or ArticulatedCache(skeleton, q)
    factors = _AbaFactors(skeleton, cache)
    n = skeleton.n
    eye = np.eye(n)
    return np.column_stack(
        [_aba_solve(skeleton, cache, factors, eye[:, j]) for j in range(n)])


def _dmass_times_qdd_dq(skeleton: Skeleton, cache: ArticulatedCache,
                        qdd: np.ndarray) -> np.ndarray:
    """G with G[i, j] = [dM/dq_j @ qdd]_i.

    Derivative of the zero-velocity, zero-gravity inverse-dynamics pass;
    columns are handled together as 6xn blocks.
    """
    n = skeleton.n
    a = [np.zeros(6)] * n
    da = [None] * n
    for i, body in enumerate(skeleton.bodies):
        s = cache.screws[i]
        ap = cache.X[i] @ (a[body.parent] if body.parent >= 0 else np.zeros(6))
        dap = (cache.X[i] @ da[body.parent]
               if body.parent >= 0 else np.zeros((6, n)))
        a[i] = ap + s * qdd[i]
        dai = dap.copy() if body.parent >= 0 else dap
        dai[:, i] -= lie_bracket(s, ap)
        da[i] = dai
    g = np.zeros((n, n))
    f = [np.zeros(6)] * n
    df = [None] * n
    for i in range(n - 1, -1, -1):
        gi = cache.inertia6[i]
        fi = gi @ a[i]
        dfi = gi @ da[i]
        for l in skeleton.children(i):
            fi = fi + cache.XT[l] @ f[l]
            dfi = dfi + cache.XT[l] @ df[l]
            dfi[:, l] -= cache.XT[l] @ coad(cache.screws[l], f[l])
        f[i] = fi
        df[i] = dfi
        g[i, :] = cache.screws[i] @ dfi
    return g


def d_minv_z_dq(skeleton: Skeleton, q, z,
                cache: ArticulatedCache | None = None,
                minv: np.ndarray | None = None) -> np.ndarray:
    """d(M^-1 z)/dq for fixed z.

    Uses d(M^-1 z)/dq_j = -M^-1 (dM/dq_j) (M^-1 z); the leading minus comes
    from matrix calculus and is pinned by the finite-difference oracle tests.
    """
    cache = cache or ArticulatedCache(skeleton, q)
    if minv is None:
        minv = minv_matrix(skeleton, q, cache=cache)
    qdd = minv @ np.asarray(z, dtype=float)
    g = _dmass_times_qdd_dq(skeleton, cache, qdd)
    return -minv @ g


def d_coriolis(skeleton: Skeleton, q, qd,
               cache: ArticulatedCache | None = None):
    """(dc/dq, dc/dqd), both n x n, by differentiating the Newton-Euler pass."""
    cache = cache or ArticulatedCache(skeleton, q)
    qd = np.asarray(qd, dtype=float)
    n = skeleton.n
    v = [np.zeros(6)] * n
    a = [np.zeros(6)] * n
    dv_q = [None] * n
    dv_qd = [None] * n
    da_q = [None] * n
    da_qd = [None] * n
    base_a = _spatial_gravity(skeleton)
    for i, body in enumerate(skeleton.bodies):
        s = cache.screws[i]
        x = cache.X[i]
        if body.parent >= 0:
            p = body.parent
            vp, ap = x @ v[p], x @ a[p]
            dvq, dvqd = x @ dv_q[p], x @ dv_qd[p]
            daq, daqd = x @ da_q[p], x @ da_qd[p]
        else:
            vp, ap = np.zeros(6), x @ base_a
            dvq = dvqd = daq = daqd = np.zeros((6, n))
            dvq, dvqd, daq, daqd = dvq.copy(), dvqd.copy(), daq.copy(), daqd.copy()
        v[i] = vp + s * qd[i]
        a[i] = ap + lie_bracket(v[i], s * qd[i])
        # own-coordinate contributions from d/dq_i of the parent-to-body map
        dvq = dvq.copy()
        dvq[:, i] -= lie_bracket(s, vp)
        dvqd = dvqd.copy()
        dvqd[:, i] += s
        daq = daq.copy()
        daq[:, i] -= lie_bracket(s, ap)
        daqd = daqd.copy()
        daqd[:, i] += lie_bracket(v[i], s)
        # chain through v_i in the bias acceleration term ad_{v_i} (s qd_i)
        ad_sqd = ad_matrix(s * qd[i])
        daq = daq - ad_sqd @ dvq
        daqd = daqd - ad_sqd @ dvqd
        dv_q[i], dv_qd[i] = dvq, dvqd
        da_q[i], da_qd[i] = daq, daqd
    dc_dq = np.zeros((n, n))
    dc_dqd = np.zeros((n, n))
    f = [np.zeros(6)] * n
    df_q = [None] * n
    df_qd = [None] * n
    for i in range(n - 1, -1, -1):
        g = cache.inertia6[i]
        gv = g @ v[i]
        fi = g @ a[i] - coad(v[i], gv)
        cf = coad_matrix_of_force(gv)
        coad_v = ad_matrix(v[i]).T
        dfq = g @ da_q[i] - cf @ dv_q[i] - coad_v @ (g @ dv_q[i])
        dfqd = g @ da_qd[i] - cf @ dv_qd[i] - coad_v @ (g @ dv_qd[i])
        for l in skeleton.children(i):
            fi = fi + cache.XT[l] @ f[l]
            dfq = dfq + cache.XT[l] @ df_q[l]
            dfq[:, l] -= cache.XT[l] @ coad(cache.screws[l], f[l])
            dfqd = dfqd + cache.XT[l] @ df_qd[l]
        f[i] = fi
        df_q[i], df_qd[i] = dfq, dfqd
        dc_dq[i, :] = cache.screws[i] @ dfq
        dc_dqd[i, :] = cache.screws[i] @ dfqd
    return dc_dq, dc_dqd


def unconstrained_step(skeleton: Skeleton, state: WorldState,
                       joint_impulse: np.ndarray | None = None,
                       cache: ArticulatedCache | None = None) -> WorldState:
    """Semi-implicit Euler step: velocity first, position with the new velocity.

    qd' = qd + M^-1 (-dt (c - tau) + joint_impulse); q' = q + dt qd'.
    """
    cache = cache or ArticulatedCache(skeleton, state.q)
    c = coriolis_gravity(skeleton, state.q, state.qd, cache=cache)
    z = -state.dt * (c - state.tau)
    if joint_impulse is not None:
        z = z + np.asarray(joint_impulse, dtype=float)
    qd_next = state.qd + minv_times(skeleton, state.q, z, cache=cache)
    q_next = state.q + state.dt * qd_next
    return WorldState(q=q_next, qd=qd_next, tau=state.tau.copy(), dt=state.dt)
