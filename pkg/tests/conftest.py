import numpy as np
import pytest

from diffrbd import dynamics as dyn
from diffrbd import spatial as sp
from diffrbd.dynamics import PARAMS_PER_BODY


def point_inertia(mass, com):
    """Near-point mass: tiny but valid rotational inertia."""
    return sp.SpatialInertia(mass, np.asarray(com, dtype=float),
                             1e-4 * np.eye(3))


def solid_inertia(mass=1.0, inertia=0.01):
    return sp.SpatialInertia(mass, np.zeros(3), inertia * np.eye(3))


def random_chain(n, seed, revolute_bias=0.6):
    """Serial chain of random single-dof joints with generic offsets."""
    rng = np.random.default_rng(seed)
    bodies = []
    for i in range(n):
        kind = dyn.REVOLUTE if rng.random() < revolute_bias else dyn.PRISMATIC
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        com = rng.normal(size=3) * 0.3
        a = rng.normal(size=(3, 3)) * 0.2
        inertia = sp.SpatialInertia(0.3 + rng.random(), com,
                                    a @ a.T + 0.05 * np.eye(3))
        offset = sp.Transform(sp.rotation_exp(rng.normal(size=3) * 0.5),
                              rng.normal(size=3) * 0.4)
        bodies.append(dyn.Body(inertia, i - 1, dyn.JointDef(kind, axis),
                               offset))
    return dyn.Skeleton(tuple(bodies))


def free_body_bodies(bodies, mass=1.0, inertia=0.01):
    """Append a 6-dof body (prismatic xyz + revolute zyx); returns its index."""
    axes = [([1, 0, 0], dyn.PRISMATIC), ([0, 1, 0], dyn.PRISMATIC),
            ([0, 0, 1], dyn.PRISMATIC), ([0, 0, 1], dyn.REVOLUTE),
            ([0, 1, 0], dyn.REVOLUTE), ([1, 0, 0], dyn.REVOLUTE)]
    parent = -1 if not bodies else -1
    for k, (axis, kind) in enumerate(axes):
        m = 0.2 if kind == dyn.PRISMATIC else mass
        i = inertia if k == len(axes) - 1 else 1e-3
        bodies.append(dyn.Body(solid_inertia(m, i), parent,
                               dyn.JointDef(kind, axis)))
        parent = len(bodies) - 1
    return parent


def mu_fd_steps(skeleton):
    """Finite-difference steps over the inertial parameter vector that keep
    every perturbed inertia inside the positive-definite cone."""
    h = np.empty(skeleton.n * PARAMS_PER_BODY)
    for b, body in enumerate(skeleton.bodies):
        base = b * PARAMS_PER_BODY
        lam = float(np.linalg.eigvalsh(body.inertia.inertia).min())
        h[base] = 1e-3 * body.inertia.mass
        h[base + 1:base + 4] = 1e-3
        h[base + 4:base + 10] = 0.05 * lam
    return h


@pytest.fixture
def rng():
    return np.random.default_rng(20240810)
