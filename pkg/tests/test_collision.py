import dataclasses

import numpy as np
import pytest

from conftest import free_body_bodies
from diffrbd import collision as col
from diffrbd import dynamics as dyn
from diffrbd import fdcheck
from diffrbd import spatial as sp


def pair_world(shape_a, shape_b, static_b=False):
    bodies = []
    ba = free_body_bodies(bodies)
    bb = None if static_b else free_body_bodies(bodies)
    sk = dyn.Skeleton(tuple(bodies))
    colliders = [col.Collider(ba, shape_a, friction=0.5),
                 col.Collider(bb, shape_b, friction=0.5)]
    return sk, colliders


def geometry_oracle(sk, colliders, contact, q, h=1e-3):
    def geo(qq):
        p, n, _ = col.evaluate_contact(sk, qq, colliders, contact)
        return np.concatenate([p, n])
    jac, _ = fdcheck.ridders(geo, q, h=h * np.ones(len(q)))
    return jac[:3], jac[3:]


def assert_gradients_match(sk, colliders, q, expect_kinds=None, tol=1e-6):
    contacts = col.detect(sk, q, colliders)
    assert contacts
    if expect_kinds is not None:
        assert sorted(c.kind for c in contacts) == sorted(expect_kinds)
    grads = col.contact_gradients(sk, q, colliders, contacts)
    for contact, (dp, dn) in zip(contacts, grads):
        assert abs(np.linalg.norm(contact.normal) - 1.0) < 1e-12
        assert contact.depth > 0
        p0, n0, d0 = col.evaluate_contact(sk, q, colliders, contact)
        assert np.abs(p0 - contact.point).max() < 1e-10
        assert np.abs(n0 - contact.normal).max() < 1e-10
        assert abs(d0 - contact.depth) < 1e-10
        dp_fd, dn_fd = geometry_oracle(sk, colliders, contact, q)
        scale = max(1.0, np.abs(dp_fd).max(), np.abs(dn_fd).max())
        assert np.abs(dp - dp_fd).max() / scale < tol, contact.kind
        assert np.abs(dn - dn_fd).max() / scale < tol, contact.kind
    return contacts


def test_sphere_sphere_paper_example():
    # two unit spheres with centers 1.9 apart
    sk, colliders = pair_world(col.Sphere(1.0), col.Sphere(1.0))
    q = np.zeros(12)
    q[6] = 1.9
    contacts = col.detect(sk, q, colliders)
    assert len(contacts) == 1
    c = contacts[0]
    assert c.kind == col.SPHERE_SPHERE
    assert np.abs(c.point - [0.95, 0, 0]).max() < 1e-12
    assert np.abs(c.normal - [-1, 0, 0]).max() < 1e-12
    assert abs(c.depth - 0.1) < 1e-12


def test_sphere_halfspace_placement():
    bodies = []
    ba = free_body_bodies(bodies)
    sk = dyn.Skeleton(tuple(bodies))
    colliders = [col.Collider(ba, col.Sphere(1.0)),
                 col.Collider(None, col.HalfSpace([0, 1, 0], 0.0))]
    q = np.zeros(6)
    q[1] = 0.95
    contacts = col.detect(sk, q, colliders)
    assert len(contacts) == 1
    c = contacts[0]
    assert c.kind == col.SPHERE_FACE
    assert np.abs(c.normal - [0, 1, 0]).max() < 1e-12
    assert np.abs(c.point - [0, -0.05, 0]).max() < 1e-12
    assert abs(c.depth - 0.05) < 1e-12


def test_separated_shapes_empty():
    sk, colliders = pair_world(col.Sphere(0.4), col.Sphere(0.4))
    q = np.zeros(12)
    q[6] = 5.0
    assert col.detect(sk, q, colliders) == []


def test_swap_symmetry():
    sk, colliders = pair_world(col.Sphere(1.0), col.Sphere(0.7))
    q = np.zeros(12)
    q[6:9] = [1.2, 0.6, 0.3]
    fwd = col.detect(sk, q, colliders)[0]
    swapped = col.detect(sk, q, list(reversed(colliders)))[0]
    assert np.abs(fwd.point - swapped.point).max() < 1e-12
    assert np.abs(fwd.normal + swapped.normal).max() < 1e-12


def test_polygonal_normal_gradient_exactly_zero():
    # box vertex on a plane: the plane normal never moves with q
    bodies = []
    ba = free_body_bodies(bodies)
    sk = dyn.Skeleton(tuple(bodies))
    colliders = [col.Collider(ba, col.Box([0.5, 0.4, 0.3])),
                 col.Collider(None, col.HalfSpace([0, 0, 1], 0.0))]
    q = np.zeros(6)
    q[5] = 0.15
    cache = dyn.ArticulatedCache(sk, q)
    verts = col.Box([0.5, 0.4, 0.3]).vertices()
    zmin = min(cache.world[ba].apply(v)[2] for v in verts)
    q[2] = -zmin - 0.004
    contacts = assert_gradients_match(sk, colliders, q,
                                      expect_kinds=["vertex-face"] * 2)
    grads = col.contact_gradients(sk, q, colliders, contacts)
    for _, dn in grads:
        assert np.abs(dn).max() == 0.0


def test_sphere_face_point_follows_center():
    bodies = []
    ba = free_body_bodies(bodies)
    sk = dyn.Skeleton(tuple(bodies))
    colliders = [col.Collider(ba, col.Sphere(0.5)),
                 col.Collider(None, col.HalfSpace([0, 0, 1], 0.0))]
    q = np.zeros(6)
    q[2] = 0.4995
    contacts = col.detect(sk, q, colliders)
    (dp, dn), = col.contact_gradients(sk, q, colliders, contacts)
    assert np.abs(dn).max() == 0.0
    # dp/dq equals the sphere-center Jacobian: identity on the prismatic dofs
    assert np.abs(dp[:, :3] - np.eye(3)).max() < 1e-12


SPHERE_CASES = [
    ("sphere-sphere", col.Sphere(1.0), col.Sphere(1.0),
     [0, 0, 0, 0.2, 0.1, -0.1], [1.85, 0.2, 0.1, 0, 0, 0.3],
     ["sphere-sphere"]),
    ("sphere-box-face", col.Sphere(0.5), col.Box([1, 1, 1]),
     [0.2, 0.1, 1.45, 0, 0, 0], [0, 0, 0, 0, 0, 0], ["sphere-face"]),
    ("sphere-box-edge", col.Sphere(0.5), col.Box([1, 1, 1]),
     [1.3, 0.0, 1.3, 0.1, 0, 0], [0, 0, 0, 0, 0, 0.05], ["sphere-edge"]),
    ("sphere-box-vertex", col.Sphere(0.6), col.Box([1, 1, 1]),
     [1.3, 1.3, 1.3, 0, 0, 0], [0, 0, 0, 0.02, 0.03, 0], ["sphere-vertex"]),
    ("pipe-sphere", col.Capsule(0.4, 1.0), col.Sphere(0.5),
     [0, 0, 0, 0.1, 0.05, 0], [0.85, 0.2, 0, 0, 0, 0], ["pipe-sphere"]),
    ("pipe-pipe", col.Capsule(0.3, 1.0), col.Capsule(0.3, 1.0),
     [0, 0, 0, 0, 1.5707963, 0], [0, 0.1, 0.55, 0, 0, 0.1], ["pipe-pipe"]),
]


@pytest.mark.parametrize("name,sa,sb,qa,qb,kinds", SPHERE_CASES,
                         ids=[c[0] for c in SPHERE_CASES])
def test_curved_pair_gradients(name, sa, sb, qa, qb, kinds):
    sk, colliders = pair_world(sa, sb)
    q = np.zeros(12)
    q[:6] = qa
    q[6:] = qb
    assert_gradients_match(sk, colliders, q, expect_kinds=kinds)


def test_box_box_vertex_and_edge_kinds():
    bodies = []
    ba = free_body_bodies(bodies)
    bb = free_body_bodies(bodies)
    sk = dyn.Skeleton(tuple(bodies))
    # vertex of A in the top face of B
    colliders = [col.Collider(ba, col.Box([0.3, 0.3, 0.3])),
                 col.Collider(bb, col.Box([1, 1, 0.5]))]
    q = np.zeros(12)
    q[4], q[5] = 0.6, 0.45
    cache = dyn.ArticulatedCache(sk, q)
    verts = col.Box([0.3, 0.3, 0.3]).vertices()
    zmin = min(cache.world[ba].apply(v)[2] for v in verts)
    q[2] = 0.5 - zmin - 0.01
    assert_gradients_match(sk, colliders, q, expect_kinds=["vertex-face"])
    # swap roles: face of A against vertex of B
    colliders = [col.Collider(ba, col.Box([1, 1, 0.5])),
                 col.Collider(bb, col.Box([0.3, 0.3, 0.3]))]
    q2 = np.zeros(12)
    q2[10], q2[11] = 0.6, 0.45
    cache = dyn.ArticulatedCache(sk, q2)
    zmin = min(cache.world[bb].apply(v)[2] for v in verts)
    q2[8] = 0.5 - zmin - 0.01
    assert_gradients_match(sk, colliders, q2, expect_kinds=["face-vertex"])
    # crossing edges, one dipped so only the crossing penetrates
    colliders = [col.Collider(ba, col.Box([0.3, 0.3, 0.3])),
                 col.Collider(bb, col.Box([1, 1, 0.5]))]
    q3 = np.zeros(12)
    q3[4], q3[5] = 0.12, np.pi / 4
    q3[0] = 0.95
    cache = dyn.ArticulatedCache(sk, q3)
    world_verts = np.array([cache.world[ba].apply(v) for v in verts])
    order = np.argsort(world_verts[:, 2])
    w0, w1 = world_verts[order[0]], world_verts[order[1]]
    t = (1.0 - w0[0]) / (w1[0] - w0[0])
    q3[2] = 0.5 - 0.008 - (w0[2] + t * (w1[2] - w0[2]))
    assert_gradients_match(sk, colliders, q3, expect_kinds=["edge-edge"])


def test_capsule_box_kinds():
    bodies = []
    ba = free_body_bodies(bodies)
    bb = free_body_bodies(bodies)
    sk = dyn.Skeleton(tuple(bodies))
    box = col.Box([0.4, 0.4, 0.4])
    # capsule resting on the top vertex of a tilted box
    colliders = [col.Collider(ba, box), col.Collider(bb, col.Capsule(0.3, 1.0))]
    q = np.zeros(12)
    q[4], q[5] = 0.6, 0.45
    cache = dyn.ArticulatedCache(sk, q)
    world_verts = np.array([cache.world[ba].apply(v) for v in box.vertices()])
    top = world_verts[np.argmax(world_verts[:, 2])]
    q[6:9] = [top[0] + 0.04, top[1] + 0.1, top[2] + 0.3 - 0.015]
    q[11] = np.pi / 2
    assert_gradients_match(sk, colliders, q, expect_kinds=["vertex-pipe"])
    # capsule lying diagonally across a box face: two edge-pipe contacts
    colliders = [col.Collider(ba, box), col.Collider(bb, col.Capsule(0.25, 1.2))]
    q2 = np.zeros(12)
    q2[8] = 0.4 + 0.25 - 0.01
    q2[7] = 0.05
    q2[10] = np.pi / 2
    q2[9] = 0.3
    assert_gradients_match(sk, colliders, q2,
                           expect_kinds=["edge-pipe", "edge-pipe"])


def test_random_nondegenerate_gradients(rng):
    # many random perturbations of a sphere pair; analytic matches Ridders
    sk, colliders = pair_world(col.Sphere(0.8), col.Sphere(0.6))
    hits = 0
    for _ in range(200):
        q = np.zeros(12)
        q[:3] = rng.normal(scale=0.05, size=3)
        q[3:6] = rng.normal(scale=0.3, size=3)
        q[6:9] = np.array([1.3, 0, 0]) + rng.normal(scale=0.05, size=3)
        q[9:12] = rng.normal(scale=0.3, size=3)
        contacts = col.detect(sk, q, colliders)
        if not contacts:
            continue
        hits += 1
        assert_gradients_match(sk, colliders, q)
    assert hits > 100


def test_contact_jacobian_shape_and_simple_row():
    # ball on ground through a single vertical prismatic joint
    sk = dyn.Skeleton((dyn.Body(
        sp.SpatialInertia(1.0, np.zeros(3), 1e-3 * np.eye(3)), -1,
        dyn.JointDef(dyn.PRISMATIC, [0, 0, 1])),))
    colliders = [col.Collider(0, col.Sphere(0.5)),
                 col.Collider(None, col.HalfSpace([0, 0, 1], 0.0))]
    q = np.array([0.4995])
    contacts = col.detect(sk, q, colliders)
    jac = col.contact_jacobian(sk, q, contacts)
    assert jac.matrix.shape == (3, 1)
    assert abs(jac.matrix[0, 0] - 1.0) < 1e-12
    # two contacts give six rows
    colliders2 = colliders + [col.Collider(
        0, col.Sphere(0.5), offset=sp.Transform(np.eye(3), [2, 0, 0]))]
    contacts2 = col.detect(sk, q, colliders2)
    jac2 = col.contact_jacobian(sk, q, contacts2)
    assert jac2.matrix.shape == (6, 1)


def test_contact_jacobian_matches_point_velocity():
    # rows of J equal d(world contact point velocity)/d(qd): finite
    # difference of positions along the flow agrees to integrator order
    bodies = []
    ba = free_body_bodies(bodies)
    sk = dyn.Skeleton(tuple(bodies))
    colliders = [col.Collider(ba, col.Box([0.5, 0.4, 0.3])),
                 col.Collider(None, col.HalfSpace([0, 0, 1], 0.0))]
    q = np.zeros(6)
    q[2] = -(-0.3) - 0.004
    contacts = col.detect(sk, q, colliders)
    jac = col.contact_jacobian(sk, q, contacts)
    rng = np.random.default_rng(0)
    qd = rng.normal(size=6) * 0.2
    h = 1e-7
    for k, contact in enumerate(contacts):
        p_plus, _, _ = col.evaluate_contact(sk, q + h * qd, colliders, contact)
        p_minus, _, _ = col.evaluate_contact(sk, q - h * qd, colliders, contact)
        vel = (p_plus - p_minus) / (2 * h)
        for r, d in enumerate(jac.directions[3 * k:3 * k + 3]):
            assert abs(jac.matrix[3 * k + r] @ qd - d @ vel) < 1e-6


def test_jacobian_derivative_and_jtf(rng):
    sk, colliders = pair_world(col.Sphere(1.0), col.Sphere(1.0))
    q = np.zeros(12)
    q[:6] = [0, 0, 0, 0.2, 0.1, -0.1]
    q[6:] = [1.85, 0.2, 0.1, 0, 0, 0.3]
    contacts = col.detect(sk, q, colliders)
    dj = col.contact_jacobian_derivative(sk, q, colliders, contacts)

    def jac_at(qq):
        cs = []
        for c in contacts:
            p, n, d = col.evaluate_contact(sk, qq, colliders, c)
            cs.append(dataclasses.replace(c, point=p, normal=n, depth=d))
        return col.contact_jacobian(sk, qq, cs).matrix

    oracle, _ = fdcheck.ridders(lambda qq: jac_at(qq).ravel(), q,
                                h=1e-3 * np.ones(12))
    assert np.abs(dj - oracle.reshape(dj.shape)).max() \
        / max(1.0, np.abs(oracle).max()) < 1e-6
    f = rng.normal(size=dj.shape[0])
    d = col.d_jtf_dq(sk, q, colliders, contacts, f)
    oracle_jtf, _ = fdcheck.ridders(lambda qq: jac_at(qq).T @ f, q,
                                    h=1e-3 * np.ones(12))
    assert np.abs(d - oracle_jtf).max() / max(1.0, np.abs(oracle_jtf).max()) \
        < 1e-6
    # zero impulse: the joint-impulse derivative vanishes entirely
    assert np.abs(col.d_jtf_dq(sk, q, colliders, contacts,
                               np.zeros(dj.shape[0]))).max() == 0.0


def test_d_jtf_single_prismatic_is_zero():
    sk = dyn.Skeleton((dyn.Body(
        sp.SpatialInertia(1.0, np.zeros(3), 1e-3 * np.eye(3)), -1,
        dyn.JointDef(dyn.PRISMATIC, [0, 0, 1])),))
    colliders = [col.Collider(0, col.Sphere(0.5)),
                 col.Collider(None, col.HalfSpace([0, 0, 1], 0.0))]
    q = np.array([0.4995])
    contacts = col.detect(sk, q, colliders)
    d = col.d_jtf_dq(sk, q, colliders, contacts, np.array([2.0, 0.1, -0.3]))
    assert np.abs(d).max() < 1e-12


def test_kind_boundary_guard():
    # side-by-side parallel capsules have a non-unique closest-point pair
    sk, colliders = pair_world(col.Capsule(0.3, 1.0), col.Capsule(0.3, 1.0))
    q = np.zeros(12)
    q[6] = 0.55
    contacts = col.detect(sk, q, colliders)
    assert contacts and contacts[0].margin == 0.0
    with pytest.raises(col.KindBoundaryError):
        col.contact_gradients(sk, q, colliders, contacts)


def test_restitution_friction_combination():
    bodies = []
    ba = free_body_bodies(bodies)
    bb = free_body_bodies(bodies)
    sk = dyn.Skeleton(tuple(bodies))
    colliders = [
        col.Collider(ba, col.Sphere(1.0), restitution=0.5, friction=0.4),
        col.Collider(bb, col.Sphere(1.0), restitution=0.8, friction=0.9),
    ]
    q = np.zeros(12)
    q[6] = 1.9
    contact = col.detect(sk, q, colliders)[0]
    assert abs(contact.restitution - 0.4) < 1e-15  # product
    assert abs(contact.friction - 0.4) < 1e-15     # min
