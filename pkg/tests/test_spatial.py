import numpy as np
import pytest

from diffrbd import fdcheck
from diffrbd import spatial as sp


def random_transform(rng):
    return sp.Transform(sp.rotation_exp(rng.normal(size=3)),
                        rng.normal(size=3))


def test_identity_adjoints():
    eye = sp.Transform.identity()
    assert np.allclose(sp.adjoint(eye), np.eye(6))
    assert np.allclose(sp.dual_adjoint(eye), np.eye(6))


def test_translation_adds_cross_term():
    # pure translation d applied to a pure angular motion gains d x omega
    d = np.array([0.3, -0.2, 0.9])
    omega = np.array([0.5, 1.1, -0.7])
    t = sp.Transform(np.eye(3), d)
    out = sp.adjoint(t) @ np.concatenate([omega, np.zeros(3)])
    assert np.allclose(out[:3], omega)
    assert np.allclose(out[3:], np.cross(d, omega))


def test_adjoint_homomorphism(rng):
    for _ in range(1000):
        a = random_transform(rng)
        b = random_transform(rng)
        lhs = sp.adjoint(a.compose(b))
        rhs = sp.adjoint(a) @ sp.adjoint(b)
        assert np.abs(lhs - rhs).max() < 1e-10


def test_adjoint_inverse_composition(rng):
    t = random_transform(rng)
    assert np.abs(sp.adjoint(t) @ sp.adjoint(t.inverse()) - np.eye(6)).max() \
        < 1e-12
    assert t.compose(t.inverse()).is_valid()
    assert np.abs(t.compose(t.inverse()).translation).max() < 1e-12


def test_dual_adjoint_is_inverse_transpose(rng):
    for _ in range(50):
        t = random_transform(rng)
        assert np.abs(sp.dual_adjoint(t) - sp.adjoint(t.inverse()).T).max() \
            < 1e-12


def test_power_pairing_preserved(rng):
    for _ in range(100):
        t = random_transform(rng)
        f = rng.normal(size=6)
        v = rng.normal(size=6)
        assert abs((sp.dual_adjoint(t) @ f) @ (sp.adjoint(t) @ v) - f @ v) \
            < 1e-10


def test_bracket_antisymmetry_and_pairing(rng):
    v = rng.normal(size=6)
    assert np.abs(sp.lie_bracket(v, v)).max() < 1e-15
    for _ in range(50):
        a, b, f = rng.normal(size=6), rng.normal(size=6), rng.normal(size=6)
        assert abs(sp.dual_bracket(a, f) @ b + f @ sp.lie_bracket(a, b)) \
            < 1e-12
        # bilinearity spot check
        assert np.allclose(sp.lie_bracket(2 * a, b),
                           2 * sp.lie_bracket(a, b))


def test_ad_matches_adjoint_derivative(rng):
    # d/dt adjoint(exp(t v)) at t = 0 equals ad(v), by Ridders differencing
    for _ in range(5):
        v = rng.normal(size=6)

        def flat_adjoint(t):
            return sp.adjoint(sp.transform_exp(t[0] * v)).ravel()

        jac, _ = fdcheck.ridders(flat_adjoint, np.array([0.0]))
        rel = np.abs(jac.reshape(6, 6) - sp.ad_matrix(v)).max() \
            / max(1.0, np.abs(v).max())
        assert rel < 1e-8


def test_exp_small_angle_continuity():
    # the series branch below the cutoff meets the closed form above it
    direction = np.array([0.6, -0.8, 0.0])
    linear = np.array([0.5, -0.2, 0.1])
    below = sp.transform_exp(np.concatenate([0.999999e-8 * direction, linear]))
    above = sp.transform_exp(np.concatenate([1.000001e-8 * direction, linear]))
    assert np.abs(below.translation - above.translation).max() < 1e-12
    assert np.abs(below.rotation - above.rotation).max() < 1e-12
    assert below.is_valid()


def test_rotation_quaternion_round_trip(rng):
    for _ in range(100):
        r = sp.rotation_exp(rng.normal(size=3))
        q = sp.quaternion_from_rotation(r)
        assert np.abs(sp.rotation_from_quaternion(q) - r).max() < 1e-12


def test_spatial_inertia_properties(rng):
    for _ in range(100):
        a = rng.normal(size=(3, 3))
        inertia = sp.SpatialInertia(0.1 + rng.random(), rng.normal(size=3),
                                    a @ a.T + 0.1 * np.eye(3))
        g = inertia.matrix()
        assert np.abs(g - g.T).max() < 1e-12
        assert np.linalg.eigvalsh(g).min() > 0


def test_spatial_inertia_rejects_bad_values():
    with pytest.raises(ValueError):
        sp.SpatialInertia(-1.0, np.zeros(3), np.eye(3))
    with pytest.raises(ValueError):
        sp.SpatialInertia(1.0, np.zeros(3), -np.eye(3))
