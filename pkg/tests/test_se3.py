"""Tests for the SE(3) layer: exp/log maps, group ops, and batched helpers.

Closed-form results are cross-checked against a dense matrix-exponential
oracle (scipy's scaling-and-squaring) so the Rodrigues/left-Jacobian code
path never gets to grade its own homework.
"""

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from graphcal.errors import AngleNearPi
from graphcal.se3 import (
    Transform,
    Twist,
    exp_many,
    exp_map,
    hat,
    inv_many,
    log_map,
    project_rotation,
    rotation_exp,
    rotation_log,
    skew,
    skew_many,
    tangent_mean,
)


def random_twist(rng, max_angle=3.0, max_trans=100.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    phi = axis * rng.uniform(0.0, max_angle)
    rho = rng.uniform(-max_trans, max_trans, size=3)
    return Twist(rho=rho, phi=phi)


# ---------------------------------------------------------------------------
# hat / skew layout
# ---------------------------------------------------------------------------


def test_hat_zero_twist_is_zero_matrix():
    assert np.array_equal(hat(Twist(np.zeros(3), np.zeros(3))), np.zeros((4, 4)))


def test_hat_pure_translation_layout():
    m = hat(Twist(rho=np.array([1.0, 2.0, 3.0]), phi=np.zeros(3)))
    expected = np.zeros((4, 4))
    expected[:3, 3] = [1.0, 2.0, 3.0]
    assert np.array_equal(m, expected)


def test_hat_block_structure():
    rng = np.random.default_rng(7)
    for _ in range(20):
        xi = random_twist(rng)
        m = hat(xi)
        # rotation block is antisymmetric, bottom row identically zero
        assert np.array_equal(m[:3, :3], -m[:3, :3].T)
        assert np.array_equal(m[3, :], np.zeros(4))
        assert np.array_equal(m[:3, 3], xi.rho)


def test_skew_matches_cross_product():
    rng = np.random.default_rng(8)
    for _ in range(10):
        a = rng.normal(size=3)
        b = rng.normal(size=3)
        assert np.allclose(skew(a) @ b, np.cross(a, b))


# ---------------------------------------------------------------------------
# exp_map
# ---------------------------------------------------------------------------


def test_exp_zero_twist_is_identity():
    t = exp_map(Twist(np.zeros(3), np.zeros(3)))
    assert np.allclose(t.matrix, np.eye(4))


def test_exp_quarter_turn_about_z():
    # Closed-form Rodrigues evaluation: quarter turn about z.
    t = exp_map(Twist(rho=np.zeros(3), phi=np.array([0.0, 0.0, np.pi / 2])))
    expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(t.rotation, expected, atol=1e-12)
    assert np.allclose(t.translation, 0.0)


def test_exp_matches_dense_matrix_exponential():
    # Independent oracle: scipy scaling-and-squaring on hat(xi).
    xi = Twist(rho=np.array([1.0, 2.0, 3.0]), phi=np.array([0.1, -0.2, 0.3]))
    dense = scipy.linalg.expm(hat(xi))
    assert np.allclose(exp_map(xi).matrix, dense, atol=1e-10)


def test_exp_matches_expm_over_random_twists():
    rng = np.random.default_rng(99)
    for _ in range(50):
        xi = random_twist(rng)
        dense = scipy.linalg.expm(hat(xi))
        assert np.allclose(exp_map(xi).matrix, dense, atol=1e-9)


def test_exp_small_angle_branch_agrees_with_expm():
    # Exercise the Taylor fallback region explicitly.
    for scale in (1e-7, 1e-8, 1e-10, 0.0):
        xi = Twist(rho=np.array([5.0, -2.0, 1.0]), phi=np.array([scale, scale / 2, -scale]))
        dense = scipy.linalg.expm(hat(xi))
        assert np.allclose(exp_map(xi).matrix, dense, atol=1e-12)


def test_exp_produces_valid_transform():
    rng = np.random.default_rng(3)
    for _ in range(50):
        t = exp_map(random_twist(rng))
        r = t.rotation
        assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
        assert abs(np.linalg.det(r) - 1.0) < 1e-9
        assert np.array_equal(t.matrix[3], [0.0, 0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# log_map
# ---------------------------------------------------------------------------


def test_log_identity_is_zero():
    xi = log_map(Transform.identity())
    assert np.allclose(xi.rho, 0.0)
    assert np.allclose(xi.phi, 0.0)


def test_log_raises_near_pi():
    with pytest.raises(AngleNearPi):
        log_map(exp_map(Twist(np.zeros(3), np.array([0.0, 0.0, 3.1415926]))))


def test_round_trip_thousand_random_twists():
    # exp/log round trip on the principal branch.
    rng = np.random.default_rng(12345)
    worst = 0.0
    for _ in range(1000):
        xi = random_twist(rng, max_angle=3.0)
        back = log_map(exp_map(xi))
        err = max(
            np.max(np.abs(back.rho - xi.rho)),
            np.max(np.abs(back.phi - xi.phi)),
        )
        worst = max(worst, err)
    assert worst < 1e-8


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-100.0, 100.0), min_size=3, max_size=3),
    st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3),
    st.floats(0.0, 2.9),
)
def test_round_trip_property(rho, direction, angle):
    d = np.asarray(direction)
    n = np.linalg.norm(d)
    phi = np.zeros(3) if n < 1e-12 else d / n * angle
    xi = Twist(rho=np.asarray(rho, dtype=float), phi=phi)
    back = log_map(exp_map(xi))
    assert np.max(np.abs(back.rho - xi.rho)) < 1e-8
    assert np.max(np.abs(back.phi - xi.phi)) < 1e-8


def test_log_then_exp_reproduces_transform():
    rng = np.random.default_rng(21)
    for _ in range(100):
        t = exp_map(random_twist(rng))
        again = exp_map(log_map(t))
        assert np.max(np.abs(again.matrix - t.matrix)) < 1e-9


# ---------------------------------------------------------------------------
# group operations
# ---------------------------------------------------------------------------


def test_compose_with_inverse_is_identity():
    rng = np.random.default_rng(5)
    for _ in range(20):
        t = exp_map(random_twist(rng))
        assert np.allclose(t.compose(t.inverse()).matrix, np.eye(4), atol=1e-10)
        assert np.allclose(t.inverse().compose(t).matrix, np.eye(4), atol=1e-10)


def test_inverse_closed_form():
    t = exp_map(Twist(rho=np.array([10.0, -4.0, 2.0]), phi=np.array([0.3, 0.2, -0.1])))
    inv = t.inverse()
    assert np.allclose(inv.rotation, t.rotation.T)
    assert np.allclose(inv.translation, -t.rotation.T @ t.translation)


def test_apply_identity_and_pure_translation():
    p = np.array([5.0, 6.0, 7.0])
    assert np.allclose(Transform.identity().apply(p), p)
    shift = exp_map(Twist(rho=np.array([10.0, 0.0, 0.0]), phi=np.zeros(3)))
    assert np.allclose(shift.apply(np.array([1.0, 1.0, 1.0])), [11.0, 1.0, 1.0])


def test_apply_matches_homogeneous_product():
    rng = np.random.default_rng(17)
    t = exp_map(random_twist(rng))
    pts = rng.uniform(-50, 50, size=(8, 3))
    ph = np.hstack([pts, np.ones((8, 1))])
    expected = (t.matrix @ ph.T).T[:, :3]
    got = np.array([t.apply(p) for p in pts])
    assert np.allclose(got, expected, atol=1e-12)


def test_group_closure_without_reorthonormalization():
    # A long chain of products must stay on SO(3) without any cleanup step.
    rng = np.random.default_rng(11)
    t = Transform.identity()
    for _ in range(200):
        t = t.compose(exp_map(random_twist(rng, max_angle=1.0)))
    r = t.rotation
    assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
    assert abs(np.linalg.det(r) - 1.0) < 1e-9


def test_shared_axis_homomorphism():
    # exp(xi) * exp(xi) == exp(2 xi) when rho and phi share one axis.
    for axis in range(3):
        rho = np.zeros(3)
        phi = np.zeros(3)
        rho[axis] = 7.0
        phi[axis] = 0.4
        xi = Twist(rho, phi)
        double = Twist(2 * rho, 2 * phi)
        lhs = exp_map(xi).compose(exp_map(xi)).matrix
        assert np.max(np.abs(lhs - exp_map(double).matrix)) < 1e-9


def test_first_order_perturbation_bound():
    # || exp(dxi) X - (I + hat(dxi)) X || = O(||dxi||^2): the linearization
    # the optimizer relies on.
    rng = np.random.default_rng(23)
    x = exp_map(random_twist(rng))
    for scale in (1e-3, 1e-4, 1e-5):
        d = random_twist(rng, max_angle=1.0, max_trans=1.0)
        dxi = Twist(d.rho * scale, d.phi * scale)
        lhs = exp_map(dxi).compose(x).matrix
        approx = (np.eye(4) + hat(dxi)) @ x.matrix
        norm = np.linalg.norm(np.concatenate([dxi.rho, dxi.phi]))
        # generous constant; the point is the quadratic scaling
        assert np.max(np.abs(lhs - approx)) <= 100.0 * norm**2


# ---------------------------------------------------------------------------
# Transform validation and construction
# ---------------------------------------------------------------------------


def test_constructor_rejects_non_orthonormal():
    m = np.eye(4)
    m[0, 0] = 1.1
    with pytest.raises(ValueError):
        Transform(m)


def test_constructor_rejects_reflection():
    m = np.eye(4)
    m[0, 0] = -1.0  # det = -1
    with pytest.raises(ValueError):
        Transform(m)


def test_constructor_rejects_bad_bottom_row():
    m = np.eye(4)
    m[3, 0] = 1e-3
    with pytest.raises(ValueError):
        Transform(m)


def test_transform_matrix_is_read_only():
    t = Transform.identity()
    with pytest.raises(ValueError):
        t.matrix[0, 0] = 2.0


def test_from_rotation_translation_round_trip():
    rng = np.random.default_rng(31)
    r = rotation_exp(rng.normal(size=3))
    p = rng.uniform(-10, 10, size=3)
    t = Transform.from_rotation_translation(r, p)
    assert np.allclose(t.rotation, r)
    assert np.allclose(t.translation, p)


def test_project_rotation_snaps_noisy_matrix():
    rng = np.random.default_rng(41)
    r = rotation_exp(rng.normal(size=3))
    noisy = r + rng.normal(scale=1e-6, size=(3, 3))
    snapped = project_rotation(noisy)
    assert np.max(np.abs(snapped.T @ snapped - np.eye(3))) < 1e-12
    assert np.linalg.det(snapped) > 0
    assert np.max(np.abs(snapped - r)) < 1e-5


# ---------------------------------------------------------------------------
# rotation-only helpers
# ---------------------------------------------------------------------------


def test_rotation_exp_log_round_trip():
    rng = np.random.default_rng(53)
    for _ in range(200):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        v = axis * rng.uniform(0, 3.0)
        assert np.allclose(rotation_log(rotation_exp(v)), v, atol=1e-9)


def test_rotation_log_near_pi_raises():
    v = np.array([np.pi - 1e-9, 0.0, 0.0])
    with pytest.raises(AngleNearPi):
        rotation_log(rotation_exp(v))


def test_tangent_mean_of_identical_transforms():
    t = exp_map(Twist(rho=np.array([3.0, -1.0, 2.0]), phi=np.array([0.2, -0.1, 0.5])))
    mean = tangent_mean([t, t, t])
    assert np.allclose(mean.matrix, t.matrix, atol=1e-12)


def test_tangent_mean_symmetric_pair():
    # Mean of exp(+xi) and exp(-xi) about one shared axis is the identity.
    xi = Twist(rho=np.array([0.0, 0.0, 5.0]), phi=np.array([0.0, 0.0, 0.4]))
    mean = tangent_mean([exp_map(xi), exp_map(Twist(-xi.rho, -xi.phi))])
    assert np.allclose(mean.matrix, np.eye(4), atol=1e-12)


def test_tangent_mean_reduces_scatter():
    # Averaging n noisy poses should land closer to truth than a typical
    # single draw; this is the property the tree initializer leans on.
    rng = np.random.default_rng(61)
    true = exp_map(Twist(rho=np.array([40.0, -10.0, 25.0]), phi=np.array([0.5, -0.3, 0.8])))
    samples = [
        true.compose(exp_map(Twist(rng.normal(scale=0.5, size=3), rng.normal(scale=0.02, size=3))))
        for _ in range(40)
    ]
    mean = tangent_mean(samples)

    def pose_err(t):
        return np.linalg.norm(log_map(t.inverse().compose(true)).as_vector())

    errs = [pose_err(s) for s in samples]
    assert pose_err(mean) < np.median(errs)


# ---------------------------------------------------------------------------
# batched helpers
# ---------------------------------------------------------------------------


def test_skew_many_matches_loop():
    rng = np.random.default_rng(71)
    vs = rng.normal(size=(12, 3))
    batched = skew_many(vs)
    for i, v in enumerate(vs):
        assert np.array_equal(batched[i], skew(v))


def test_exp_many_matches_loop():
    rng = np.random.default_rng(73)
    xis = rng.normal(size=(15, 6))
    batched = exp_many(xis)
    for i, row in enumerate(xis):
        single = exp_map(Twist(rho=row[:3], phi=row[3:]))
        assert np.max(np.abs(batched[i] - single.matrix)) < 1e-12


def test_inv_many_matches_loop():
    rng = np.random.default_rng(79)
    mats = exp_many(rng.normal(size=(10, 6)))
    inv = inv_many(mats)
    for i in range(10):
        assert np.max(np.abs(inv[i] @ mats[i] - np.eye(4))) < 1e-12
