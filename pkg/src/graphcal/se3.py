"""Rigid-body transforms and their tangent-space maps.

Conventions used throughout the package:

* A transform stored on a directed edge a->b maps points written in frame b
  into frame a:  p_a = R @ p_b + t.
* A twist is ordered translation-first: xi = [rho; phi], with exp/log tied
  together through the left Jacobian of SO(3).
* Small rotation angles switch to Taylor expansions of the Rodrigues
  coefficients to avoid 0/0.  Angles within PI_TOL of pi make the rotation
  log ambiguous and raise AngleNearPi instead of guessing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AngleNearPi

SMALL_ANGLE = 1e-6
PI_TOL = 1e-6
_ORTHO_TOL = 1e-8

# Switch point between series and closed-form trig for the Rodrigues-style
# coefficients.  0.1 rad is far above the 0/0 region, and the O(t^6) series
# below it agrees with the exact value to ~1e-14 relative.  The closed forms
# cannot be used much below this: (1 - cos t) and (1 - a/(2b)) cancel
# catastrophically, losing ~eps/t^2 and ~eps/t^4 of relative accuracy, which
# is what would break the 1e-8 exp/log round-trip bound for t in
# (1e-6, ~5e-3) with translations of ~100 mm.
_SERIES_SWITCH = 0.1


def skew(v) -> np.ndarray:
    """Skew-symmetric matrix such that skew(v) @ w == cross(v, w)."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


# Rodrigues-style coefficients and their small-angle Taylor forms.  Keeping
# them as scalar helpers (rather than inlining) keeps exp/log/J/J^-1 honest
# about using identical switch points.

def _coeff_a(theta: float) -> float:
    """sin(t)/t"""
    if theta < _SERIES_SWITCH:
        t2 = theta * theta
        return 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0))
    return np.sin(theta) / theta


def _coeff_b(theta: float) -> float:
    """(1-cos(t))/t^2"""
    if theta < _SERIES_SWITCH:
        t2 = theta * theta
        return 0.5 * (1.0 - t2 / 12.0 * (1.0 - t2 / 30.0 * (1.0 - t2 / 56.0)))
    return (1.0 - np.cos(theta)) / (theta * theta)


def _coeff_c(theta: float) -> float:
    """(t-sin(t))/t^3"""
    if theta < _SERIES_SWITCH:
        t2 = theta * theta
        return (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0))) / 6.0
    return (theta - np.sin(theta)) / (theta ** 3)


def _coeff_d(theta: float) -> float:
    """(1 - a/(2b)) / t^2, the quadratic coefficient of the inverse left Jacobian."""
    if theta < _SERIES_SWITCH:
        t2 = theta * theta
        return (1.0 + t2 / 60.0 * (1.0 + t2 / 42.0 * (1.0 + t2 / 40.0))) / 12.0
    a = _coeff_a(theta)
    b = _coeff_b(theta)
    return (1.0 - a / (2.0 * b)) / (theta * theta)


def rotation_exp(phi) -> np.ndarray:
    """Exponential map so(3) -> SO(3) via the Rodrigues formula."""
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    return np.eye(3) + _coeff_a(theta) * k + _coeff_b(theta) * (k @ k)


def rotation_log(rot: np.ndarray) -> np.ndarray:
    """Logarithm SO(3) -> so(3).  Raises AngleNearPi within PI_TOL of pi."""
    rot = np.asarray(rot, dtype=float)
    cos_theta = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if abs(np.pi - theta) <= PI_TOL:
        raise AngleNearPi(f"rotation angle {theta!r} within {PI_TOL} of pi")
    w = _vee(rot - rot.T) / 2.0
    if theta < SMALL_ANGLE:
        # theta/sin(theta) ~ 1 + theta^2/6
        return w * (1.0 + theta * theta / 6.0)
    return w * (theta / np.sin(theta))


def left_jacobian(phi) -> np.ndarray:
    """Left Jacobian of SO(3); couples rotation and translation in exp_map."""
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    return np.eye(3) + _coeff_b(theta) * k + _coeff_c(theta) * (k @ k)


def left_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    return np.eye(3) - 0.5 * k + _coeff_d(theta) * (k @ k)


def project_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (SVD with det fix)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True, eq=False)
class Twist:
    """Tangent-space element [rho; phi], translation part first."""

    rho: np.ndarray
    phi: np.ndarray

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(rho=xi[:3].copy(), phi=xi[3:].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])


def hat(xi: Twist) -> np.ndarray:
    """4x4 algebra element [[skew(phi), rho], [0, 0]]; exp_map(xi) = expm(hat(xi))."""
    out = np.zeros((4, 4))
    out[:3, :3] = skew(xi.phi)
    out[:3, 3] = xi.rho
    return out


class Transform:
    """Rigid transform held as a validated, immutable 4x4 homogeneous matrix."""

    __slots__ = ("_m",)

    def __init__(self, matrix) -> None:
        m = np.array(matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=_ORTHO_TOL):
            raise ValueError("bottom row must be [0, 0, 0, 1]")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL or np.linalg.det(r) < 0.0:
            raise ValueError("rotation block is not orthonormal")
        m[3] = [0.0, 0.0, 0.0, 1.0]
        m.flags.writeable = False
        self._m = m

    # --- constructors -----------------------------------------------------

    @classmethod
    def _trusted(cls, m: np.ndarray) -> "Transform":
        """Skip validation for matrices rigid by construction (hot paths)."""
        out = object.__new__(cls)
        m.flags.writeable = False
        out._m = m
        return out

    @classmethod
    def identity(cls) -> "Transform":
        return cls._trusted(np.eye(4))

    @classmethod
    def from_rotation_translation(cls, rotation, translation) -> "Transform":
        m = np.eye(4)
        m[:3, :3] = np.asarray(rotation, dtype=float)
        m[:3, 3] = np.asarray(translation, dtype=float).reshape(3)
        return cls(m)

    # --- views --------------------------------------------------------------

    @property
    def matrix(self) -> np.ndarray:
        """Read-only 4x4 view."""
        return self._m

    @property
    def rotation(self) -> np.ndarray:
        return self._m[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self._m[:3, 3]

    # --- algebra --------------------------------------------------------------

    def compose(self, other: "Transform") -> "Transform":
        return Transform._trusted(self._m @ other._m)

    def __matmul__(self, other: "Transform") -> "Transform":
        return self.compose(other)

    def inverse(self) -> "Transform":
        r = self._m[:3, :3]
        m = np.eye(4)
        m[:3, :3] = r.T
        m[:3, 3] = -r.T @ self._m[:3, 3]
        return Transform._trusted(m)

    def apply(self, points) -> np.ndarray:
        """Map points (3,) or (N, 3) from the child frame into the parent frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Transform(t={self.translation.round(4).tolist()})"


def exp_map(xi: Twist) -> Transform:
    """Exponential map se(3) -> SE(3)."""
    m = np.eye(4)
    m[:3, :3] = rotation_exp(xi.phi)
    m[:3, 3] = left_jacobian(xi.phi) @ xi.rho
    return Transform._trusted(m)


def log_map(transform: Transform) -> Twist:
    """Logarithm SE(3) -> se(3); inverse of exp_map away from angle pi."""
    phi = rotation_log(transform.rotation)
    rho = left_jacobian_inv(phi) @ transform.translation
    return Twist(rho=rho, phi=phi)


def tangent_mean(transforms, tol: float = 1e-12, max_iters: int = 50) -> Transform:
    """Iterative bi-invariant mean: mu <- mu * exp(mean log(mu^-1 T_i))."""
    ts = list(transforms)
    if not ts:
        raise ValueError("tangent_mean needs at least one transform")
    mu = ts[0]
    for _ in range(max_iters):
        delta = np.mean(
            [log_map(mu.inverse().compose(t)).as_vector() for t in ts], axis=0
        )
        mu = mu.compose(exp_map(Twist.from_vector(delta)))
        if np.linalg.norm(delta) <= tol:
            break
    return mu


# --- batched raw-matrix helpers ----------------------------------------------
#
# The optimizer and simulator work on stacks of homogeneous matrices (N, 4, 4)
# for speed and only wrap results in Transform at the API boundary.

def skew_many(v: np.ndarray) -> np.ndarray:
    """(N, 3) -> (N, 3, 3) skew-symmetric stack."""
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    out = np.zeros((n, 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


def inv_many(mats: np.ndarray) -> np.ndarray:
    """Invert a stack (N, 4, 4) of rigid transforms without general solves."""
    mats = np.asarray(mats, dtype=float)
    rt = np.transpose(mats[:, :3, :3], (0, 2, 1))
    out = np.zeros_like(mats)
    out[:, :3, :3] = rt
    out[:, :3, 3] = -np.einsum("nij,nj->ni", rt, mats[:, :3, 3])
    out[:, 3, 3] = 1.0
    return out


def exp_many(xis: np.ndarray) -> np.ndarray:
    """Vectorized exp_map over rows of (N, 6) twists -> (N, 4, 4)."""
    xis = np.asarray(xis, dtype=float)
    rho = xis[:, :3]
    phi = xis[:, 3:]
    theta = np.linalg.norm(phi, axis=1)
    small = theta < SMALL_ANGLE
    t2 = theta * theta
    # np.where on precomputed branches would divide by zero, so compute the
    # coefficients with a guarded denominator instead.
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0, (safe - np.sin(safe)) / (safe ** 3))
    k = skew_many(phi)
    kk = k @ k
    eye = np.broadcast_to(np.eye(3), k.shape)
    rot = eye + a[:, None, None] * k + b[:, None, None] * kk
    jac = eye + b[:, None, None] * k + c[:, None, None] * kk
    out = np.zeros((xis.shape[0], 4, 4))
    out[:, :3, :3] = rot
    out[:, :3, 3] = np.einsum("nij,nj->ni", jac, rho)
    out[:, 3, 3] = 1.0
    return out
