"""Antipodal force-closure scoring with a friction-coefficient sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .collision import SpatialGrid, build_grid
from .grasp import Grasp, GripperModel, closing_region_mask, to_gripper_frame

CONTACT_TOL = 0.002


@dataclass
class ContactPair:
    """Contacts touched by the -y finger (``p1``) and the +y finger (``p2``), with inward normals."""

    p1: np.ndarray
    p2: np.ndarray
    n1: np.ndarray
    n2: np.ndarray


@dataclass(frozen=True)
class FrictionSweep:
    mu_values: tuple = tuple(round(0.1 * k, 10) for k in range(1, 11))

    def __post_init__(self):
        mu = np.asarray(self.mu_values, float)
        if len(mu) == 0 or np.any(mu <= 0) or np.any(np.diff(mu) <= 0):
            raise ValueError("friction sweep must be positive and strictly ascending")

    @property
    def mu_max(self) -> float:
        return float(self.mu_values[-1])


def contacts_from_local(local, normals_local, width, gripper: GripperModel, tol: float = CONTACT_TOL):
    """Batched contact search in gripper frames.

    ``local``: ``(k, m, 3)`` points, ``normals_local``: ``(k, m, 3)`` outward
    normals, both in the gripper frame.  Each finger contact is the centroid
    of the points within ``tol`` of the first point the finger face meets,
    with the averaged normal.  Returns ``(p1, p2, n1, n2, valid)`` in the
    gripper frame, normals inward.
    """
    inside = closing_region_mask(local, width, gripper)
    y = local[..., 1]
    y_hi = np.where(inside, y, -np.inf).max(axis=1)
    y_lo = np.where(inside, y, np.inf).min(axis=1)
    valid = np.isfinite(y_hi) & (y_hi - y_lo > tol)
    band_hi = (inside & (y >= y_hi[:, None] - tol)).astype(float)
    band_lo = (inside & (y <= y_lo[:, None] + tol)).astype(float)
    cnt_hi = np.maximum(band_hi.sum(axis=1, keepdims=True), 1.0)
    cnt_lo = np.maximum(band_lo.sum(axis=1, keepdims=True), 1.0)
    p2 = np.matmul(band_hi[:, None, :], local)[:, 0] / cnt_hi
    p1 = np.matmul(band_lo[:, None, :], local)[:, 0] / cnt_lo
    n2 = -np.matmul(band_hi[:, None, :], normals_local)[:, 0]
    n1 = -np.matmul(band_lo[:, None, :], normals_local)[:, 0]
    for n in (n1, n2):
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        valid &= norm[:, 0] > 1e-12
        n /= np.where(norm > 1e-12, norm, 1.0)
    return p1, p2, n1, n2, valid


def find_contacts(grasp: Grasp, cloud, gripper: GripperModel, grid: SpatialGrid | None = None,
                  tol: float = CONTACT_TOL):
    """Finger contacts of ``grasp`` on ``cloud`` in world coordinates, or ``None``."""
    grid = build_grid(cloud, gripper) if grid is None else grid
    reach = math.sqrt((gripper.finger_length / 2.0) ** 2 + (grasp.width / 2.0) ** 2
                      + (gripper.finger_height / 2.0) ** 2)
    idx = grid.query_ball(grasp.t, reach)
    if len(idx) == 0:
        return None
    rot = grasp.rotation
    local = to_gripper_frame(cloud.points[idx], grasp.t, rot)[None]
    nloc = (cloud.normals[idx] @ rot)[None]
    p1, p2, n1, n2, valid = contacts_from_local(local, nloc, np.array([grasp.width]), gripper, tol)
    if not valid[0]:
        return None
    return ContactPair(grasp.t + rot @ p1[0], grasp.t + rot @ p2[0], rot @ n1[0], rot @ n2[0])


def antipodal_angles(p1, p2, n1, n2):
    """Angles (radians) between the contact line and each inward normal; batched over rows."""
    line = p2 - p1
    norm = np.linalg.norm(line, axis=-1, keepdims=True)
    u = line / np.where(norm > 0, norm, 1.0)
    a1 = np.arccos(np.clip(np.sum(u * n1, axis=-1), -1.0, 1.0))
    a2 = np.arccos(np.clip(-np.sum(u * n2, axis=-1), -1.0, 1.0))
    return a1, a2


def is_antipodal(contacts: ContactPair, mu: float) -> bool:
    """Both friction cones (half-angle ``arctan(mu)``, closed) contain the contact line."""
    if np.allclose(contacts.p1, contacts.p2, rtol=0.0, atol=0.0):
        raise ValueError("degenerate contacts: p1 == p2")
    a1, a2 = antipodal_angles(contacts.p1, contacts.p2, contacts.n1, contacts.n2)
    cone = math.atan(mu) + 1e-12
    return bool(a1 <= cone and a2 <= cone)


def required_friction(a1, a2):
    """Smallest coefficient whose cone contains both angles: ``tan(max angle)``."""
    worst = np.maximum(a1, a2)
    return np.where(worst < math.pi / 2.0, np.tan(np.minimum(worst, math.pi / 2.0 - 1e-12)), np.inf)


def score_from_mu(mu_star, sweep: FrictionSweep):
    """Linear map ``1 - mu*/mu_max``; 0 when no sweep value works."""
    return np.where(np.isfinite(mu_star), 1.0 - mu_star / sweep.mu_max, 0.0)


def sweep_mu_star(a1, a2, sweep: FrictionSweep):
    """Smallest sweep value at which the contacts are antipodal (``inf`` if none)."""
    mu = np.asarray(sweep.mu_values, float)
    cones = np.arctan(mu) + 1e-12
    worst = np.maximum(a1, a2)
    ok = np.atleast_1d(worst)[:, None] <= cones[None, :]
    first = np.where(ok.any(axis=1), ok.argmax(axis=1), -1)
    out = np.where(first >= 0, mu[np.maximum(first, 0)], np.inf)
    return out if np.ndim(worst) else out[0]


def force_closure_score(grasp: Grasp, cloud, gripper: GripperModel, sweep: FrictionSweep = FrictionSweep(),
                        grid: SpatialGrid | None = None) -> float:
    contacts = find_contacts(grasp, cloud, gripper, grid)
    if contacts is None:
        return 0.0
    a1, a2 = antipodal_angles(contacts.p1, contacts.p2, contacts.n1, contacts.n2)
    return float(score_from_mu(sweep_mu_star(a1, a2, sweep), sweep))
