from __future__ import annotations

import numpy as np

from app.models import ContactState


def contact_mask(distances: np.ndarray, epsilon: float) -> np.ndarray:
    """Candidates touching the surface: finite distance below epsilon.

    Out-of-map candidates carry +inf and never count as contacts.
    """
    return np.isfinite(distances) & (distances < epsilon)


def is_valid_contact(
    distances: np.ndarray,
    epsilon: float,
    slack: float = 1e-6,
    mask: np.ndarray | None = None,
) -> bool:
    """At least one candidate within epsilon and none below -slack.

    `mask` narrows the candidates that may supply the contact; penetration is
    checked over every finite distance.
    """
    d = distances[np.isfinite(distances)]
    if d.size == 0 or float(d.min()) < -slack:
        return False
    if mask is not None:
        return bool(np.any(contact_mask(distances[mask], epsilon)))
    return float(d.min()) < epsilon


def merge_contacts(
    points: np.ndarray,
    distances: np.ndarray,
    epsilon: float,
    radius: float,
) -> ContactState:
    """Greedy de-duplication of touching candidates.

    Candidates are visited from the deepest (smallest distance) up; each
    unassigned one becomes a contact and absorbs every unassigned candidate
    within `radius`. Contacts are returned in candidate order.
    """
    idx = np.flatnonzero(contact_mask(distances, epsilon))
    if idx.size == 0:
        return ContactState(contacts=np.empty((0, 3)))
    pts = points[idx]
    diff = pts[:, None, :] - pts[None, :, :]
    close = np.einsum("ijk,ijk->ij", diff, diff) <= radius * radius
    if radius <= 0 or np.count_nonzero(close) == idx.size:
        # Nothing within the radius of anything else
        return ContactState(
            contacts=pts.copy(),
            candidate_indices=idx.tolist(),
            members=[[int(i)] for i in idx],
        )

    order = np.argsort(distances[idx], kind="stable")
    assigned = np.zeros(idx.size, dtype=bool)
    groups: list[tuple[int, list[int]]] = []
    for a in order:
        if assigned[a]:
            continue
        group = np.flatnonzero(close[a] & ~assigned)
        assigned[group] = True
        groups.append((int(idx[a]), sorted(int(idx[g]) for g in group)))
    groups.sort()
    reps = [g[0] for g in groups]
    return ContactState(
        contacts=points[reps].copy(),
        candidate_indices=reps,
        members=[g[1] for g in groups],
    )


def rotation_exclusions(points_R: np.ndarray, tol: float) -> np.ndarray:
    """Candidates left out of a rotation stage, given positions in the axis frame.

    Excluded: candidates on the axis line (within `tol`) and those on the far
    side of it (y <= tol). They cannot sink while the robot turns toward +y.
    """
    radial = np.hypot(points_R[:, 1], points_R[:, 2])
    return (radial <= tol) | (points_R[:, 1] <= tol)


def outermost_touching(points_R: np.ndarray, touching: np.ndarray, tol: float) -> int | None:
    """Index of the touching candidate farthest on the +y side of the axis, if any."""
    idx = np.flatnonzero(touching & (points_R[:, 1] > tol))
    if idx.size == 0:
        return None
    return int(idx[np.argmax(points_R[idx, 1])])
