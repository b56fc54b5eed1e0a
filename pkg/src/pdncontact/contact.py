"""Unilateral contact core: projection, rotated-frame constraints, release.

Penetrated deformable nodes are projected along a user-chosen direction onto
the rigid boundary; each hit yields a surface-aligned orthonormal frame
(n, t1[, t2]) and a signed normal distance d (positive = penetration depth).
Constraining the rotated normal dof to d pushes the node back onto the
tangent plane while leaving it free to slide. After equilibrium, nodes whose
normal reaction pulls toward the obstacle (artificial adhesion) are released
and the system is re-solved until no adhesion remains.
"""

from dataclasses import dataclass, field

import numpy as np

from . import locate as loc
from .fem import DirichletSet
from .mesh import facet_area, facet_normal


class ContactError(RuntimeError):
    pass


@dataclass
class ContactProjection:
    """Projection of one penetrated node onto a rigid boundary facet."""

    node_id: int
    normal: np.ndarray
    tangents: tuple
    distance: float              # > 0 means penetration
    facet_id: int                # global facet id on the rigid boundary
    point: np.ndarray            # projection location on the facet plane

    def rotation(self):
        """Frame matrix with columns (n, t1[, t2]): global = T @ local."""
        return np.column_stack([self.normal, *self.tangents])


@dataclass
class MpcConstraint:
    """Single-dof Dirichlet condition in a rotated nodal frame."""

    node_id: int
    rotation: np.ndarray         # columns n, t1 (, t2)
    prescribed: float            # incremental normal displacement (= d)
    active: bool = True
    tag_contact: bool = True


def orthonormal_check(T, tol=1e-12):
    T = np.asarray(T, dtype=float)
    return bool(np.abs(T.T @ T - np.eye(T.shape[0])).max() <= tol)


def build_mpc(projection):
    """Constraint from a projection; rejects a non-orthonormal frame."""
    T = projection.rotation()
    if not orthonormal_check(T, tol=1e-10):
        raise ContactError(
            f"non-orthonormal frame for node {projection.node_id}"
        )
    return MpcConstraint(
        node_id=int(projection.node_id),
        rotation=T,
        prescribed=float(projection.distance),
    )


# ---------------------------------------------------------------------------
# projection onto the rigid boundary
# ---------------------------------------------------------------------------

def _facet_plane(coords):
    """(unit outward normal, reference point) of a facet's plane."""
    return facet_normal(coords), coords.mean(axis=0)


def _inside_facet(coords, q, n, rel_tol):
    """Is the plane point q inside the (closed) facet bounds?"""
    if coords.shape[1] == 2:
        a, b = coords
        e = b - a
        L2 = float(e @ e)
        t = float((q - a) @ e) / L2
        return -rel_tol <= t <= 1.0 + rel_tol
    if coords.shape[0] == 3:
        a, b, c = coords
        e1, e2 = b - a, c - a
        G = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
        rhs = np.array([e1 @ (q - a), e2 @ (q - a)])
        s, t = np.linalg.solve(G, rhs)
        return s >= -rel_tol and t >= -rel_tol and s + t <= 1.0 + rel_tol
    # quad facet: work in the plane frame and invert the bilinear map
    t1 = coords[1] - coords[0]
    t1 = t1 - (t1 @ n) * n
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    origin = coords.mean(axis=0)
    corners2d = np.array([[(p - origin) @ t1, (p - origin) @ t2] for p in coords])
    q2d = np.array([(q - origin) @ t1, (q - origin) @ t2])
    from . import elements as el
    try:
        xi = el.natural_coords("quad4", corners2d, q2d)
    except ValueError:
        return False
    return bool(np.all(np.abs(xi) <= 1.0 + rel_tol))


def _frame(n, dim, coords):
    """Complete the outward normal into an orthonormal frame."""
    if dim == 2:
        return (np.array([-n[1], n[0]]),)
    e = coords[1] - coords[0]
    t1 = e - (e @ n) * n
    nrm = np.linalg.norm(t1)
    if nrm < 1e-14:
        e = coords[2] - coords[0]
        t1 = e - (e @ n) * n
        nrm = np.linalg.norm(t1)
    t1 = t1 / nrm
    return (t1, np.cross(n, t1))


def project_node(point, boundary_coords, boundary_facets, facet_ids, direction,
                 rel_tol=1e-9):
    """Project a node along `direction` onto the nearest boundary facet.

    Scans every facet: builds its plane, intersects the ray, and keeps the
    nearest intersection (by |s| along the direction) whose foot lies inside
    the facet; exact ties go to the lowest facet id. Returns a
    ContactProjection or None if no facet is hit.

    The signed distance is measured along the outward facet normal,
    d = n . (q - point), so a point inside the body gets d > 0 and
    prescribing a normal displacement of d restores a zero gap.
    """
    point = np.asarray(point, dtype=float)
    v = np.asarray(direction, dtype=float)
    vn = np.linalg.norm(v)
    if vn == 0.0:
        raise ContactError("projection direction must be non-zero")
    v = v / vn
    best = None
    order = np.argsort(facet_ids, kind="stable")
    for i in order:
        coords = boundary_coords[boundary_facets[i]]
        n, x0 = _facet_plane(coords)
        denom = float(n @ v)
        if abs(denom) < 1e-12:
            continue
        s = float(n @ (x0 - point)) / denom
        q = point + s * v
        if not _inside_facet(coords, q, n, rel_tol):
            continue
        if best is None or abs(s) < best[0] * (1.0 - 1e-12):
            d = float(n @ (q - point))
            best = (abs(s), n, q, d, int(facet_ids[i]), coords)
    if best is None:
        return None
    _, n, q, d, fid, coords = best
    tangents = _frame(n, point.shape[0], coords)
    return ContactProjection(
        node_id=-1, normal=n, tangents=tangents, distance=d, facet_id=fid, point=q
    )


# ---------------------------------------------------------------------------
# detection and boundary gathering
# ---------------------------------------------------------------------------

def detect_penetration(points, point_ids, rigid_mesh, rel_tol=loc.CONTAINMENT_REL_TOL):
    """Boundary nodes located inside rigid cells (serial convenience).

    In a coupled run the same answer comes out of the localization table;
    this direct form backs unit tests and single-process drivers.
    """
    if len(point_ids) == 0 or rigid_mesh.n_elements == 0:
        return np.array([], dtype=np.int64)
    found = loc.locate_in_cells(points, rigid_mesh, rel_tol=rel_tol)
    ids = [int(pid) for pid, res in zip(point_ids, found) if res is not None]
    return np.array(sorted(ids), dtype=np.int64)


def gather_rigid_boundary(ctx, coords, facets, facet_ids):
    """Allgather the contact boundary over the rigid instance.

    Every rigid rank ends up with an identical stacked copy (ordered by
    rank) of all boundary facet coordinates, connectivity and global ids.
    """
    ranks = sorted(ctx.instance_ranks)
    payload = (np.asarray(coords, dtype=float),
               np.asarray(facets, dtype=np.int64),
               np.asarray(facet_ids, dtype=np.int64))
    for r in ranks:
        if r != ctx.rank:
            ctx.send(r, "contact/boundary", payload)
    parts = []
    for r in ranks:
        parts.append(payload if r == ctx.rank else ctx.recv(r, "contact/boundary"))
    all_coords, all_facets, all_ids = [], [], []
    offset = 0
    for c, f, ids in parts:
        all_coords.append(c)
        if len(f):
            all_facets.append(f + offset)
            all_ids.append(ids)
        offset += len(c)
    dim = payload[0].shape[1] if payload[0].size else 2
    coords_out = np.vstack(all_coords) if all_coords else np.zeros((0, dim))
    facets_out = (np.vstack(all_facets) if all_facets
                  else np.zeros((0, facets.shape[1] if len(facets) else 2), dtype=np.int64))
    ids_out = np.concatenate(all_ids) if all_ids else np.zeros(0, dtype=np.int64)
    return coords_out, facets_out, ids_out


# ---------------------------------------------------------------------------
# constraint application and release
# ---------------------------------------------------------------------------

def apply_mpc(dirichlet, constraints, displacement):
    """Add active contact constraints to a Dirichlet set.

    The prescribed rotated-normal value is the node's current normal
    displacement plus the penetration depth, so the solved configuration
    lands exactly on the tangent plane. Pre-existing global-frame conditions
    on the same node are re-expressed in the rotated frame when they align
    with a frame axis; otherwise the combination is rejected.
    """
    out = DirichletSet(dirichlet.dim)
    out.rotations = {n: R.copy() for n, R in dirichlet.rotations.items()}
    u = np.asarray(displacement, dtype=float)
    dim = dirichlet.dim

    frames = {}
    for c in constraints:
        if not c.active:
            continue
        node = int(c.node_id)
        if node in frames:
            raise ContactError(f"conflicting contact constraints on node {node}")
        frames[node] = c

    for (node, dof), value in dirichlet.items():
        c = frames.get(node)
        if c is None or node in dirichlet.rotations:
            out.add(node, dof, value, dirichlet.rotations.get(node))
            continue
        # re-express an axis-aligned condition in the contact frame
        local = c.rotation.T @ np.eye(dim)[dof]
        j = int(np.argmax(np.abs(local)))
        if abs(abs(local[j]) - 1.0) > 1e-9:
            raise ContactError(
                f"node {node}: fixed dof {dof} is not representable in its contact frame"
            )
        out.add(node, j, value * np.sign(local[j]), c.rotation)

    for node, c in sorted(frames.items()):
        u_n = float(c.rotation[:, 0] @ u[node])
        out.add(node, 0, u_n + c.prescribed, c.rotation)
    return out


def check_release(reactions, constraints, eps_rel):
    """Active contact nodes whose normal reaction violates compression.

    The reaction must push the node away from the obstacle: R . n >= 0 up to
    the adhesion slack eps_rel. Returns the sorted node ids to release and
    flips those constraints inactive.
    """
    reactions = np.asarray(reactions, dtype=float)
    released = []
    for c in constraints:
        if not (c.active and c.tag_contact):
            continue
        rn = float(c.rotation[:, 0] @ reactions[int(c.node_id)])
        if rn < -eps_rel:
            c.active = False
            released.append(int(c.node_id))
    return sorted(released)


def release_force_scale(material, mean_facet_area):
    """Adhesion slack: solver noise floor well below physical reactions."""
    return 1e-8 * material.young_modulus * mean_facet_area


def mean_contact_facet_area(mesh, tag):
    ids = mesh.facets_with_tag(tag)
    if len(ids) == 0:
        return 0.0
    return float(np.mean([facet_area(mesh.facet_coords(int(f))) for f in ids]))


@dataclass
class ReleaseLog:
    released: list = field(default_factory=list)   # (node_id, subiteration)
    subiterations: int = 0


def resolve_with_release(solver, state, dt, dirichlet, constraints, f_ext=None,
                         global_sum=None, eps_rel=0.0, max_subiter=50):
    """Solve the step, releasing adhesion nodes until compression holds.

    Every release subiteration replays the full step from the incoming state
    with the shrunken active set; released nodes stay released within the
    step, so the loop terminates. All ranks leave together: the released
    count is summed across the deformable group each round.

    Returns (new_state, report, reactions, ReleaseLog).
    """
    if global_sum is None:
        global_sum = lambda value: value
    log = ReleaseLog()
    while True:
        bc = apply_mpc(dirichlet, constraints, state.displacement)
        new_state, report = solver.newmark_newton_step(state, dt, bc, f_ext=f_ext)
        reactions = solver.compute_reactions(new_state, bc, f_ext=f_ext, report=report)
        released = check_release(reactions, constraints, eps_rel)
        n_released = int(global_sum(len(released)))
        if n_released == 0:
            report.release_subiterations = log.subiterations
            return new_state, report, reactions, log
        log.subiterations += 1
        for node in released:
            log.released.append((node, log.subiterations))
        if log.subiterations >= max_subiter:
            raise ContactError(
                f"release loop exceeded {max_subiter} subiterations"
            )
