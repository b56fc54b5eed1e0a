"""Parallel point localization and data exchange between two rank groups.

Each rank advertises a padded bounding box; for overlapping pairs, candidate
points are filtered on the sender, located in cells on the receiver (octree
plus natural-coordinate containment), and claims are resolved globally so a
point is hosted by exactly one cell: the lowest global cell id wins. The
resulting table carries both directions of knowledge: which foreign points
my cells host, and which of my points are hosted remotely.
"""

from dataclasses import dataclass, field

import numpy as np

from . import elements as el
from .mesh import BoundingBox

# relative slack: a point this many cell diameters outside a face still
# counts as inside (ties between cells go to the lowest global cell id)
CONTAINMENT_REL_TOL = 1e-9


class StaleTableError(RuntimeError):
    """The geometry moved since the localization table was built."""


def box_overlap(a, b):
    """Intersection of two closed boxes, or None when disjoint.

    Touching boxes yield a degenerate (zero-width) box, which counts as an
    overlap.
    """
    lo = np.maximum(a.min_corner, b.min_corner)
    hi = np.minimum(a.max_corner, b.max_corner)
    if np.any(lo > hi):
        return None
    return BoundingBox(lo, hi, 0.0)


def within_box(points, box):
    """Ids of points inside the closed box, ascending."""
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        return np.array([], dtype=np.int64)
    return np.where(box.contains(points))[0].astype(np.int64)


class CellSearchIndex:
    """Quadtree/octree over cell bounding boxes.

    Every cell is registered in each leaf its box overlaps, so a point query
    returns a superset of the cells that could contain it.
    """

    def __init__(self, cells_mesh, leaf_capacity=8, max_depth=12):
        self.mesh = cells_mesh
        self.kind = cells_mesh.kind
        conn = cells_mesh.connectivity
        coords = cells_mesh.node_coords
        pts = coords[conn]                       # (n_cells, nn, dim)
        self.box_min = pts.min(axis=1)
        self.box_max = pts.max(axis=1)
        self.diameters = np.linalg.norm(pts.max(axis=1) - pts.min(axis=1), axis=1)
        for e in range(len(conn)):
            if abs(np.linalg.det(el.jacobian(self.kind, coords[conn[e]],
                                             el.gauss_rule(self.kind)[0][0]))) == 0.0:
                raise ValueError(f"degenerate cell {e} in search index")
        self.leaf_capacity = leaf_capacity
        self.max_depth = max_depth
        lo = self.box_min.min(axis=0)
        hi = self.box_max.max(axis=0)
        pad = 1e-12 + 1e-9 * float(np.max(hi - lo, initial=0.0))
        self.root_lo, self.root_hi = lo - pad, hi + pad
        self.root = self._build(np.arange(len(conn), dtype=np.int64),
                                self.root_lo, self.root_hi, 0)

    def _build(self, ids, lo, hi, depth):
        if len(ids) <= self.leaf_capacity or depth >= self.max_depth:
            return ("leaf", ids)
        mid = 0.5 * (lo + hi)
        dim = len(lo)
        children = []
        for code in range(2 ** dim):
            c_lo, c_hi = lo.copy(), hi.copy()
            for ax in range(dim):
                if code >> ax & 1:
                    c_lo[ax] = mid[ax]
                else:
                    c_hi[ax] = mid[ax]
            mask = np.all(self.box_min[ids] <= c_hi, axis=1) & np.all(
                self.box_max[ids] >= c_lo, axis=1
            )
            sub = ids[mask]
            if len(sub) == len(ids):
                # no pruning possible (coincident boxes): stop subdividing
                return ("leaf", ids)
            children.append((c_lo, c_hi, self._build(sub, c_lo, c_hi, depth + 1)))
        return ("node", children)

    def candidates(self, point):
        """Sorted cell ids whose leaf regions contain the point."""
        point = np.asarray(point, dtype=float)
        if np.any(point < self.root_lo) or np.any(point > self.root_hi):
            return np.array([], dtype=np.int64)
        out = set()
        stack = [(self.root, self.root_lo, self.root_hi)]
        while stack:
            node, lo, hi = stack.pop()
            if node[0] == "leaf":
                out.update(int(i) for i in node[1])
            else:
                for c_lo, c_hi, child in node[1]:
                    if np.all(point >= c_lo) and np.all(point <= c_hi):
                        stack.append((child, c_lo, c_hi))
        return np.array(sorted(out), dtype=np.int64)


def cell_contains(kind, coords, point, rel_tol=CONTAINMENT_REL_TOL):
    """Containment test with natural coordinates; returns (inside, xi)."""
    try:
        xi = el.natural_coords(kind, coords, point)
    except ValueError:
        return False, None
    return el.contains_natural(kind, xi, rel_tol), xi


def locate_in_cells(points, cells_mesh, index=None, rel_tol=CONTAINMENT_REL_TOL,
                    cell_ids=None):
    """Locate points in cells; per point: (cell id, natural coords) or None.

    `cell_ids` maps local cell index -> global id (defaults to the local
    index). When several cells contain a point, the lowest id wins. Passing
    index=None scans all cells (the brute-force route used as oracle).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mesh = cells_mesh
    if cell_ids is None:
        cell_ids = np.arange(mesh.n_elements, dtype=np.int64)
    if index is None:
        pts = mesh.node_coords[mesh.connectivity]
        box_min, box_max = pts.min(axis=1), pts.max(axis=1)
        diameters = np.linalg.norm(pts.max(axis=1) - pts.min(axis=1), axis=1)
    else:
        box_min, box_max, diameters = index.box_min, index.box_max, index.diameters

    results = []
    for p in points:
        if index is None:
            cand = np.arange(mesh.n_elements, dtype=np.int64)
        else:
            cand = index.candidates(p)
        best = None
        for c in cand:
            pad = rel_tol * diameters[c]
            if np.any(p < box_min[c] - pad) or np.any(p > box_max[c] + pad):
                continue
            inside, xi = cell_contains(mesh.kind, mesh.element_coords(int(c)), p, rel_tol)
            if inside:
                gid = int(cell_ids[int(c)])
                if best is None or gid < best[0]:
                    best = (gid, xi, int(c))
        results.append(best)
    return results


@dataclass
class LocalizationTable:
    """Outcome of one global search on one rank.

    hosted:  remote rank -> dict(point_ids, point_coords, cell_ids (global),
             cell_local, natural) for foreign points my cells contain.
    located: remote rank -> dict(point_ids, cell_ids) for my points hosted
             by that rank's cells.
    """

    rank: int
    hosted: dict = field(default_factory=dict)
    located: dict = field(default_factory=dict)

    def n_hosted(self):
        return sum(len(v["point_ids"]) for v in self.hosted.values())

    def n_located(self):
        return sum(len(v["point_ids"]) for v in self.located.values())

    def located_pairs(self):
        """Set of (point id, global cell id) pairs over all remote ranks."""
        pairs = set()
        for v in self.located.values():
            pairs.update(zip(map(int, v["point_ids"]), map(int, v["cell_ids"])))
        return pairs


def global_search(ctx, remote_ranks, points, point_ids, cells_mesh=None,
                  cell_ids=None, box=None, rel_tol=CONTAINMENT_REL_TOL,
                  index=None):
    """Collective localization against another rank group.

    Every rank of both groups must call this with the same remote_ranks
    pairing. `points`/`point_ids` are this rank's candidate points (owned
    boundary nodes); `cells_mesh`/`cell_ids` its cells, if it hosts any.
    `box` is the padded subdomain box advertised to the other group.

    The claim-resolution round guarantees each point is assigned to at most
    one (cell, rank): the globally lowest cell id among all containing cells.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float)) if len(point_ids) else \
        np.zeros((0, 2 if box is None else len(box.min_corner)))
    point_ids = np.asarray(point_ids, dtype=np.int64)
    remote_ranks = sorted(remote_ranks)

    if box is None:
        raise ValueError("global_search requires this rank's padded box")
    if cells_mesh is not None and index is None and cells_mesh.n_elements > 0:
        index = CellSearchIndex(cells_mesh)

    # phase 0: box exchange with every remote rank
    for r in remote_ranks:
        ctx.send(r, "loc/box", (box.min_corner, box.max_corner))
    remote_boxes = {}
    for r in remote_ranks:
        lo, hi = ctx.recv(r, "loc/box")
        remote_boxes[r] = BoundingBox(lo, hi, 0.0)

    overlapping = [r for r in remote_ranks if box_overlap(box, remote_boxes[r]) is not None]

    # phase 1: send candidate points filtered by the intersection box,
    # locate incoming candidates in local cells, return the claims
    for r in overlapping:
        inter = box_overlap(box, remote_boxes[r])
        ids = within_box(points, inter) if len(points) else np.array([], dtype=np.int64)
        ctx.send(r, "loc/candidates", (point_ids[ids], points[ids]))
    incoming = {}
    for r in overlapping:
        incoming[r] = ctx.recv(r, "loc/candidates")

    pending_host = {}
    for r in overlapping:
        cand_ids, cand_pts = incoming[r]
        if cells_mesh is not None and cells_mesh.n_elements > 0 and len(cand_ids):
            found = locate_in_cells(cand_pts, cells_mesh, index=index,
                                    rel_tol=rel_tol, cell_ids=cell_ids)
        else:
            found = [None] * len(cand_ids)
        claims = []
        host = {}
        for pid, pt, res in zip(cand_ids, cand_pts, found):
            if res is not None:
                gid, xi, local = res
                claims.append((int(pid), gid))
                host[int(pid)] = (pt, gid, local, xi)
        ctx.send(r, "loc/claims", claims)
        pending_host[r] = host

    # phase 2: resolve multiple claims on the owner side (lowest cell id),
    # then confirm to the winning hosts
    best = {}
    for r in overlapping:
        for pid, gid in ctx.recv(r, "loc/claims"):
            cur = best.get(pid)
            if cur is None or (gid, r) < (cur[0], cur[1]):
                best[pid] = (gid, r)

    table = LocalizationTable(rank=ctx.rank)
    for r in overlapping:
        confirmed = sorted(pid for pid, (gid, rr) in best.items() if rr == r)
        ctx.send(r, "loc/confirm", confirmed)
        if confirmed:
            table.located[r] = {
                "point_ids": np.array(confirmed, dtype=np.int64),
                "cell_ids": np.array([best[p][0] for p in confirmed], dtype=np.int64),
            }
    for r in overlapping:
        confirmed = ctx.recv(r, "loc/confirm")
        host = pending_host[r]
        if confirmed:
            entry = {
                "point_ids": np.array(confirmed, dtype=np.int64),
                "point_coords": np.array([host[p][0] for p in confirmed]),
                "cell_ids": np.array([host[p][1] for p in confirmed], dtype=np.int64),
                "cell_local": np.array([host[p][2] for p in confirmed], dtype=np.int64),
                "natural": [host[p][3] for p in confirmed],
            }
            table.hosted[r] = entry
    return table


def verify_table(table, cells_mesh, rel_tol=CONTAINMENT_REL_TOL):
    """Re-check containment of all hosted points; raises StaleTableError."""
    for r, entry in table.hosted.items():
        for pt, local in zip(entry["point_coords"], entry["cell_local"]):
            inside, _ = cell_contains(cells_mesh.kind,
                                      cells_mesh.element_coords(int(local)), pt, rel_tol)
            if not inside:
                raise StaleTableError(
                    f"hosted point moved outside its cell (remote rank {r})"
                )


def exchange(ctx, table, nodal_field=None, cells_mesh=None, verify=False,
             tag="loc/field"):
    """Exchange field data along an existing localization table.

    With `nodal_field` (values on my cell mesh nodes), each hosted point gets
    the field interpolated at its stored natural coordinates and the values
    are delivered to the point owners. Returns {point_id: value} for this
    rank's located points. Messages flow only between rank pairs present in
    the table.
    """
    if nodal_field is not None:
        nodal_field = np.asarray(nodal_field, dtype=float)
        if verify or cells_mesh is not None:
            if cells_mesh is None:
                raise ValueError("interpolation requires cells_mesh")
        if verify:
            verify_table(table, cells_mesh)
        for r in sorted(table.hosted):
            entry = table.hosted[r]
            values = []
            for local, xi in zip(entry["cell_local"], entry["natural"]):
                conn = cells_mesh.connectivity[int(local)]
                N = el.shape_functions(cells_mesh.kind, xi)
                values.append(N @ nodal_field[conn])
            ctx.send(r, tag, (entry["point_ids"], np.array(values)))
    else:
        for r in sorted(table.hosted):
            entry = table.hosted[r]
            ctx.send(r, tag, (entry["point_ids"], None))

    received = {}
    for r in sorted(table.located):
        ids, values = ctx.recv(r, tag)
        if values is not None:
            for pid, val in zip(ids, values):
                received[int(pid)] = val
    return received
