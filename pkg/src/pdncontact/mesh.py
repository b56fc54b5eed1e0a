"""Mesh construction, validation, and partitioning.

A Mesh holds one element block (quad4, hex8 or tet4) plus tagged exterior
boundary facets. Structured factories cover the benchmark geometries:
rectangles/boxes (with per-axis grading), a quarter disk mapped with a Coons
patch, an extruded half cylinder, and a spherified-cube hemisphere. All
construction is deterministic: the same descriptor yields bit-identical
meshes.

Vertical axis convention: y, in both 2D and 3D.
"""

from dataclasses import dataclass, field

import numpy as np

from . import elements as el

# exterior faces per element kind, ordered so the facet normal points
# outward when the element has positive orientation
ELEMENT_FACES = {
    "quad4": [(0, 1), (1, 2), (2, 3), (3, 0)],
    "tri3": [(0, 1), (1, 2), (2, 0)],
    "tet4": [(0, 2, 1), (0, 1, 3), (1, 2, 3), (0, 3, 2)],
    "hex8": [
        (0, 3, 2, 1),
        (4, 5, 6, 7),
        (0, 1, 5, 4),
        (1, 2, 6, 5),
        (2, 3, 7, 6),
        (3, 0, 4, 7),
    ],
}

# 6-tet split of a hex sharing the 0-6 diagonal; conformal across a
# structured grid because shared-face diagonals coincide
_HEX_TO_TETS = [
    (0, 1, 2, 6),
    (0, 2, 3, 6),
    (0, 3, 7, 6),
    (0, 7, 4, 6),
    (0, 4, 5, 6),
    (0, 5, 1, 6),
]


class MeshError(ValueError):
    """Invalid mesh descriptor or broken mesh invariant."""


@dataclass
class Mesh:
    """One-block finite element mesh with tagged exterior boundary facets."""

    node_coords: np.ndarray          # (n_nodes, dim)
    kind: str                        # quad4 | hex8 | tet4
    connectivity: np.ndarray         # (n_elements, nodes_per_element)
    boundary_facets: np.ndarray      # (n_facets, nodes_per_facet)
    boundary_tags: tuple             # tag string per facet

    def __post_init__(self):
        self.node_coords = np.ascontiguousarray(self.node_coords, dtype=float)
        self.connectivity = np.ascontiguousarray(self.connectivity, dtype=np.int64)
        self.boundary_facets = np.ascontiguousarray(self.boundary_facets, dtype=np.int64)
        self.boundary_tags = tuple(self.boundary_tags)
        for a in (self.node_coords, self.connectivity, self.boundary_facets):
            a.setflags(write=False)

    @property
    def dim(self):
        return self.node_coords.shape[1]

    @property
    def n_nodes(self):
        return self.node_coords.shape[0]

    @property
    def n_elements(self):
        return self.connectivity.shape[0]

    def element_coords(self, e):
        return self.node_coords[self.connectivity[e]]

    def facet_coords(self, f):
        return self.node_coords[self.boundary_facets[f]]

    def element_centroids(self):
        return self.node_coords[self.connectivity].mean(axis=1)

    def facets_with_tag(self, tag):
        return np.array(
            [i for i, t in enumerate(self.boundary_tags) if t == tag], dtype=np.int64
        )

    def nodes_with_tag(self, tag):
        """Sorted node ids appearing in facets carrying `tag`."""
        fs = self.facets_with_tag(tag)
        if len(fs) == 0:
            return np.array([], dtype=np.int64)
        return np.unique(self.boundary_facets[fs])

    def boundary_nodes(self):
        if len(self.boundary_facets) == 0:
            return np.array([], dtype=np.int64)
        return np.unique(self.boundary_facets)

    def translated(self, offset):
        """New mesh with shifted coordinates; connectivity is shared."""
        offset = np.asarray(offset, dtype=float)
        return Mesh(
            self.node_coords + offset,
            self.kind,
            self.connectivity,
            self.boundary_facets,
            self.boundary_tags,
        )

    def validate(self):
        """Check the structural invariants; raises MeshError on violation."""
        if self.connectivity.size and self.connectivity.max() >= self.n_nodes:
            raise MeshError("element connectivity refers to a missing node")
        if self.connectivity.min(initial=0) < 0:
            raise MeshError("negative node index in connectivity")
        if self.boundary_facets.size and self.boundary_facets.max() >= self.n_nodes:
            raise MeshError("boundary facet refers to a missing node")
        if len(self.boundary_tags) != len(self.boundary_facets):
            raise MeshError("boundary tag count does not match facet count")
        # each boundary facet must be a face of exactly one element
        face_count = _exterior_face_count(self.kind, self.connectivity)
        for f in self.boundary_facets:
            key = frozenset(int(i) for i in f)
            if face_count.get(key, 0) != 1:
                raise MeshError(f"boundary facet {sorted(key)} is not an exterior element face")
        # positive Jacobian at all quadrature points
        for e in range(self.n_elements):
            dets = el.jacobian_determinants(self.kind, self.element_coords(e))
            if np.any(dets <= 0.0):
                raise MeshError(f"non-positive Jacobian in element {e}")
        return self


def _exterior_face_count(kind, connectivity):
    """Map face nodeset -> number of elements sharing it."""
    count = {}
    faces = ELEMENT_FACES[kind]
    for conn in connectivity:
        for face in faces:
            key = frozenset(int(conn[i]) for i in face)
            count[key] = count.get(key, 0) + 1
    return count


def extract_boundary(kind, connectivity, tagger):
    """Faces shared by exactly one element, tagged by `tagger(face_centroid_nodes)`.

    `tagger` receives the ordered (outward) node ids of a face and returns a
    tag string. Outward orientation is inherited from the element face tables,
    so elements must be positively oriented.
    """
    count = _exterior_face_count(kind, connectivity)
    faces = ELEMENT_FACES[kind]
    seen = set()
    facets, tags = [], []
    for conn in connectivity:
        for face in faces:
            nodes = tuple(int(conn[i]) for i in face)
            key = frozenset(nodes)
            if count[key] == 1 and key not in seen:
                seen.add(key)
                facets.append(nodes)
                tags.append(tagger(nodes))
    return np.array(facets, dtype=np.int64), tuple(tags)


def facet_normal(coords):
    """Unit outward normal of a facet given outward-ordered coordinates."""
    coords = np.asarray(coords, dtype=float)
    if coords.shape[1] == 2:
        t = coords[1] - coords[0]
        n = np.array([t[1], -t[0]])
    elif coords.shape[0] == 3:
        n = np.cross(coords[1] - coords[0], coords[2] - coords[0])
    else:
        # quad facet: mean normal via the diagonals
        n = np.cross(coords[2] - coords[0], coords[3] - coords[1])
    norm = np.linalg.norm(n)
    if norm == 0.0:
        raise MeshError("degenerate facet")
    return n / norm


def facet_area(coords):
    """Length (2D) or area (3D) of a facet."""
    coords = np.asarray(coords, dtype=float)
    if coords.shape[1] == 2:
        return float(np.linalg.norm(coords[1] - coords[0]))
    if coords.shape[0] == 3:
        return 0.5 * float(np.linalg.norm(np.cross(coords[1] - coords[0], coords[2] - coords[0])))
    a1 = np.linalg.norm(np.cross(coords[1] - coords[0], coords[2] - coords[0]))
    a2 = np.linalg.norm(np.cross(coords[2] - coords[0], coords[3] - coords[0]))
    return 0.5 * float(a1 + a2)


# ---------------------------------------------------------------------------
# axis grading
# ---------------------------------------------------------------------------

def _graded_axis(n_div, grading):
    """Nodal parameters on [0, 1] for n_div divisions under a grading spec.

    grading: None (uniform), or a dict:
      {"type": "power", "exponent": p, "toward": "start"|"end"}
      {"type": "center_power", "exponent": p}   # cluster toward the middle
    """
    t = np.linspace(0.0, 1.0, n_div + 1)
    if not grading:
        return t
    gtype = grading.get("type", "uniform")
    if gtype == "uniform":
        return t
    p = float(grading.get("exponent", 1.0))
    if p <= 0:
        raise MeshError("grading exponent must be positive")
    if gtype == "power":
        toward = grading.get("toward", "start")
        if toward == "start":
            return t**p
        if toward == "end":
            return 1.0 - (1.0 - t) ** p
        raise MeshError(f"unknown grading direction {toward!r}")
    if gtype == "center_power":
        s = 2.0 * t - 1.0
        return 0.5 * (1.0 + np.sign(s) * np.abs(s) ** p)
    raise MeshError(f"unknown grading type {gtype!r}")


# ---------------------------------------------------------------------------
# structured factories
# ---------------------------------------------------------------------------

def _check_divisions(divs):
    if any(int(d) <= 0 for d in divs):
        raise MeshError(f"divisions must be positive, got {divs}")
    return [int(d) for d in divs]


def _rect_mesh(spec):
    lx, ly = (float(v) for v in spec["extents"])
    if lx <= 0 or ly <= 0:
        raise MeshError(f"extents must be positive, got {spec['extents']}")
    nx, ny = _check_divisions(spec["divisions"])
    origin = np.asarray(spec.get("origin", (0.0, 0.0)), dtype=float)
    xs = origin[0] + lx * _graded_axis(nx, spec.get("grading_x"))
    ys = origin[1] + ly * _graded_axis(ny, spec.get("grading_y"))
    coords = np.array([(x, y) for y in ys for x in xs])

    def nid(i, j):
        return j * (nx + 1) + i

    conn = np.array(
        [
            (nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1))
            for j in range(ny)
            for i in range(nx)
        ],
        dtype=np.int64,
    )

    lo, hi = origin, origin + (lx, ly)

    def tagger(face_nodes):
        c = coords[list(face_nodes)].mean(axis=0)
        eps = 1e-9 * max(lx, ly)
        if abs(c[0] - lo[0]) < eps:
            return "xmin"
        if abs(c[0] - hi[0]) < eps:
            return "xmax"
        if abs(c[1] - lo[1]) < eps:
            return "ymin"
        return "ymax"

    facets, tags = extract_boundary("quad4", conn, tagger)
    return Mesh(coords, "quad4", conn, facets, tags)


def _box_mesh(spec):
    lx, ly, lz = (float(v) for v in spec["extents"])
    if min(lx, ly, lz) <= 0:
        raise MeshError(f"extents must be positive, got {spec['extents']}")
    nx, ny, nz = _check_divisions(spec["divisions"])
    origin = np.asarray(spec.get("origin", (0.0, 0.0, 0.0)), dtype=float)
    xs = origin[0] + lx * _graded_axis(nx, spec.get("grading_x"))
    ys = origin[1] + ly * _graded_axis(ny, spec.get("grading_y"))
    zs = origin[2] + lz * _graded_axis(nz, spec.get("grading_z"))
    coords = np.array([(x, y, z) for z in zs for y in ys for x in xs])

    def nid(i, j, k):
        return k * (nx + 1) * (ny + 1) + j * (nx + 1) + i

    conn = np.array(
        [
            (
                nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
                nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1),
            )
            for k in range(nz)
            for j in range(ny)
            for i in range(nx)
        ],
        dtype=np.int64,
    )

    lo, hi = origin, origin + (lx, ly, lz)
    eps = 1e-9 * max(lx, ly, lz)

    def tagger(face_nodes):
        c = coords[list(face_nodes)].mean(axis=0)
        for ax, name in ((0, "x"), (1, "y"), (2, "z")):
            if abs(c[ax] - lo[ax]) < eps:
                return f"{name}min"
            if abs(c[ax] - hi[ax]) < eps:
                return f"{name}max"
        raise MeshError("box facet not on any face plane")

    if spec.get("element", "hex8") == "tet4":
        conn = _split_hexes_to_tets(coords, conn)
        facets, tags = extract_boundary("tet4", conn, tagger)
        return Mesh(coords, "tet4", conn, facets, tags)
    facets, tags = extract_boundary("hex8", conn, tagger)
    return Mesh(coords, "hex8", conn, facets, tags)


def _quarter_disk_mesh(spec):
    """Quarter disk with the contact point at the origin.

    The disk center sits at (0, R); the region covers {x >= 0, y <= R} inside
    the circle. A Coons patch maps the unit square onto it:

      xi = 0 edge: top cut plane y = R ("top")
      xi = 1 edge: lower arc half, from the contact point to mid-arc ("arc")
      eta = 0 edge: symmetry segment x = 0 ("symmetry")
      eta = 1 edge: upper arc half ("arc")

    Grading xi toward 1 refines radially toward the surface; grading eta
    toward 0 refines angularly toward the contact point.
    """
    R = float(spec["radius"])
    if R <= 0:
        raise MeshError("radius must be positive")
    n_xi, n_eta = _check_divisions(spec["divisions"])
    xi = _graded_axis(n_xi, spec.get("grading_radial"))
    eta = _graded_axis(n_eta, spec.get("grading_angular"))

    def arc(theta):
        return np.array([R * np.sin(theta), R - R * np.cos(theta)])

    A = arc(0.0)                # contact point (0, 0)
    B = arc(np.pi / 4)          # mid-arc
    C = arc(np.pi / 2)          # (R, R)
    D = np.array([0.0, R])      # disk center

    def point(s, t):
        left = np.array([t * R, R])            # D -> C along y = R
        right = arc(t * np.pi / 4)             # A -> B along the arc
        bottom = np.array([0.0, R * (1 - s)])  # D -> A along x = 0
        top = arc(np.pi / 2 - s * np.pi / 4)   # C -> B along the arc
        blend = (
            (1 - s) * left + s * right + (1 - t) * bottom + t * top
            - ((1 - s) * (1 - t) * D + s * (1 - t) * A + (1 - s) * t * C + s * t * B)
        )
        return blend

    coords = np.array([point(s, t) for t in eta for s in xi])

    def nid(i, j):
        return j * (n_xi + 1) + i

    conn = np.array(
        [
            (nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1))
            for j in range(n_eta)
            for i in range(n_xi)
        ],
        dtype=np.int64,
    )
    # parametric ids for exact side classification
    side = {}
    for j in range(n_eta + 1):
        for i in range(n_xi + 1):
            side[nid(i, j)] = (i, j)

    def tagger(face_nodes):
        ii = [side[n][0] for n in face_nodes]
        jj = [side[n][1] for n in face_nodes]
        if all(i == 0 for i in ii):
            return "top"
        if all(i == n_xi for i in ii):
            return "arc"
        if all(j == 0 for j in jj):
            return "symmetry"
        return "arc"

    facets, tags = extract_boundary("quad4", conn, tagger)
    return Mesh(coords, "quad4", conn, facets, tags)


def _extrude_quad_mesh(coords2d, conn2d, zs):
    """Extrude a quad4 mesh along z into hex8 layers."""
    n2 = len(coords2d)
    coords = np.array([(x, y, z) for z in zs for x, y in coords2d])
    conn = []
    for k in range(len(zs) - 1):
        base, top = k * n2, (k + 1) * n2
        for q in conn2d:
            conn.append((base + q[0], base + q[1], base + q[2], base + q[3],
                         top + q[0], top + q[1], top + q[2], top + q[3]))
    return coords, np.array(conn, dtype=np.int64)


def _split_hexes_to_tets(coords, hex_conn):
    tets = []
    for h in hex_conn:
        for t in _HEX_TO_TETS:
            tet = (h[t[0]], h[t[1]], h[t[2]], h[t[3]])
            tets.append(tet)
    tets = np.array(tets, dtype=np.int64)
    # enforce positive orientation
    for i, t in enumerate(tets):
        v = coords[t]
        if np.linalg.det((v[1:] - v[0]).T) < 0:
            tets[i] = (t[0], t[2], t[1], t[3])
    return tets


def _half_cylinder_mesh(spec):
    """Half cylinder: half-disk cross-section (flat side up) extruded in z.

    Curved surface tagged "arc", flat top "top", ends "zmin"/"zmax". The
    lowest surface point runs along (0, 0, z). Elements are tet4 by default
    (split hexes) or hex8.
    """
    R = float(spec["radius"])
    width = float(spec["width"])
    if R <= 0 or width <= 0:
        raise MeshError("radius and width must be positive")
    n_xi, n_eta, n_z = _check_divisions(spec["divisions"])

    quarter = _quarter_disk_mesh(
        {
            "radius": R,
            "divisions": [n_xi, n_eta],
            "grading_radial": spec.get("grading_radial"),
            "grading_angular": spec.get("grading_angular"),
        }
    )
    # mirror in x and merge along the x = 0 seam
    c = quarter.node_coords
    n_orig = len(c)
    seam = np.where(np.abs(c[:, 0]) < 1e-12 * max(R, 1.0))[0]
    mirror_id = {}
    mirrored = []
    for i in range(n_orig):
        if i in set(seam):
            mirror_id[i] = i
        else:
            mirror_id[i] = n_orig + len(mirrored)
            mirrored.append((-c[i, 0], c[i, 1]))
    coords2d = np.vstack([c, np.array(mirrored).reshape(-1, 2)])
    conn2d = list(map(tuple, quarter.connectivity))
    for q in quarter.connectivity:
        m = [mirror_id[int(i)] for i in q]
        conn2d.append((m[0], m[3], m[2], m[1]))  # flip to keep positive area
    conn2d = np.array(conn2d, dtype=np.int64)

    zs = width * _graded_axis(n_z, spec.get("grading_z"))
    coords, hexes = _extrude_quad_mesh(coords2d, conn2d, zs)

    eps = 1e-9 * max(R, width)

    def tagger(face_nodes):
        fc = coords[list(face_nodes)]
        cz = fc[:, 2].mean()
        if abs(cz) < eps:
            return "zmin"
        if abs(cz - width) < eps:
            return "zmax"
        if np.all(np.abs(fc[:, 1] - R) < eps):
            return "top"
        return "arc"

    if spec.get("element", "tet4") == "hex8":
        facets, tags = extract_boundary("hex8", hexes, tagger)
        return Mesh(coords, "hex8", hexes, facets, tags)
    tets = _split_hexes_to_tets(coords, hexes)
    facets, tags = extract_boundary("tet4", tets, tagger)
    return Mesh(coords, "tet4", tets, facets, tags)


def _hemisphere_mesh(spec):
    """Solid lower half-ball: pole at the origin, flat disk at y = radius.

    A half-cube grid is mapped with the spherified-cube transform
    q = p * max|p_i| / |p|, which preserves the flat face. Spherical surface
    tagged "cap", flat face "top". Elements tet4 (default) or hex8.
    """
    R = float(spec["radius"])
    if R <= 0:
        raise MeshError("radius must be positive")
    n = int(spec.get("divisions", [4])[0]) if isinstance(spec.get("divisions"), list) else int(spec.get("divisions", 4))
    if n <= 0:
        raise MeshError("divisions must be positive")

    # half cube [-1,1] x [-1,0] x [-1,1]
    xs = np.linspace(-1.0, 1.0, 2 * n + 1)
    ys = np.linspace(-1.0, 0.0, n + 1)
    zs = np.linspace(-1.0, 1.0, 2 * n + 1)
    pts = np.array([(x, y, z) for z in zs for y in ys for x in xs])
    norms = np.linalg.norm(pts, axis=1)
    maxc = np.abs(pts).max(axis=1)
    scale = np.where(norms > 0, maxc / np.where(norms > 0, norms, 1.0), 0.0)
    coords = pts * scale[:, None] * R
    # shift so the pole (lowest point) is at the origin, flat top at y = R
    coords[:, 1] += R

    nx, ny, nz = 2 * n, n, 2 * n

    def nid(i, j, k):
        return k * (nx + 1) * (ny + 1) + j * (nx + 1) + i

    hexes = np.array(
        [
            (
                nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
                nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1),
            )
            for k in range(nz)
            for j in range(ny)
            for i in range(nx)
        ],
        dtype=np.int64,
    )

    eps = 1e-9 * R

    def tagger(face_nodes):
        fc = coords[list(face_nodes)]
        if np.all(np.abs(fc[:, 1] - R) < eps):
            return "top"
        return "cap"

    if spec.get("element", "tet4") == "hex8":
        facets, tags = extract_boundary("hex8", hexes, tagger)
        return Mesh(coords, "hex8", hexes, facets, tags)
    tets = _split_hexes_to_tets(coords, hexes)
    facets, tags = extract_boundary("tet4", tets, tagger)
    return Mesh(coords, "tet4", tets, facets, tags)


_SHAPE_BUILDERS = {
    "rect": _rect_mesh,
    "box": _box_mesh,
    "quarter_disk": _quarter_disk_mesh,
    "half_cylinder": _half_cylinder_mesh,
    "hemisphere": _hemisphere_mesh,
}


def build_structured_mesh(spec):
    """Build a mesh from a geometry descriptor dict.

    The descriptor carries `shape` plus shape-specific extents, divisions,
    grading and element kind. Rejects invalid descriptors with a MeshError
    naming the problem.
    """
    shape = spec.get("shape")
    if shape not in _SHAPE_BUILDERS:
        raise MeshError(f"unknown shape {shape!r}; expected one of {sorted(_SHAPE_BUILDERS)}")
    return _SHAPE_BUILDERS[shape](spec)


# ---------------------------------------------------------------------------
# bounding boxes and partitioning
# ---------------------------------------------------------------------------

@dataclass
class BoundingBox:
    """Axis-aligned box, already inflated by `padding` on all sides."""

    min_corner: np.ndarray
    max_corner: np.ndarray
    padding: float = 0.0

    def __post_init__(self):
        self.min_corner = np.asarray(self.min_corner, dtype=float)
        self.max_corner = np.asarray(self.max_corner, dtype=float)
        if np.any(self.min_corner > self.max_corner):
            raise MeshError("bounding box min corner exceeds max corner")

    def contains(self, points):
        """Boolean mask of points inside the closed box."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((p >= self.min_corner) & (p <= self.max_corner), axis=1)


def points_bounding_box(points, padding=0.0):
    points = np.asarray(points, dtype=float)
    return BoundingBox(points.min(axis=0) - padding, points.max(axis=0) + padding, padding)


@dataclass
class Subdomain:
    """One rank's share of a mesh, in local node numbering."""

    rank_id: int
    local_mesh: Mesh
    global_node_ids: np.ndarray      # local node index -> global node id
    owned_element_ids: np.ndarray    # global element ids, sorted
    owned_boundary_tags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.global_node_ids = np.ascontiguousarray(self.global_node_ids, dtype=np.int64)
        self.owned_element_ids = np.ascontiguousarray(self.owned_element_ids, dtype=np.int64)
        if len(np.unique(self.global_node_ids)) != len(self.global_node_ids):
            raise MeshError("global_node_ids must be injective")
        self.global_node_ids.setflags(write=False)
        self.owned_element_ids.setflags(write=False)


def default_padding(points):
    """1% of the point cloud diagonal, the search-box safety margin."""
    points = np.asarray(points, dtype=float)
    diag = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
    return 0.01 * diag


def bounding_box(sub, padding=None):
    """Padded axis-aligned box around a subdomain's nodes."""
    pts = sub.local_mesh.node_coords
    if len(pts) == 0:
        raise MeshError("cannot box an empty subdomain")
    if padding is None:
        padding = default_padding(pts)
    return points_bounding_box(pts, padding)


def _bisect(ids, centroids, k):
    """Recursive coordinate bisection; splits along the longest extent."""
    if k == 1:
        return [np.sort(ids)]
    k_left = (k + 1) // 2
    pts = centroids[ids]
    axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
    order = np.lexsort((ids, pts[:, axis]))
    cut = round(len(ids) * k_left / k)
    left, right = ids[order[:cut]], ids[order[cut:]]
    return _bisect(left, centroids, k_left) + _bisect(right, centroids, k - k_left)


def partition(mesh, n_parts):
    """Split a mesh into balanced subdomains by coordinate bisection.

    Every element lands in exactly one subdomain; exterior boundary facets
    follow the element that owns them. Local meshes keep global node order.
    """
    n_parts = int(n_parts)
    if n_parts < 1 or n_parts > mesh.n_elements:
        raise MeshError(
            f"n_parts must be in [1, {mesh.n_elements}], got {n_parts}"
        )
    centroids = mesh.element_centroids()
    parts = _bisect(np.arange(mesh.n_elements, dtype=np.int64), centroids, n_parts)

    # owning element of every boundary facet
    facet_owner = {}
    face_map = {}
    for e, conn in enumerate(mesh.connectivity):
        for face in ELEMENT_FACES[mesh.kind]:
            face_map.setdefault(frozenset(int(conn[i]) for i in face), []).append(e)
    for f, facet in enumerate(mesh.boundary_facets):
        owners = face_map[frozenset(int(i) for i in facet)]
        facet_owner[f] = owners[0]

    subs = []
    for rank, elem_ids in enumerate(parts):
        elem_set = set(int(e) for e in elem_ids)
        global_nodes = np.unique(mesh.connectivity[elem_ids])
        local_of = {int(g): i for i, g in enumerate(global_nodes)}
        conn = np.array(
            [[local_of[int(g)] for g in mesh.connectivity[e]] for e in elem_ids],
            dtype=np.int64,
        )
        facets, tags = [], []
        for f in range(len(mesh.boundary_facets)):
            if facet_owner[f] in elem_set:
                facets.append([local_of[int(g)] for g in mesh.boundary_facets[f]])
                tags.append(mesh.boundary_tags[f])
        facets = (
            np.array(facets, dtype=np.int64)
            if facets
            else np.zeros((0, len(ELEMENT_FACES[mesh.kind][0])), dtype=np.int64)
        )
        local = Mesh(mesh.node_coords[global_nodes], mesh.kind, conn, facets, tuple(tags))
        subs.append(
            Subdomain(
                rank_id=rank,
                local_mesh=local,
                global_node_ids=global_nodes,
                owned_element_ids=elem_ids,
                owned_boundary_tags=frozenset(tags),
            )
        )
    return subs
