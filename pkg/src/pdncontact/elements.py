"""Element-level geometry: shape functions, Gauss rules, isoparametric maps.

Supported cell kinds: quad4 (plane strain), hex8, tet4, plus tri3 for
point-containment queries. All natural coordinate conventions follow the
usual isoparametric ones: quad/hex in [-1, 1]^d, simplices in barycentric
form with vertex shape functions (1 - sum(xi), xi...).
"""

import numpy as np

# number of nodes per cell kind
CELL_NODES = {"tri3": 3, "quad4": 4, "tet4": 4, "hex8": 8}

# spatial dimension each kind lives in
CELL_DIM = {"tri3": 2, "quad4": 2, "tet4": 3, "hex8": 3}

_SQ3 = 1.0 / np.sqrt(3.0)


def gauss_rule(kind):
    """Full-integration Gauss points and weights for a cell kind.

    quad4: 2x2, hex8: 2x2x2, tet4/tri3: single interior point.
    Returns (points[n_gp, dim_natural], weights[n_gp]).
    """
    if kind == "quad4":
        pts = np.array([[s * _SQ3, t * _SQ3] for t in (-1, 1) for s in (-1, 1)])
        return pts, np.ones(4)
    if kind == "hex8":
        pts = np.array(
            [[s * _SQ3, t * _SQ3, u * _SQ3]
             for u in (-1, 1) for t in (-1, 1) for s in (-1, 1)]
        )
        return pts, np.ones(8)
    if kind == "tet4":
        return np.array([[0.25, 0.25, 0.25]]), np.array([1.0 / 6.0])
    if kind == "tri3":
        return np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5])
    raise ValueError(f"unknown cell kind {kind!r}")


def shape_functions(kind, xi):
    """Shape function values N_a(xi) for one natural point. Returns (n_nodes,)."""
    xi = np.asarray(xi, dtype=float)
    if kind == "quad4":
        s, t = xi
        return 0.25 * np.array(
            [(1 - s) * (1 - t), (1 + s) * (1 - t), (1 + s) * (1 + t), (1 - s) * (1 + t)]
        )
    if kind == "hex8":
        s, t, u = xi
        return 0.125 * np.array(
            [
                (1 - s) * (1 - t) * (1 - u),
                (1 + s) * (1 - t) * (1 - u),
                (1 + s) * (1 + t) * (1 - u),
                (1 - s) * (1 + t) * (1 - u),
                (1 - s) * (1 - t) * (1 + u),
                (1 + s) * (1 - t) * (1 + u),
                (1 + s) * (1 + t) * (1 + u),
                (1 - s) * (1 + t) * (1 + u),
            ]
        )
    if kind == "tet4":
        s, t, u = xi
        return np.array([1 - s - t - u, s, t, u])
    if kind == "tri3":
        s, t = xi
        return np.array([1 - s - t, s, t])
    raise ValueError(f"unknown cell kind {kind!r}")


def shape_gradients(kind, xi):
    """Shape function gradients dN_a/dxi. Returns (n_nodes, dim_natural)."""
    xi = np.asarray(xi, dtype=float)
    if kind == "quad4":
        s, t = xi
        return 0.25 * np.array(
            [
                [-(1 - t), -(1 - s)],
                [(1 - t), -(1 + s)],
                [(1 + t), (1 + s)],
                [-(1 + t), (1 - s)],
            ]
        )
    if kind == "hex8":
        s, t, u = xi
        sm, sp, tm, tp, um, up = 1 - s, 1 + s, 1 - t, 1 + t, 1 - u, 1 + u
        return 0.125 * np.array(
            [
                [-tm * um, -sm * um, -sm * tm],
                [tm * um, -sp * um, -sp * tm],
                [tp * um, sp * um, -sp * tp],
                [-tp * um, sm * um, -sm * tp],
                [-tm * up, -sm * up, sm * tm],
                [tm * up, -sp * up, sp * tm],
                [tp * up, sp * up, sp * tp],
                [-tp * up, sm * up, sm * tp],
            ]
        )
    if kind == "tet4":
        return np.array(
            [[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        )
    if kind == "tri3":
        return np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    raise ValueError(f"unknown cell kind {kind!r}")


def map_to_physical(kind, node_coords, xi):
    """Map natural coordinates to physical space for one cell."""
    return shape_functions(kind, xi) @ node_coords


def jacobian(kind, node_coords, xi):
    """Jacobian matrix dx/dxi (dim x dim) at one natural point."""
    return shape_gradients(kind, xi).T @ node_coords


def natural_coords(kind, node_coords, point, tol=1e-13, max_iter=30):
    """Invert the isoparametric map: physical point -> natural coordinates.

    Affine kinds (tri3, tet4) solve a linear system; bilinear/trilinear kinds
    use Newton started at the cell center. Returns the natural coordinates
    regardless of whether the point is inside the cell; pair with
    `contains_natural` for containment decisions. Raises on a singular
    (degenerate) cell.
    """
    node_coords = np.asarray(node_coords, dtype=float)
    point = np.asarray(point, dtype=float)
    if kind in ("tri3", "tet4"):
        A = (node_coords[1:] - node_coords[0]).T
        try:
            return np.linalg.solve(A, point - node_coords[0])
        except np.linalg.LinAlgError:
            raise ValueError(f"degenerate {kind} cell")
    xi = np.zeros(CELL_DIM[kind])
    scale = max(np.linalg.norm(node_coords.max(axis=0) - node_coords.min(axis=0)), 1e-300)
    for _ in range(max_iter):
        r = map_to_physical(kind, node_coords, xi) - point
        if np.linalg.norm(r) <= tol * scale:
            break
        J = jacobian(kind, node_coords, xi)
        try:
            xi = xi - np.linalg.solve(J.T, r)
        except np.linalg.LinAlgError:
            raise ValueError(f"degenerate {kind} cell")
    return xi


def contains_natural(kind, xi, tol):
    """Containment test in natural coordinates with a closed-boundary slack."""
    xi = np.asarray(xi, dtype=float)
    if kind in ("tri3", "tet4"):
        return bool(np.all(xi >= -tol) and xi.sum() <= 1.0 + tol)
    return bool(np.all(np.abs(xi) <= 1.0 + tol))


def cell_diameter(node_coords):
    """Max pairwise node distance; the length scale for containment slack."""
    node_coords = np.asarray(node_coords, dtype=float)
    d = node_coords[:, None, :] - node_coords[None, :, :]
    return float(np.sqrt((d * d).sum(axis=2).max()))


def jacobian_determinants(kind, node_coords):
    """det(J) at every Gauss point of the full-integration rule."""
    pts, _ = gauss_rule(kind)
    return np.array([np.linalg.det(jacobian(kind, node_coords, xi)) for xi in pts])
