"""VTK legacy (ASCII, unstructured grid) export and import."""

import numpy as np

from .mesh import Mesh, extract_boundary

VTK_CELL_TYPES = {"tri3": 5, "quad4": 9, "tet4": 10, "hex8": 12}
_KIND_OF_VTK = {v: k for k, v in VTK_CELL_TYPES.items()}


def write_vtk(path, mesh, point_data=None, title="pdncontact output"):
    """Write a mesh (plus optional nodal fields) as a legacy VTK file.

    point_data maps field name -> array of shape (n_nodes,) for scalars or
    (n_nodes, dim) for vectors. 2D meshes are padded with z = 0.
    """
    coords = np.asarray(mesh.node_coords, dtype=float)
    if coords.shape[1] == 2:
        coords = np.hstack([coords, np.zeros((len(coords), 1))])
    conn = mesh.connectivity
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{title}\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(coords)} double\n")
        for p in coords:
            f.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        n_cells = len(conn)
        f.write(f"CELLS {n_cells} {n_cells * (conn.shape[1] + 1)}\n")
        for c in conn:
            f.write(f"{conn.shape[1]} " + " ".join(str(int(i)) for i in c) + "\n")
        f.write(f"CELL_TYPES {n_cells}\n")
        code = VTK_CELL_TYPES[mesh.kind]
        for _ in range(n_cells):
            f.write(f"{code}\n")
        if point_data:
            f.write(f"POINT_DATA {len(coords)}\n")
            for name, values in point_data.items():
                values = np.asarray(values, dtype=float)
                if values.ndim == 1:
                    f.write(f"SCALARS {name} double\n")
                    f.write("LOOKUP_TABLE default\n")
                    for v in values:
                        f.write(f"{v:.17g}\n")
                else:
                    vec = values
                    if vec.shape[1] == 2:
                        vec = np.hstack([vec, np.zeros((len(vec), 1))])
                    f.write(f"VECTORS {name} double\n")
                    for v in vec:
                        f.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")


def read_vtk(path):
    """Read a legacy ASCII unstructured-grid VTK file.

    Returns (mesh, point_data). A single homogeneous cell block is required.
    z coordinates that are identically zero on 2D cell kinds are dropped.
    Boundary facets are reconstructed from the cells (untagged).
    """
    with open(path) as f:
        tokens = f.read().split()
    it = iter(range(len(tokens)))

    def find(word, start=0):
        for i in range(start, len(tokens)):
            if tokens[i].upper() == word:
                return i
        return -1

    i_pts = find("POINTS")
    if i_pts < 0:
        raise ValueError(f"{path}: no POINTS section")
    n_pts = int(tokens[i_pts + 1])
    base = i_pts + 3
    coords = np.array(tokens[base:base + 3 * n_pts], dtype=float).reshape(n_pts, 3)

    i_cells = find("CELLS")
    n_cells = int(tokens[i_cells + 1])
    pos = i_cells + 3
    conn_rows = []
    for _ in range(n_cells):
        sz = int(tokens[pos])
        conn_rows.append([int(t) for t in tokens[pos + 1:pos + 1 + sz]])
        pos += 1 + sz

    i_types = find("CELL_TYPES")
    codes = {int(t) for t in tokens[i_types + 2:i_types + 2 + n_cells]}
    if len(codes) != 1:
        raise ValueError(f"{path}: mixed cell types {sorted(codes)} not supported")
    kind = _KIND_OF_VTK.get(codes.pop())
    if kind is None:
        raise ValueError(f"{path}: unsupported cell type")
    conn = np.array(conn_rows, dtype=np.int64)

    if kind in ("quad4", "tri3") and np.allclose(coords[:, 2], 0.0):
        coords = coords[:, :2]

    point_data = {}
    i_pd = find("POINT_DATA")
    if i_pd >= 0:
        pos = i_pd + 2
        while pos < len(tokens):
            word = tokens[pos].upper()
            if word == "SCALARS":
                name = tokens[pos + 1]
                pos += 3
                if tokens[pos].upper() == "LOOKUP_TABLE":
                    pos += 2
                point_data[name] = np.array(tokens[pos:pos + n_pts], dtype=float)
                pos += n_pts
            elif word == "VECTORS":
                name = tokens[pos + 1]
                pos += 3
                vec = np.array(tokens[pos:pos + 3 * n_pts], dtype=float).reshape(n_pts, 3)
                if coords.shape[1] == 2 and np.allclose(vec[:, 2], 0.0):
                    vec = vec[:, :2]
                point_data[name] = vec
                pos += 3 * n_pts
            else:
                break

    facets, tags = extract_boundary(kind, conn, lambda nodes: "boundary")
    return Mesh(coords, kind, conn, facets, tags), point_data
