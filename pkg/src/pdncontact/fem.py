"""Elastodynamic solver: assembly, Jacobi-PCG, implicit Newmark with Newton.

The solver runs identically in serial and distributed mode. All nodal arrays
are kept "consistent" (every rank holding a node stores its full value);
element-wise products are made consistent again through the communication
plan's halo sum. Constraints are enforced by rotating each constrained
node's dofs into its local frame and eliminating the prescribed dofs from
the Krylov space, which keeps the operator symmetric positive definite and
makes reaction recovery exact.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import elements as el


class FemError(RuntimeError):
    pass


class ConvergenceError(FemError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class Material:
    """Isotropic material; stress model picked by the mesh dimension."""

    young_modulus: float
    poisson_ratio: float
    density: float = 0.0
    model: str = "linear-elastic"

    def __post_init__(self):
        if self.young_modulus <= 0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValueError("Poisson's ratio must lie in (-1, 0.5)")
        if self.density < 0:
            raise ValueError("density must be non-negative")

    def elasticity_matrix(self, dim):
        E, nu = self.young_modulus, self.poisson_ratio
        if dim == 2:
            # plane strain
            c = E / ((1 + nu) * (1 - 2 * nu))
            return c * np.array(
                [[1 - nu, nu, 0.0], [nu, 1 - nu, 0.0], [0.0, 0.0, (1 - 2 * nu) / 2]]
            )
        c = E / ((1 + nu) * (1 - 2 * nu))
        D = np.zeros((6, 6))
        D[:3, :3] = nu
        np.fill_diagonal(D[:3, :3], 1 - nu)
        D[3, 3] = D[4, 4] = D[5, 5] = (1 - 2 * nu) / 2
        return c * D


@dataclass
class NewmarkParams:
    beta: float = 0.65
    gamma: float = 0.9
    alpha: float = 0.0   # reserved; 0 keeps the scheme plain Newmark


@dataclass
class SolveReport:
    newton_iterations: int = 0
    displ_error: float = np.inf
    force_error: float = np.inf
    converged: bool = False
    release_subiterations: int = 0
    total_solves: int = 0
    cg_iterations: int = 0


@dataclass
class DeformableState:
    """Nodal kinematics; current coordinates are X + u by construction."""

    reference_coords: np.ndarray
    displacement: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    time: float = 0.0

    @classmethod
    def rest(cls, mesh):
        z = np.zeros_like(mesh.node_coords)
        return cls(mesh.node_coords.copy(), z.copy(), z.copy(), z.copy(), 0.0)

    @property
    def current_coords(self):
        return self.reference_coords + self.displacement

    def copy(self):
        return DeformableState(
            self.reference_coords.copy(),
            self.displacement.copy(),
            self.velocity.copy(),
            self.acceleration.copy(),
            self.time,
        )


class DirichletSet:
    """Prescribed single dofs, each in a per-node (possibly rotated) frame.

    `dof` indexes into the node's local frame: with a rotation attached,
    local dof 0 is the frame's first column (the contact normal); without
    one, the frame is the global basis.
    """

    def __init__(self, dim):
        self.dim = dim
        self._entries = {}          # (node, dof) -> value
        self.rotations = {}         # node -> (dim, dim) orthonormal matrix

    def add(self, node, dof, value, rotation=None):
        key = (int(node), int(dof))
        if key in self._entries:
            raise ValueError(f"dof {key} constrained twice")
        self._entries[key] = float(value)
        if rotation is not None:
            rotation = np.asarray(rotation, dtype=float)
            R = self.rotations.get(int(node))
            if R is not None and not np.allclose(R, rotation, atol=1e-12):
                raise ValueError(f"conflicting rotations on node {node}")
            self.rotations[int(node)] = rotation

    def add_nodes(self, nodes, dof, value):
        for n in nodes:
            self.add(n, dof, value)

    def remove_node(self, node):
        """Drop every constraint on a node (its rotation is kept)."""
        self._entries = {k: v for k, v in self._entries.items() if k[0] != int(node)}

    def items(self):
        return sorted(self._entries.items())

    def constrained_nodes(self):
        return sorted({n for (n, _) in self._entries})

    def __len__(self):
        return len(self._entries)

    def __contains__(self, node):
        return any(n == int(node) for (n, _) in self._entries)

    def copy(self):
        out = DirichletSet(self.dim)
        out._entries = dict(self._entries)
        out.rotations = {n: R.copy() for n, R in self.rotations.items()}
        return out

    def dof_indices_and_values(self):
        idx = np.array([n * self.dim + d for (n, d), _ in self.items()], dtype=np.int64)
        vals = np.array([v for _, v in self.items()])
        return idx, vals


# ---------------------------------------------------------------------------
# element kernels
# ---------------------------------------------------------------------------

def _b_matrix(dim, dndx):
    nn = dndx.shape[0]
    if dim == 2:
        B = np.zeros((3, 2 * nn))
        B[0, 0::2] = dndx[:, 0]
        B[1, 1::2] = dndx[:, 1]
        B[2, 0::2] = dndx[:, 1]
        B[2, 1::2] = dndx[:, 0]
        return B
    B = np.zeros((6, 3 * nn))
    B[0, 0::3] = dndx[:, 0]
    B[1, 1::3] = dndx[:, 1]
    B[2, 2::3] = dndx[:, 2]
    B[3, 0::3] = dndx[:, 1]
    B[3, 1::3] = dndx[:, 0]
    B[4, 1::3] = dndx[:, 2]
    B[4, 2::3] = dndx[:, 1]
    B[5, 0::3] = dndx[:, 2]
    B[5, 2::3] = dndx[:, 0]
    return B


def element_stiffness(kind, coords, material, u_elem=None):
    """Stiffness matrix and internal force of one element.

    The internal force is integrated from Gauss-point stresses (not formed
    as K @ u), so stiffness and force provide two independent routes for the
    linear model. Raises FemError on a non-positive Jacobian.
    """
    coords = np.asarray(coords, dtype=float)
    dim = coords.shape[1]
    nn = coords.shape[0]
    D = material.elasticity_matrix(dim)
    pts, wts = el.gauss_rule(kind)
    K = np.zeros((nn * dim, nn * dim))
    f_int = np.zeros(nn * dim)
    u_flat = None if u_elem is None else np.asarray(u_elem, dtype=float).reshape(-1)
    for xi, w in zip(pts, wts):
        dN = el.shape_gradients(kind, xi)
        J = dN.T @ coords
        detJ = np.linalg.det(J)
        if detJ <= 0.0:
            raise FemError(f"non-positive Jacobian ({detJ:g}) in {kind} element")
        dndx = dN @ np.linalg.inv(J)
        B = _b_matrix(dim, dndx)
        K += (B.T @ D @ B) * (w * detJ)
        if u_flat is not None:
            sigma = D @ (B @ u_flat)
            f_int += (B.T @ sigma) * (w * detJ)
    return K, f_int


def element_mass(kind, coords, material):
    """Consistent mass matrix of one element."""
    coords = np.asarray(coords, dtype=float)
    dim = coords.shape[1]
    nn = coords.shape[0]
    pts, wts = el.gauss_rule(kind)
    M = np.zeros((nn * dim, nn * dim))
    for xi, w in zip(pts, wts):
        N = el.shape_functions(kind, xi)
        J = el.shape_gradients(kind, xi).T @ coords
        detJ = np.linalg.det(J)
        nn_block = np.outer(N, N) * (material.density * w * detJ)
        for i in range(dim):
            M[i::dim, i::dim] += nn_block
    return M


def element_stress(kind, coords, material, u_elem, xi):
    """Stress (Voigt) at one natural point for the linear-elastic model."""
    coords = np.asarray(coords, dtype=float)
    dim = coords.shape[1]
    dN = el.shape_gradients(kind, xi)
    J = dN.T @ coords
    dndx = dN @ np.linalg.inv(J)
    B = _b_matrix(dim, dndx)
    return material.elasticity_matrix(dim) @ (B @ np.asarray(u_elem).reshape(-1))


def _element_dof_indices(connectivity, dim):
    n_e, nn = connectivity.shape
    idx = (connectivity[:, :, None] * dim + np.arange(dim)[None, None, :])
    return idx.reshape(n_e, nn * dim)


def assemble_stiffness(mesh, material):
    """Global stiffness (CSR) from reference coordinates."""
    return _assemble(mesh, lambda c: element_stiffness(mesh.kind, c, material)[0])


def assemble_mass(mesh, material):
    return _assemble(mesh, lambda c: element_mass(mesh.kind, c, material))


def _assemble(mesh, kernel):
    dim = mesh.dim
    idx = _element_dof_indices(mesh.connectivity, dim)
    nd = idx.shape[1]
    n_e = mesh.n_elements
    data = np.empty((n_e, nd, nd))
    for e in range(n_e):
        data[e] = kernel(mesh.element_coords(e))
    rows = np.repeat(idx, nd, axis=1).ravel()
    cols = np.tile(idx, (1, nd)).ravel()
    n_dofs = mesh.n_nodes * dim
    A = sp.coo_matrix((data.ravel(), (rows, cols)), shape=(n_dofs, n_dofs))
    return A.tocsr()


def rotation_operator(n_nodes, dim, rotations):
    """Block-diagonal sparse T: global dofs = T @ local-frame dofs."""
    if not rotations:
        return sp.identity(n_nodes * dim, format="csr")
    rows, cols, vals = [], [], []
    rotated = set(rotations)
    for n in range(n_nodes):
        base = n * dim
        if n in rotated:
            R = rotations[n]
            for i in range(dim):
                for j in range(dim):
                    rows.append(base + i)
                    cols.append(base + j)
                    vals.append(R[i, j])
        else:
            for i in range(dim):
                rows.append(base + i)
                cols.append(base + i)
                vals.append(1.0)
    n_dofs = n_nodes * dim
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_dofs, n_dofs))


def assemble(mesh, material, state, dirichlet, f_ext=None):
    """Constrained static system (A, b): rotate, then eliminate symmetrically.

    Constrained rows/columns are zeroed with a unit diagonal and the
    right-hand side carries the prescribed values, so the matrix stays
    symmetric positive definite for the linear-elastic model.
    """
    dim = mesh.dim
    K = assemble_stiffness(mesh, material)
    n_dofs = K.shape[0]
    b = np.zeros(n_dofs) if f_ext is None else np.asarray(f_ext, dtype=float).reshape(-1).copy()
    T = rotation_operator(mesh.n_nodes, dim, dirichlet.rotations)
    A = (T.T @ K @ T).tocsr()
    b = T.T @ b
    idx, vals = dirichlet.dof_indices_and_values()
    if len(idx):
        w = np.zeros(n_dofs)
        w[idx] = vals
        b -= A @ w
        b[idx] = vals
        keep = np.ones(n_dofs, dtype=bool)
        keep[idx] = False
        mask = sp.diags(keep.astype(float))
        A = (mask @ A @ mask).tolil()
        for i in idx:
            A[i, i] = 1.0
        A = A.tocsr()
    return A, b


# ---------------------------------------------------------------------------
# conjugate gradient
# ---------------------------------------------------------------------------

def cg_kernel(matvec, b, diag, dot, tol, max_iter, x0=None):
    """Jacobi-preconditioned CG over caller-supplied vector operations.

    Converges when the preconditioned residual norm falls below tol times
    its initial value. Returns (x, iterations); raises ConvergenceError when
    the iteration budget is exhausted.
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    inv_diag = np.where(diag != 0.0, 1.0 / np.where(diag != 0.0, diag, 1.0), 1.0)
    r = b - matvec(x)
    z = inv_diag * r
    rz = dot(r, z)
    norm0 = np.sqrt(abs(rz))
    if norm0 == 0.0:
        return x, 0
    p = z.copy()
    for it in range(1, max_iter + 1):
        Ap = matvec(p)
        alpha = rz / dot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        z = inv_diag * r
        rz_new = dot(r, z)
        if np.sqrt(abs(rz_new)) <= tol * norm0:
            return x, it
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG did not converge in {max_iter} iterations "
        f"(residual {np.sqrt(abs(rz)) / norm0:.3e} of initial)",
        residual=float(np.sqrt(abs(rz)) / norm0),
        iterations=max_iter,
    )


def cg_solve(A, b, tol=1e-10, max_iter=None, x0=None):
    """Diagonally preconditioned CG on a symmetric positive definite matrix."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if max_iter is None:
        max_iter = max(10 * len(b), 100)
    diag = A.diagonal()
    return cg_kernel(lambda v: A @ v, b, diag, lambda a_, b_: float(a_ @ b_), tol, max_iter, x0)


# ---------------------------------------------------------------------------
# communication plans
# ---------------------------------------------------------------------------

class SerialPlan:
    """Single-subdomain plan: every node is owned, halo sums are no-ops."""

    def __init__(self, n_nodes):
        self.owned = np.ones(n_nodes, dtype=bool)

    def halo_sum(self, arr):
        return arr

    def allreduce(self, value):
        return value


class SolverOptions:
    def __init__(self, newton_tol=1e-4, newton_max_iter=25, cg_tol=1e-10,
                 cg_max_iter=200000, quasi_static=False):
        self.newton_tol = newton_tol
        self.newton_max_iter = newton_max_iter
        self.cg_tol = cg_tol
        self.cg_max_iter = cg_max_iter
        self.quasi_static = quasi_static


class FemSolver:
    """Implicit Newmark / quasi-static Newton solver on one subdomain.

    With a SerialPlan this solves the whole mesh; with a distributed plan the
    same code runs per rank, exchanging halo contributions and reducing dot
    products through the plan.
    """

    def __init__(self, mesh, material, plan=None, newmark=None, options=None):
        self.mesh = mesh
        self.material = material
        self.plan = plan if plan is not None else SerialPlan(mesh.n_nodes)
        self.newmark = newmark if newmark is not None else NewmarkParams()
        self.options = options if options is not None else SolverOptions()
        self.dim = mesh.dim
        self.K = assemble_stiffness(mesh, material)
        self.M = assemble_mass(mesh, material) if material.density > 0 else None
        self.last_report = None

    # -- consistent linear algebra ------------------------------------------

    def _dot(self, a, b):
        dim = self.dim
        owned = np.repeat(self.plan.owned, dim)
        return self.plan.allreduce(float(a[owned] @ b[owned]))

    def _consistent_matvec(self, A, x):
        y = A @ x
        return self.plan.halo_sum(y.reshape(-1, self.dim)).reshape(-1)

    def _norm(self, a):
        return np.sqrt(max(self._dot(a, a), 0.0))

    # -- constrained solve ---------------------------------------------------

    def _solve_linearized(self, A, T, rhs_global, fixed_idx, fixed_delta, x0=None):
        """Solve T^T A T dz = T^T rhs with dz fixed on constrained dofs."""
        rhs = T.T @ rhs_global

        def matvec(v):
            vv = v.copy()
            vv[fixed_idx] = 0.0
            y = self._consistent_matvec(A, T @ vv)
            y = T.T @ y
            y[fixed_idx] = v[fixed_idx]
            return y

        diag_full = self.plan.halo_sum(
            np.asarray((T.T @ A @ T).diagonal()).reshape(-1, self.dim)
        ).reshape(-1)
        diag = diag_full.copy()
        diag[fixed_idx] = 1.0

        b = rhs.copy()
        if len(fixed_idx):
            w = np.zeros_like(b)
            w[fixed_idx] = fixed_delta
            b = rhs - (T.T @ self._consistent_matvec(A, T @ w))
            b[fixed_idx] = fixed_delta

        dz, iters = cg_kernel(
            matvec, b, diag, self._dot, self.options.cg_tol, self.options.cg_max_iter, x0=x0
        )
        dz[fixed_idx] = fixed_delta
        return dz, iters

    # -- time stepping --------------------------------------------------------

    def newmark_newton_step(self, state, dt, dirichlet, f_ext=None):
        """Advance one implicit step; returns (new_state, SolveReport).

        Prescribed dofs take exactly their Dirichlet values. Raises
        ConvergenceError if Newton does not meet the displacement and force
        tolerances within the iteration bound.
        """
        if dt <= 0:
            raise ValueError("dt must be positive")
        opts = self.options
        nm = self.newmark
        dim = self.dim
        n_dofs = self.mesh.n_nodes * dim

        u = state.displacement.reshape(-1).copy()
        v = state.velocity.reshape(-1).copy()
        a = state.acceleration.reshape(-1).copy()
        f = np.zeros(n_dofs) if f_ext is None else np.asarray(f_ext, dtype=float).reshape(-1)

        dynamic = self.M is not None and not opts.quasi_static
        if dynamic:
            c_m = 1.0 / (nm.beta * dt * dt)
            u_pred = u + dt * v + dt * dt * (0.5 - nm.beta) * a
            v_pred = v + dt * (1.0 - nm.gamma) * a
            A = (self.K + c_m * self.M).tocsr()
        else:
            A = self.K

        T = rotation_operator(self.mesh.n_nodes, dim, dirichlet.rotations)
        fixed_idx, fixed_vals = dirichlet.dof_indices_and_values()

        report = SolveReport()
        u_new = u.copy()
        a_new = a.copy()
        for it in range(1, opts.newton_max_iter + 1):
            report.newton_iterations = it
            if dynamic:
                a_new = c_m * (u_new - u_pred)
                r = f - self._consistent_matvec(self.K, u_new) - self._consistent_matvec(self.M, a_new)
            else:
                r = f - self._consistent_matvec(self.K, u_new)
            f_scale = max(self._norm(f), self._norm(self._consistent_matvec(self.K, u_new)), 1e-30)
            r_free = T.T @ r
            if len(fixed_idx):
                r_free = r_free.copy()
                r_free[fixed_idx] = 0.0
            report.force_error = self._norm(T @ r_free) / f_scale

            # prescribed increment: drive the constrained dofs to their values
            z_cur = T.T @ u_new
            delta_fixed = fixed_vals - z_cur[fixed_idx] if len(fixed_idx) else np.zeros(0)

            dz, cg_its = self._solve_linearized(A, T, r, fixed_idx, delta_fixed)
            report.cg_iterations += cg_its
            report.total_solves += 1

            z_new = z_cur + dz
            if len(fixed_idx):
                z_new[fixed_idx] = fixed_vals
            u_new = T @ z_new

            norm_u = self._norm(u_new)
            norm_dz = self._norm(dz)
            report.displ_error = norm_dz / norm_u if norm_u > 0.0 else norm_dz
            if report.force_error <= opts.newton_tol and report.displ_error <= opts.newton_tol:
                report.converged = True
                break

        if not report.converged:
            raise ConvergenceError(
                f"Newton did not converge in {opts.newton_max_iter} iterations "
                f"(displ {report.displ_error:.3e}, force {report.force_error:.3e})",
                residual=report.force_error,
                iterations=report.newton_iterations,
            )

        if dynamic:
            a_new = c_m * (u_new - u_pred)
            v_new = v_pred + nm.gamma * dt * a_new
        else:
            a_new = np.zeros_like(u_new)
            v_new = (u_new - u) / dt

        new_state = DeformableState(
            state.reference_coords.copy(),
            u_new.reshape(-1, dim),
            v_new.reshape(-1, dim),
            a_new.reshape(-1, dim),
            state.time + dt,
        )
        self.last_report = report
        return new_state, report

    def compute_reactions(self, state, dirichlet, f_ext=None, report=None):
        """Reactions R = K u + M a - f_ext in the global frame (already
        consistent across ranks). Requires a converged solve."""
        rep = report if report is not None else self.last_report
        if rep is None or not rep.converged:
            raise FemError("compute_reactions requires a converged state")
        u = state.displacement.reshape(-1)
        r = self._consistent_matvec(self.K, u)
        if self.M is not None and not self.options.quasi_static:
            r = r + self._consistent_matvec(self.M, state.acceleration.reshape(-1))
        if f_ext is not None:
            r = r - np.asarray(f_ext, dtype=float).reshape(-1)
        return r.reshape(-1, self.dim)
