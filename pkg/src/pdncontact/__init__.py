"""Staggered rigid-to-deformable unilateral contact solver.

The contact constraints are enforced as partial Dirichlet-Neumann boundary
conditions: penetrated nodes are projected onto the rigid surface, rotated
into a surface-aligned frame, and pinned along the normal while sliding
freely in the tangent plane. The two bodies run as separate rank groups
coupled once per time step in a Gauss-Seidel sweep.
"""

__version__ = "0.1.0"
