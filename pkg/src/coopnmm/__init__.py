"""Cooperative transport of a shared object by networked nonholonomic
mobile manipulators in the plane.

The package provides, per robotic agent: reduced-coordinate dynamics of a
differential-drive base carrying a 3-link planar arm, distributed estimation
of the per-robot desired trajectory over a directed communication graph,
an adaptive synchronization controller with internal-wrench regulation, and
a ground-truth simulation engine enforcing the rigid-grasp constraint with
Lagrange multipliers.
"""

from coopnmm.topology import Topology, LaplacianBundle, build_laplacian, has_spanning_tree, neighbors
from coopnmm.kinematics import RobotParams, forward_kinematics, h_matrix, true_theta_k

__all__ = [
    "Topology",
    "LaplacianBundle",
    "build_laplacian",
    "has_spanning_tree",
    "neighbors",
    "RobotParams",
    "forward_kinematics",
    "h_matrix",
    "true_theta_k",
]

__version__ = "0.1.0"
