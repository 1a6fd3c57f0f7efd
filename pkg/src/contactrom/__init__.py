"""2D finite-element toolkit for frictionless dynamic contact.

Node-to-segment contact constraints are handled through a dual nonlinear
complementarity formulation (sequential LCPs solved by Lemke pivoting) and
accelerated by a contact-preserving Craig-Bampton / Krylov reduction that
keeps the contact displacements and Lagrange multipliers exact.
"""

from contactrom.mesh import Mesh2D, DofPartition, ElementKind, CrackSpec, build_rect_mesh, load_mesh, save_mesh, partition_dofs
from contactrom.fem import Material, SystemMatrices, LoadSpec, assemble
from contactrom.contact import Segment, ContactPairing, ConstraintSet, assemble_constraints, evaluate_gap
from contactrom.lcp import LcpProblem, LcpSolution, lemke, lcp_oracle
from contactrom.ncp import OperatorBundle, StepHistory, NcpReport, solve_ncp
from contactrom.mor import ReducedModel, arnoldi_basis, craig_bampton, reduce_model
from contactrom.sim import Scenario, Trajectory, run

__version__ = "0.1.0"

__all__ = [
    "Mesh2D", "DofPartition", "ElementKind", "CrackSpec",
    "build_rect_mesh", "load_mesh", "save_mesh", "partition_dofs",
    "Material", "SystemMatrices", "LoadSpec", "assemble",
    "Segment", "ContactPairing", "ConstraintSet", "assemble_constraints", "evaluate_gap",
    "LcpProblem", "LcpSolution", "lemke", "lcp_oracle",
    "OperatorBundle", "StepHistory", "NcpReport", "solve_ncp",
    "ReducedModel", "arnoldi_basis", "craig_bampton", "reduce_model",
    "Scenario", "Trajectory", "run",
]
