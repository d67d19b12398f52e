"""Energy-stable finite difference solver for the coupled
Allen-Cahn/Cahn-Hilliard system with logarithmic free energy.

Library layout:

- :mod:`acch.grid` structured 2D/3D meshes, ghost layers, stencil operators
- :mod:`acch.physics` constitutive functions and the entropy chord kernel
- :mod:`acch.scheme` the implicit energy-stable step: residual and Jacobian
- :mod:`acch.linalg` block sparse matrices, Schwarz preconditioners, GMRES
- :mod:`acch.newton` the safeguarded inexact Newton loop
- :mod:`acch.timestep` adaptive step-size control
- :mod:`acch.cli` configuration, drivers and file formats
"""

from .grid import BoundaryCondition, FaceField, Field, Grid
from .physics import Params, State

__all__ = [
    "BoundaryCondition",
    "FaceField",
    "Field",
    "Grid",
    "Params",
    "State",
]

__version__ = "0.1.0"
