"""Two-fluid compressible viscoelastic slab in Lagrangian coordinates."""
from .errors import (CapabilityError, ConfigurationError, DegeneracyError, DensityRangeError,
                     DivergenceError, FitDomainError, IllPosedError, ResolutionError,
                     ViscoslabError)
from .grid import Field, NormSpec, SlabGrid, build_grid, norm, norm_sq
from .kinematics import Fluid, MaterialParams, PressureLaw, deformation

__version__ = "0.1.0"
