"""Localized orthogonal decomposition for high-contrast diffusion on the unit square."""

from .coefficient import (ElementCoefficient, Raster, RasterCoefficient, RasterError,
                          classify_quasi_monotone, estimate_poincare, load_raster,
                          make_blocks, make_channels, sample_coefficient, write_raster)
from .fem import (DofMap, assemble_load, assemble_stiffness, assemble_weighted_mass,
                  energy_error, solve_reference)
from .kernels import BACKEND
from .linalg import (RankDeficientError, SaddleSystem, SolverError, smallest_nonzero_eig,
                     solve_saddle, solve_spd)
from .lod import (assemble_twostep, build_basis, corrector_element_twostep, corrector_global,
                  corrector_local, decay_profile, solve_coarse)
from .mesh import MeshError, build_hierarchy, build_uniform, element_patch, nodal_patch
from .quasi_interp import (KINDS, build_aweighted, build_clement, build_local_proj,
                           build_operator, build_pu_clement, estimate_qi3, eta_1d, mu_min_1d,
                           verify_qi2)

__version__ = "0.1.0"
