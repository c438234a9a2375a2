"""Adaptive phase-space quantum dynamics on a periodized von Neumann lattice.

States live on a pseudospectral Fourier grid and are expanded over the
basis biorthogonal to a lattice of periodized Gaussians; the expansion
coefficients are phase-space local, so the active basis can be pruned to
the occupied region of phase space with a single amplitude cutoff.  The
package provides the basis machinery, symmetry-cached reduced Hamiltonians
with incremental inverse updates, an adaptive eigenmode solver, and a
Taylor propagator with a multi-factor step controller.
"""

from .errors import (ConfigError, ConvergenceError, DegenerateUpdateError,
                     IllConditionedBasisError, TimestepUnderflowError)
from .fourier_grid import (FourierGrid, build_grid, cardinal, collocate,
                           dirichlet_kernel, spectral_coefficients)
from .vn_basis import (BasisPair, VonNeumannLattice, analyze, balanced_sigma,
                       build_basis_pair, build_lattice, gaussian_column,
                       husimi_diagonal, synthesize, transform_operator)
from .reduced_space import (CellSet, ProductBasis, ReducedBasis, boundary_cells,
                            complementary_basis, coefficient_projector,
                            embed_coefficients, expand_cells, grow_inverse,
                            prune_cells, reduced_gaussians, restrict_basis,
                            shrink_inverse)
from .hamiltonian import (ElementCache, OperatorSpec, ReducedHamiltonian,
                          SopFit, SopTerm, apply_H_grid, apply_reduced,
                          assemble_reduced_hamiltonian, canonical_key,
                          dense_grid_hamiltonian, potfit2, reduced_via_gaussians)
from .solvers import (EigenResult, TiseConfig, lattice_potential,
                      reference_full_eig, seed_cells, solve_reduced_eig,
                      tise_adaptive)
from .dynamics import (ControlPulse, PropagationConfig, Trajectory,
                       expm_propagate, max_timestep, project_state, pulse_value,
                       taylor_step, tdse_adaptive)
from . import models

__version__ = "0.1.0"
