"""Adaptive eigenmode solver and dense reference diagonalization.

The stationary solver grows the active cell set iteratively:

    10  seed the basis at the potential minima with zero momentum
    20  solve the reduced generalized eigenproblem
    30  stop if every tracked mode is below the cutoff on the basis boundary
    40  prune cells below the cutoff (max over tracked modes)
    50  expand to all cells within the neighborhood radius, extend the
        reduced matrices incrementally
    60  repeat

No classical trajectories or action estimates enter; the occupied region is
discovered from the eigenvectors themselves.  The eigenproblem is solved in
the Hermitian generalized form

    (Btilde^H H Btilde) v = E (Btilde^H Btilde) v,

which avoids inverting the reduced overlap and yields vectors normalized to
unit physical norm.
"""

from __future__ import annotations

import dataclasses
import itertools

import numpy as np
import scipy.linalg

from .errors import ConvergenceError
from .hamiltonian import OperatorSpec, ReducedHamiltonian, dense_grid_hamiltonian
from .reduced_space import (CellSet, DEFAULT_RADIUS, ProductBasis, ReducedBasis,
                            boundary_mask, expand_cells, prune_cells)

_SIZE_LIMIT = 4096


@dataclasses.dataclass(frozen=True)
class TiseConfig:
    """Knobs of the adaptive eigenmode search."""

    zeta: float = 1e-6
    radius: float = DEFAULT_RADIUS
    n_modes: int = 1
    max_iterations: int = 200

    def __post_init__(self):
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if self.n_modes < 1:
            raise ValueError("n_modes must be at least 1")


@dataclasses.dataclass
class EigenResult:
    """Converged eigenmodes in reduced coordinates.

    ``eigenvectors[:, m]`` is mode ``m`` over ``final_cells`` in canonical
    order, normalized to unit physical norm.  ``history`` records
    (basis size, max boundary amplitude) per iteration.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    final_cells: CellSet
    iterations: int
    history: list
    reduced_basis: ReducedBasis
    hamiltonian: ReducedHamiltonian


def lattice_potential(spec: OperatorSpec, lattices) -> np.ndarray:
    """Potential sampled on the product of lattice position sublattices."""
    if not isinstance(lattices, (list, tuple)):
        lattices = (lattices,)
    # lattice site a sits at grid sample a*Np (= every (N/Nx)-th point)
    idx = [np.arange(lat.Nx) * lat.Np for lat in lattices]
    dims = [lat.Nx for lat in lattices]
    out = np.zeros(dims)
    for dof, lat in enumerate(lattices):
        v = spec.potentials[dof]
        if v is not None:
            shape = [1] * len(dims)
            shape[dof] = -1
            out = out + v[idx[dof]].reshape(shape)
    for t in spec.sop_terms:
        term = np.full(dims, t.coefficient)
        for dof, f in enumerate(t.factors):
            shape = [1] * len(dims)
            shape[dof] = -1
            term = term * f[idx[dof]].reshape(shape)
        out = out + term
    return out


def seed_cells(v_lattice: np.ndarray, lattices) -> CellSet:
    """Cells at strict local minima of the lattice-sampled potential, p = 0.

    Neighborhoods wrap periodically in every position axis.  A potential
    with no strict local minimum (monotonic, constant, or tied plateaus)
    falls back to the single global-minimum cell.
    """
    if not isinstance(lattices, (list, tuple)):
        lattices = (lattices,)
    v = np.asarray(v_lattice, dtype=float)
    if v.shape != tuple(lat.Nx for lat in lattices):
        raise ValueError("lattice potential shape mismatch")
    if not np.all(np.isfinite(v)):
        raise ValueError("lattice potential contains non-finite entries")
    d = len(lattices)
    minima_mask = np.ones_like(v, dtype=bool)
    for off in itertools.product((-1, 0, 1), repeat=d):
        if all(o == 0 for o in off):
            continue
        shifted = v
        for ax, o in enumerate(off):
            shifted = np.roll(shifted, o, axis=ax)
        minima_mask &= v < shifted
    sites = np.argwhere(minima_mask)
    if sites.size == 0:
        sites = np.argwhere(v == v.min())[:1]
    cells = []
    for site in sites:
        per_axis = []
        for dof, lat in enumerate(lattices):
            rows = _zero_momentum_rows(lat)
            per_axis.append([int(site[dof]) * lat.Np + b for b in rows])
        cells.extend(itertools.product(*per_axis))
    return CellSet(np.array(cells, dtype=np.intp), ndof=d)


def _zero_momentum_rows(lat):
    """Momentum row(s) at p = 0, or the two rows straddling zero."""
    n = lat.momentum_indices
    hit = np.where(n == 0)[0]
    if hit.size:
        return [int(hit[0])]
    below = np.where(n < 0)[0]
    above = np.where(n > 0)[0]
    rows = []
    if below.size:
        rows.append(int(below[-1]))
    if above.size:
        rows.append(int(above[0]))
    return rows


def solve_reduced_eig(hbb: np.ndarray, sinv_tilde: np.ndarray, n_modes: int):
    """Lowest generalized eigenpairs of ``hbb v = E sinv_tilde v``.

    Vectors are overlap-normalized: ``v^H sinv_tilde v = 1`` (unit physical
    norm).  Requires at least ``n_modes`` basis vectors.
    """
    n = hbb.shape[0]
    if n < n_modes:
        raise ValueError(f"basis of size {n} cannot yield {n_modes} modes")
    w, v = scipy.linalg.eigh(hbb, sinv_tilde, subset_by_index=[0, n_modes - 1])
    return w, v


def tise_adaptive(spec: OperatorSpec, product, config: TiseConfig,
                  seeds: CellSet | None = None) -> EigenResult:
    """Run the adaptive eigenmode algorithm to convergence.

    ``seeds`` defaults to the potential-minimum cells.  Raises
    :class:`~vngrid.errors.ConvergenceError` (with the iteration history
    attached) if the boundary amplitudes do not drop below the cutoff within
    the configured iteration budget.
    """
    if not isinstance(product, ProductBasis):
        product = ProductBasis(product)
    lattices = product.lattices
    if seeds is None:
        seeds = seed_cells(lattice_potential(spec, lattices), lattices)
    cells = seeds
    rb = ReducedBasis.create(product, cells)
    ham = ReducedHamiltonian(spec, product, cells)
    history = []
    for it in range(1, config.max_iterations + 1):
        n_solve = min(config.n_modes, rb.n)
        w, v = solve_reduced_eig(ham.Hbb, rb.Sinv_tilde, n_solve)
        bmask = boundary_mask(cells, lattices, config.radius)
        b_amp = float(np.abs(v[bmask, :]).max()) if bmask.any() else 0.0
        history.append((rb.n, b_amp))
        if rb.n >= config.n_modes and b_amp < config.zeta:
            return EigenResult(eigenvalues=w, eigenvectors=v, final_cells=cells,
                               iterations=it, history=history,
                               reduced_basis=rb, hamiltonian=ham)
        kept = prune_cells(cells, np.abs(v), config.zeta)
        new_cells = expand_cells(kept, lattices, config.radius)
        rb.update(new_cells)
        ham.update(new_cells)
        cells = new_cells
    raise ConvergenceError(
        f"eigenmode search did not converge in {config.max_iterations} "
        f"iterations (last boundary amplitude {history[-1][1]:.3e})",
        history=history)


def reference_full_eig(spec: OperatorSpec, n_values: int | None = None,
                       size_limit: int = _SIZE_LIMIT) -> np.ndarray:
    """Sorted eigenvalues of the dense full-grid Hamiltonian (oracle)."""
    h = dense_grid_hamiltonian(spec, size_limit=size_limit)
    w = scipy.linalg.eigh(h, eigvals_only=True)
    return w if n_values is None else w[:n_values]
