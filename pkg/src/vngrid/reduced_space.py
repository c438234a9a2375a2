"""Reduced phase-space subspaces: active cell sets and their maintained inverses.

A state localized in phase space has significant overlap with only a few
lattice Gaussians, so its dual-basis coefficient vector is sparse.  The
reduced subspace keeps the dual vectors of an active cell set; the rest of
the Hilbert space is spanned by the complementary Gaussians and is exactly
orthogonal to it, so discarding sub-threshold coefficients is a controlled
projection.

For several degrees of freedom the lattice is the tensor product of the
per-axis lattices.  A cell is then a tuple of per-axis flat indices, and the
reduced overlap ``Btilde^H Btilde`` factorizes into per-axis entries, which
is how all reduced matrices are built here (no full-dimension basis matrix
is ever materialized outside small dense cross-checks).

The maintained inverse ``Stilde = (Btilde^H Btilde)^-1`` is updated
incrementally when cells are added or removed, using Schur-complement block
formulas that only ever invert matrices of the size of the change.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import scipy.linalg

from .errors import DegenerateUpdateError, IllConditionedBasisError
from .vn_basis import BasisPair, VonNeumannLattice

DEFAULT_RADIUS = math.sqrt(2.0) + 1e-9
_REFRESH_EVERY = 50  # incremental updates between from-scratch inversions


def _hermitize(m):
    return 0.5 * (m + m.conj().T)


# ---------------------------------------------------------------------------
# cell sets and lattice geometry
# ---------------------------------------------------------------------------

class CellSet:
    """Ordered set of lattice cells.

    Cells are tuples of per-axis flat lattice indices (one entry per degree
    of freedom); the canonical order is ascending lexicographic, which fixes
    the layout of every reduced vector and matrix.
    """

    __slots__ = ("indices", "_pos")

    def __init__(self, indices, ndof=None):
        arr = np.asarray(indices, dtype=np.intp)
        if arr.size == 0:
            arr = arr.reshape(0, ndof if ndof else 1)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError("cell indices must form a (n, ndof) array")
        if ndof is not None and arr.shape[1] != ndof:
            raise ValueError(f"expected {ndof} indices per cell, got {arr.shape[1]}")
        if arr.shape[0]:
            order = np.lexsort(arr.T[::-1])
            arr = arr[order]
            dup = np.all(arr[1:] == arr[:-1], axis=1)
            if np.any(dup):
                arr = arr[np.concatenate([[True], ~dup])]
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self.indices = arr
        self._pos = {tuple(row): i for i, row in enumerate(arr)}

    def __len__(self):
        return self.indices.shape[0]

    def __iter__(self):
        return (tuple(row) for row in self.indices)

    def __contains__(self, cell):
        return tuple(cell) in self._pos

    def __eq__(self, other):
        return isinstance(other, CellSet) and np.array_equal(self.indices, other.indices)

    def __repr__(self):
        return f"CellSet({len(self)} cells, ndof={self.ndof})"

    @property
    def ndof(self):
        return self.indices.shape[1]

    def position(self, cell):
        return self._pos[tuple(cell)]

    def union(self, other):
        return CellSet(np.vstack([self.indices, other.indices]), ndof=self.ndof)

    def difference(self, other):
        keep = [row for row in self.indices if tuple(row) not in other._pos]
        return CellSet(np.array(keep, dtype=np.intp).reshape(-1, self.ndof), ndof=self.ndof)

    def member_mask(self, other):
        """Boolean mask over ``self`` rows marking membership in ``other``."""
        return np.array([tuple(row) in other._pos for row in self.indices], dtype=bool)


def _shapes(lattices):
    if isinstance(lattices, VonNeumannLattice):
        lattices = (lattices,)
    return [(lat.Nx, lat.Np) for lat in lattices]


def _stencil(ndof, radius):
    """Integer offset vectors of Euclidean length <= radius in 2*ndof axes."""
    r = int(math.floor(radius))
    axes = [range(-r, r + 1)] * (2 * ndof)
    offs = [off for off in itertools.product(*axes)
            if sum(o * o for o in off) <= radius * radius]
    return np.array(offs, dtype=np.intp)


def _coords(cells: CellSet, shapes):
    """Per-cell (a_1, b_1, ..., a_d, b_d) lattice coordinates."""
    out = np.empty((len(cells), 2 * len(shapes)), dtype=np.intp)
    for k, (nx, np_) in enumerate(shapes):
        a, b = np.divmod(cells.indices[:, k], np_)
        out[:, 2 * k] = a
        out[:, 2 * k + 1] = b
    return out


def expand_cells(cells: CellSet, lattices, radius: float = DEFAULT_RADIUS) -> CellSet:
    """Union of ``cells`` with every lattice cell within ``radius``.

    Distances are Euclidean in integer lattice coordinates over all
    position/momentum axes; position axes wrap periodically, momentum axes
    clamp at the bandwidth truncation (no wrap, out-of-band offsets dropped).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    shapes = _shapes(lattices)
    if cells.ndof != len(shapes):
        raise ValueError("cell dimensionality does not match lattice count")
    offs = _stencil(len(shapes), radius)
    coords = _coords(cells, shapes)
    new = coords[:, None, :] + offs[None, :, :]          # (ncells, noffs, 2d)
    new = new.reshape(-1, 2 * len(shapes))
    keep = np.ones(new.shape[0], dtype=bool)
    flat = np.zeros((new.shape[0], len(shapes)), dtype=np.intp)
    for k, (nx, np_) in enumerate(shapes):
        a = np.mod(new[:, 2 * k], nx)
        b = new[:, 2 * k + 1]
        keep &= (b >= 0) & (b < np_)
        flat[:, k] = a * np_ + np.clip(b, 0, np_ - 1)
    return CellSet(flat[keep], ndof=len(shapes))


def boundary_mask(cells: CellSet, lattices, radius: float = DEFAULT_RADIUS) -> np.ndarray:
    """Boolean mask over ``cells`` marking boundary members.

    A cell is boundary if some position within ``radius`` (x wrapped, p
    clamped) is not a member; positions beyond the momentum band count as
    non-members, so cells on the bandwidth edge are always boundary cells
    and convergence there certifies that the band contains the state.
    """
    shapes = _shapes(lattices)
    d = len(shapes)
    if cells.ndof != d:
        raise ValueError("cell dimensionality does not match lattice count")
    offs = _stencil(d, radius)
    offs = offs[np.any(offs != 0, axis=1)]
    coords = _coords(cells, shapes)
    nbr = coords[:, None, :] + offs[None, :, :]          # (n, m, 2d)
    outside = np.zeros(nbr.shape[:2], dtype=bool)
    flat = np.zeros(nbr.shape[:2], dtype=np.intp)
    stride = 1
    for k in reversed(range(d)):
        nx, np_ = shapes[k]
        a = np.mod(nbr[:, :, 2 * k], nx)
        b = nbr[:, :, 2 * k + 1]
        outside |= (b < 0) | (b >= np_)
        flat += (a * np_ + np.clip(b, 0, np_ - 1)) * stride
        stride *= nx * np_
    occupied = np.zeros(stride, dtype=bool)
    own = np.zeros(len(cells), dtype=np.intp)
    s = 1
    for k in reversed(range(d)):
        nx, np_ = shapes[k]
        own += cells.indices[:, k] * s
        s *= nx * np_
    occupied[own] = True
    return np.any(outside | ~occupied[flat], axis=1)


def boundary_cells(cells: CellSet, lattices, radius: float = DEFAULT_RADIUS) -> CellSet:
    """Members of ``cells`` with at least one non-member within ``radius``."""
    mask = boundary_mask(cells, lattices, radius)
    return CellSet(cells.indices[mask], ndof=cells.ndof)


def prune_cells(cells: CellSet, amplitudes, zeta: float) -> CellSet:
    """Retain cells whose amplitude (max over tracked states) is >= zeta.

    ``amplitudes`` is (n_cells,) or (n_cells, n_states), aligned with the
    canonical cell order.  Never empties the set: if everything falls below
    the cutoff the single largest-amplitude cell is kept.
    """
    amp = np.abs(np.asarray(amplitudes))
    if amp.ndim == 2:
        amp = amp.max(axis=1)
    if amp.shape != (len(cells),):
        raise ValueError("amplitude vector is not aligned with the cell set")
    keep = amp >= zeta
    if not np.any(keep):
        keep[int(np.argmax(amp))] = True
    return CellSet(cells.indices[keep], ndof=cells.ndof)


def embed_coefficients(vec, old_cells: CellSet, new_cells: CellSet):
    """Carry a coefficient vector across a cell-set change.

    Returns ``(new_vec, dropped)`` where ``new_vec`` holds the old
    coefficients at surviving cells (zeros at fresh cells) and ``dropped``
    the coefficients of removed cells, for discarded-amplitude accounting.
    """
    vec = np.asarray(vec)
    new_vec = np.zeros(len(new_cells), dtype=vec.dtype)
    dropped = []
    for i, cell in enumerate(old_cells):
        if cell in new_cells:
            new_vec[new_cells.position(cell)] = vec[i]
        else:
            dropped.append(vec[i])
    return new_vec, np.asarray(dropped, dtype=vec.dtype)


# ---------------------------------------------------------------------------
# block-inverse updates
# ---------------------------------------------------------------------------

def grow_inverse(Ainv, C, D):
    """Inverse of ``[[A, C], [C^H, D]]`` given ``Ainv = A^-1``.

    Only the Schur complement ``D - C^H Ainv C`` (size of the added block)
    is factorized.  Raises :class:`DegenerateUpdateError` if it is not
    positive definite, which signals that the appended columns are (nearly)
    linearly dependent on the existing basis.
    """
    Ainv = np.asarray(Ainv)
    n = Ainv.shape[0]
    C = np.asarray(C).reshape(n, -1)
    m = C.shape[1]
    D = np.asarray(D).reshape(m, m)
    if m == 0:
        return Ainv.copy()
    AinvC = Ainv @ C
    schur = _hermitize(D - C.conj().T @ AinvC)
    try:
        cho = scipy.linalg.cho_factor(schur)
    except np.linalg.LinAlgError as exc:
        raise DegenerateUpdateError(
            f"Schur complement of {m} added cells is not positive definite") from exc
    F1 = scipy.linalg.cho_solve(cho, np.eye(m, dtype=complex))
    F1 = _hermitize(F1)
    F2 = AinvC @ F1
    out = np.empty((n + m, n + m), dtype=complex)
    out[:n, :n] = Ainv + F2 @ AinvC.conj().T
    out[:n, n:] = -F2
    out[n:, :n] = -F2.conj().T
    out[n:, n:] = F1
    return _hermitize(out)


def shrink_inverse(Zinv, keep):
    """Inverse of the retained principal block, from the full inverse only.

    ``keep`` is an integer count (keep the leading block) or an index array.
    With ``Zinv`` partitioned into kept/dropped blocks ``[[Ws, Wc], [Wc^H,
    Wd]]``, the retained inverse is ``Ws - Wc Wd^-1 Wc^H``.
    """
    Zinv = np.asarray(Zinv)
    n_tot = Zinv.shape[0]
    if np.isscalar(keep):
        keep_idx = np.arange(int(keep))
    else:
        keep_idx = np.asarray(keep, dtype=np.intp)
    drop_idx = np.setdiff1d(np.arange(n_tot), keep_idx)
    if drop_idx.size == 0:
        return Zinv[np.ix_(keep_idx, keep_idx)].copy()
    Ws = Zinv[np.ix_(keep_idx, keep_idx)]
    Wc = Zinv[np.ix_(keep_idx, drop_idx)]
    Wd = _hermitize(Zinv[np.ix_(drop_idx, drop_idx)])
    try:
        cho = scipy.linalg.cho_factor(Wd)
    except np.linalg.LinAlgError as exc:
        raise DegenerateUpdateError("dropped block of the inverse is singular") from exc
    return _hermitize(Ws - Wc @ scipy.linalg.cho_solve(cho, Wc.conj().T))


# ---------------------------------------------------------------------------
# product basis over several degrees of freedom
# ---------------------------------------------------------------------------

class ProductBasis:
    """Tensor product of per-axis biorthogonal pairs.

    Full-dimension basis vectors are Kronecker products of per-axis columns
    and are materialized lazily; overlaps factorize into per-axis entries.
    Passing the same :class:`~vngrid.vn_basis.BasisPair` object for several
    axes shares its element cache downstream, so symmetric interactions reuse
    each other's matrix elements.
    """

    def __init__(self, pairs):
        if isinstance(pairs, BasisPair):
            pairs = (pairs,)
        self.pairs = tuple(pairs)
        if not self.pairs:
            raise ValueError("at least one basis pair required")
        self.lattices = tuple(p.lattice for p in self.pairs)
        self.grids = tuple(p.grid for p in self.pairs)

    @property
    def ndof(self):
        return len(self.pairs)

    @property
    def n_cells(self):
        n = 1
        for p in self.pairs:
            n *= p.n
        return n

    @property
    def grid_size(self):
        n = 1
        for g in self.grids:
            n *= g.N
        return n

    def all_cells(self) -> CellSet:
        grids = np.meshgrid(*[np.arange(p.n) for p in self.pairs], indexing="ij")
        return CellSet(np.column_stack([g.ravel() for g in grids]), ndof=self.ndof)

    def overlap(self, rows: CellSet, cols: CellSet) -> np.ndarray:
        """Entries of ``Btilde^H Btilde`` between two cell lists."""
        out = np.ones((len(rows), len(cols)), dtype=complex)
        for k, pair in enumerate(self.pairs):
            out *= pair.Sinv[np.ix_(rows.indices[:, k], cols.indices[:, k])]
        return out

    def dual_column(self, cell) -> np.ndarray:
        """Weighted dual-basis vector of one cell (Kronecker product)."""
        col = self.pairs[0].B[:, cell[0]]
        for k in range(1, self.ndof):
            col = np.kron(col, self.pairs[k].B[:, cell[k]])
        return col

    def dual_columns(self, cells: CellSet) -> np.ndarray:
        """Weighted ``Btilde`` matrix (grid_size x n_cells); test-scale only."""
        out = np.empty((self.grid_size, len(cells)), dtype=complex)
        for j, cell in enumerate(cells):
            out[:, j] = self.dual_column(cell)
        return out

    def gaussian_coefficients(self, cells: CellSet, psi_weighted) -> np.ndarray:
        """Overlaps ``<g_cell|psi>`` of a weighted grid vector, per cell."""
        psi = np.asarray(psi_weighted, dtype=complex).reshape(
            [g.N for g in self.grids])
        out = np.empty(len(cells), dtype=complex)
        for j, cell in enumerate(cells):
            v = psi
            for k, pair in enumerate(self.pairs):
                v = np.tensordot(pair.G[:, cell[k]].conj(), v, axes=(0, 0))
            out[j] = v
        return out

    def reconstruct(self, cells: CellSet, coeffs) -> np.ndarray:
        """Weighted grid vector ``sum_j c_j b_cell_j`` (flattened)."""
        coeffs = np.asarray(coeffs, dtype=complex)
        psi = np.zeros([g.N for g in self.grids], dtype=complex)
        for j, cell in enumerate(cells):
            term = self.pairs[0].B[:, cell[0]] * coeffs[j]
            for k in range(1, self.ndof):
                term = np.multiply.outer(term, self.pairs[k].B[:, cell[k]])
            psi += term
        return psi.ravel()


# ---------------------------------------------------------------------------
# reduced basis with maintained inverse
# ---------------------------------------------------------------------------

class ReducedBasis:
    """Active cells with ``Sinv_tilde = Btilde^H Btilde`` and maintained inverse.

    Mutated only between solver phases (single writer); the overlap entries
    are exact per-axis products, the inverse is carried through the block
    updates and refreshed from scratch every 50 updates to bound drift.
    """

    def __init__(self, product: ProductBasis, cells: CellSet,
                 Sinv_tilde: np.ndarray, Stilde: np.ndarray):
        self.product = product
        self.cells = cells
        self.Sinv_tilde = Sinv_tilde
        self.Stilde = Stilde
        self._updates_since_refresh = 0

    @classmethod
    def create(cls, product: ProductBasis, cells: CellSet) -> "ReducedBasis":
        if isinstance(product, BasisPair):
            product = ProductBasis(product)
        sinv = _hermitize(product.overlap(cells, cells))
        return cls(product, cells, sinv, _fresh_inverse(sinv, len(cells)))

    @property
    def n(self):
        return len(self.cells)

    @property
    def Btilde(self) -> np.ndarray:
        """Materialized weighted dual columns (test-scale only)."""
        return self.product.dual_columns(self.cells)

    def physical_norm(self, coeffs) -> float:
        """Norm of the represented state: sqrt(c^H (Btilde^H Btilde) c)."""
        coeffs = np.asarray(coeffs, dtype=complex)
        return float(np.sqrt(max(0.0, np.real(
            np.vdot(coeffs, self.Sinv_tilde @ coeffs)))))

    def update(self, new_cells: CellSet):
        """Switch to ``new_cells``, updating the inverse incrementally.

        Returns ``(added, removed)`` cell sets.  Removal uses only blocks of
        the current inverse; addition factorizes only the added block.
        """
        old = self.cells
        removed = old.difference(new_cells)
        added = new_cells.difference(old)
        if len(removed) == 0 and len(added) == 0:
            self.cells = new_cells
            return added, removed
        keep_mask = old.member_mask(new_cells)
        kept = CellSet(old.indices[keep_mask], ndof=old.ndof)
        if len(kept) == 0 and len(added) == 0:
            raise DegenerateUpdateError("cannot reduce to an empty cell set")

        stilde = self.Stilde
        if len(removed):
            stilde = shrink_inverse(stilde, np.where(keep_mask)[0])
        if len(added):
            c_blk = self.product.overlap(kept, added)
            d_blk = _hermitize(self.product.overlap(added, added))
            grown = grow_inverse(stilde, c_blk, d_blk)
            stacked = np.vstack([kept.indices, added.indices])
            perm = np.lexsort(stacked.T[::-1])
            stilde = grown[np.ix_(perm, perm)]

        self.cells = new_cells
        self.Sinv_tilde = _hermitize(self.product.overlap(new_cells, new_cells))
        self._updates_since_refresh += 1
        if self._updates_since_refresh >= _REFRESH_EVERY:
            self.Stilde = _fresh_inverse(self.Sinv_tilde, len(new_cells))
            self._updates_since_refresh = 0
        else:
            self.Stilde = _hermitize(stilde)
        return added, removed

    def refresh(self):
        """Recompute the maintained inverse from scratch."""
        self.Stilde = _fresh_inverse(self.Sinv_tilde, self.n)
        self._updates_since_refresh = 0


def _fresh_inverse(sinv: np.ndarray, n: int, cond_limit: float = 1e12) -> np.ndarray:
    cond = float(np.linalg.cond(sinv)) if n else 1.0
    if not np.isfinite(cond) or cond > cond_limit:
        raise IllConditionedBasisError(
            f"reduced overlap of {n} cells is ill-conditioned (cond ~ {cond:.2e})",
            cond=cond, size=n)
    cho = scipy.linalg.cho_factor(sinv)
    return _hermitize(scipy.linalg.cho_solve(cho, np.eye(n, dtype=complex)))


# ---------------------------------------------------------------------------
# dense single-axis constructions (cross-checks and small systems)
# ---------------------------------------------------------------------------

def restrict_basis(pair: BasisPair, cells: CellSet) -> ReducedBasis:
    """Reduced basis over the columns of one pair selected by ``cells``."""
    return ReducedBasis.create(ProductBasis(pair), cells)


def reduced_gaussians(rb: ReducedBasis) -> np.ndarray:
    """Biorthogonal partners of the retained dual vectors.

    ``Gtilde = Btilde (Btilde^H Btilde)^-1``: away from the subspace
    boundary these are nearly the original Gaussians; near it they deform by
    subtraction of complementary components.
    """
    return rb.Btilde @ rb.Stilde


def complementary_basis(pair: BasisPair, cells: CellSet):
    """Bases ``(Gbar, Bbar)`` of the orthogonal complement.

    The complement is spanned by the Gaussians outside the active set; those
    are exactly orthogonal to the retained dual vectors.  ``Bbar`` is the
    right pseudo-inverse family ``Gbar (Gbar^H Gbar)^-1``.
    """
    out = [i for i in range(pair.n) if (i,) not in cells]
    if not out:
        raise ValueError("complement of the full cell set is empty")
    Gbar = pair.G[:, out]
    gram = _hermitize(Gbar.conj().T @ Gbar)
    cho = scipy.linalg.cho_factor(gram)
    Bbar = Gbar @ scipy.linalg.cho_solve(cho, np.eye(len(out), dtype=complex))
    return Gbar, Bbar


def selection_matrix(n: int, cells: CellSet) -> np.ndarray:
    """0/1 matrix R with ``Btilde = B R``."""
    idx = cells.indices[:, 0]
    R = np.zeros((n, len(idx)))
    R[idx, np.arange(len(idx))] = 1.0
    return R


def coefficient_projector(rb: ReducedBasis, pair: BasisPair) -> np.ndarray:
    """Projector onto the reduced subspace in dual-coefficient coordinates.

    ``P = R Stilde R^H Sinv``; idempotent of rank n_active, and equal to the
    similarity transform of ``Btilde Gtilde^H`` into coefficient space.
    """
    R = selection_matrix(pair.n, rb.cells)
    return R @ rb.Stilde @ R.conj().T @ pair.Sinv
