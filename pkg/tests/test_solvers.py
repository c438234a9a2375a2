import numpy as np
import pytest

from vngrid.errors import ConvergenceError
from vngrid.fourier_grid import build_grid
from vngrid.hamiltonian import OperatorSpec, ReducedHamiltonian
from vngrid.reduced_space import CellSet, ReducedBasis, boundary_cells
from vngrid.solvers import (EigenResult, TiseConfig, lattice_potential,
                            reference_full_eig, seed_cells, solve_reduced_eig,
                            tise_adaptive)


def test_seed_cells_double_well(dw_model):
    lat = dw_model.lattices[0]
    v_lat = lattice_potential(dw_model.spec, dw_model.lattices)
    seeds = seed_cells(v_lat, dw_model.lattices)
    assert len(seeds) == 2
    d = dw_model.params["d"]
    for (i,) in seeds:
        a, b = lat.cell_coords(i)
        assert lat.p_centers[b] == 0.0
        xc = lat.x_centers[a] - 0.5 * lat.grid.L
        assert min(abs(xc - d), abs(xc + d)) <= 0.5 * lat.dx_lat


def test_seed_cells_harmonic(ho_model):
    v_lat = lattice_potential(ho_model.spec, ho_model.lattices)
    seeds = seed_cells(v_lat, ho_model.lattices)
    assert len(seeds) == 1
    lat = ho_model.lattices[0]
    (i,) = next(iter(seeds))
    a, b = lat.cell_coords(i)
    assert abs(lat.x_centers[a] - 0.5 * lat.grid.L) <= 0.5 * lat.dx_lat
    assert lat.p_centers[b] == 0.0


def test_seed_cells_constant_potential_fallback(ho_model):
    lat = ho_model.lattices[0]
    v_lat = np.ones(lat.Nx)
    seeds = seed_cells(v_lat, ho_model.lattices)
    assert len(seeds) == 1


def test_solve_reduced_eig_harmonic_levels(ho_model):
    pair = ho_model.pairs[0]
    cells = CellSet(np.arange(pair.n)[:, None])
    rb = ReducedBasis.create(ho_model.product, cells)
    ham = ReducedHamiltonian(ho_model.spec, ho_model.product, cells)
    w, v = solve_reduced_eig(ham.Hbb, rb.Sinv_tilde, 6)
    np.testing.assert_allclose(w, np.arange(6) + 0.5, atol=1e-6)
    # vectors come back with unit physical norm
    for i in range(6):
        assert np.vdot(v[:, i], rb.Sinv_tilde @ v[:, i]).real == pytest.approx(1.0)


def test_solve_reduced_eig_single_cell_is_rayleigh_quotient(ho_model):
    cells = CellSet([[ho_model.lattices[0].cell_index(4, 7)]])
    rb = ReducedBasis.create(ho_model.product, cells)
    ham = ReducedHamiltonian(ho_model.spec, ho_model.product, cells)
    w, _ = solve_reduced_eig(ham.Hbb, rb.Sinv_tilde, 1)
    expect = ham.Hbb[0, 0].real / rb.Sinv_tilde[0, 0].real
    assert w[0] == pytest.approx(expect, rel=1e-12)


def test_solve_reduced_eig_requires_room():
    with pytest.raises(ValueError):
        solve_reduced_eig(np.eye(2), np.eye(2), 3)


def test_adaptive_matches_dense_oracle(dw_model, dw_dense):
    res = tise_adaptive(dw_model.spec, dw_model.product,
                        TiseConfig(zeta=1e-6, n_modes=8))
    assert isinstance(res, EigenResult)
    assert np.abs(res.eigenvalues - dw_dense[:8]).max() <= 5e-6
    assert len(res.final_cells) < dw_model.pairs[0].n
    assert np.all(np.diff(res.eigenvalues) >= 0)
    # stopping contract: every tracked mode below the cutoff on the boundary
    bnd = boundary_cells(res.final_cells, dw_model.lattices)
    rows = [res.final_cells.position(c) for c in bnd]
    assert np.abs(res.eigenvectors[rows, :]).max() < 1e-6


def test_adaptive_ground_doublet(dw_model, dw_dense):
    res = tise_adaptive(dw_model.spec, dw_model.product,
                        TiseConfig(zeta=1e-6, n_modes=2))
    split = res.eigenvalues[1] - res.eigenvalues[0]
    split_dense = dw_dense[1] - dw_dense[0]
    # the barrier makes the true splitting far below double precision;
    # ordering and agreement with the oracle are the testable content
    assert split >= 0.0
    assert abs(split - split_dense) <= 5e-6


def test_adaptive_seed_independence(dw_model):
    cfg = TiseConfig(zeta=1e-6, n_modes=8)
    res_default = tise_adaptive(dw_model.spec, dw_model.product, cfg)
    lat = dw_model.lattices[0]
    v_lat = lattice_potential(dw_model.spec, dw_model.lattices)
    alt_seed = CellSet([[int(np.argmin(v_lat)) * lat.Np + lat.p_zero_index]])
    res_alt = tise_adaptive(dw_model.spec, dw_model.product, cfg, seeds=alt_seed)
    n0, n1 = len(res_default.final_cells), len(res_alt.final_cells)
    assert abs(n0 - n1) <= 0.1 * n0
    assert np.abs(res_default.eigenvalues - res_alt.eigenvalues).max() < 1e-8


def test_adaptive_history_and_nonconvergence(dw_model):
    with pytest.raises(ConvergenceError) as err:
        tise_adaptive(dw_model.spec, dw_model.product,
                      TiseConfig(zeta=1e-6, n_modes=8, max_iterations=3))
    assert len(err.value.history) == 3
    assert err.value.history[-1][0] > err.value.history[0][0]


def test_reference_full_eig_free_particle():
    g = build_grid(10.0, 32)
    spec = OperatorSpec.build((g,))
    w = reference_full_eig(spec)
    np.testing.assert_allclose(w, np.sort(g.fft_wavenumbers() ** 2 / 2.0),
                               atol=1e-12)


def test_reference_full_eig_harmonic(ho_model):
    w = reference_full_eig(ho_model.spec, 6)
    np.testing.assert_allclose(w, np.arange(6) + 0.5, atol=1e-8)


def test_reference_full_eig_size_guard():
    g = build_grid(10.0, 128)
    with pytest.raises(ValueError):
        reference_full_eig(OperatorSpec.build((g, g)))


def test_adaptive_helium_ground_state(he_model, he_dense):
    res = tise_adaptive(he_model.spec, he_model.product,
                        TiseConfig(zeta=1e-5, n_modes=1))
    assert abs(res.eigenvalues[0] - he_dense[0]) <= 1e-5
    assert len(res.final_cells) < he_model.product.n_cells
