"""Named invariant checks, runnable as a suite (CLI ``validate`` command).

Each check covers one documented invariant of a module at desk sizes and
returns a short detail string; failures raise ``AssertionError`` with the
measured numbers.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np
import scipy.linalg

from . import models
from .fourier_grid import build_grid, cardinal, synthesize_spectral
from .vn_basis import analyze, build_basis_pair, build_lattice, transform_operator
from .reduced_space import (CellSet, ProductBasis, ReducedBasis,
                            complementary_basis, expand_cells,
                            reduced_gaussians, restrict_basis)
from .hamiltonian import ReducedHamiltonian, apply_reduced, potfit2
from .solvers import TiseConfig, reference_full_eig, solve_reduced_eig, tise_adaptive
from .dynamics import PropagationConfig, taylor_step


@dataclasses.dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def _healthy_pair(L=15.0, N=60, Nx=5, Np=12):
    return build_basis_pair(build_lattice(build_grid(L, N), Nx, Np))


# -- fourier_grid -----------------------------------------------------------

def check_cardinality(rng):
    worst = 0.0
    for N in (16, 64, 256):
        g = build_grid(10.0, N)
        for m in rng.choice(N, size=6, replace=False):
            vals = cardinal(g, int(m), g.sample_points)
            ref = np.zeros(N)
            ref[m] = 1.0
            worst = max(worst, np.abs(vals - ref).max())
    assert worst < 1e-12, f"cardinal property violated by {worst:.2e}"
    return f"max deviation {worst:.1e}"


def check_bandlimited_reproduction(rng):
    g = build_grid(7.0, 32)
    coeffs = rng.normal(size=g.N) + 1j * rng.normal(size=g.N)
    x = rng.uniform(0, g.L, size=50)
    exact = synthesize_spectral(g, coeffs, x)
    samples = synthesize_spectral(g, coeffs, g.sample_points)
    interp = np.array([np.sum(samples * np.array(
        [cardinal(g, m, xi) for m in range(g.N)])) for xi in x])
    rel = np.abs(interp - exact).max() / np.abs(exact).max()
    assert rel <= 1e-10, f"cardinal interpolation error {rel:.2e}"
    return f"relative error {rel:.1e}"


def check_norm_preservation(rng):
    g = build_grid(5.0, 48)
    worst = 0.0
    for _ in range(5):
        c1 = rng.normal(size=g.N) + 1j * rng.normal(size=g.N)
        c2 = rng.normal(size=g.N) + 1j * rng.normal(size=g.N)
        f1 = synthesize_spectral(g, c1, g.sample_points)
        f2 = synthesize_spectral(g, c2, g.sample_points)
        lhs = np.vdot(c1, c2)
        rhs = g.dx * np.vdot(f1, f2)
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    assert worst <= 1e-12, f"Parseval mismatch {worst:.2e}"
    return f"max mismatch {worst:.1e}"


# -- vn_basis ---------------------------------------------------------------

def check_biorthogonality(rng):
    worst = 0.0
    for L, N, nx, npp in ((6.0, 16, 16, 1), (12.0, 64, 64, 1), (80.0, 160, 5, 32)):
        pair = build_basis_pair(build_lattice(build_grid(L, N), nx, npp))
        eye = np.eye(N)
        worst = max(worst,
                    np.abs(pair.G.conj().T @ pair.B - eye).max(),
                    np.abs(pair.B @ pair.G.conj().T - eye).max(),
                    np.abs(pair.S @ pair.Sinv - eye).max(),
                    np.abs(pair.B @ pair.S - pair.G).max())
    assert worst <= 1e-9, f"pair identity violated by {worst:.2e}"
    return f"max identity defect {worst:.1e}"


def check_spectrum_preservation(rng):
    pair = _healthy_pair(10.0, 20, 4, 5)
    n = pair.n
    h = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = 0.5 * (h + h.conj().T)
    ref = np.sort(scipy.linalg.eigvalsh(h))
    got = np.sort(scipy.linalg.eigvals(transform_operator(pair, h)).real)
    dev = np.abs(ref - got).max()
    assert dev <= 1e-8, f"similarity spectrum deviation {dev:.2e}"
    return f"max eigenvalue deviation {dev:.1e}"


def check_sparsity_direction(rng):
    pair = _healthy_pair()
    g = pair.grid
    psi = models.coherent_state(g, 0.4 * pair.lattice.dx_lat, 0.0,
                                pair.lattice.sigma_x)
    local = analyze(pair, psi)
    nonlocal_ = pair.B.conj().T @ psi * np.sqrt(g.dx)
    n_local = int(np.sum(np.abs(local) > 1e-6))
    n_nonlocal = int(np.sum(np.abs(nonlocal_) > 1e-6))
    assert n_local < n_nonlocal, (
        f"localized-bra coefficients not sparser: {n_local} >= {n_nonlocal}")
    return f"{n_local} vs {n_nonlocal} significant coefficients"


# -- reduced_space ----------------------------------------------------------

def check_incremental_inverse(rng):
    pair = _healthy_pair()
    product = ProductBasis(pair)
    all_idx = np.arange(pair.n)
    cells = CellSet(rng.choice(all_idx, size=24, replace=False)[:, None])
    rb = ReducedBasis.create(product, cells)
    worst = 0.0
    for _ in range(20):
        current = set(map(tuple, rb.cells.indices))
        others = [i for i in all_idx if (i,) not in current]
        add = rng.choice(others, size=min(3, len(others)), replace=False)
        keep = list(current)
        rng.shuffle(keep)
        drop = keep[:2] if len(keep) > 6 else []
        new = (current - set(drop)) | {(int(i),) for i in add}
        rb.update(CellSet(np.array(sorted(new))))
        fresh = np.linalg.inv(rb.Sinv_tilde)
        worst = max(worst, np.abs(rb.Stilde - fresh).max())
    assert worst <= 1e-8, f"maintained inverse drifted by {worst:.2e}"
    return f"max drift over 20 updates {worst:.1e}"


def check_projector(rng):
    pair = _healthy_pair(12.0, 48, 3, 16)
    cells = CellSet(rng.choice(pair.n, size=20, replace=False)[:, None])
    rb = restrict_basis(pair, cells)
    p = rb.Btilde @ reduced_gaussians(rb).conj().T
    idem = np.abs(p @ p - p).max()
    rank = int(np.sum(scipy.linalg.svdvals(p) > 1e-8))
    assert idem <= 1e-8 and rank == len(cells), (
        f"projector defect {idem:.2e}, rank {rank} != {len(cells)}")
    return f"idempotence defect {idem:.1e}, rank {rank}"


def check_deformation_identity(rng):
    pair = _healthy_pair(10.0, 20, 4, 5)
    cells = CellSet(rng.choice(pair.n, size=8, replace=False)[:, None])
    rb = restrict_basis(pair, cells)
    gt = reduced_gaussians(rb)
    gbar, bbar = complementary_basis(pair, cells)
    out = [i for i in range(pair.n) if (i,) not in cells]
    worst = 0.0
    for col, (i,) in enumerate(cells):
        overlaps = pair.S[out, i]
        expect = pair.G[:, i] - bbar @ overlaps
        worst = max(worst, np.abs(gt[:, col] - expect).max())
    assert worst <= 1e-8, f"deformation identity violated by {worst:.2e}"
    return f"max defect {worst:.1e}"


def check_orthogonal_decomposition(rng):
    pair = _healthy_pair()
    cells = CellSet(rng.choice(pair.n, size=18, replace=False)[:, None])
    rb = restrict_basis(pair, cells)
    p = rb.Btilde @ reduced_gaussians(rb).conj().T
    worst = 0.0
    for _ in range(5):
        psi = rng.normal(size=pair.n) + 1j * rng.normal(size=pair.n)
        a = p @ psi
        b = psi - a
        worst = max(worst, abs(np.vdot(a, b)) / np.vdot(psi, psi).real)
    assert worst <= 1e-8, f"subspace decomposition not orthogonal: {worst:.2e}"
    return f"max cross term {worst:.1e}"


# -- hamiltonian ------------------------------------------------------------

def _dw_reduced(rng, n_cells=60):
    m = models.double_well()
    cells = CellSet(np.sort(rng.choice(m.pairs[0].n, size=n_cells,
                                       replace=False))[:, None])
    rb = ReducedBasis.create(m.product, cells)
    ham = ReducedHamiltonian(m.spec, m.product, cells)
    return m, rb, ham


def check_h1_similarity(rng):
    _, rb, ham = _dw_reduced(rng)
    h1 = rb.Stilde @ ham.Hbb
    ev = scipy.linalg.eigvals(h1)
    rel = np.abs(ev.imag).max() / np.abs(ev).max()
    assert rel <= 1e-8, f"reduced generator eigenvalues not real: {rel:.2e}"
    return f"max relative imaginary part {rel:.1e}"


def check_generalized_equivalence(rng):
    _, rb, ham = _dw_reduced(rng, n_cells=40)
    w_gen, v = solve_reduced_eig(ham.Hbb, rb.Sinv_tilde, 6)
    h1 = rb.Stilde @ ham.Hbb
    w_h1 = np.sort(scipy.linalg.eigvals(h1).real)[:6]
    dev = np.abs(w_gen - w_h1).max()
    resid = max(np.linalg.norm(h1 @ v[:, i] - w_gen[i] * v[:, i])
                for i in range(6))
    assert dev <= 1e-8 and resid <= 1e-6, (
        f"generalized/direct mismatch {dev:.2e}, residual {resid:.2e}")
    return f"eigenvalue deviation {dev:.1e}"


def check_cache_audit(rng):
    _, rb, ham = _dw_reduced(rng)
    worst = max(c.audit(rng, 50) for c in ham.caches)
    assert worst <= 1e-12, f"cache audit deviation {worst:.2e}"
    return f"max audit deviation {worst:.1e}"


def check_sop_monotone(rng):
    g = build_grid(15.0, 60)
    xc = g.centered_points
    v = 1.0 / np.sqrt((xc[:, None] - xc[None, :]) ** 2 + 0.5)
    errs = []
    for tol in (1e-1, 1e-2, 1e-4, 1e-6):
        errs.append(potfit2(v, tol).max_abs_error)
    assert all(a >= b - 1e-15 for a, b in zip(errs, errs[1:])), (
        f"reconstruction error not monotone: {errs}")
    return "errors " + " >= ".join(f"{e:.1e}" for e in errs)


# -- solvers ----------------------------------------------------------------

def check_interlacing(rng):
    m = models.double_well()
    lat = m.lattices[0]
    seed = CellSet(np.array([[lat.cell_index(1, lat.p_zero_index)]]))
    cells = expand_cells(seed, lat)
    prev = None
    worst = 0.0
    for _ in range(6):
        rb = ReducedBasis.create(m.product, cells)
        ham = ReducedHamiltonian(m.spec, m.product, cells)
        k = min(4, rb.n)
        w, _ = solve_reduced_eig(ham.Hbb, rb.Sinv_tilde, k)
        if prev is not None:
            kk = min(len(prev), len(w))
            worst = max(worst, float((w[:kk] - prev[:kk]).max()))
        prev = w
        cells = expand_cells(cells, lat)
    assert worst <= 1e-10, f"Ritz values increased by {worst:.2e} under growth"
    return f"max increase {worst:.1e}"


def check_boundary_convergence(rng):
    m = models.double_well()
    res = tise_adaptive(m.spec, m.product, TiseConfig(zeta=1e-6, n_modes=8))
    amp = res.history[-1][1]
    assert amp < 1e-6, f"boundary amplitude {amp:.2e} at convergence"
    return f"converged, boundary amplitude {amp:.1e}, N~ {len(res.final_cells)}"


def check_full_set_equivalence(rng):
    m = models.double_well()
    pair = m.pairs[0]
    cells = CellSet(np.arange(pair.n)[:, None])
    rb = ReducedBasis.create(m.product, cells)
    ham = ReducedHamiltonian(m.spec, m.product, cells)
    w, _ = solve_reduced_eig(ham.Hbb, rb.Sinv_tilde, pair.n)
    ref = reference_full_eig(m.spec)
    dev = np.abs(w - ref).max()
    assert dev <= 1e-8, f"full-set reduction deviates from grid: {dev:.2e}"
    return f"max deviation {dev:.1e}"


# -- dynamics ---------------------------------------------------------------

def _fixed_reduced_system(rng, n_cells=48):
    m = models.harmonic()
    res = tise_adaptive(m.spec, m.product, TiseConfig(zeta=1e-4, n_modes=1))
    cells = res.final_cells
    if len(cells) > n_cells:
        order = np.argsort(-np.abs(res.eigenvectors[:, 0]))
        cells = CellSet(cells.indices[np.sort(order[:n_cells])])
    rb = ReducedBasis.create(m.product, cells)
    ham = ReducedHamiltonian(m.spec, m.product, cells)
    psi = rng.normal(size=len(cells)) + 1j * rng.normal(size=len(cells))
    psi /= rb.physical_norm(psi)
    return rb, ham, psi


def check_fixed_basis_unitarity(rng):
    rb, ham, psi = _fixed_reduced_system(rng)
    cfg = PropagationConfig(tau0=0.02)
    h1 = lambda v: apply_reduced(rb.Stilde, ham.Hbb, v)
    worst = 0.0
    for _ in range(200):
        step = taylor_step(h1, psi, 0.02, cfg)
        psi = step.psi
        worst = max(worst, abs(rb.physical_norm(psi) - 1.0) / 200)
    drift = abs(rb.physical_norm(psi) - 1.0) / 200
    assert drift <= 1e-10, f"per-step norm drift {drift:.2e}"
    return f"per-step drift {drift:.1e}"


def check_taylor_tail(rng):
    rb, ham, psi = _fixed_reduced_system(rng)
    cfg = PropagationConfig(tau0=0.02, max_taylor_terms=30)
    h1 = lambda v: apply_reduced(rb.Stilde, ham.Hbb, v)
    a = taylor_step(h1, psi, 0.02, cfg)
    cfg2 = PropagationConfig(tau0=0.02, max_taylor_terms=60)
    b = taylor_step(h1, psi, 0.02, cfg2)
    dev = np.linalg.norm(a.psi - b.psi)
    assert dev <= 10 * cfg.taylor_eps, f"doubling term budget moved result {dev:.2e}"
    return f"terms {a.terms}, budget-doubling delta {dev:.1e}"


def check_oracle_agreement(rng):
    rb, ham, psi = _fixed_reduced_system(rng, n_cells=48)
    cfg = PropagationConfig(tau0=0.02)
    h1_mat = rb.Stilde @ ham.Hbb
    h1 = lambda v: apply_reduced(rb.Stilde, ham.Hbb, v)
    psi_ref = psi.copy()
    worst = 0.0
    for _ in range(100):
        psi = taylor_step(h1, psi, 0.02, cfg).psi
        psi_ref = scipy.linalg.expm(-1j * 0.02 * h1_mat) @ psi_ref
        worst = max(worst, np.abs(psi - psi_ref).max())
    assert worst <= 1e-8, f"propagator deviates from dense exponential: {worst:.2e}"
    return f"max deviation over 100 steps {worst:.1e}"


CHECKS = [
    ("fourier_grid/cardinality", check_cardinality),
    ("fourier_grid/bandlimited-reproduction", check_bandlimited_reproduction),
    ("fourier_grid/norm-preservation", check_norm_preservation),
    ("vn_basis/biorthogonality-completeness", check_biorthogonality),
    ("vn_basis/spectrum-preservation", check_spectrum_preservation),
    ("vn_basis/sparsity-direction", check_sparsity_direction),
    ("reduced_space/incremental-vs-fresh", check_incremental_inverse),
    ("reduced_space/projector-idempotence-rank", check_projector),
    ("reduced_space/deformation-identity", check_deformation_identity),
    ("reduced_space/orthogonal-decomposition", check_orthogonal_decomposition),
    ("hamiltonian/similarity-real-spectrum", check_h1_similarity),
    ("hamiltonian/generalized-equivalence", check_generalized_equivalence),
    ("hamiltonian/cache-audit", check_cache_audit),
    ("hamiltonian/sop-monotone", check_sop_monotone),
    ("solvers/variational-interlacing", check_interlacing),
    ("solvers/boundary-convergence", check_boundary_convergence),
    ("solvers/full-set-equivalence", check_full_set_equivalence),
    ("dynamics/fixed-basis-unitarity", check_fixed_basis_unitarity),
    ("dynamics/taylor-tail", check_taylor_tail),
    ("dynamics/oracle-agreement", check_oracle_agreement),
]


def run_validation(seed: int = 1234, names=None):
    """Run the invariant suite; returns a list of :class:`CheckResult`."""
    results = []
    for name, fn in CHECKS:
        if names and name not in names:
            continue
        rng = np.random.default_rng(seed)
        start = time.perf_counter()
        try:
            detail = fn(rng)
            ok = True
        except AssertionError as exc:
            detail, ok = str(exc), False
        except Exception as exc:  # a crashed check is a failed check
            detail, ok = f"{type(exc).__name__}: {exc}", False
        results.append(CheckResult(name=name, ok=ok, detail=detail,
                                   seconds=time.perf_counter() - start))
    return results
