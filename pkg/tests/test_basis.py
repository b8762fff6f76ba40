import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import Setup
from dualcem.basis import (CONSTRAINTS_OWN, assemble_coarse_space, build_global_basis,
                           build_local_basis, build_multiscale_basis, decay_slope, energy,
                           global_basis_matrix, measure_decay, oversampling_layers, solve_patch,
                           write_decay_csv)
from dualcem.grid import oversample
from dualcem.spectral import project_pi


@pytest.mark.parametrize("H,m", [(1 / 4, 3), (1 / 8, 4), (1 / 16, 6), (1 / 32, 7), (1 / 64, 9)])
def test_oversampling_formula(H, m):
    assert oversampling_layers(H) == m


def test_local_equals_global_when_patch_is_domain(desk):
    ops, aux = desk.ops, desk.aux
    for j in (0, 5, 15):
        g, _ = build_global_basis(ops, aux, j, 1)
        l, _ = build_local_basis(ops, aux, j, 1, 4)
        d = g - l
        assert energy(ops, d) <= 1e-16 * energy(ops, g)


def test_constraints_and_residuals(desk):
    ops, aux = desk.ops, desk.aux
    ps = solve_patch(ops, aux, 5, 1)
    assert ps.residual[0] <= 1e-9 and ps.residual[1] <= 1e-8
    patch = oversample(desk.hier, 5, 1)
    for k in range(aux.L[5]):
        psi = np.zeros(desk.hier.n_dofs)
        psi[ps.dofs] = ps.psi[k]
        c = project_pi(aux, psi)
        rows = aux.element_rows(patch.elements)
        expect = np.zeros(rows.size)
        expect[list(rows).index(aux.index(5, k))] = 1.0
        assert np.max(np.abs(c[rows] - expect)) <= 1e-8
        # zero outside the patch and on its boundary
        outside = np.setdiff1d(np.arange(desk.hier.n_dofs), ps.dofs)
        assert not np.any(psi[outside])


def test_energy_nonincreasing_in_m():
    s = Setup(4, 4, contrast=1e3, L=2)
    energies = [energy(s.ops, build_local_basis(s.ops, s.aux, 5, 0, m)[0]) for m in (1, 2, 3, 4)]
    assert all(b <= a * (1 + 1e-10) for a, b in zip(energies, energies[1:]))
    glob = energy(s.ops, build_global_basis(s.ops, s.aux, 5, 0)[0])
    assert glob <= energies[0] * (1 + 1e-10)


def test_global_basis_properties(desk, rng):
    ops, aux = desk.ops, desk.aux
    j, k = 6, 2
    psi, _ = build_global_basis(ops, aux, j, k)
    c = project_pi(aux, psi)
    e = np.zeros(aux.dim)
    e[aux.index(j, k)] = 1.0
    assert np.allclose(c, e, atol=1e-8)
    # a_Q(psi, w) = 0 for w with pi(w) = 0
    free = desk.hier.free_dofs
    for _ in range(10):
        w = np.zeros(desk.hier.n_dofs)
        w[free] = rng.normal(size=free.size)
        # remove the aux component through a few s-orthogonal corrections
        B = aux.B[:, free].toarray()
        wf = w[free]
        wf -= B.T @ np.linalg.solve(B @ B.T, B @ wf)
        w[free] = wf
        assert np.max(np.abs(project_pi(aux, w))) < 1e-9 * max(1, np.abs(w).max())
        val = psi @ (ops.AQ @ w)
        assert abs(val) <= 1e-8 * np.sqrt(energy(ops, psi) * energy(ops, w))


def test_global_matrix_matches_columns(desk):
    G = global_basis_matrix(desk.ops, desk.aux)
    col, _ = build_global_basis(desk.ops, desk.aux, 9, 0)
    assert np.allclose(G[:, desk.aux.index(9, 0)].toarray().ravel(), col, atol=1e-10)


def test_homogeneous_interior_bases_are_translates():
    s = Setup(6, 3, L=2)
    g = s.hier
    a, b = g.element_index(2, 2), g.element_index(3, 3)
    for k in range(2):
        pa, _ = build_local_basis(s.ops, s.aux, a, k, 1)
        pb, _ = build_local_basis(s.ops, s.aux, b, k, 1)
        n, r = g.n_nodes, g.refinement
        shift = r * (g.n_fine[0] + 1) + r  # one coarse element right and up
        for cont in range(2):
            va, vb = pa[cont * n:(cont + 1) * n], pb[cont * n:(cont + 1) * n]
            assert np.allclose(np.roll(va, shift), vb, atol=1e-8 * np.abs(va).max())


def test_multiscale_basis_assembly(desk):
    ms = build_multiscale_basis(desk.ops, desk.aux, 1, keep_patches=True)
    assert ms.dim == desk.aux.dim == 16 * 3
    Psi = ms.Psi.tocsc()
    for j in range(desk.hier.n_elements):
        allowed = set(ms.patches[j].interior_dofs)
        for k in range(desk.aux.L[j]):
            col = Psi[:, desk.aux.index(j, k)]
            assert set(col.indices) <= allowed
    G = (Psi.T @ desk.ops.AQ @ Psi).toarray()
    assert np.allclose(G, G.T, rtol=0, atol=1e-12 * np.abs(G).max())
    np.linalg.cholesky(0.5 * (G + G.T))
    assert ms.residuals[:, 0].max() <= 1e-9 and ms.residuals[:, 1].max() <= 1e-8


def test_shared_factorization_matches_single_solves(desk):
    ms = build_multiscale_basis(desk.ops, desk.aux, 3)  # several patches coincide
    for j in (0, 10):
        ps = solve_patch(desk.ops, desk.aux, j, 3)
        col = ms.column(j, 1)
        ref = np.zeros(desk.hier.n_dofs)
        ref[ps.dofs] = ps.psi[1]
        assert np.allclose(col, ref, atol=1e-10 * np.abs(ref).max())


def test_parallel_basis_identical(desk):
    a = build_multiscale_basis(desk.ops, desk.aux, 1)
    b = build_multiscale_basis(desk.ops, desk.aux, 1, workers=3)
    assert (a.Psi != b.Psi).nnz == 0


def test_own_constraint_mode(desk):
    ps = solve_patch(desk.ops, desk.aux, 5, 1, constraints=CONSTRAINTS_OWN)
    assert ps.constraint_rows.size == desk.aux.L[5]
    assert ps.residual[1] <= 1e-8
    ms = build_multiscale_basis(desk.ops, desk.aux, 1, constraints=CONSTRAINTS_OWN)
    assert ms.dim == desk.aux.dim


def test_m_must_be_positive(desk):
    with pytest.raises(ValueError):
        build_local_basis(desk.ops, desk.aux, 0, 0, 0)
    with pytest.raises(ValueError):
        build_multiscale_basis(desk.ops, desk.aux, 0)


def test_assemble_coarse_space_checks():
    Psi = assemble_coarse_space([(np.array([3, 1]), np.array([2.0, 1.0])),
                                 (np.array([0]), np.array([5.0]))], 4)
    assert Psi.shape == (4, 2)
    assert np.array_equal(Psi.toarray()[:, 0], [0, 1, 0, 2])
    with pytest.raises(ValueError, match="dimension mismatch"):
        assemble_coarse_space([(np.array([0, 1]), np.array([1.0]))], 4)
    assert assemble_coarse_space([], 3).shape == (3, 0)


def test_decay_table(tmp_path):
    s = Setup(4, 4, contrast=1e3, L=2)
    j = s.hier.element_index(1, 1)
    rows = measure_decay(s.ops, s.aux, j, 0, [1, 2, 3])
    diffs = [r["diff_energy"] for r in rows]
    assert all(b <= a * (1 + 1e-10) for a, b in zip(diffs, diffs[1:]))
    assert diffs[-1] <= 1e-8  # m = 3 covers the 4x4 grid from (1,1)
    assert decay_slope(rows[:2]) < 0
    write_decay_csv(rows, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().startswith("m,diff_energy,outside_energy,local_energy")
    with pytest.raises(ValueError):
        measure_decay(s.ops, s.aux, j, 0, [2, 1])


@given(j=st.integers(0, 15), k=st.integers(0, 2))
@settings(max_examples=10, deadline=None)
def test_localized_energy_at_least_global(desk, j, k):
    g, _ = build_global_basis(desk.ops, desk.aux, j, k)
    l, _ = build_local_basis(desk.ops, desk.aux, j, k, 1)
    assert energy(desk.ops, l) >= energy(desk.ops, g) * (1 - 1e-10)


def test_kkt_solve_falls_back_on_zero_pivots():
    from dualcem.basis import _kkt_solve
    K = sp.csc_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    x = _kkt_solve(K, np.array([[2.0], [3.0]]))
    assert np.allclose(x.ravel(), [3.0, 2.0])
