import numpy as np
import pytest

import _meshgen as mg
from speccorr import (SpectrumError, TriangleMesh, compute_spectrum,
                      cotangent_laplacian, face_gradients, load_spectrum,
                      save_spectrum, total_area, vertex_masses)
from speccorr.spectrum import MULTIPLET_GAP


def test_equilateral_triangle_weights():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]])
    w = cotangent_laplacian(TriangleMesh(verts, [[0, 1, 2]])).toarray()
    expected = -1.0 / (2 * np.sqrt(3))  # -cot(60 deg)/2
    off = w[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off, expected, rtol=1e-12)


def test_square_interior_edge_weight_zero():
    # two right isoceles triangles: the diagonal sees cot(90) on both sides
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    w = cotangent_laplacian(TriangleMesh(verts, [[0, 1, 2], [0, 2, 3]]))
    assert abs(w[0, 2]) < 1e-14


def test_row_sums_zero(bumpy):
    w = cotangent_laplacian(bumpy)
    np.testing.assert_allclose(np.asarray(w.sum(axis=1)).ravel(), 0.0,
                               atol=1e-10)


def test_symmetric_psd(bumpy):
    w = cotangent_laplacian(bumpy)
    assert abs(w - w.T).max() < 1e-12
    from scipy.sparse.linalg import eigsh
    lo = eigsh(w, k=1, which="SA", return_eigenvectors=False)[0]
    hi = eigsh(w, k=1, which="LA", return_eigenvectors=False)[0]
    assert lo >= -1e-8 * hi


def test_icosphere_harmonic_eigenvalues(icosphere4_basis):
    lam = icosphere4_basis.eigenvalues
    expected = [2, 2, 2, 6, 6, 6, 6, 6]
    np.testing.assert_allclose(lam[1:9], expected, rtol=0.02)
    assert lam[0] < 1e-6 * lam[1]


def test_grid_neumann_eigenvalues():
    grid = mg.grid_mesh(30)
    lam = compute_spectrum(grid, 6).eigenvalues[1:6]
    expected = np.pi ** 2 * np.array([1, 1, 2, 4, 4])
    np.testing.assert_allclose(lam, expected, rtol=0.02)


def test_constant_mode(bumpy_basis, bumpy):
    phi0 = bumpy_basis.functions[:, 0]
    vol = total_area(bumpy)
    np.testing.assert_allclose(phi0, 1.0 / np.sqrt(vol), rtol=1e-6)


def test_mass_orthonormality(bumpy_basis):
    gram = bumpy_basis.functions.T @ (bumpy_basis.functions
                                      * bumpy_basis.masses[:, None])
    np.testing.assert_allclose(gram, np.eye(gram.shape[0]), atol=1e-8)


def test_eigenvalues_sorted_nonnegative(bumpy_basis):
    lam = bumpy_basis.eigenvalues
    assert (np.diff(lam) >= 0).all()
    assert (lam >= 0).all()


def test_scaling_law(bumpy, bumpy_basis):
    scaled = TriangleMesh(2.0 * bumpy.vertices, bumpy.faces)
    sb = compute_spectrum(scaled, 10)
    np.testing.assert_allclose(sb.eigenvalues[1:],
                               bumpy_basis.eigenvalues[1:11] / 4.0, rtol=1e-6)
    np.testing.assert_allclose(sb.functions[:, 1:],
                               bumpy_basis.functions[:, 1:11] / 2.0, atol=1e-6)


def test_rigid_motion_invariance(bumpy, bumpy_basis):
    moved, truth = mg.rigid_permuted_copy(bumpy, seed=3)
    mb = compute_spectrum(moved, 10)
    np.testing.assert_allclose(mb.eigenvalues[1:],
                               bumpy_basis.eigenvalues[1:11], rtol=1e-8)


def test_disconnected_mesh_error():
    tri = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    verts = np.vstack([tri, tri + [5, 0, 0]])
    mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])
    with pytest.raises(SpectrumError, match="2 connected components"):
        compute_spectrum(mesh, 2)


def test_too_many_modes(bumpy):
    with pytest.raises(ValueError):
        compute_spectrum(bumpy, bumpy.n_vertices)


def test_sign_convention_deterministic(bumpy):
    a = compute_spectrum(bumpy, 8)
    b = compute_spectrum(bumpy, 8)
    np.testing.assert_array_equal(a.functions, b.functions)
    for k in range(a.functions.shape[1]):
        col = a.functions[:, k]
        first = col[np.abs(col) > 1e-8][0]
        assert first > 0


def test_greens_identity(bumpy, bumpy_basis):
    grads = face_gradients(bumpy)
    areas = bumpy.face_areas()
    for i in range(1, 21):
        g = grads.apply(bumpy_basis.functions[:, i])
        dirichlet = float(areas @ np.einsum("md,md->m", g, g))
        assert abs(dirichlet / bumpy_basis.eigenvalues[i] - 1.0) < 0.02


def test_multiplets(icosphere4_basis):
    groups = icosphere4_basis.multiplets(8)
    assert groups[0] == [1, 2, 3]
    assert groups[1] == [4, 5, 6, 7, 8]
    assert 0 < MULTIPLET_GAP < 1


def test_cache_roundtrip(tmp_path, bumpy, bumpy_basis):
    path = tmp_path / "b.spec"
    save_spectrum(bumpy_basis, bumpy, str(path))
    loaded = load_spectrum(str(path), bumpy)
    np.testing.assert_array_equal(loaded.eigenvalues, bumpy_basis.eigenvalues)
    np.testing.assert_array_equal(loaded.functions, bumpy_basis.functions)
    np.testing.assert_array_equal(loaded.masses, bumpy_basis.masses)


def test_cache_hash_mismatch(tmp_path, bumpy, bumpy_basis):
    path = tmp_path / "b.spec"
    save_spectrum(bumpy_basis, bumpy, str(path))
    other = TriangleMesh(bumpy.vertices * 1.01, bumpy.faces)
    with pytest.raises(SpectrumError, match="different mesh"):
        load_spectrum(str(path), other)


def test_cache_bad_magic(tmp_path, bumpy):
    path = tmp_path / "bad.spec"
    path.write_bytes(b"NOTSPEC1" + b"\x00" * 64)
    with pytest.raises(SpectrumError, match="magic"):
        load_spectrum(str(path), bumpy)


def test_cache_truncated(tmp_path, bumpy, bumpy_basis):
    path = tmp_path / "b.spec"
    save_spectrum(bumpy_basis, bumpy, str(path))
    data = path.read_bytes()
    path.write_bytes(data[:len(data) // 2])
    with pytest.raises(SpectrumError):
        load_spectrum(str(path), bumpy)


def test_total_volume(bumpy, bumpy_basis):
    np.testing.assert_allclose(bumpy_basis.total_volume(), total_area(bumpy),
                               rtol=1e-10)


def test_precomputed_masses(bumpy):
    masses = vertex_masses(bumpy)
    b = compute_spectrum(bumpy, 5, masses)
    np.testing.assert_array_equal(b.masses, masses)
