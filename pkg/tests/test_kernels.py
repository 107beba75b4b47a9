import numpy as np
import pytest

from speccorr import (KernelSpec, TriangleMesh, bandpass, compute_spectrum,
                      kernel_cross, matched_signature, qc_embedding,
                      qc_fields, spectral_embedding)
from speccorr.matching import SignPermutation

GPS = KernelSpec("gps")


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("wks")
    with pytest.raises(ValueError):
        KernelSpec("heat")
    with pytest.raises(ValueError):
        KernelSpec("heat", -1.0)
    w = KernelSpec("heat", 0.5).weights([1.0, 2.0, 3.0])
    assert (np.diff(w) < 0).all()


def test_gps_kernel_equals_direct_sum(bumpy_basis):
    emb = spectral_embedding(bumpy_basis, GPS)
    idx = np.array([0, 17, 201])
    direct = np.zeros((len(idx), len(idx)))
    for i in range(1, bumpy_basis.n_modes + 1):
        phi = bumpy_basis.functions[idx, i]
        direct += np.outer(phi, phi) / bumpy_basis.eigenvalues[i]
    np.testing.assert_allclose(emb[idx] @ emb[idx].T, direct, atol=1e-12)


def test_heat_embedding_decay(bumpy_basis):
    t = 5.0
    emb = spectral_embedding(bumpy_basis, KernelSpec("heat", t))
    lam = bumpy_basis.eigenvalues
    ratio = np.abs(emb[:, 1]).max() / np.abs(emb[:, 0]).max()
    phi_ratio = np.abs(bumpy_basis.functions[:, 2]).max() \
        / np.abs(bumpy_basis.functions[:, 1]).max()
    np.testing.assert_allclose(ratio / phi_ratio,
                               np.exp(-(lam[2] - lam[1]) * t / 2), rtol=1e-10)


def test_gps_scale_invariance(bumpy, bumpy_basis):
    scaled = compute_spectrum(TriangleMesh(2 * bumpy.vertices, bumpy.faces),
                              bumpy_basis.n_modes)
    k0 = spectral_embedding(bumpy_basis, GPS)
    k1 = spectral_embedding(scaled, GPS)
    m0 = k0[:100] @ k0[:100].T
    m1 = k1[:100] @ k1[:100].T
    assert np.abs(m1 - m0).max() < 1e-5 * np.abs(m0).max()
    np.testing.assert_array_equal(np.argmax(m0, axis=1), np.argmax(m1, axis=1))


def test_kernel_cross_bruteforce(bumpy_basis):
    marks = np.array([3, 99, 500])
    k = kernel_cross(bumpy_basis, bumpy_basis, marks, GPS)
    assert k.shape == (bumpy_basis.n_vertices, 3)
    lam = bumpy_basis.eigenvalues[1:]
    phi = bumpy_basis.functions[:, 1:]
    brute = (phi / lam) @ phi[marks].T
    np.testing.assert_allclose(k, brute, atol=1e-12)
    # symmetry and positive diagonal
    np.testing.assert_allclose(k[marks], k[marks].T, atol=1e-12)
    assert (np.diag(k[marks]) > 0).all()


def test_kernel_cross_empty_landmarks(bumpy_basis):
    with pytest.raises(ValueError):
        kernel_cross(bumpy_basis, bumpy_basis, [], GPS)


def test_qc_fields_structure(bumpy, bumpy_basis):
    f = qc_fields(bumpy_basis, bumpy, n0=6)
    assert f.omega.shape == (bumpy.n_vertices, 6, 6)
    assert (f.omega[:, range(6), range(6)] >= 0).all()
    np.testing.assert_allclose(f.omega, f.omega.transpose(0, 2, 1), atol=1e-12)
    np.testing.assert_allclose(f.nu, -f.nu.transpose(0, 2, 1), atol=1e-12)
    np.testing.assert_allclose(f.nu[:, range(6), range(6)], 0.0, atol=1e-14)


def test_qc_fields_scaling_law(bumpy, bumpy_basis):
    # omega and nu scale as alpha^-2; only the J_t embedding is invariant
    scaled_mesh = TriangleMesh(2 * bumpy.vertices, bumpy.faces)
    scaled = compute_spectrum(scaled_mesh, 10)
    f0 = qc_fields(bumpy_basis, bumpy, n0=6)
    f1 = qc_fields(scaled, scaled_mesh, n0=6)
    assert np.abs(4 * f1.omega - f0.omega).max() \
        < 1e-4 * np.abs(f0.omega).max()
    assert np.abs(4 * f1.nu - f0.nu).max() < 1e-4 * np.abs(f0.nu).max()


def test_qc_fields_signperm_action(bumpy, bumpy_basis):
    base = qc_fields(bumpy_basis, bumpy, n0=4)
    signs = np.array([1.0, -1.0, 1.0, -1.0])
    sp = SignPermutation(np.arange(4), signs)
    flipped = qc_fields(bumpy_basis, bumpy, n0=4, signperm=sp)
    outer = np.outer(signs, signs)
    np.testing.assert_allclose(flipped.omega, base.omega * outer, atol=1e-12)
    np.testing.assert_allclose(flipped.nu, base.nu * outer, atol=1e-12)


def test_distortion_features_double_sum(bumpy, bumpy_basis):
    f = qc_fields(bumpy_basis, bumpy, n0=5)
    feats = f.distortion_features()
    a, b = 10, 400
    direct = ((f.omega[a] - f.omega[b]) ** 2).sum() \
        + ((f.nu[a] - f.nu[b]) ** 2).sum()
    via_rows = ((feats[a] - feats[b]) ** 2).sum()
    np.testing.assert_allclose(via_rows, direct, rtol=1e-12)


def test_qc_embedding_scale_invariance(bumpy, bumpy_basis):
    scaled_mesh = TriangleMesh(2 * bumpy.vertices, bumpy.faces)
    scaled = compute_spectrum(scaled_mesh, 10)
    t = 0.3
    j0 = qc_embedding(bumpy_basis, qc_fields(bumpy_basis, bumpy, n0=6), t)
    j1 = qc_embedding(scaled, qc_fields(scaled, scaled_mesh, n0=6), 4 * t)
    assert np.abs(j1 - j0).max() < 1e-4 * np.abs(j0).max()


def test_qc_embedding_separates_points(bumpy, bumpy_basis, rng):
    j = qc_embedding(bumpy_basis, qc_fields(bumpy_basis, bumpy, n0=6), 0.2)
    a = rng.integers(0, bumpy.n_vertices, 1000)
    b = rng.integers(0, bumpy.n_vertices, 1000)
    keep = a != b
    d = np.linalg.norm(j[a[keep]] - j[b[keep]], axis=1)
    assert d.min() > 1e-9


def test_bandpass_normalized(bumpy_basis):
    g = bandpass(bumpy_basis, 0.1)
    norm = np.sqrt((g ** 2) @ bumpy_basis.masses)
    np.testing.assert_allclose(norm, 1.0, atol=1e-8)
    assert (g >= 0).all()


def test_bandpass_bad_time(bumpy_basis):
    with pytest.raises(ValueError):
        bandpass(bumpy_basis, 0.0)


def test_bandpass_constant_on_sphere(icosphere4_basis):
    g = bandpass(icosphere4_basis, 1.0 / icosphere4_basis.eigenvalues[1])
    assert g.std() / g.mean() < 0.05


def test_signature_verbatim_with_no_bands(bumpy_basis):
    psi = matched_signature(bumpy_basis, n0=6, n_bands=0)
    np.testing.assert_array_equal(psi.values, bumpy_basis.functions[:, 1:7])


def test_signature_self_consistency(bumpy_basis):
    a = matched_signature(bumpy_basis, SignPermutation.identity(6))
    b = matched_signature(bumpy_basis)
    assert np.abs(a.values - b.values).max() < 1e-8
    assert a.values.shape[1] == 12


def test_signature_sign_action(bumpy_basis):
    signs = np.array([-1.0, 1, 1, 1, 1, 1])
    sp = SignPermutation(np.arange(6), signs)
    a = matched_signature(bumpy_basis)
    b = matched_signature(bumpy_basis, sp)
    np.testing.assert_allclose(b.values[:, 0], -a.values[:, 0], atol=1e-14)
    np.testing.assert_allclose(b.values[:, 1:], a.values[:, 1:], atol=1e-14)


def test_spectral_embedding_kernel_identity(bumpy_basis):
    emb = spectral_embedding(bumpy_basis, GPS)
    assert emb.shape == (bumpy_basis.n_vertices, bumpy_basis.n_modes)
