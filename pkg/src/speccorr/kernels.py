"""Spectral kernels, embeddings and per-vertex signatures.

Everything here is a pure function of a SpectralBasis: GPS / heat
embeddings and their kernels, the quasi-conformal gradient fields, the
normalized bandpass filters, and the matched eigenbasis signature used
for candidate pruning.
"""

from dataclasses import dataclass

import numpy as np

from .mesh import face_gradients, normals

__all__ = [
    "KernelSpec",
    "spectral_embedding",
    "kernel_cross",
    "QuasiConformalFields",
    "qc_fields",
    "qc_embedding",
    "bandpass",
    "MatchedSignature",
    "matched_signature",
]


@dataclass(frozen=True)
class KernelSpec:
    """Spectral weight profile k(lambda) for a kernel.

    kind "gps" uses 1/lambda (scale invariant, integrates the heat kernel
    over all times); kind "heat" uses exp(-lambda*t) with t > 0.
    """

    kind: str = "gps"
    t: float = None

    def __post_init__(self):
        if self.kind not in ("gps", "heat"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "heat" and (self.t is None or self.t <= 0):
            raise ValueError("heat kernel requires t > 0")

    def weights(self, eigenvalues):
        """Evaluate k(lambda); strictly positive and decreasing."""
        lam = np.asarray(eigenvalues, dtype=np.float64)
        if self.kind == "gps":
            return 1.0 / lam
        return np.exp(-lam * self.t)


def spectral_embedding(basis, spec):
    """Per-vertex embedding rows (sqrt(k(lam_i)) * phi_i(x)), i >= 1.

    The kernel value K(x, x') is exactly the dot product of two rows.
    """
    lam = basis.eigenvalues[1:]
    if lam[0] < 1e-12:
        raise ValueError("lambda_1 is numerically zero; mesh appears "
                         "disconnected")
    return basis.functions[:, 1:] * np.sqrt(spec.weights(lam))


def kernel_cross(basis_a, basis_b, landmarks_b, spec):
    """Kernel columns K(., landmark) via the low-rank factorization.

    Rows run over the vertices of ``basis_a``; columns over the given
    landmark vertices of ``basis_b``. Exact up to the truncation at N.
    """
    landmarks_b = np.asarray(landmarks_b)
    if landmarks_b.size == 0:
        raise ValueError("empty landmark set")
    emb_a = spectral_embedding(basis_a, spec)
    emb_b = spectral_embedding(basis_b, spec)
    return emb_a @ emb_b[landmarks_b].T


class QuasiConformalFields:
    """Per-vertex tensors of eigenfunction-gradient products.

    omega[v, i, j] is the normalized dot product of the gradients of
    matched eigenfunctions i and j (symmetric); nu[v, i, j] is the
    normal-projected cross product (antisymmetric, zero diagonal).
    """

    def __init__(self, omega, nu):
        self.omega = omega
        self.nu = nu

    @property
    def n0(self):
        return self.omega.shape[1]

    def distortion_features(self):
        """Flatten (omega, nu) so squared row distances equal the full
        double sum over ordered index pairs (i, j)."""
        n0 = self.n0
        iu_d = np.diag_indices(n0)
        iu_o = np.triu_indices(n0, k=1)
        sq2 = np.sqrt(2.0)
        parts = [
            self.omega[:, iu_d[0], iu_d[1]],
            sq2 * self.omega[:, iu_o[0], iu_o[1]],
            sq2 * self.nu[:, iu_o[0], iu_o[1]],
        ]
        return np.concatenate(parts, axis=1)


def _matched_columns(basis, n0, signperm):
    """Signed, permuted eigenfunction columns and eigenvalues 1..n0."""
    funcs = basis.functions[:, 1:n0 + 1]
    lam = basis.eigenvalues[1:n0 + 1]
    if signperm is not None:
        funcs = basis.functions[:, 1:][:, signperm.perm[:n0]] \
            * signperm.signs[:n0]
        lam = basis.eigenvalues[1:][signperm.perm[:n0]]
    return funcs, lam


def qc_fields(basis, mesh, grads=None, n0=6, signperm=None):
    """Quasi-conformal omega / nu fields on mesh vertices.

    Per-face gradient products are normalized by sqrt(lam_i lam_j) and
    averaged to vertices with incident-face-area weights. ``signperm``
    (resolving Y's basis against X's) is applied before differentiation.
    """
    if grads is None:
        grads = face_gradients(mesh)
    funcs, lam = _matched_columns(basis, n0, signperm)
    if (lam <= 0).any():
        raise ValueError("nonpositive eigenvalue among matched modes")

    g = grads.apply(funcs)  # (m, n0, 3)
    face_n, _ = normals(mesh)
    scale = 1.0 / np.sqrt(np.outer(lam, lam))
    omega_f = np.einsum("mid,mjd->mij", g, g) * scale
    cross = np.cross(g[:, :, None, :], g[:, None, :, :])
    nu_f = np.einsum("md,mijd->mij", face_n, cross) * scale

    areas = mesh.face_areas()
    n = mesh.n_vertices
    omega = np.zeros((n, n0, n0))
    nu = np.zeros((n, n0, n0))
    wsum = np.zeros(n)
    for k in range(3):
        idx = mesh.faces[:, k]
        np.add.at(omega, idx, omega_f * areas[:, None, None])
        np.add.at(nu, idx, nu_f * areas[:, None, None])
        np.add.at(wsum, idx, areas)
    omega /= wsum[:, None, None]
    nu /= wsum[:, None, None]
    # exact (anti)symmetry can drift through the vertex averaging order
    omega = 0.5 * (omega + omega.transpose(0, 2, 1))
    nu = 0.5 * (nu - nu.transpose(0, 2, 1))
    return QuasiConformalFields(omega, nu)


def qc_embedding(basis, fields, t, n0=None):
    """Theoretical scale-invariant embedding: exponentially weighted
    omega entries joined with the weighted eigenfunctions.

    Entries are Vol * exp(-(lam_i+lam_j) t/2) * omega_ij and
    sqrt(Vol) * exp(-lam_i t/2) * phi_i. Invariant under scaling the
    mesh by alpha with t -> alpha^2 t.
    """
    n0 = fields.n0 if n0 is None else n0
    vol = basis.total_volume()
    lam = basis.eigenvalues[1:n0 + 1]
    w_pair = vol * np.exp(-(lam[:, None] + lam[None, :]) * t / 2.0)
    part_omega = (fields.omega[:, :n0, :n0] * w_pair).reshape(len(fields.omega), -1)
    w_single = np.sqrt(vol) * np.exp(-lam * t / 2.0)
    part_phi = basis.functions[:, 1:n0 + 1] * w_single
    return np.concatenate([part_omega, part_phi], axis=1)


def bandpass(basis, t):
    """Normalized bandpass filter sum(lam_i e^{-lam_i t} phi_i^2).

    The raw filter is divided by its L2(da) norm, so the output has unit
    mass-weighted norm.
    """
    if t <= 0:
        raise ValueError("bandpass time must be positive")
    lam = basis.eigenvalues[1:]
    raw = (basis.functions[:, 1:] ** 2) @ (lam * np.exp(-lam * t))
    norm = np.sqrt(raw ** 2 @ basis.masses)
    if norm == 0.0:
        raise ValueError("degenerate bandpass filter (zero norm)")
    return raw / norm


class MatchedSignature:
    """Per-vertex signature: matched eigenfunctions plus bandpass channels."""

    def __init__(self, values, n0, n_bands):
        self.values = values
        self.n0 = n0
        self.n_bands = n_bands


def matched_signature(basis, signperm=None, n0=6, n_bands=6):
    """Concatenate n0 matched eigenfunctions with n_bands log-spaced
    normalized bandpass responses on [1/(50 lam_1), 1/lam_1]."""
    funcs, _ = _matched_columns(basis, n0, signperm)
    channels = [funcs]
    if n_bands > 0:
        lam1 = basis.eigenvalues[1]
        times = np.geomspace(1.0 / (50.0 * lam1), 1.0 / lam1, n_bands)
        channels.append(np.column_stack([bandpass(basis, t) for t in times]))
    return MatchedSignature(np.concatenate(channels, axis=1), n0, n_bands)
