"""Cotangent Laplace-Beltrami operator and its sparse eigendecomposition.

The stiffness matrix uses classical cotangent weights (no clamping of
obtuse-triangle negatives) with the barycentric lumped mass matrix, and
the generalized eigenproblem W phi = lambda M phi is solved by ARPACK in
shift-invert mode near zero.
"""

import hashlib
import struct

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import eigsh

from .mesh import MeshError, vertex_masses

__all__ = [
    "cotangent_laplacian",
    "compute_spectrum",
    "SpectralBasis",
    "SpectrumError",
    "save_spectrum",
    "load_spectrum",
]

_CACHE_MAGIC = b"SPCSPEC1"

# Relative eigenvalue gap below which consecutive eigenvalues are treated
# as one multiplet (their in-multiplet rotation is arbitrary).
MULTIPLET_GAP = 1e-3


class SpectrumError(RuntimeError):
    pass


class SpectralBasis:
    """Eigenpairs of the Laplace-Beltrami operator on one mesh.

    Attributes
    ----------
    eigenvalues : (N+1,) ndarray
        Nondecreasing, nonnegative; entry 0 belongs to the constant mode.
    functions : (n_vertices, N+1) ndarray
        Mass-orthonormal eigenfunctions, signs fixed so the first entry
        of significant magnitude is positive.
    masses : (n_vertices,) ndarray
        Lumped vertex areas used as the inner-product weights.
    """

    def __init__(self, eigenvalues, functions, masses):
        self.eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
        self.functions = np.asarray(functions, dtype=np.float64)
        self.masses = np.asarray(masses, dtype=np.float64)

    @property
    def n_vertices(self):
        return self.functions.shape[0]

    @property
    def n_modes(self):
        """Count of nonconstant eigenfunctions."""
        return self.functions.shape[1] - 1

    def multiplets(self, count=None):
        """Groups of nearly-equal nonzero eigenvalues.

        Returns a list of index lists over modes 1..count whose
        consecutive relative gaps fall below ``MULTIPLET_GAP``.
        """
        count = self.n_modes if count is None else count
        lam = self.eigenvalues[1:count + 1]
        groups, current = [], [1]
        for i in range(1, len(lam)):
            if (lam[i] - lam[i - 1]) < MULTIPLET_GAP * max(lam[i], 1e-300):
                current.append(i + 1)
            else:
                groups.append(current)
                current = [i + 1]
        groups.append(current)
        return groups

    def total_volume(self):
        return float(self.masses.sum())


def cotangent_laplacian(mesh):
    """Assemble the symmetric cotangent stiffness matrix.

    Off-diagonal entries are -(cot a + cot b)/2 over the faces sharing
    each edge; diagonals make the rows sum to zero. Boundary edges simply
    receive a single cotangent, which realizes the natural (Neumann)
    condition.
    """
    verts, faces = mesh.vertices, mesh.faces
    n = mesh.n_vertices

    ii, jj, ww = [], [], []
    for p, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        # corner p is opposite edge (a, b)
        u = verts[faces[:, a]] - verts[faces[:, p]]
        v = verts[faces[:, b]] - verts[faces[:, p]]
        cross = np.linalg.norm(np.cross(u, v), axis=1)
        if (cross == 0.0).any():
            raise MeshError("degenerate face in Laplacian assembly",
                            element=int(np.argmax(cross == 0.0)))
        cot = np.einsum("md,md->m", u, v) / cross
        ii.append(faces[:, a])
        jj.append(faces[:, b])
        ww.append(0.5 * cot)

    i = np.concatenate(ii)
    j = np.concatenate(jj)
    w = np.concatenate(ww)
    off = sparse.coo_matrix((-w, (i, j)), shape=(n, n))
    off = off + off.T
    lap = off + sparse.diags(-np.asarray(off.sum(axis=1)).ravel())
    return lap.tocsr()


def compute_spectrum(mesh, n_modes, masses=None):
    """Solve for the n_modes+1 smallest eigenpairs of the LBO.

    Parameters
    ----------
    mesh : TriangleMesh
        Must be connected.
    n_modes : int
        Number of nonconstant eigenfunctions to retain.
    masses : ndarray, optional
        Precomputed vertex masses.

    Returns
    -------
    SpectralBasis
    """
    n = mesh.n_vertices
    if n_modes + 1 > n:
        raise ValueError(f"n_modes+1={n_modes + 1} exceeds vertex count {n}")
    if masses is None:
        masses = vertex_masses(mesh)

    w = cotangent_laplacian(mesh)
    _check_connected(mesh)
    m = sparse.diags(masses)
    sigma = 1e-8 * w.diagonal().sum() / n
    v0 = np.full(n, 1.0 / np.sqrt(n))  # deterministic ARPACK start vector
    try:
        vals, vecs = eigsh(w, k=n_modes + 1, M=m, sigma=-sigma, which="LM",
                           v0=v0, maxiter=5000)
    except Exception as exc:  # ArpackNoConvergence and friends
        raise SpectrumError(f"eigensolver failed: {exc}") from exc

    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    # tiny negative leakage from shift-invert
    vals = np.where(np.abs(vals) < 1e-8 * max(vals[-1], 1.0), np.abs(vals), vals)

    # enforce exact M-orthonormality (ARPACK is close already)
    gram = vecs.T @ (vecs * masses[:, None])
    chol = np.linalg.cholesky(gram)
    vecs = np.linalg.solve(chol, vecs.T).T

    # deterministic sign: first significantly nonzero entry positive
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        nz = np.nonzero(np.abs(col) > 1e-8)[0]
        if nz.size and col[nz[0]] < 0:
            vecs[:, k] = -col

    if vals[1] <= 1e-12 * max(vals[-1], 1.0):
        raise SpectrumError("repeated near-zero eigenvalue; mesh is "
                            "effectively disconnected")
    return SpectralBasis(vals, vecs, masses)


def _check_connected(mesh):
    from scipy.sparse.csgraph import connected_components

    e = mesh.edges()
    adj = sparse.coo_matrix(
        (np.ones(len(e)), (e[:, 0], e[:, 1])),
        shape=(mesh.n_vertices, mesh.n_vertices))
    ncomp, _ = connected_components(adj, directed=False)
    if ncomp != 1:
        raise SpectrumError(f"mesh has {ncomp} connected components; "
                            "the spectrum requires a connected mesh")


def _mesh_hash(mesh):
    h = hashlib.sha256()
    h.update(mesh.vertices.tobytes())
    h.update(mesh.faces.tobytes())
    return h.digest()


def save_spectrum(basis, mesh, path):
    """Write a spectrum cache: header, eigenvalues, eigenfunction table."""
    n = basis.n_vertices
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<II", n, basis.n_modes))
        fh.write(_mesh_hash(mesh))
        fh.write(basis.eigenvalues.astype("<f8").tobytes())
        fh.write(basis.functions.astype("<f8").tobytes())
        fh.write(basis.masses.astype("<f8").tobytes())


def load_spectrum(path, mesh):
    """Load a cached spectrum; refuses a cache whose mesh hash mismatches.

    Raises
    ------
    SpectrumError
        On a corrupt cache or a hash mismatch.
    """
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(_CACHE_MAGIC))
            if magic != _CACHE_MAGIC:
                raise SpectrumError(f"bad spectrum cache magic in {path}")
            n, n_modes = struct.unpack("<II", fh.read(8))
            digest = fh.read(32)
            if digest != _mesh_hash(mesh):
                raise SpectrumError(f"spectrum cache {path} belongs to a "
                                    "different mesh")
            vals = np.frombuffer(fh.read(8 * (n_modes + 1)), dtype="<f8")
            funcs = np.frombuffer(fh.read(8 * n * (n_modes + 1)), dtype="<f8")
            masses = np.frombuffer(fh.read(8 * n), dtype="<f8")
        if vals.size != n_modes + 1 or funcs.size != n * (n_modes + 1) \
                or masses.size != n:
            raise SpectrumError(f"truncated spectrum cache {path}")
    except (OSError, struct.error, ValueError) as exc:
        raise SpectrumError(f"unreadable spectrum cache {path}: {exc}") from exc
    return SpectralBasis(vals.copy(), funcs.reshape(n, n_modes + 1).copy(),
                         masses.copy())
