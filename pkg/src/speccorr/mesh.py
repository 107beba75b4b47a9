"""Triangle mesh representation and differential quantities.

The mesh is the discrete carrier for everything downstream: vertex area
masses (the lumped volume element), face normals, and the per-face linear
operator that takes scalar vertex data to constant face gradients.
"""

import numpy as np

__all__ = [
    "MeshError",
    "TriangleMesh",
    "vertex_masses",
    "total_area",
    "normals",
    "face_gradients",
    "FaceBasisGradients",
]

# Faces whose area falls below this fraction of the squared bounding-box
# diagonal are rejected as degenerate.
_DEGENERATE_AREA_FACTOR = 1e-12


class MeshError(ValueError):
    """Raised for malformed or invariant-violating meshes."""

    def __init__(self, message, element=None):
        if element is not None:
            message = f"{message} (element {element})"
        super().__init__(message)
        self.element = element


class TriangleMesh:
    """An oriented triangle mesh.

    Parameters
    ----------
    vertices : (n, 3) array_like
        Vertex positions.
    faces : (m, 3) array_like
        Vertex index triples with consistent outward orientation.
    attributes : dict, optional
        Per-vertex attribute channels, each of shape (n,) or (n, k).
        Used for colors / texture coordinates.
    validate : bool
        Check the mesh invariants on construction (default True).

    Notes
    -----
    Instances are immutable: the underlying arrays are marked read-only,
    so a mesh can be shared freely between threads.
    """

    def __init__(self, vertices, faces, attributes=None, validate=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (n, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError("faces must have shape (m, 3)")
        self.attributes = {}
        if attributes:
            for name, values in attributes.items():
                values = np.ascontiguousarray(values)
                if values.shape[0] != self.n_vertices:
                    raise MeshError(
                        f"attribute {name!r} has {values.shape[0]} entries, "
                        f"expected {self.n_vertices}")
                values.flags.writeable = False
                self.attributes[name] = values
        if validate:
            self._validate()
        self.vertices.flags.writeable = False
        self.faces.flags.writeable = False

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def _validate(self):
        f = self.faces
        if f.size:
            bad = np.nonzero((f < 0) | (f >= self.n_vertices))[0]
            if bad.size:
                raise MeshError("face index out of range", element=int(bad[0]))
            dup = np.nonzero(
                (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            )[0]
            if dup.size:
                raise MeshError("face has repeated vertex", element=int(dup[0]))
        if not np.isfinite(self.vertices).all():
            raise MeshError("non-finite vertex coordinate")

        areas = self.face_areas()
        bbox = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        diag2 = float(bbox @ bbox)
        if diag2 > 0.0 and areas.size:
            bad = np.nonzero(areas < _DEGENERATE_AREA_FACTOR * diag2)[0]
            if bad.size:
                raise MeshError("degenerate face", element=int(bad[0]))

        # Orientation consistency: every interior edge must appear exactly
        # once in each direction.
        he = self.halfedges()
        if he.size:
            keys = he[:, 0] * self.n_vertices + he[:, 1]
            uniq, counts = np.unique(keys, return_counts=True)
            if (counts > 1).any():
                dup_key = int(uniq[np.argmax(counts > 1)])
                u, v = divmod(dup_key, self.n_vertices)
                raise MeshError(
                    f"edge ({u}, {v}) appears twice in the same direction; "
                    "inconsistent orientation or non-manifold edge")

    def halfedges(self):
        """All directed edges, one row (u, v) per face corner."""
        f = self.faces
        return np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])

    def edges(self):
        """Undirected edges as sorted (u, v) pairs, deduplicated."""
        he = np.sort(self.halfedges(), axis=1)
        return np.unique(he, axis=0)

    def face_corners(self):
        """Vertex positions per face, shape (m, 3, 3)."""
        return self.vertices[self.faces]

    def face_cross(self):
        """Unnormalized face normals (cross product of edge vectors)."""
        c = self.face_corners()
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def with_attributes(self, attributes):
        """Copy of this mesh with the given attribute channels."""
        return TriangleMesh(self.vertices, self.faces,
                            attributes=attributes, validate=False)

    def is_connected(self):
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        e = self.edges()
        n = self.n_vertices
        adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        ncomp, _ = connected_components(adj, directed=False)
        return ncomp == 1

    def content_hash(self):
        """SHA-256 over vertex and face bytes; identifies the geometry."""
        import hashlib

        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.faces.tobytes())
        return h.hexdigest()

    def __repr__(self):
        return (f"TriangleMesh(n_vertices={self.n_vertices}, "
                f"n_faces={self.n_faces})")


def vertex_masses(mesh):
    """Barycentric lumped vertex areas: one third of each incident face.

    The masses discretize the volume (area) element; they are strictly
    positive for a valid mesh and sum to the total surface area.
    """
    areas = mesh.face_areas()
    masses = np.zeros(mesh.n_vertices)
    np.add.at(masses, mesh.faces.ravel(), np.repeat(areas / 3.0, 3))
    return masses


def total_area(mesh):
    """Sum of face areas."""
    return float(mesh.face_areas().sum())


def normals(mesh):
    """Per-face and per-vertex unit normals.

    Face normals follow the face winding order; vertex normals are the
    area-weighted average of incident face normals, renormalized.

    Returns
    -------
    face_normals : (m, 3) ndarray
    vertex_normals : (n, 3) ndarray
    """
    cross = mesh.face_cross()
    norm = np.linalg.norm(cross, axis=1)
    bad = np.nonzero(norm == 0.0)[0]
    if bad.size:
        raise MeshError("zero-length face normal", element=int(bad[0]))
    face_n = cross / norm[:, None]

    # cross already carries the 2*area weight
    vert_n = np.zeros((mesh.n_vertices, 3))
    for k in range(3):
        np.add.at(vert_n, mesh.faces[:, k], cross)
    vnorm = np.linalg.norm(vert_n, axis=1)
    vnorm[vnorm == 0.0] = 1.0
    return face_n, vert_n / vnorm[:, None]


class FaceBasisGradients:
    """Per-face linear maps from vertex values to constant face gradients.

    For face (i, j, k) the gradient of a scalar field f is the unique
    in-plane vector with grad f . (V_j - V_i) = f_j - f_i and
    grad f . (V_k - V_i) = f_k - f_i.
    """

    def __init__(self, operators, faces):
        self.operators = operators  # (m, 3, 3): gradient = op @ (f_i,f_j,f_k)
        self.faces = faces

    def apply(self, field):
        """Evaluate per-face gradients of one or more vertex fields.

        Parameters
        ----------
        field : (n,) or (n, c) ndarray

        Returns
        -------
        (m, 3) or (m, c, 3) ndarray of gradient vectors.
        """
        field = np.asarray(field, dtype=np.float64)
        corner = field[self.faces]  # (m, 3) or (m, 3, c)
        if field.ndim == 1:
            return np.einsum("mdk,mk->md", self.operators, corner)
        return np.einsum("mdk,mkc->mcd", self.operators, corner)


def face_gradients(mesh):
    """Build the hat-function gradient operator for every face."""
    corners = mesh.face_corners()
    cross = mesh.face_cross()
    norm2 = np.einsum("md,md->m", cross, cross)
    bad = np.nonzero(norm2 == 0.0)[0]
    if bad.size:
        raise MeshError("degenerate face", element=int(bad[0]))
    # Gradient of the hat function at corner p is n x e_p / (2A), with e_p
    # the opposite edge in winding order and n the unit normal.
    ops = np.empty((mesh.n_faces, 3, 3))
    n_unit = cross / np.sqrt(norm2)[:, None]
    two_area = np.sqrt(norm2)
    for p, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        edge = corners[:, b] - corners[:, a]
        ops[:, :, p] = np.cross(n_unit, edge) / two_area[:, None]
    return FaceBasisGradients(ops, mesh.faces)
