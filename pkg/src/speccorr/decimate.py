"""Quadric-error-metric mesh decimation by iterative edge collapse.

Each vertex accumulates the squared-distance quadrics of its incident
face planes; an edge collapse is charged the quadric error at the merged
position (optimal placement where the quadric is well conditioned).
Boundary edges get a strong perpendicular-plane penalty so open borders
keep their shape.
"""

import heapq

import numpy as np

from .mesh import TriangleMesh

__all__ = ["decimate", "DecimationResult"]

BOUNDARY_PENALTY = 100.0


class DecimationResult:
    """Decimated mesh plus the original-to-coarse vertex map."""

    def __init__(self, mesh, vertex_map, stalled=False):
        self.mesh = mesh
        self.vertex_map = vertex_map
        self.stalled = stalled

    def __iter__(self):  # allow tuple-style unpacking
        yield self.mesh
        yield self.vertex_map


def _face_quadric(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    area = 0.5 * np.linalg.norm(n)
    if area == 0.0:
        return np.zeros((4, 4)), 0.0
    n = n / (2.0 * area)
    plane = np.append(n, -n @ p0)
    return area * np.outer(plane, plane), area


def decimate(mesh, target_faces):
    """Reduce a mesh to approximately ``target_faces`` faces.

    Parameters
    ----------
    mesh : TriangleMesh
    target_faces : int
        Requested face count; must satisfy 4 <= target <= n_faces.

    Returns
    -------
    DecimationResult
        Coarse mesh, an (n_vertices,) array mapping each original vertex
        to a coarse vertex index, and a flag set when no further
        collapse was possible before reaching the target.
    """
    if target_faces < 4 or target_faces > mesh.n_faces:
        raise ValueError(
            f"target_faces must be in [4, {mesh.n_faces}], got {target_faces}")
    if target_faces == mesh.n_faces:
        return DecimationResult(mesh, np.arange(mesh.n_vertices))

    verts = np.array(mesh.vertices)
    faces = np.array(mesh.faces)
    n = len(verts)

    quadrics = np.zeros((n, 4, 4))
    for fi, (i, j, k) in enumerate(faces):
        q, _ = _face_quadric(verts[i], verts[j], verts[k])
        quadrics[i] += q
        quadrics[j] += q
        quadrics[k] += q

    # Boundary edges (appearing in only one face) get a perpendicular
    # penalty plane through the edge.
    he = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    he_face = np.tile(np.arange(len(faces)), 3)
    keys = {}
    for (u, v), fi in zip(map(tuple, np.sort(he, axis=1)), he_face):
        keys.setdefault((u, v), []).append(fi)
    for (u, v), fis in keys.items():
        if len(fis) == 1:
            i, j, k = faces[fis[0]]
            fn = np.cross(verts[j] - verts[i], verts[k] - verts[i])
            edge = verts[v] - verts[u]
            pn = np.cross(edge, fn)
            norm = np.linalg.norm(pn)
            if norm == 0.0:
                continue
            pn /= norm
            plane = np.append(pn, -pn @ verts[u])
            q = BOUNDARY_PENALTY * (edge @ edge) * np.outer(plane, plane)
            quadrics[u] += q
            quadrics[v] += q

    vert_faces = [set() for _ in range(n)]
    for fi, f in enumerate(faces):
        for vi in f:
            vert_faces[vi].add(fi)
    face_alive = np.ones(len(faces), dtype=bool)
    vert_alive = np.ones(n, dtype=bool)
    parent = np.arange(n)
    version = np.zeros(n, dtype=np.int64)

    def neighbors(u):
        out = set()
        for fi in vert_faces[u]:
            out.update(faces[fi])
        out.discard(u)
        return out

    def placement(u, v):
        q = quadrics[u] + quadrics[v]
        a, b = q[:3, :3], q[:3, 3]
        try:
            pos = np.linalg.solve(a, -b)
            if not np.isfinite(pos).all():
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            pos = None
        candidates = [verts[u], verts[v], 0.5 * (verts[u] + verts[v])]
        if pos is not None:
            candidates.insert(0, pos)
        best, best_cost = None, np.inf
        for p in candidates:
            ph = np.append(p, 1.0)
            cost = float(ph @ q @ ph)
            if cost < best_cost:
                best, best_cost = p, cost
        return best, max(best_cost, 0.0)

    heap = []
    pushed = set()
    for u, v in keys:
        pos, cost = placement(u, v)
        heapq.heappush(heap, (cost, u, v, int(version[u]), int(version[v]),
                              tuple(pos)))
        pushed.add((u, v))

    n_alive = int(face_alive.sum())
    stalled = False
    while n_alive > target_faces:
        if not heap:
            stalled = True
            break
        cost, u, v, vu, vv, pos = heapq.heappop(heap)
        if (not vert_alive[u] or not vert_alive[v]
                or version[u] != vu or version[v] != vv):
            continue

        shared = vert_faces[u] & vert_faces[v]
        if not shared:
            continue
        # Link condition: shared neighborhood limited to the apex vertices
        # of the faces on the collapsing edge, else the result is
        # non-manifold.
        apex = set()
        for fi in shared:
            apex.update(faces[fi])
        apex -= {u, v}
        if neighbors(u) & neighbors(v) != apex or len(shared) > 2:
            continue

        new_pos = np.asarray(pos)
        # Reject collapses that flip a surviving face
        flip = False
        for fi in (vert_faces[u] | vert_faces[v]) - shared:
            tri = [x for x in faces[fi]]
            pts = [new_pos if x in (u, v) else verts[x] for x in tri]
            new_n = np.cross(pts[1] - pts[0], pts[2] - pts[0])
            i, j, k = tri
            old_n = np.cross(verts[j] - verts[i], verts[k] - verts[i])
            if new_n @ old_n <= 0.0:
                flip = True
                break
        if flip:
            continue

        # Commit: v merges into u at the new position
        verts[u] = new_pos
        quadrics[u] = quadrics[u] + quadrics[v]
        vert_alive[v] = False
        parent[v] = u
        for fi in shared:
            face_alive[fi] = False
            for x in faces[fi]:
                vert_faces[x].discard(fi)
            n_alive -= 1
        for fi in list(vert_faces[v]):
            faces[fi][faces[fi] == v] = u
            vert_faces[u].add(fi)
        vert_faces[v].clear()
        version[u] += 1

        for w in neighbors(u):
            a, b = (u, w) if u < w else (w, u)
            p, c = placement(a, b)
            heapq.heappush(heap, (c, a, b, int(version[a]), int(version[b]),
                                  tuple(p)))

    # Compact surviving vertices and faces
    keep_faces = faces[face_alive]
    used = np.zeros(n, dtype=bool)
    used[np.unique(keep_faces)] = True
    new_index = -np.ones(n, dtype=np.int64)
    new_index[used] = np.arange(int(used.sum()))
    out_mesh = TriangleMesh(verts[used], new_index[keep_faces], validate=False)

    root = parent.copy()
    for i in range(n):  # path compression
        r = i
        while parent[r] != r:
            r = parent[r]
        root[i] = r
    vertex_map = new_index[root]
    if (vertex_map < 0).any():
        # merge roots that lost all faces map to the nearest used vertex
        from scipy.spatial import cKDTree

        tree = cKDTree(verts[used])
        lost = np.nonzero(vertex_map < 0)[0]
        _, nearest = tree.query(verts[root[lost]])
        vertex_map[lost] = nearest
    return DecimationResult(out_mesh, vertex_map, stalled=stalled)
