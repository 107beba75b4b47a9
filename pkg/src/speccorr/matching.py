"""Eigenbasis alignment between two shapes.

Two isometric shapes agree only up to per-eigenfunction sign flips and
reordering. The third-order moment tensor pins down the permutation and
most signs; signs of antisymmetric eigenfunctions (whose odd moments
vanish on symmetric shapes) stay ambiguous and are settled later by
scoring trial correspondences with the orientable area correlation.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .mesh import normals

__all__ = [
    "SignPermutation",
    "MatchingError",
    "third_order_moments",
    "match_moments",
    "orientable_area_correlation",
    "match_by_quality",
]

# Admissible permutations must pair eigenvalues within this relative window.
EIGENVALUE_WINDOW = 0.2
# A sign is ambiguous when flipping it moves the moment objective by less
# than this fraction.
AMBIGUITY_THRESHOLD = 0.05

MAX_CANDIDATES = 256


class MatchingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SignPermutation:
    """Resolution (s, pi) of the eigenbasis ambiguity.

    ``perm[i]`` gives the 0-based source mode matched to mode i, and
    ``signs[i]`` its sign; ``ambiguous`` marks indices whose sign the
    moment stage could not determine.
    """

    perm: np.ndarray
    signs: np.ndarray
    ambiguous: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "perm", np.asarray(self.perm, dtype=np.int64))
        object.__setattr__(self, "signs",
                           np.asarray(self.signs, dtype=np.float64))
        amb = self.ambiguous
        if amb is None:
            amb = np.zeros(len(self.perm), dtype=bool)
        object.__setattr__(self, "ambiguous", np.asarray(amb, dtype=bool))
        if sorted(self.perm.tolist()) != list(range(len(self.perm))):
            raise ValueError("perm is not a permutation")

    @classmethod
    def identity(cls, n0):
        return cls(np.arange(n0), np.ones(n0))

    @property
    def size(self):
        return len(self.perm)

    def with_signs(self, signs):
        return SignPermutation(self.perm, signs, self.ambiguous)

    def sign_candidates(self, max_candidates=MAX_CANDIDATES):
        """All sign vectors over the ambiguous indices, deterministic order.

        The first candidate is the moment-stage sign vector itself.
        """
        amb = np.nonzero(self.ambiguous)[0]
        out = []
        for bits in itertools.product((1.0, -1.0), repeat=len(amb)):
            signs = self.signs.copy()
            signs[amb] *= bits
            out.append(self.with_signs(signs))
            if len(out) >= max_candidates:
                break
        return out


def third_order_moments(basis, n0, masses=None):
    """Moment tensor xi[i,j,k] = sum_v phi_i phi_j phi_k mass(v)."""
    if masses is None:
        masses = basis.masses
    funcs = basis.functions[:, 1:n0 + 1]
    return np.einsum("vi,vj,vk,v->ijk", funcs, funcs, funcs, masses,
                     optimize=True)


def _admissible_permutations(lam_x, lam_y, window):
    n0 = len(lam_x)
    allowed = [
        [j for j in range(n0)
         if abs(lam_x[i] - lam_y[j]) <= window * lam_x[i]]
        for i in range(n0)
    ]
    perms = []
    used = [False] * n0
    pick = [0] * n0

    def dfs(i):
        if i == n0:
            perms.append(tuple(pick))
            return
        for j in allowed[i]:
            if not used[j]:
                used[j] = True
                pick[i] = j
                dfs(i + 1)
                used[j] = False

    dfs(0)
    return perms


def match_moments(xi_x, xi_y, lam_x, lam_y,
                  window=EIGENVALUE_WINDOW,
                  ambiguity_threshold=AMBIGUITY_THRESHOLD):
    """Recover signs and permutation by minimizing the moment mismatch.

    Permutations are restricted to eigenvalue-compatible windows; all
    sign patterns over the matched indices are searched exactly. Indices
    whose sign flip barely changes the objective are flagged ambiguous.

    Parameters
    ----------
    xi_x, xi_y : (n0, n0, n0) ndarray
        Third-order moment tensors of the two shapes.
    lam_x, lam_y : (n0,) array_like
        Nonconstant eigenvalues 1..n0.

    Returns
    -------
    SignPermutation
        Mapping Y's modes onto X's: matched phi_i = signs[i] *
        phi^Y_{perm[i]}.
    """
    n0 = xi_x.shape[0]
    lam_x = np.asarray(lam_x, dtype=np.float64)
    lam_y = np.asarray(lam_y, dtype=np.float64)
    perms = _admissible_permutations(lam_x, lam_y, window)
    if not perms:
        raise MatchingError(
            "no permutation pairs the eigenvalues within the relative "
            f"window {window}; consider a larger window or smaller n0")

    sign_table = np.array(list(itertools.product((1.0, -1.0), repeat=n0)))
    const = float((xi_x ** 2).sum())
    scale = const + float((xi_y ** 2).sum())

    best = None
    for perm in perms:
        p = np.asarray(perm)
        xi_yp = xi_y[np.ix_(p, p, p)]
        prod = xi_x * xi_yp
        # objective(s) = |xi_x|^2 + |xi_yp|^2 - 2 s_i s_j s_k <xi_x, xi_yp>
        cross = np.einsum("ai,aj,ak,ijk->a", sign_table, sign_table,
                          sign_table, prod, optimize=True)
        objs = const + float((xi_yp ** 2).sum()) - 2.0 * cross
        a = int(np.argmin(objs))
        if best is None or objs[a] < best[0]:
            best = (float(objs[a]), p, sign_table[a], objs, a)

    obj_min, perm, signs, objs, a = best
    # sign i is ambiguous when some sign vector with s_i flipped (the
    # remaining signs free, so jointly-flipping symmetries count) reaches
    # an objective indistinguishable from the optimum
    ambiguous = np.zeros(n0, dtype=bool)
    floor = max(obj_min, 1e-9 * max(scale, 1e-300))
    for i in range(n0):
        rows = sign_table[:, i] == -signs[i]
        if objs[rows].min() - obj_min < ambiguity_threshold * floor:
            ambiguous[i] = True
    return SignPermutation(perm, signs, ambiguous)


def orientable_area_correlation(mesh_x_coarse, mesh_y, corr):
    """Orientation-aware area-preservation quality Q in [-1, 1].

    Each coarse face of X is mapped through the correspondence onto Y;
    the correlation compares source areas against image areas signed by
    the agreement of the image's winding normal with Y's surface normal.
    An orientation-reversing map scores near -1.

    Parameters
    ----------
    mesh_x_coarse : TriangleMesh
        Coarse triangulation of the source (about 2000 faces).
    mesh_y : TriangleMesh
        Target shape.
    corr : ndarray
        Vertex map from mesh_x_coarse vertices into mesh_y vertices.
    """
    corr = np.asarray(corr)
    faces = mesh_x_coarse.faces
    area_x = mesh_x_coarse.face_areas()

    img = mesh_y.vertices[corr[faces]]  # (m, 3, 3)
    cross = np.cross(img[:, 1] - img[:, 0], img[:, 2] - img[:, 0])
    cross_norm = np.linalg.norm(cross, axis=1)
    area_y = 0.5 * cross_norm

    _, vert_n = normals(mesh_y)
    n2 = vert_n[corr[faces]].mean(axis=1)
    n2_norm = np.linalg.norm(n2, axis=1)

    ok = (cross_norm > 0) & (n2_norm > 0)
    dot = np.zeros(len(faces))
    dot[ok] = np.einsum("md,md->m", cross[ok] / cross_norm[ok, None],
                        n2[ok] / n2_norm[ok, None])
    num = float(np.sum(area_x * area_y * dot))
    den = float(np.sqrt(np.sum(area_x ** 2) * np.sum(area_y ** 2)))
    if den == 0.0:
        return 0.0
    return num / den


def match_by_quality(candidates, runner, scorer, maximize_negative=False):
    """Pick the sign candidate whose trial correspondence scores best.

    Parameters
    ----------
    candidates : list of SignPermutation
        Sharing one permutation, varying on the ambiguous signs.
    runner : callable
        SignPermutation -> correspondence (a vertex map array); failures
        raise and the candidate is skipped.
    scorer : callable
        correspondence -> quality Q.
    maximize_negative : bool
        Select the argmax of -Q instead (symmetry detection).

    Returns
    -------
    (SignPermutation, correspondence, float, list)
        Winner, its map, its Q, and the per-candidate (Q or None) table.
    """
    if not candidates:
        raise MatchingError("empty candidate list")
    best = None
    table = []
    for idx, cand in enumerate(candidates):
        try:
            corr = runner(cand)
            q = float(scorer(corr))
        except Exception:
            table.append(None)
            continue
        table.append(q)
        score = -q if maximize_negative else q
        if best is None or score > best[0]:
            best = (score, idx, cand, corr, q)
    if best is None:
        raise MatchingError("all sign candidates failed")
    _, _, cand, corr, q = best
    return cand, corr, q, table
