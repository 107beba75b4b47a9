"""Correspondence optimization: SQCM, SKM, FSKM and the full pipeline.

The three stages successively minimize the quasi-conformal, spectral
kernel, and combined kernel/embedding similarity functionals. All
nearest-neighbor searches are exact, expressed through the low-rank
kernel factorization, with ties broken toward the lower vertex index;
all randomness flows from one seed in the configuration.
"""

import logging
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .decimate import decimate
from .kernels import (KernelSpec, QuasiConformalFields, matched_signature,
                      qc_fields, spectral_embedding)
from .matching import (SignPermutation, match_by_quality, match_moments,
                       orientable_area_correlation, third_order_moments)
from .mesh import face_gradients, vertex_masses
from .spectrum import compute_spectrum

logger = logging.getLogger(__name__)

__all__ = [
    "PipelineConfig",
    "Correspondence",
    "PipelineError",
    "candidate_set",
    "sqcm",
    "skm",
    "fskm",
    "refine_icp",
    "evaluate_functionals",
    "full_pipeline",
]


class PipelineError(RuntimeError):
    """Failure of a named pipeline stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    """Tuning knobs of the correspondence framework.

    Defaults follow the reference parameter set: 120 eigenfunctions,
    6 matched modes with 6 bandpass channels, 100 candidates per vertex,
    1000/2000 sampled points for the kernel / functional stages, 15
    iterations, off-diagonal penalty weight 0.1, GPS kernel.
    """

    n_eigs: int = 120
    n0: int = 6
    n_bands: int = 6
    n_candidates: int = 100
    skm_points: int = 1000
    fskm_points: int = 2000
    n_iterations: int = 15
    beta: float = 0.1
    kernel: str = "gps"
    kernel_t: float = None
    coarse_faces: int = 2000
    quality_skm_iterations: int = 5
    use_fskm: bool = True
    maximize_negative: bool = False
    area_weighted_sampling: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("n_eigs", "n0", "n_bands", "n_candidates", "skm_points",
                     "fskm_points", "n_iterations", "coarse_faces"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n0 > self.n_eigs:
            raise ValueError("n0 cannot exceed n_eigs")

    def kernel_spec(self):
        return KernelSpec(self.kernel, self.kernel_t)

    def to_dict(self):
        from dataclasses import asdict

        return asdict(self)


@dataclass
class Correspondence:
    """Vertex map from X into Y, possibly defined on a subset only.

    ``mapping`` holds a target index per X vertex (-1 outside the
    domain); ``domain`` lists the defined vertices; ``source`` tags the
    producing stage.
    """

    mapping: np.ndarray
    domain: np.ndarray = None
    source: str = ""

    def __post_init__(self):
        self.mapping = np.asarray(self.mapping, dtype=np.int64)
        if self.domain is None:
            self.domain = np.arange(len(self.mapping))
        else:
            self.domain = np.asarray(self.domain, dtype=np.int64)

    @classmethod
    def from_pairs(cls, n_source, indices, targets, source=""):
        mapping = np.full(n_source, -1, dtype=np.int64)
        mapping[indices] = targets
        return cls(mapping, np.asarray(indices, dtype=np.int64), source)

    @property
    def is_dense(self):
        return len(self.domain) == len(self.mapping)

    def targets(self):
        return self.mapping[self.domain]


def _nearest_rows(queries, table, chunk=1024):
    """Index of the nearest table row per query row (exact, ties low)."""
    t2 = np.einsum("nd,nd->n", table, table)
    out = np.empty(len(queries), dtype=np.int64)
    for s in range(0, len(queries), chunk):
        block = queries[s:s + chunk]
        d = t2[None, :] - 2.0 * (block @ table.T)
        out[s:s + chunk] = np.argmin(d, axis=1)
    return out


def _sample_weights(masses, cfg):
    if cfg.area_weighted_sampling:
        return masses / masses.sum()
    return None  # uniform


def _draw(rng, n, size, prob=None):
    size = min(size, n)
    return np.sort(rng.choice(n, size=size, replace=False, p=prob))


def candidate_set(psi_x, psi_y, k, chunk=512):
    """k nearest Y vertices per X vertex under signature L2 distance.

    Ties break toward the lower vertex index. k is clamped to |Y|.

    Returns
    -------
    (|X|, k) int64 ndarray of Y vertex indices.
    """
    sx = psi_x.values if hasattr(psi_x, "values") else np.asarray(psi_x)
    sy = psi_y.values if hasattr(psi_y, "values") else np.asarray(psi_y)
    k = min(k, len(sy))
    t2 = np.einsum("nd,nd->n", sy, sy)
    out = np.empty((len(sx), k), dtype=np.int64)
    for s in range(0, len(sx), chunk):
        block = sx[s:s + chunk]
        d = t2[None, :] - 2.0 * (block @ sy.T)
        if k < len(sy):
            part = np.argpartition(d, k - 1, axis=1)[:, :k]
            sub = np.take_along_axis(d, part, axis=1)
            order = np.lexsort((part, sub), axis=1)
            out[s:s + chunk] = np.take_along_axis(part, order, axis=1)
        else:
            out[s:s + chunk] = np.argsort(d, axis=1, kind="stable")
    return out


def sqcm(qc_x, qc_y, candidates):
    """Spectral quasi-conformal map: per-vertex argmin of the omega/nu
    distortion over each candidate set.

    Returns a dense Correspondence on X.
    """
    if candidates.size == 0:
        raise ValueError("empty candidate sets")
    fx = qc_x.distortion_features()
    fy = qc_y.distortion_features()
    n = len(fx)
    mapping = np.empty(n, dtype=np.int64)
    chunk = max(1, 2 ** 22 // (candidates.shape[1] * fx.shape[1] + 1))
    for s in range(0, n, chunk):
        cand = candidates[s:s + chunk]
        diff = fy[cand] - fx[s:s + chunk][:, None, :]
        cost = np.einsum("xkd,xkd->xk", diff, diff)
        mapping[s:s + chunk] = cand[np.arange(len(cand)),
                                    np.argmin(cost, axis=1)]
    return Correspondence(mapping, source="sqcm")


def sqcm_distortions(qc_x, qc_y, corr):
    """Quasi-conformal distortion value per mapped vertex."""
    fx = qc_x.distortion_features()[corr.domain]
    fy = qc_y.distortion_features()[corr.targets()]
    return np.einsum("xd,xd->x", fx - fy, fx - fy)


def skm(emb_x, emb_y, init, *, n_points, n_iterations, rng, prob=None):
    """Spectral kernel maps: randomized iterative kernel matching.

    Each iteration redraws ``n_points`` source vertices and matches each
    against all of Y by comparing kernel vectors taken against the
    previous iteration's landmark set; afterwards the map is extended to
    every X vertex against the final landmarks.

    Parameters
    ----------
    emb_x, emb_y : (n, N) ndarray
        Spectral embeddings whose row dot products equal the kernel.
    init : Correspondence
        Initial map on a nonempty subset of X.
    n_points : int
        Landmarks drawn per iteration (clamped to |X|).
    n_iterations : int
        Iteration count L.
    rng : numpy Generator
    prob : ndarray, optional
        Sampling weights over X (uniform when None).
    """
    if len(init.domain) == 0:
        raise ValueError("skm requires a nonempty initial correspondence")
    n_x = len(emb_x)
    dom = init.domain
    mapped = init.targets()
    if len(dom) > n_points:
        keep = _draw(rng, len(dom), n_points)
        dom, mapped = dom[keep], mapped[keep]

    for _ in range(n_iterations):
        sample = _draw(rng, n_x, n_points, prob)
        k_x = emb_x[sample] @ emb_x[dom].T
        k_y = emb_y @ emb_y[mapped].T
        assign = _nearest_rows(k_x, k_y)
        dom, mapped = sample, assign

    k_x = emb_x @ emb_x[dom].T
    k_y = emb_y @ emb_y[mapped].T
    mapping = _nearest_rows(k_x, k_y)
    return Correspondence(mapping, source="skm")


def _kernel_weights(emb, idx):
    k = emb[idx] @ emb[idx].T
    d = np.abs(np.diag(k)).copy()
    d[d == 0.0] = 1.0
    return k / d[:, None]


def _penalized_solve(gram, rhs, penalty, beta):
    n = gram.shape[0]
    batched = np.broadcast_to(gram, (rhs.shape[1], n, n)).copy()
    ar = np.arange(n)
    batched[:, ar, ar] += beta * (penalty ** 2).T
    try:
        cols = np.linalg.solve(batched, rhs.T[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        warnings.warn("singular normal equations in FSKM; adding ridge")
        bump = 1e-10 * np.trace(gram)
        batched[:, ar, ar] += bump
        cols = np.linalg.solve(batched, rhs.T[:, :, None])[:, :, 0]
    return cols.T


def fskm(basis_x, basis_y, spec, init, *, n_points, n_iterations, beta,
         rng, prob=None):
    """Functional spectral kernel maps with the off-diagonal penalty.

    Alternates between solving the kernel-weighted function preservation
    constraints for the functional matrix C (per column, with penalty
    weights built from the eigenvalue mismatch and the constraint Gram
    diagonal) and reassigning sampled vertices by the scale-invariant
    embedding distance. Constraint rows run over all ordered pairs of
    the sampled vertices, accumulated directly into normal equations.

    Returns
    -------
    (C, Correspondence)
        The final N x N functional matrix and the dense map.
    """
    if len(init.domain) == 0:
        raise ValueError("fskm requires a nonempty initial correspondence")
    phi_x = basis_x.functions[:, 1:]
    phi_y = basis_y.functions[:, 1:]
    lam_x = basis_x.eigenvalues[1:]
    lam_y = basis_y.eigenvalues[1:]
    emb_x = spectral_embedding(basis_x, spec)
    emb_y = spectral_embedding(basis_y, spec)
    inv_sqrt = 1.0 / np.sqrt(lam_x)
    lam_ratio = np.abs(lam_y[:, None] - lam_x[None, :]) / lam_x[None, :]

    n_x = len(phi_x)
    dom = init.domain
    mapped = init.targets()
    if len(dom) > n_points:
        keep = _draw(rng, len(dom), n_points)
        dom, mapped = dom[keep], mapped[keep]

    c_mat = None
    for _ in range(n_iterations):
        w_x = _kernel_weights(emb_x, dom)
        w_y = _kernel_weights(emb_y, mapped)
        row_sq = np.einsum("ab,ab->a", w_y, w_y)
        row_cross = np.einsum("ab,ab->a", w_y, w_x)
        py = phi_y[mapped]
        gram = py.T @ (py * row_sq[:, None])
        rhs = py.T @ (phi_x[dom] * row_cross[:, None])
        penalty = lam_ratio * np.diag(gram)[:, None]
        c_mat = _penalized_solve(gram, rhs, penalty, beta)

        sample = _draw(rng, n_x, n_points, prob)
        target = (phi_y @ c_mat) * inv_sqrt
        assign = _nearest_rows(phi_x[sample] * inv_sqrt, target)
        dom, mapped = sample, assign

    target = (phi_y @ c_mat) * inv_sqrt
    mapping = _nearest_rows(phi_x * inv_sqrt, target)
    return c_mat, Correspondence(mapping, source="fskm")


def refine_icp(basis_x, basis_y, init, n_iterations):
    """Plain functional-map refinement: unpenalized least squares for C,
    then per-row nearest neighbors of the X embedding in phi_Y C."""
    if len(init.domain) == 0:
        raise ValueError("refinement requires a nonempty initial map")
    phi_x = basis_x.functions[:, 1:]
    phi_y = basis_y.functions[:, 1:]
    dom = init.domain
    mapped = init.targets()
    c_mat = None
    mapping = init.mapping
    for _ in range(n_iterations):
        c_mat, *_ = np.linalg.lstsq(phi_y[mapped], phi_x[dom], rcond=None)
        mapping = _nearest_rows(phi_x, phi_y @ c_mat)
        dom = np.arange(len(phi_x))
        mapped = mapping
    return c_mat, Correspondence(mapping, source="icp")


def evaluate_functionals(corr, *, basis_x, basis_y, spec=None, c_mat=None,
                         qc_x=None, qc_y=None, sample_size=1000, seed=0):
    """Evaluate the three similarity functionals for a given map.

    d2_spec compares kernel matrices over a seeded vertex sample;
    d2_emb measures the scale-invariant embedding residual (fitting C by
    least squares when not supplied); d2_qc averages the quasi-conformal
    distortion when matched fields are supplied.

    Returns a dict with keys "d2_spec", "d2_emb" and, when fields are
    given, "d2_qc".
    """
    spec = spec or KernelSpec("gps")
    dom = corr.domain
    mapped = corr.targets()
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(dom), size=min(sample_size, len(dom)),
                      replace=False)
    s_x, s_y = dom[pick], mapped[pick]

    emb_x = spectral_embedding(basis_x, spec)
    emb_y = spectral_embedding(basis_y, spec)
    k_x = emb_x[s_x] @ emb_x[s_x].T
    k_y = emb_y[s_y] @ emb_y[s_y].T
    out = {"d2_spec": float(np.linalg.norm(k_x - k_y) / len(s_x))}

    phi_x = basis_x.functions[:, 1:]
    phi_y = basis_y.functions[:, 1:]
    if c_mat is None:
        c_mat, *_ = np.linalg.lstsq(phi_y[mapped], phi_x[dom], rcond=None)
    resid = (phi_x[dom] - phi_y[mapped] @ c_mat) / np.sqrt(
        basis_x.eigenvalues[1:])
    out["d2_emb"] = float(np.sqrt(
        np.einsum("xd,xd->x", resid, resid).mean()))

    if qc_x is not None and qc_y is not None:
        fx = qc_x.distortion_features()[dom]
        fy = qc_y.distortion_features()[mapped]
        d2 = np.einsum("xd,xd->x", fx - fy, fx - fy)
        out["d2_qc"] = float(np.sqrt(d2.mean()))
    return out


def _scaled_fields(base, signs):
    outer = np.outer(signs, signs)
    return QuasiConformalFields(base.omega * outer, base.nu * outer)


def _scaled_signature(base, signs):
    values = base.values.copy()
    values[:, :len(signs)] *= signs
    return type(base)(values, base.n0, base.n_bands)


class _Timer:
    def __init__(self):
        self.timings = {}

    def stage(self, name):
        return _StageContext(self, name)


class _StageContext:
    def __init__(self, timer, name):
        self.timer = timer
        self.name = name

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timer.timings[self.name] = time.perf_counter() - self.start
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


def full_pipeline(mesh_x, mesh_y, cfg=None, *, basis_x=None, basis_y=None):
    """Run the complete correspondence framework from meshes to a dense map.

    Stages: spectra, third-order moment matching, sign-candidate
    enumeration scored by the orientable area correlation (each candidate
    runs SQCM plus a short SKM), then the full SKM and FSKM passes.

    Parameters
    ----------
    mesh_x, mesh_y : TriangleMesh
        Connected source and target shapes.
    cfg : PipelineConfig, optional
    basis_x, basis_y : SpectralBasis, optional
        Precomputed spectra (skips the eigensolver stage).

    Returns
    -------
    (Correspondence, dict)
        Dense map from X to Y and diagnostics: winning quality Q, the
        per-candidate Q table, the sign/permutation resolution, the three
        functional values, and per-stage timings.
    """
    cfg = cfg or PipelineConfig()
    spec = cfg.kernel_spec()
    timer = _Timer()
    seed_root = np.random.SeedSequence(cfg.seed)
    seeds = seed_root.generate_state(4)

    with timer.stage("spectrum"):
        masses_x = vertex_masses(mesh_x)
        masses_y = vertex_masses(mesh_y)
        if basis_x is None:
            basis_x = compute_spectrum(mesh_x, cfg.n_eigs, masses_x)
        if basis_y is None:
            basis_y = compute_spectrum(mesh_y, cfg.n_eigs, masses_y)

    with timer.stage("moments"):
        xi_x = third_order_moments(basis_x, cfg.n0, masses_x)
        xi_y = third_order_moments(basis_y, cfg.n0, masses_y)
        signperm = match_moments(xi_x, xi_y,
                                 basis_x.eigenvalues[1:cfg.n0 + 1],
                                 basis_y.eigenvalues[1:cfg.n0 + 1])
        logger.info("moment matching: perm=%s signs=%s ambiguous=%s",
                    signperm.perm, signperm.signs, signperm.ambiguous)

    with timer.stage("coarse"):
        if mesh_x.n_faces > int(cfg.coarse_faces * 1.02):
            result = decimate(mesh_x, cfg.coarse_faces)
            coarse, vmap = result.mesh, result.vertex_map
        else:
            coarse, vmap = mesh_x, np.arange(mesh_x.n_vertices)
        # per coarse vertex, the nearest original vertex among those
        # collapsed into it
        dist = np.linalg.norm(mesh_x.vertices - coarse.vertices[vmap], axis=1)
        order = np.lexsort((np.arange(mesh_x.n_vertices), dist, vmap))
        first = np.ones(len(order), dtype=bool)
        first[1:] = vmap[order[1:]] != vmap[order[:-1]]
        rep = np.empty(coarse.n_vertices, dtype=np.int64)
        rep[vmap[order[first]]] = order[first]

    with timer.stage("fields"):
        grads_x = face_gradients(mesh_x)
        grads_y = face_gradients(mesh_y)
        qc_x = qc_fields(basis_x, mesh_x, grads_x, cfg.n0)
        perm_only = SignPermutation(signperm.perm, np.ones(cfg.n0))
        qc_y_base = qc_fields(basis_y, mesh_y, grads_y, cfg.n0, perm_only)
        psi_x = matched_signature(basis_x, None, cfg.n0, cfg.n_bands)
        psi_y_base = matched_signature(basis_y, perm_only, cfg.n0,
                                       cfg.n_bands)

    prob = _sample_weights(masses_x, cfg)

    def runner(cand):
        qc_y = _scaled_fields(qc_y_base, cand.signs)
        psi_y = _scaled_signature(psi_y_base, cand.signs)
        cands = candidate_set(psi_x, psi_y, cfg.n_candidates)
        coarse_map = sqcm(qc_x, qc_y, cands)
        rng = np.random.default_rng([seeds[0], _sign_key(cand)])
        emb_x = spectral_embedding(basis_x, spec)
        emb_y = spectral_embedding(basis_y, spec)
        refined = skm(emb_x, emb_y, coarse_map, n_points=cfg.skm_points,
                      n_iterations=cfg.quality_skm_iterations, rng=rng,
                      prob=prob)
        return refined.mapping

    def scorer(mapping):
        return orientable_area_correlation(coarse, mesh_y, mapping[rep])

    with timer.stage("quality"):
        candidates = signperm.sign_candidates()
        winner, mapping, quality, q_table = match_by_quality(
            candidates, runner, scorer,
            maximize_negative=cfg.maximize_negative)
        logger.info("quality analysis: Q=%.4f over %d candidates",
                    quality, len(candidates))

    with timer.stage("skm"):
        emb_x = spectral_embedding(basis_x, spec)
        emb_y = spectral_embedding(basis_y, spec)
        rng = np.random.default_rng(seeds[1])
        corr = skm(emb_x, emb_y, Correspondence(mapping, source="quality"),
                   n_points=cfg.skm_points, n_iterations=cfg.n_iterations,
                   rng=rng, prob=prob)

    c_mat = None
    if cfg.use_fskm:
        with timer.stage("fskm"):
            rng = np.random.default_rng(seeds[2])
            c_mat, corr = fskm(basis_x, basis_y, spec, corr,
                               n_points=cfg.fskm_points,
                               n_iterations=cfg.n_iterations,
                               beta=cfg.beta, rng=rng, prob=prob)

    with timer.stage("diagnostics"):
        qc_y_win = _scaled_fields(qc_y_base, winner.signs)
        functionals = evaluate_functionals(
            corr, basis_x=basis_x, basis_y=basis_y, spec=spec, c_mat=c_mat,
            qc_x=qc_x, qc_y=qc_y_win, seed=int(seeds[3]))

    diagnostics = {
        "quality": quality,
        "quality_table": q_table,
        "signperm": winner,
        "functionals": functionals,
        "timings": timer.timings,
        "c_mat": c_mat,
    }
    return corr, diagnostics


def _sign_key(cand):
    bits = (cand.signs < 0).astype(np.uint32)
    return int((bits * (2 ** np.arange(len(bits), dtype=np.uint64))).sum())
