"""Scikit-learn style front ends.

These wrap the functional pipeline in estimator objects so the
correspondence machinery composes with sklearn tooling (get_params /
set_params, cloning, pipelines over per-vertex features).
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .engine import PipelineConfig, full_pipeline
from .evaluation import distortion_curve
from .kernels import KernelSpec, spectral_embedding
from .mesh import TriangleMesh
from .spectrum import compute_spectrum

__all__ = ["SpectralCorrespondence", "SpectralEmbeddingTransform"]


def _check_mesh(obj, name):
    if not isinstance(obj, TriangleMesh):
        raise TypeError(f"{name} must be a TriangleMesh, got {type(obj)!r}")
    return obj


class SpectralCorrespondence(BaseEstimator):
    """Dense point-to-point correspondence between two meshes.

    Parameters mirror the pipeline configuration; see PipelineConfig.

    Examples
    --------
    >>> model = SpectralCorrespondence(n_eigs=60, seed=3)
    >>> model.fit(mesh_x, mesh_y)          # doctest: +SKIP
    >>> y_idx = model.predict()            # doctest: +SKIP
    """

    def __init__(self, n_eigs=120, n0=6, n_bands=6, n_candidates=100,
                 skm_points=1000, fskm_points=2000, n_iterations=15,
                 beta=0.1, kernel="gps", kernel_t=None, coarse_faces=2000,
                 use_fskm=True, maximize_negative=False,
                 area_weighted_sampling=False, seed=0):
        self.n_eigs = n_eigs
        self.n0 = n0
        self.n_bands = n_bands
        self.n_candidates = n_candidates
        self.skm_points = skm_points
        self.fskm_points = fskm_points
        self.n_iterations = n_iterations
        self.beta = beta
        self.kernel = kernel
        self.kernel_t = kernel_t
        self.coarse_faces = coarse_faces
        self.use_fskm = use_fskm
        self.maximize_negative = maximize_negative
        self.area_weighted_sampling = area_weighted_sampling
        self.seed = seed

    def _config(self):
        return PipelineConfig(
            n_eigs=self.n_eigs, n0=self.n0, n_bands=self.n_bands,
            n_candidates=self.n_candidates, skm_points=self.skm_points,
            fskm_points=self.fskm_points, n_iterations=self.n_iterations,
            beta=self.beta, kernel=self.kernel, kernel_t=self.kernel_t,
            coarse_faces=self.coarse_faces, use_fskm=self.use_fskm,
            maximize_negative=self.maximize_negative,
            area_weighted_sampling=self.area_weighted_sampling,
            seed=self.seed)

    def fit(self, X, y):
        """Compute the correspondence from mesh X to mesh y."""
        mesh_x = _check_mesh(X, "X")
        mesh_y = _check_mesh(y, "y")
        corr, diagnostics = full_pipeline(mesh_x, mesh_y, self._config())
        self.correspondence_ = corr
        self.diagnostics_ = diagnostics
        self.mesh_y_ = mesh_y
        return self

    def _check_fitted(self):
        if not hasattr(self, "correspondence_"):
            raise NotFittedError("call fit before using this estimator")

    def predict(self, indices=None):
        """Target vertex index per source vertex (or per given index)."""
        self._check_fitted()
        mapping = self.correspondence_.mapping
        if indices is None:
            return mapping
        return mapping[np.asarray(indices, dtype=np.int64)]

    def score(self, truth, threshold=0.10):
        """Fraction of vertices within the normalized geodesic error
        threshold against a ground-truth vertex map."""
        self._check_fitted()
        curve = distortion_curve(self.correspondence_, truth, self.mesh_y_)
        return curve.fraction_at(threshold)


class SpectralEmbeddingTransform(TransformerMixin, BaseEstimator):
    """Per-vertex spectral embedding features of a mesh.

    transform(mesh) returns the (n_vertices, n_eigs) embedding whose row
    dot products realize the configured kernel.
    """

    def __init__(self, n_eigs=120, kernel="gps", kernel_t=None):
        self.n_eigs = n_eigs
        self.kernel = kernel
        self.kernel_t = kernel_t

    def fit(self, X, y=None):
        _check_mesh(X, "X")
        return self

    def transform(self, X):
        mesh = _check_mesh(X, "X")
        basis = compute_spectrum(mesh, self.n_eigs)
        return spectral_embedding(basis, KernelSpec(self.kernel, self.kernel_t))
