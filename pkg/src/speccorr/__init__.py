"""speccorr: spectral correspondence between near-isometric triangle meshes."""

from .decimate import decimate
from .engine import (Correspondence, PipelineConfig, PipelineError,
                     candidate_set, evaluate_functionals, fskm, full_pipeline,
                     refine_icp, skm, sqcm)
from .estimator import SpectralCorrespondence, SpectralEmbeddingTransform
from .evaluation import (DistortionCurve, SymmetryError, detect_symmetry,
                         distortion_curve, geodesics, pairwise_geodesics,
                         transfer_attribute)
from .kernels import (KernelSpec, bandpass, kernel_cross, matched_signature,
                      qc_embedding, qc_fields, spectral_embedding)
from .matching import (MatchingError, SignPermutation, match_by_quality,
                       match_moments, orientable_area_correlation,
                       third_order_moments)
from .mesh import (FaceBasisGradients, MeshError, TriangleMesh,
                   face_gradients, normals, total_area, vertex_masses)
from .meshio import load_mesh, save_mesh
from .spectrum import (SpectralBasis, SpectrumError, compute_spectrum,
                       cotangent_laplacian, load_spectrum, save_spectrum)

__version__ = "0.1.0"
