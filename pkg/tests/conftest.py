import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import _meshgen as mg  # noqa: E402

from speccorr import PipelineConfig, compute_spectrum  # noqa: E402


@pytest.fixture(scope="session")
def icosphere3():
    return mg.icosphere(3)


@pytest.fixture(scope="session")
def icosphere4():
    return mg.icosphere(4)


@pytest.fixture(scope="session")
def icosphere4_basis(icosphere4):
    return compute_spectrum(icosphere4, 30)


@pytest.fixture(scope="session")
def bumpy():
    return mg.bumpy_sphere(3)


@pytest.fixture(scope="session")
def bumpy_basis(bumpy):
    return compute_spectrum(bumpy, 40)


@pytest.fixture(scope="session")
def mirror_blob():
    return mg.mirror_symmetric_blob(3)


@pytest.fixture(scope="session")
def ribbon_pair():
    m = mg.ribbon(n_len=40, n_wid=10)
    return m, mg.bend_ribbon(m, pose_seed=1)


@pytest.fixture(scope="session")
def small_cfg():
    """Reduced pipeline configuration for fast end-to-end tests."""
    return PipelineConfig(n_eigs=40, n_candidates=40, skm_points=300,
                          fskm_points=400, n_iterations=6, coarse_faces=700,
                          seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
