import math

import numpy as np
import pytest

from core.hierarchy import ScoreHierarchy
from core.rng import derive_substream
from core.types import SampleBatch
from models.adr_model import ADRProblem
from models.analytic_model import AnalyticHierarchy, LinearGaussianProblem
from models.pod_model import build_pod
from services.ce_service import CEConfig
from services.family_service import GaussianFamily, GaussianParams, gaussian_sample


def make_batch(scores, bounds=None, level=1, top_level=1, points=None, log_weights=None) -> SampleBatch:
    scores = np.asarray(scores, dtype=np.float64)
    m = scores.shape[0]
    if bounds is None:
        bounds = np.zeros(m)
    if points is None:
        points = np.arange(m, dtype=np.float64).reshape(-1, 1)
    if log_weights is None:
        log_weights = np.zeros(m)
    return SampleBatch(
        points=np.asarray(points, dtype=np.float64),
        scores=scores,
        level=level,
        bounds=np.asarray(bounds, dtype=np.float64),
        log_weights=np.asarray(log_weights, dtype=np.float64),
        top_level=top_level,
    )


class CappedHierarchy(ScoreHierarchy):
    """
    phi(x) = x_0 with surrogate levels min(phi, cap_k); a cap of None leaves
    the level exact. The top level can be capped too (unreachable targets).
    """

    def __init__(self, caps, top_cap=None):
        self.caps = list(caps)
        self.top_cap = top_cap

    @property
    def level_count(self):
        return len(self.caps) + 1

    @property
    def cost_ranks(self):
        return tuple(range(1, self.level_count + 1))

    def evaluate_batch(self, points, k):
        self.check_level(k)
        phi = np.asarray(points, dtype=np.float64)[:, 0]
        if self.top_cap is not None:
            phi = np.minimum(phi, self.top_cap)
        if k == self.top_level:
            return phi, np.zeros_like(phi)
        cap = self.caps[k - 1]
        scores = phi if cap is None else np.minimum(phi, cap)
        return scores, np.abs(phi - scores)


@pytest.fixture
def mu3():
    return GaussianParams.standard(3)


@pytest.fixture
def linear_problem(mu3):
    # p = 3, w = e_1, gamma* = 4: p_A = 3.1671e-5
    return LinearGaussianProblem(
        w=np.array([1.0, 0.0, 0.0]), mu_params=mu3, gamma_star=4.0, alphas=(0.4, 0.1), u=np.ones(3)
    )


@pytest.fixture
def linear_hierarchy(linear_problem):
    return AnalyticHierarchy(linear_problem)


@pytest.fixture
def exact_hierarchy(mu3):
    problem = LinearGaussianProblem(w=np.array([1.0, 0.0, 0.0]), mu_params=mu3, gamma_star=4.0)
    return AnalyticHierarchy(problem)


@pytest.fixture
def gaussian_family():
    return GaussianFamily()


@pytest.fixture
def ce_config():
    return CEConfig(gamma_star=4.0, m=1000, seed=11)


@pytest.fixture
def small_adr():
    # q = 32, one turbulence mode
    return ADRProblem(nx=8, ny=4, p=4)


@pytest.fixture
def pde_mu():
    mean = np.array([17 * math.pi / 18, 0.8, 0.15, 0.0])
    return GaussianParams(mean=mean, covariance=np.eye(4))


@pytest.fixture
def pde_points(pde_mu):
    # 40 input draws, reused as snapshot parameters
    return gaussian_sample(pde_mu, derive_substream(21, (3,)), 40)


@pytest.fixture
def small_pod(small_adr, pde_points):
    return build_pod(small_adr, pde_points, dims=(2, 4, 8), stability_samples=40)
