import math

import numpy as np
import pytest

from core.errors import InvalidParameterError
from models.adr_model import ADRProblem, solve_high_fidelity, stream_modes, sup_norm_score


def _centroid_x(problem, field):
    return float(np.sum(problem.centers[:, 0] * field) / np.sum(field))


class TestADRProblem:
    def test_sizes(self, small_adr):
        assert small_adr.q == 32
        assert small_adr.centers.shape == (32, 2)
        assert len(small_adr.affine_matrices) == 4

    @pytest.mark.parametrize("kwargs", [{"nx": 3, "ny": 3}, {"p": 2}, {"kappa1": 0.0}])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(InvalidParameterError):
            ADRProblem(**kwargs)

    def test_stream_modes_order(self):
        assert stream_modes(4) == [(1, 1), (1, 2), (2, 1), (1, 3)]

    def test_operator_affine_in_turbulence(self, small_adr):
        x = np.array([0.3, 0.5, 0.2, 0.0])
        base = small_adr.assemble(x).toarray()
        x[3] = 1.5
        shifted = small_adr.assemble(x).toarray()
        np.testing.assert_allclose(shifted - base, 1.5 * small_adr.affine_matrices[3].toarray(), atol=1e-12)

    def test_source_bump(self, small_adr):
        s = small_adr.source([0.0, 0.55, 0.2, 0.0])
        assert 0.0 < s.max() <= 1.0
        np.testing.assert_allclose(small_adr.centers[np.argmax(s)], [0.5625, 0.1875])


class TestSolveHighFidelity:
    def test_zero_source(self):
        problem = ADRProblem(nx=8, ny=4, p=4, source_override=0.0)
        field = solve_high_fidelity(problem, [0.4, 0.5, 0.2, 0.3])
        np.testing.assert_array_equal(field, np.zeros(32))

    def test_constant_source_without_wind(self):
        problem = ADRProblem(nx=8, ny=4, p=3, source_override=1.0, velocity_off=True)
        field = solve_high_fidelity(problem, [0.0, 0.5, 0.25])
        np.testing.assert_allclose(field, 2.0, rtol=1e-10)

    def test_constant_source_with_wind(self):
        # a constant field has zero discrete gradient, so wind leaves it unchanged
        problem = ADRProblem(nx=8, ny=4, p=4, source_override=1.0)
        field = solve_high_fidelity(problem, [1.0, 0.5, 0.25, 0.7])
        np.testing.assert_allclose(field, 2.0, rtol=1e-10)

    def test_peak_near_source(self):
        problem = ADRProblem(nx=32, ny=16, p=3, kappa2=0.05, velocity_off=True)
        x = [0.0, 0.5, 0.25]
        field = solve_high_fidelity(problem, x)
        peak = problem.centers[np.argmax(field)]
        assert abs(peak[0] - 0.5) <= 2 * problem.hx
        assert abs(peak[1] - 0.25) <= 2 * problem.hy

    def test_wind_carries_plume(self):
        problem = ADRProblem(nx=32, ny=16, p=3)
        downwind = solve_high_fidelity(problem, [0.0, 0.5, 0.25])
        upwind = solve_high_fidelity(problem, [math.pi, 0.5, 0.25])
        assert _centroid_x(problem, downwind) > 0.5 > _centroid_x(problem, upwind)



class TestSupNormScore:
    def test_examples(self):
        assert sup_norm_score([1.0, -3.0, 2.0]) == 3.0
        assert sup_norm_score(np.zeros(5)) == 0.0

    def test_empty(self):
        with pytest.raises(InvalidParameterError):
            sup_norm_score([])

    def test_lipschitz_in_field(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            f, g = rng.standard_normal(50), rng.standard_normal(50)
            assert abs(sup_norm_score(f) - sup_norm_score(g)) <= np.linalg.norm(f - g) + 1e-12
