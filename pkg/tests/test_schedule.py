import numpy as np
import pytest

from mosaic.grids import LatentGrid, sample_noise
from mosaic.schedule import (
    DEFAULT_RHO,
    DEFAULT_STEPS,
    SINGLE_INSTRUCTION_RHO,
    STRATEGIES,
    SwitchPolicy,
    TimeGrid,
    euler_step,
    is_region_phase,
    make_time_grid,
    reference_latent,
    region_step_count,
)


class TestTimeGrid:
    def test_uniform_grid_endpoints(self):
        grid = make_time_grid(50)
        assert grid.times[0] == 1.0
        assert grid.times[-1] == 0.0
        assert len(grid.times) == 51

    def test_grid_values_are_exact_ratios(self):
        # (50-20)/50 must compare equal to 0.6 exactly for the phase rule
        grid = make_time_grid(50)
        assert grid.times[20] == 0.6
        assert grid.times[10] == 0.8
        assert grid.times[25] == 0.5

    def test_strictly_decreasing_required(self):
        with pytest.raises(ValueError):
            TimeGrid(times=(1.0, 0.5, 0.5, 0.0))

    def test_must_span_one_to_zero(self):
        with pytest.raises(ValueError):
            TimeGrid(times=(0.9, 0.5, 0.0))
        with pytest.raises(ValueError):
            TimeGrid(times=(1.0, 0.5, 0.1))

    def test_steps_property(self):
        assert make_time_grid(10).steps == 10


class TestSwitchPolicy:
    def test_defaults(self):
        policy = SwitchPolicy(rho=0.6)
        assert policy.strategy == "both"

    def test_rho_range(self):
        with pytest.raises(ValueError):
            SwitchPolicy(rho=1.5)
        with pytest.raises(ValueError):
            SwitchPolicy(rho=-0.1)

    def test_strategy_whitelist(self):
        with pytest.raises(ValueError):
            SwitchPolicy(rho=0.5, strategy="everything")
        for strategy in STRATEGIES:
            SwitchPolicy(rho=0.5, strategy=strategy)

    def test_module_defaults(self):
        assert DEFAULT_STEPS == 50
        assert DEFAULT_RHO == 0.6
        assert SINGLE_INSTRUCTION_RHO == 0.8


class TestRegionPhase:
    def test_strictly_above_rho_is_region(self):
        policy = SwitchPolicy(rho=0.6)
        assert is_region_phase(0.62, policy)
        assert not is_region_phase(0.6, policy)  # boundary step is global
        assert not is_region_phase(0.58, policy)

    def test_rho_one_has_no_region_steps(self):
        policy = SwitchPolicy(rho=1.0)
        assert not is_region_phase(1.0, policy)

    def test_rho_zero_all_region(self):
        policy = SwitchPolicy(rho=0.0)
        grid = make_time_grid(10)
        assert all(is_region_phase(s, policy) for s in grid.times[:-1])

    @pytest.mark.parametrize(
        "rho, expected",
        [(0.0, 50), (0.2, 40), (0.4, 30), (0.6, 20), (0.8, 10), (1.0, 0)],
    )
    def test_step_count_table(self, rho, expected):
        grid = make_time_grid(50)
        assert region_step_count(grid, SwitchPolicy(rho=rho)) == expected

    def test_step_counts_partition_schedule(self):
        grid = make_time_grid(50)
        for rho in (0.0, 0.25, 0.5, 0.31, 1.0):
            n = region_step_count(grid, SwitchPolicy(rho=rho))
            assert 0 <= n <= 50


class TestReferenceLatent:
    def test_endpoints(self):
        z0 = LatentGrid(np.full((1, 2, 2), 2.0))
        eps = sample_noise(1, 2, 2, seed=0)
        assert np.array_equal(reference_latent(z0, eps, 0.0).values, z0.values)
        assert np.array_equal(reference_latent(z0, eps, 1.0).values, eps.values)

    def test_linear_interpolation(self):
        z0 = LatentGrid(np.zeros((1, 2, 2)))
        eps = LatentGrid(np.ones((1, 2, 2)))
        out = reference_latent(z0, eps, 0.25)
        assert np.allclose(out.values, 0.25)


class TestEulerStep:
    def test_integrates_toward_zero_time(self):
        z = LatentGrid(np.full((1, 2, 2), 1.0))
        v = LatentGrid(np.full((1, 2, 2), 2.0))
        out = euler_step(z, v, 0.25)
        assert np.allclose(out.values, 0.5)

    def test_rejects_nonpositive_ds(self):
        z = LatentGrid(np.zeros((1, 2, 2)))
        with pytest.raises(ValueError):
            euler_step(z, z, 0.0)

    def test_linear_path_reaches_target(self):
        """Velocity (z - target)/s integrated on a uniform grid lands on the
        target exactly at s=0, the closed-form property the analytic
        backend relies on."""
        target = np.full((1, 2, 2), 3.0)
        grid = make_time_grid(10)
        z = sample_noise(1, 2, 2, seed=1).values
        for i in range(10):
            s, s_next = grid.times[i], grid.times[i + 1]
            v = (z - target) / s
            z = z - (s - s_next) * v
        assert np.allclose(z, target, atol=1e-12)
