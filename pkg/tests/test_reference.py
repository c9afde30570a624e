import unittest

import numpy as np
from scipy import stats

from src.models.rbm_config import RbmConfig
from src.utils import diagnostics, reference
from src.utils.errors import DomainError, SimulationError
from src.utils.geometry import Ball, Box, Radial, WholeSpace
from src.utils.rng import make_stream


class TestTimeGrid(unittest.TestCase):
    def test_regular(self):
        grid = reference.time_grid(1.0, 0.25)
        np.testing.assert_allclose(grid, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_short_last_step(self):
        grid = reference.time_grid(1.0, 0.3)
        self.assertEqual(grid.size, 5)
        self.assertEqual(grid[-1], 1.0)
        self.assertTrue(np.all(np.diff(grid) > 0))


class TestConfig(unittest.TestCase):
    def test_default_dt(self):
        cfg = RbmConfig(domain=Ball([0.0], 1.0), horizon=2.0)
        self.assertAlmostEqual(cfg.dt, 2e-4)

    def test_rejects_bad_values(self):
        with self.assertRaises(SimulationError):
            RbmConfig(domain=Ball([0.0], 1.0), horizon=0.0)
        with self.assertRaises(SimulationError):
            RbmConfig(domain=Ball([0.0], 1.0), horizon=1.0, dt=2.0)
        with self.assertRaises(SimulationError):
            RbmConfig(domain=Ball([0.0], 1.0), horizon=1.0, scheme="penalty")


class TestPaths(unittest.TestCase):
    def test_ball_path_stays_in_closure(self):
        cfg = RbmConfig(domain=Ball([0.0, 0.0], 1.0), horizon=2.0, dt=1e-3)
        path = reference.simulate_rbm(cfg, [0.9, 0.0], make_stream(1, 4, 0))
        self.assertEqual(path.shape, (2001, 2))
        self.assertTrue(np.all(np.linalg.norm(path, axis=1) <= 1.0 + 1e-12))
        np.testing.assert_array_equal(path[0], [0.9, 0.0])

    def test_box_path_stays_in_closure(self):
        cfg = RbmConfig(domain=Box([0.0, 0.0], [1.0, 0.5]), horizon=1.0, dt=1e-3)
        path = reference.simulate_rbm(cfg, [0.5, 0.25], make_stream(2, 4, 0))
        self.assertTrue(np.all(path >= 0.0))
        self.assertTrue(np.all(path[:, 0] <= 1.0))
        self.assertTrue(np.all(path[:, 1] <= 0.5))

    def test_brownian_variance(self):
        ends = np.array([
            reference.simulate_bm([0.0], 1.0, 0.05, make_stream(3, 4, r))[-1, 0] for r in range(2000)
        ])
        self.assertLess(abs(np.var(ends) - 1.0), 4 * np.sqrt(2.0 / 2000))
        self.assertLess(abs(np.mean(ends)), 4 * np.sqrt(1.0 / 2000))

    def test_whole_space_falls_back_to_brownian_motion(self):
        cfg = RbmConfig(domain=WholeSpace(1), horizon=1.0, dt=0.1)
        a = reference.simulate_rbm(cfg, [0.0], make_stream(5, 4, 0))
        b = reference.simulate_bm([0.0], 1.0, 0.1, make_stream(5, 4, 0))
        np.testing.assert_array_equal(a, b)

    def test_radial_domain_is_rejected(self):
        cfg = RbmConfig(domain=Radial([0.0, 0.0], 1.0, [0.0, 0.1]), horizon=1.0, dt=0.01)
        with self.assertRaises(DomainError):
            reference.simulate_rbm(cfg, [0.0, 0.0], make_stream(1))

    def test_start_outside(self):
        cfg = RbmConfig(domain=Ball([0.0, 0.0], 1.0), horizon=1.0, dt=0.01)
        with self.assertRaises(DomainError):
            reference.simulate_rbm(cfg, [1.5, 0.0], make_stream(1))

    def test_step_longer_than_domain(self):
        cfg = RbmConfig(domain=Ball([0.0, 0.0], 1.0), horizon=1e4, dt=1e4)
        with self.assertRaises(SimulationError):
            reference.simulate_rbm(cfg, [0.0, 0.0], make_stream(1))


class TestReflectedLaws(unittest.TestCase):
    def test_box_walk_from_the_wall_is_half_normal(self):
        # far from the right wall the box process is |B_t|
        cfg = RbmConfig(domain=Box([0.0], [10.0]), horizon=0.5, dt=1e-3)
        ends = reference.reference_marginals(cfg, [0.0], [0.5], 2000, seed=21, threads=4)[0, :, 0]
        self.assertTrue(np.all(ends >= 0.0))
        result = stats.kstest(ends, stats.halfnorm(scale=np.sqrt(0.5)).cdf)
        self.assertGreater(result.pvalue, 0.0027)

    def test_ball_walk_from_the_centre_is_rotation_invariant(self):
        cfg = RbmConfig(domain=Ball([0.0, 0.0], 1.0), horizon=0.5, dt=1e-3)
        ends = reference.reference_marginals(cfg, [0.0, 0.0], [0.5], 2000, seed=22, threads=4)[0]
        angles = np.arctan2(ends[:, 1], ends[:, 0])
        counts, _ = np.histogram(angles, bins=12, range=(-np.pi, np.pi))
        self.assertGreater(stats.chisquare(counts).pvalue, 0.0027)

    def test_halving_dt_stays_within_noise(self):
        ball = Ball([0.0, 0.0], 1.0)
        coarse = reference.reference_marginals(
            RbmConfig(domain=ball, horizon=0.5, dt=2e-3), [0.5, 0.0], [0.5], 800, seed=23, threads=4
        )[0]
        fine = reference.reference_marginals(
            RbmConfig(domain=ball, horizon=0.5, dt=1e-3), [0.5, 0.0], [0.5], 800, seed=24, threads=4
        )[0]
        check = diagnostics.permutation_test(coarse, fine, make_stream(25), num_resamples=500)
        self.assertGreater(check["pvalue"], 0.0027)


class TestMarginals(unittest.TestCase):
    def test_shape_and_determinism(self):
        cfg = RbmConfig(domain=Ball([0.0, 0.0], 1.0), horizon=0.5, dt=1e-3)
        one = reference.reference_marginals(cfg, [0.0, 0.0], [0.1, 0.5], 40, seed=9, threads=1)
        four = reference.reference_marginals(cfg, [0.0, 0.0], [0.1, 0.5], 40, seed=9, threads=4)
        self.assertEqual(one.shape, (2, 40, 2))
        np.testing.assert_array_equal(one, four)

    def test_time_outside_horizon(self):
        cfg = RbmConfig(domain=Ball([0.0], 1.0), horizon=0.5, dt=1e-3)
        with self.assertRaises(SimulationError):
            reference.reference_marginals(cfg, [0.0], [1.0], 4, seed=1)

    def test_path_rows(self):
        grid = reference.time_grid(0.2, 0.1)
        path = np.zeros((3, 1))
        rows = list(reference.path_rows(path, grid, 2))
        self.assertEqual(rows[1], (2, 0.1, -1, 0.0))


if __name__ == "__main__":
    unittest.main()
