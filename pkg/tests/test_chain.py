import unittest

import numpy as np

from src.models.trajectory import Trajectory
from src.utils import chain
from src.utils.errors import SimulationError
from src.utils.generator import assemble
from src.utils.geometry import Ball, Box, WholeSpace
from src.utils.partition import assign_scales, build_lattice_partition, build_voronoi_partition, sample_sites
from src.utils.rng import make_stream, spawn_streams, split_batches


def walk_table(n=8):
    part = build_lattice_partition(WholeSpace(1), n, window=Box([-1.0], [1.0]))
    part = assign_scales(part, 1.5 / n, 3.0 / n)
    return part, assemble(part, threads=1)


class TestStreams(unittest.TestCase):
    def test_same_key_same_draws(self):
        a = make_stream(42, 3, 1).random(5)
        b = make_stream(42, 3, 1).random(5)
        np.testing.assert_array_equal(a, b)

    def test_keys_are_independent(self):
        a = make_stream(42, 3, 1).random(5)
        b = make_stream(42, 3, 2).random(5)
        self.assertFalse(np.array_equal(a, b))
        streams = spawn_streams(42, (3,), 2)
        np.testing.assert_array_equal(streams[1].random(5), make_stream(42, 3, 1).random(5))

    def test_split_batches(self):
        self.assertEqual(split_batches(10, 4), [(0, 4), (4, 8), (8, 10)])
        self.assertEqual(split_batches(0, 4), [])


class TestTrajectory(unittest.TestCase):
    def test_cell_at_is_right_continuous(self):
        traj = Trajectory(start_cell=0, times=np.array([0.5, 1.0]), cells=np.array([3, 5]), horizon=2.0)
        self.assertEqual(traj.cell_at(0.0), 0)
        self.assertEqual(traj.cell_at(0.4999), 0)
        self.assertEqual(traj.cell_at(0.5), 3)
        self.assertEqual(traj.cell_at(1.0), 5)
        self.assertEqual(traj.cell_at(2.0), 5)
        np.testing.assert_array_equal(traj.cell_at([0.1, 0.7, 1.5]), [0, 3, 5])
        self.assertEqual(traj.n_jumps, 2)
        self.assertEqual(traj.events, [(0.5, 3), (1.0, 5)])


class TestSimulation(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.part, cls.table = walk_table()
        cls.start = cls.part.n_cells // 2

    def test_jump_rate_and_distribution(self):
        self.assertAlmostEqual(chain.jump_rate(self.table, self.start), 64.0, delta=1e-9)
        targets, probs = chain.jump_distribution(self.table, self.start)
        np.testing.assert_array_equal(np.sort(targets), [self.start - 1, self.start + 1])
        np.testing.assert_allclose(probs, 0.5)

    def test_path_respects_horizon(self):
        traj = chain.simulate(self.table, self.start, 0.5, make_stream(1, 3, 0))
        self.assertGreater(traj.n_jumps, 0)
        self.assertTrue(np.all(np.diff(traj.times) > 0))
        self.assertLessEqual(traj.times[-1], 0.5)
        steps = np.abs(np.diff(np.concatenate([[self.start], traj.cells])))
        self.assertTrue(np.all(steps == 1))

    def test_zero_horizon(self):
        traj = chain.simulate(self.table, self.start, 0.0, make_stream(1, 3, 0))
        self.assertEqual(traj.n_jumps, 0)
        self.assertFalse(traj.absorbed)

    def test_bad_inputs(self):
        with self.assertRaises(SimulationError):
            chain.simulate(self.table, self.part.n_cells, 1.0, make_stream(1))
        with self.assertRaises(SimulationError):
            chain.simulate(self.table, self.start, -1.0, make_stream(1))

    def test_replicas_are_reproducible(self):
        one = chain.simulate_replicas(self.table, self.start, 0.3, 20, seed=7, threads=1)
        four = chain.simulate_replicas(self.table, self.start, 0.3, 20, seed=7, threads=4)
        for a, b in zip(one, four):
            np.testing.assert_array_equal(a.times, b.times)
            np.testing.assert_array_equal(a.cells, b.cells)
        other = chain.simulate_replicas(self.table, self.start, 0.3, 20, seed=8, threads=1)
        self.assertFalse(all(np.array_equal(a.times, b.times) for a, b in zip(one, other)))

    def test_transition_law_sums_to_one(self):
        p = chain.transition_distribution(self.table, self.start, 0.05)
        self.assertAlmostEqual(float(np.sum(p)), 1.0, delta=1e-12)
        self.assertTrue(np.all(p >= 0))
        np.testing.assert_allclose(p, p[::-1], atol=1e-12)

    def test_empirical_law_matches_uniformization(self):
        t, replicas = 0.05, 4000
        exact = chain.transition_distribution(self.table, self.start, t)
        trajectories = chain.simulate_replicas(self.table, self.start, t, replicas, seed=3, threads=4)
        end = np.array([traj.cell_at(t) for traj in trajectories])
        freq = np.bincount(end, minlength=self.table.n_cells) / replicas
        sigma = np.sqrt(exact * (1 - exact) / replicas)
        self.assertTrue(np.all(np.abs(freq - exact) <= 4 * sigma + 1.0 / replicas))

    def test_marginal_positions_shape(self):
        single = chain.marginal_positions(self.table, self.part, self.start, 0.1, 12, seed=5)
        self.assertEqual(single.shape, (12, 1))
        several = chain.marginal_positions(self.table, self.part, self.start, [0.05, 0.1], 12, seed=5)
        self.assertEqual(several.shape, (2, 12, 1))
        np.testing.assert_array_equal(several[1], single)

    def test_empirical_generator_of_square(self):
        x2 = self.part.centroids[:, 0] ** 2
        mean, err = chain.empirical_generator(self.table, x2, self.start, 0.01, 4000, seed=2)
        self.assertLess(abs(mean - 1.0), 4 * err + 0.05)

    def test_trajectory_rows(self):
        traj = chain.simulate(self.table, self.start, 0.1, make_stream(4, 3, 0))
        rows = list(chain.trajectory_rows(traj, 0, self.part.centroids))
        self.assertEqual(len(rows), traj.n_jumps + 1)
        self.assertEqual(rows[0][:3], (0, 0.0, self.start))


class TestBoundaryJumps(unittest.TestCase):
    def test_first_jump_frequencies_out_of_a_boundary_cell(self):
        dom = Ball([0.0, 0.0], 1.0)
        part = build_voronoi_partition(dom, sample_sites(dom, 200, make_stream(13, 0)), 60, make_stream(13, 1))
        table = assemble(assign_scales(part, 0.35, 0.6), threads=2)
        candidates = [g.cell_id for g in table.cells if g.is_boundary and g.is_valid and not g.is_absorbing]
        self.assertTrue(candidates)
        start = candidates[len(candidates) // 2]
        targets, probs = chain.jump_distribution(table, start)
        g = table.cell(start)
        _, w = g.off_diagonal()
        np.testing.assert_allclose(probs, w / np.sum(w))
        rate = chain.jump_rate(table, start)
        self.assertAlmostEqual(rate, float(np.sum(w)) / g.q, delta=1e-9 * rate)

        replicas = 4000
        trajectories = chain.simulate_replicas(table, start, 10.0 / rate, replicas, seed=14, threads=4)
        first = np.array([traj.cells[0] for traj in trajectories if traj.n_jumps])
        holding = np.array([traj.times[0] for traj in trajectories if traj.n_jumps])
        self.assertGreater(first.size, replicas - 5)
        freq = np.array([np.mean(first == t) for t in targets])
        sigma = np.sqrt(probs * (1 - probs) / first.size)
        self.assertTrue(np.all(np.abs(freq - probs) <= 4 * sigma + 1.0 / first.size))
        self.assertLess(abs(np.mean(holding) * rate - 1.0), 4.0 / np.sqrt(holding.size))


if __name__ == "__main__":
    unittest.main()
