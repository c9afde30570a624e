import os
import tempfile
import unittest

import numpy as np

from src.utils import artifacts
from src.utils.errors import ArtifactError
from src.utils.generator import assemble, cell_rows, edge_rows
from src.utils.geometry import Ball, Box, WholeSpace
from src.utils.partition import assign_scales, build_lattice_partition, build_voronoi_partition, sample_sites
from src.utils.rng import RNG_NAME, make_stream

HEADER = artifacts.Header(command="partition", config_hash="0123456789abcdef", seed=42)


class TestCsv(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_header_and_rows(self):
        path = os.path.join(self.tmp.name, "nested", "table.csv")
        artifacts.write_csv(path, HEADER, ["level", "metric", "value"], [[8, "max_abs_c", 0.25], [16, "x", ""]])
        meta, columns, rows = artifacts.read_csv(path)
        self.assertEqual(meta["tool"], artifacts.TOOL)
        self.assertEqual(meta["config_hash"], "0123456789abcdef")
        self.assertEqual(meta["seed"], "42")
        self.assertEqual(meta["rng"], RNG_NAME)
        self.assertEqual(columns, ["level", "metric", "value"])
        self.assertEqual(rows, [["8", "max_abs_c", "0.25"], ["16", "x", ""]])
        with open(path, "rb") as f:
            self.assertNotIn(b"\r", f.read())

    def test_missing_file(self):
        with self.assertRaises(ArtifactError):
            artifacts.read_csv(os.path.join(self.tmp.name, "absent.csv"))

    def test_level_dir(self):
        self.assertEqual(artifacts.level_dir("out", 500), os.path.join("out", "level-500"))


class TestPartitionArtifacts(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_voronoi_round_trip(self):
        dom = Ball([0.0, 0.0], 1.0)
        part = build_voronoi_partition(dom, sample_sites(dom, 50, make_stream(1, 0)), 40, make_stream(1, 1))
        artifacts.save_partition(part, self.tmp.name, HEADER)
        again = artifacts.load_partition(self.tmp.name)
        for name in artifacts.PARTITION_ARRAYS:
            np.testing.assert_array_equal(getattr(again, name), getattr(part, name), err_msg=name)
        self.assertEqual(again.kind, "voronoi")
        self.assertEqual(again.level, 50)
        self.assertEqual(again.domain.kind, "ball")
        _, columns, rows = artifacts.read_csv(os.path.join(self.tmp.name, "cells.csv"))
        self.assertEqual(columns[4], "is_boundary")
        self.assertEqual(columns[-6:], ["centroid1", "centroid2", "anchor1", "anchor2", "normal1", "normal2"])
        self.assertEqual(len(rows), 50)
        # not classified before scales exist
        self.assertTrue(all(row[4] == "" and row[-1] == "" for row in rows))

    def test_scaled_cells_carry_boundary_columns(self):
        dom = Ball([0.0, 0.0], 1.0)
        part = build_voronoi_partition(dom, sample_sites(dom, 80, make_stream(2, 0)), 40, make_stream(2, 1))
        scaled = assign_scales(part, 0.2, 0.5)
        artifacts.save_partition(part, self.tmp.name, HEADER)
        artifacts.save_scales(scaled, self.tmp.name, HEADER)
        _, columns, rows = artifacts.read_csv(os.path.join(self.tmp.name, "cells.csv"))
        col = {name: k for k, name in enumerate(columns)}
        flags = [row[col["is_boundary"]] for row in rows]
        self.assertEqual(flags.count("1"), int(scaled.is_boundary.sum()))
        self.assertGreater(flags.count("1"), 0)
        self.assertGreater(flags.count("0"), 0)
        for row in rows:
            if row[col["is_boundary"]] == "1":
                anchor = np.array([float(row[col["anchor1"]]), float(row[col["anchor2"]])])
                normal = np.array([float(row[col["normal1"]]), float(row[col["normal2"]])])
                self.assertAlmostEqual(np.linalg.norm(anchor), 1.0, places=9)
                np.testing.assert_allclose(normal, -anchor, atol=1e-9)
            else:
                self.assertEqual(row[col["anchor1"]], "")

    def test_scales_and_window_round_trip(self):
        part = build_lattice_partition(WholeSpace(1), 8, window=Box([-1.0], [1.0]))
        scaled = assign_scales(part, 1.5 / 8, 3.0 / 8)
        artifacts.save_partition(scaled, self.tmp.name, HEADER)
        artifacts.save_scales(scaled, self.tmp.name)
        again = artifacts.load_scaled_partition(self.tmp.name)
        for name in artifacts.SCALE_ARRAYS:
            np.testing.assert_array_equal(getattr(again, name), getattr(scaled, name), err_msg=name)
        np.testing.assert_array_equal(again.window.lo, [-1.0])
        self.assertEqual(again.level_params["a_n"], 1.5 / 8)

    def test_missing_stage(self):
        with self.assertRaises(ArtifactError):
            artifacts.load_partition(self.tmp.name)


class TestGeneratorArtifacts(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_round_trip(self):
        part = assign_scales(build_lattice_partition(Box([0.0, 0.0], [1.0, 1.0]), 6), 0.25, 0.45)
        table = assemble(part, threads=1)
        artifacts.save_generator(table, self.tmp.name, HEADER, edge_rows(table), cell_rows(table))
        again = artifacts.load_generator(self.tmp.name)
        self.assertEqual(again.n_cells, table.n_cells)
        self.assertEqual(again.level, 6)
        self.assertTrue(again.corrected)
        for g, h in zip(table.cells, again.cells):
            np.testing.assert_array_equal(g.neighbors, h.neighbors)
            np.testing.assert_array_equal(g.weights, h.weights)
            np.testing.assert_array_equal(g.Q, h.Q)
            self.assertEqual(g.q, h.q)
            self.assertEqual(g.valid, h.valid)
            self.assertEqual(g.is_boundary, h.is_boundary)
        np.testing.assert_array_equal(again.jump_rates, table.jump_rates)
        self.assertEqual(again.report["min_q_rho2"], table.report["min_q_rho2"])

        _, columns, rows = artifacts.read_csv(os.path.join(self.tmp.name, "generator_edges.csv"))
        self.assertEqual(columns, ["from", "to", "weight"])
        self.assertEqual(len(rows), sum(g.neighbors.size for g in table.cells))


if __name__ == "__main__":
    unittest.main()
