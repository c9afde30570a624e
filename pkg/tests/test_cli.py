import contextlib
import io
import json
import math
import os
import tempfile
import unittest

from src.cli.app import main, parse_level_filter
from src.cli.stages import StageContext, cmd_generator, cmd_partition
from src.cli.study import CONSISTENCY_DECAY
from src.utils import artifacts, diagnostics, neumann
from src.utils.config_manager import ConfigManager
from src.utils.errors import ConfigError
from src.utils.partition import scale_schedule_check
from src.utils.rng import make_stream

DISK = {
    "domain": {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0},
    "partition": {"kind": "voronoi", "levels": [60, 120], "mc_per_cell": 20, "seed": 5},
}

LINE = {
    "domain": {"kind": "whole-space", "dim": 1},
    "partition": {"kind": "lattice", "levels": [8, 16], "window": {"lo": [-1.0], "hi": [1.0]}},
    "scales": {"rule": "lattice", "multiple": 1.5, "boundary_multiple": 3.0},
    "simulation": {"horizon": 0.1, "replicas": 200, "marginal_times": [0.05, 0.1]},
    "reference": {"dt": 0.001},
    "diagnostics": {"moments": False, "permutations": 20, "pairs": 50},
}


class TestCli(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = os.path.join(self.tmp.name, "out")

    def config(self, data, name="run.json"):
        path = os.path.join(self.tmp.name, name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2)
        return path

    def run_cli(self, *argv):
        with contextlib.redirect_stdout(io.StringIO()) as buf:
            code = main(list(argv))
        return code, buf.getvalue()

    def read(self, *parts):
        with open(os.path.join(self.out, *parts), "rb") as f:
            return f.read()

    def test_partition_is_reproducible(self):
        path = self.config(DISK)
        self.assertEqual(self.run_cli("partition", "--config", path, "--out", self.out)[0], 0)
        first = self.read("level-60", "cells.csv")
        self.assertEqual(self.run_cli("partition", "--config", path, "--out", self.out)[0], 0)
        self.assertEqual(self.read("level-60", "cells.csv"), first)
        meta, _, rows = artifacts.read_csv(os.path.join(self.out, "level-120", "cells.csv"))
        self.assertEqual(meta["command"], "partition")
        self.assertEqual(len(rows), 120)

    def test_level_filter_reproduces_full_run(self):
        path = self.config(DISK)
        self.run_cli("partition", "--config", path, "--out", self.out)
        full = self.read("level-120", "cells.csv")
        self.run_cli("partition", "--config", path, "--out", self.out, "--level-filter", "120")
        self.assertEqual(self.read("level-120", "cells.csv"), full)

    def test_generator_rewrites_cells_with_boundary_columns(self):
        path = self.config(LINE)
        self.run_cli("partition", "--config", path, "--out", self.out)
        self.assertEqual(self.run_cli("generator", "--config", path, "--out", self.out)[0], 0)
        meta, columns, rows = artifacts.read_csv(os.path.join(self.out, "level-8", "cells.csv"))
        self.assertEqual(meta["command"], "generator")
        self.assertIn("normal1", columns)
        flag = columns.index("is_boundary")
        # the whole line has no boundary
        self.assertEqual({row[flag] for row in rows}, {"0"})

    def test_equal_scales_are_rejected(self):
        spec = dict(DISK, scales={"rule": "explicit", "a": [0.3, 0.3], "b": [0.3, 0.3]})
        path = self.config(spec)
        self.assertEqual(self.run_cli("partition", "--config", path, "--out", self.out)[0], 0)
        self.assertEqual(self.run_cli("generator", "--config", path, "--out", self.out)[0], 2)

    def test_generator_needs_partition(self):
        path = self.config(DISK)
        self.assertEqual(self.run_cli("generator", "--config", path, "--out", self.out)[0], 2)

    def test_bad_config(self):
        path = self.config({"partition": {"levels": [10], "colour": "red"}})
        self.assertEqual(self.run_cli("partition", "--config", path)[0], 2)

    def test_unknown_level_filter(self):
        path = self.config(DISK)
        self.assertEqual(self.run_cli("partition", "--config", path, "--level-filter", "61")[0], 2)

    def test_line_study(self):
        path = self.config(LINE)
        code, printed = self.run_cli("study", "--config", path, "--out", self.out, "--threads", "2")
        self.assertIn(code, (0, 1))
        self.assertIn("checks", printed)
        _, columns, rows = artifacts.read_csv(os.path.join(self.out, "study.csv"))
        self.assertEqual(columns[:4], ["n", "max_eps_rho", "max_abs_c", "min_q_rho2"])
        self.assertIn("sup_error.quadratic", columns)
        self.assertEqual([row[0] for row in rows], ["8", "16"])
        summary = self.read("summary.txt").decode("utf-8")
        self.assertIn("[PASS] validity", summary)
        self.assertIn("[PASS] consistency_decay.quadratic", summary)
        for name in ("generator_edges.csv", "validity.csv", "trajectories.csv", "marginals.csv", "diagnostics.csv"):
            self.assertTrue(os.path.exists(os.path.join(self.out, "level-16", name)), name)
        self.assertTrue(os.path.exists(os.path.join(self.out, "oracles.csv")))

    def test_stages_match_study(self):
        path = self.config(LINE)
        for command in ("partition", "generator", "simulate"):
            self.assertEqual(self.run_cli(command, "--config", path, "--out", self.out)[0], 0, command)
        marginals = self.read("level-8", "marginals.csv").split(b"\n", 3)[3]
        code, _ = self.run_cli("diagnose", "--config", path, "--out", self.out)
        self.assertEqual(code, 0)
        self.assertTrue(os.path.exists(os.path.join(self.out, "summary.txt")))
        self.run_cli("study", "--config", path, "--out", self.out)
        self.assertEqual(self.read("level-8", "marginals.csv").split(b"\n", 3)[3], marginals)


class TestBundledDiskSchedule(unittest.TestCase):
    """The shipped disk config, partitioned and assembled at every level."""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        manager = ConfigManager(os.path.join(os.path.dirname(__file__), "..", "configs", "disk-voronoi.json"))
        manager.set("output.directory", cls.tmp.name)
        run = manager.run
        cls.ctx = StageContext(run=run, command="generator", levels=list(run.levels))
        with contextlib.redirect_stdout(io.StringIO()):
            cls.levels = cmd_generator(cls.ctx, cmd_partition(cls.ctx))

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_coarsest_level_keeps_interior_cells(self):
        part, table = self.levels[min(self.levels)]
        self.assertLess(part.level_params["b_n"], 1.0)
        self.assertGreater(table.report["n_cells"] - table.report["n_boundary"], 0)
        self.assertFalse(math.isnan(table.report["max_eps_rho_interior"]))

    def test_schedule_shrinks_every_ratio(self):
        rows = [part.level_params for part, _ in self.levels.values()]
        check = scale_schedule_check(rows)
        for key in ("spacing_over_a_decreasing", "a_over_b_decreasing", "b_decreasing"):
            self.assertTrue(check[key], key)

    def test_finest_level_is_valid(self):
        report = self.levels[max(self.levels)][1].report
        self.assertTrue(report["validity_holds"])
        self.assertTrue(report["condition_interior_eps"])

    def test_consistency_error_decays(self):
        coarse, fine = min(self.levels), max(self.levels)
        for fn in neumann.checked_test_functions(self.ctx.domain):
            sups = {
                n: diagnostics.consistency_error(table, part, fn, make_stream(3, n)).sup
                for n, (part, table) in self.levels.items()
            }
            with self.subTest(function=fn.name):
                self.assertGreaterEqual(sups[coarse] / sups[fine], CONSISTENCY_DECAY)


class TestLevelFilter(unittest.TestCase):
    def test_parse(self):
        self.assertEqual(parse_level_filter(None, [8, 16]), [8, 16])
        self.assertEqual(parse_level_filter("16,8", [8, 16]), [8, 16])
        with self.assertRaises(ConfigError):
            parse_level_filter("8,x", [8, 16])
        with self.assertRaises(ConfigError):
            parse_level_filter("32", [8, 16])


if __name__ == "__main__":
    unittest.main()
