import json
import os
import tempfile
import unittest

from src.models.rbm_config import RbmConfig
from src.utils.config_manager import ConfigManager
from src.utils.errors import ConfigError
from src.utils.geometry import Ball


class TestConfigManager(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write(self, text, name="run.json"):
        path = os.path.join(self.tmp.name, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        return path

    def test_defaults(self):
        manager = ConfigManager()
        run = manager.run
        self.assertEqual(run.partition_kind, "voronoi")
        self.assertEqual(run.levels, [500, 2000, 8000])
        self.assertEqual(manager.get("scales.k_a"), "auto")
        self.assertIsNone(manager.get("simulation.start"))
        self.assertEqual(manager.get("missing.key", 3), 3)

    def test_user_values_merge_over_defaults(self):
        path = self.write(json.dumps({"simulation": {"replicas": 50}}))
        run = ConfigManager(path).run
        self.assertEqual(run.replicas, 50)
        self.assertEqual(run.horizon, 0.5)

    def test_unknown_key_reports_line(self):
        path = self.write('{\n  "partition": {\n    "kind": "voronoi",\n    "levls": [10]\n  }\n}\n')
        with self.assertRaises(ConfigError) as ctx:
            ConfigManager(path)
        self.assertEqual(ctx.exception.line, 4)
        self.assertIn("partition.levls", str(ctx.exception))

    def test_json_error_reports_line(self):
        path = self.write('{\n  "threads": 2,\n  "seed" 3\n}\n')
        with self.assertRaises(ConfigError) as ctx:
            ConfigManager(path)
        self.assertEqual(ctx.exception.line, 3)

    def test_levels_must_increase(self):
        path = self.write('{\n  "partition": {\n    "levels": [100, 100]\n  }\n}\n')
        with self.assertRaises(ConfigError) as ctx:
            ConfigManager(path)
        self.assertEqual(ctx.exception.line, 3)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            ConfigManager(os.path.join(self.tmp.name, "absent.json"))

    def test_whole_space_needs_window(self):
        spec = {"domain": {"kind": "whole-space", "dim": 1}, "partition": {"kind": "lattice", "levels": [8]}}
        with self.assertRaises(ConfigError):
            ConfigManager(self.write(json.dumps(spec)))
        spec["partition"]["window"] = {"lo": [-1.0], "hi": [1.0]}
        run = ConfigManager(self.write(json.dumps(spec))).run
        self.assertEqual(run.window, {"lo": [-1.0], "hi": [1.0]})

    def test_reference_dt_follows_horizon_by_default(self):
        run = ConfigManager(self.write(json.dumps({"simulation": {"horizon": 2.0, "marginal_times": [1.0]}}))).run
        self.assertIsNone(run.reference_dt)
        cfg = RbmConfig(domain=Ball([0.0, 0.0], 1.0), horizon=run.horizon, dt=run.reference_dt)
        self.assertAlmostEqual(cfg.dt, 2e-4, delta=1e-15)

    def test_default_schedule_settings(self):
        manager = ConfigManager()
        self.assertEqual(manager.get("scales.k_b"), "auto")
        self.assertEqual(manager.get("scales.target_fraction"), 0.9)
        for scales in ({"a_exponent": 0.5, "b_exponent": 0.5}, {"a_exponent": 1.0}, {"boundary_cap": 1.5}):
            with self.subTest(scales=scales):
                with self.assertRaises(ConfigError):
                    ConfigManager(self.write(json.dumps({"scales": scales})))

    def test_explicit_scales_need_one_value_per_level(self):
        spec = {"scales": {"rule": "explicit", "a": [0.1], "b": [0.2]}}
        with self.assertRaises(ConfigError):
            ConfigManager(self.write(json.dumps(spec)))

    def test_marginal_times_within_horizon(self):
        spec = {"simulation": {"horizon": 0.2, "marginal_times": [0.1, 0.5]}}
        with self.assertRaises(ConfigError):
            ConfigManager(self.write(json.dumps(spec)))

    def test_set_revalidates(self):
        manager = ConfigManager()
        manager.set("partition.seed", 7)
        self.assertEqual(manager.run.seed, 7)
        with self.assertRaises(ConfigError):
            manager.set("partition.seed", -1)

    def test_hash_tracks_content(self):
        a = ConfigManager()
        b = ConfigManager()
        self.assertEqual(a.hash, b.hash)
        self.assertEqual(len(a.hash), 16)
        b.set("threads", 2)
        self.assertNotEqual(a.hash, b.hash)
        self.assertEqual(b.run.hash, b.hash)

    def test_save_and_reload(self):
        manager = ConfigManager()
        manager.set("simulation.replicas", 33)
        path = os.path.join(self.tmp.name, "saved.json")
        manager.save_config(path)
        again = ConfigManager(path)
        self.assertEqual(again.run.replicas, 33)
        self.assertEqual(again.hash, manager.hash)


if __name__ == "__main__":
    unittest.main()
