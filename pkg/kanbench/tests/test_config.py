import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import yaml

from kanbench.config import expand_env_vars, get_config_dir, load_experiment, load_settings, parse_experiment
from kanbench.errors import ConfigError
from kanbench.models import Family, Settings


class ConfigTests(unittest.TestCase):
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def _write(self, name: str, data) -> Path:
        path = self.dir / name
        path.write_text(yaml.safe_dump(data) if not isinstance(data, str) else data, encoding="utf-8")
        return path

    def test_expand_env_vars(self) -> None:
        with mock.patch.dict(os.environ, {"KANBENCH_DATA": "/data"}):
            self.assertEqual(expand_env_vars("${KANBENCH_DATA}/mnist"), "/data/mnist")
        self.assertEqual(expand_env_vars("${KANBENCH_SURELY_UNSET}"), "${KANBENCH_SURELY_UNSET}")
        self.assertEqual(expand_env_vars(3), 3)

    def test_load_experiment_expands_nested_values(self) -> None:
        path = self._write("exp.yaml", {
            "models": [{"family": "KAN"}],
            "dataset": {"kind": "idx", "train_images": "${MNIST_DIR}/train-images"},
        })
        with mock.patch.dict(os.environ, {"MNIST_DIR": "/srv/mnist"}):
            config = load_experiment(path)
        self.assertEqual(config.name, "exp")
        self.assertEqual(config.models[0].family, Family.KAN)
        self.assertEqual(config.dataset.train_images, "/srv/mnist/train-images")

    def test_unsupported_version(self) -> None:
        with self.assertRaises(ConfigError):
            parse_experiment({"version": 99, "name": "x", "models": [{"family": "MLP"}]})

    def test_invalid_field(self) -> None:
        with self.assertRaises(ConfigError):
            parse_experiment({"name": "x", "models": [{"family": "MLP"}], "workers": 0})

    def test_unknown_family(self) -> None:
        with self.assertRaises(ConfigError):
            parse_experiment({"name": "x", "models": [{"family": "CNN"}]})

    def test_not_a_mapping(self) -> None:
        with self.assertRaises(ConfigError):
            parse_experiment(["a", "b"])

    def test_invalid_yaml(self) -> None:
        path = self._write("broken.yaml", "models: [unclosed\n")
        with self.assertRaises(ConfigError):
            load_experiment(path)

    def test_missing_file(self) -> None:
        with self.assertRaises(ConfigError):
            load_experiment(self.dir / "nope.yaml")

    def test_default_settings_created(self) -> None:
        path = self.dir / "sub" / "config.yaml"
        settings = load_settings(path)
        self.assertEqual(settings, Settings())
        self.assertTrue(path.exists())
        self.assertEqual(load_settings(path), settings)

    def test_settings_values(self) -> None:
        path = self._write("config.yaml", {"workers": 4, "log_level": "DEBUG"})
        settings = load_settings(path)
        self.assertEqual((settings.workers, settings.log_level), (4, "DEBUG"))

    def test_invalid_settings(self) -> None:
        path = self._write("config.yaml", {"workers": -1})
        with self.assertRaises(ConfigError):
            load_settings(path)

    def test_config_dir_from_environment(self) -> None:
        with mock.patch.dict(os.environ, {"KANBENCH_CONFIG_DIR": str(self.dir)}):
            self.assertEqual(get_config_dir(), self.dir)


if __name__ == "__main__":
    unittest.main()
