"""
Preset manager for restobench
Handles shipped degradation specs and experiment configs under assets/configs
"""
import json
import logging
import os

from src.degrade import DegradationSpec
from src.errors import SpecError, UsageError
from src.harness import ExperimentConfig

logger = logging.getLogger(__name__)

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                          'assets', 'configs')


class PresetManager:
    def __init__(self, config_dir=CONFIG_DIR):
        """Initialize the preset manager over a config directory"""
        self.config_dir = config_dir

    def names(self):
        """Names of the shipped presets"""
        if not os.path.isdir(self.config_dir):
            return []
        return sorted(os.path.splitext(name)[0] for name in os.listdir(self.config_dir)
                      if name.endswith('.json'))

    def resolve(self, name_or_path):
        """A file path wins; otherwise look the name up among the presets"""
        if os.path.isfile(name_or_path):
            return name_or_path
        name = name_or_path[:-5] if name_or_path.endswith('.json') else name_or_path
        path = os.path.join(self.config_dir, f"{name}.json")
        if os.path.isfile(path):
            logger.debug("preset %s -> %s", name_or_path, path)
            return path
        raise UsageError(f"unknown preset or file '{name_or_path}' "
                         f"(presets: {', '.join(self.names()) or 'none'})")

    def _read(self, name_or_path):
        path = self.resolve(name_or_path)
        try:
            with open(path, 'r', encoding='utf-8') as handle:
                return json.load(handle)
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: invalid JSON ({exc})") from exc

    def load_spec(self, name_or_path, seed=None):
        """
        Degradation spec from a file or preset
        An explicit seed overrides the one in the document
        """
        spec = DegradationSpec.from_dict(self._read(name_or_path))
        if seed is not None:
            spec = spec.with_seed(seed)
        return spec

    def load_experiment(self, name_or_path):
        """Experiment config; a named base_spec is loaded through this manager"""
        data = self._read(name_or_path)
        if not isinstance(data, dict):
            raise UsageError(f"{name_or_path}: experiment config must be a JSON object")
        return ExperimentConfig.from_dict(data, spec_loader=self.load_spec)
