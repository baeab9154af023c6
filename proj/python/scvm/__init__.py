"""Python bindings for the scvm C++ core.

Configs are plain dicts in the same layout as the CLI's JSON config files.
"""

import json

from . import _core
from ._core import IoError, NumericalError, ShapeError

__all__ = [
    "IoError",
    "Model",
    "NumericalError",
    "ShapeError",
    "dataset_sample",
    "default_config",
    "generate_sample",
    "gradcheck",
    "normalize_config",
    "train",
]


def _dump(config):
    return "" if config is None else json.dumps(config)


def default_config():
    return json.loads(_core.default_config())


def normalize_config(config):
    """Fills defaults and validates; unknown keys raise ValueError."""
    return json.loads(_core.normalize_config(json.dumps(config)))


def generate_sample(seed, config=None):
    return _core.generate_sample(seed, _dump(config))


def dataset_sample(dataset_seed, index, config=None):
    return _core.dataset_sample(dataset_seed, index, _dump(config))


def gradcheck(seed=0):
    return _core.gradcheck(seed)


class Model:
    """Wraps the core model together with the config it was built from."""

    def __init__(self, config=None, _core_model=None):
        self._m = _core_model if _core_model is not None else _core.Model(_dump(config))

    @classmethod
    def load(cls, path):
        return cls(_core_model=_core.Model.load(str(path)))

    def save(self, path):
        self._m.save(str(path))

    @property
    def config(self):
        return json.loads(self._m.config_json())

    def set_ablation(self, scvm=True, tag=True, text=True):
        self._m.set_ablation(scvm, tag, text)

    def forward(self, image, question_tokens, answer_id, lam=0.05):
        return self._m.forward(image, list(question_tokens), answer_id, lam)

    def inspect(self, sample_seed):
        return self._m.inspect(sample_seed)

    def evaluate(self, n, seed):
        return json.loads(self._m.evaluate_json(n, seed))

    def parameter_names(self):
        return self._m.parameter_names()

    def parameter(self, name):
        return self._m.parameter(name)

    def parameter_hash(self, prefix=""):
        return self._m.parameter_hash(prefix)


def train(config=None, out_dir=None):
    """Runs the full recipe; returns (model, list of metric dicts)."""
    core_model, metrics = _core.train(_dump(config), None if out_dir is None else str(out_dir))
    return Model(_core_model=core_model), [json.loads(m) for m in metrics]
