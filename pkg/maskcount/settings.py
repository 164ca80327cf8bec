import configparser
import copy
import hashlib
import json
import os
import zlib
from types import SimpleNamespace

import numpy as np

from maskcount.errors import ConfigError

# Mask Count default settings, one dict per config file section.
# A config file may override any key, but never add one.

MASKCOUNT = {
    "canvas": {"height": 128, "width": 128},
    "model": {"r": 8, "d": 16, "exemplar_size": 32, "sigma": 2.0},
    "pseudo": {"kmin": 2, "kmax": 6, "n_init": 10},
    "segmenter": {"tau": 0.5, "epochs": 60, "lr": 0.01, "batch": 4},
    "train": {"epochs": 200, "lr": 0.01, "batch": 4, "seed": 0, "clip": 10.0, "masked_copies": 1},
    "data": {
        "train": 20,
        "val": 10,
        "test": 10,
        "multi_train": 40,
        "multi_val": 20,
        "multi_test": 50,
    },
    "eval": {"record_time": False, "iou_min": 0.6},
    "ablate": {"retrain": True},
    "paths": {
        "data_dir": "data",
        "models_dir": "models",
        "reports_dir": "reports",
    },
}

# Caps the worker pool for scene-parallel stages (unset means serial)
THREADS = int(os.environ.get("MASKCOUNT_THREADS") or 1)

# Sections that don't change what gets computed, only where it goes
UNFINGERPRINTED = {"paths"}


def rng_for(seed, name):
    """
    Named random sub-stream derived from the root seed.

    Every component that draws random numbers asks for its own stream (gen,
    train-base, kmeans, train-seg), so re-running one stage reproduces it
    without replaying the others.
    """
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    )


def _coerce(section, key, raw, default):
    """
    Turn a raw config string into the type of the default.
    """
    try:
        if isinstance(default, bool):
            value = raw.strip().lower()
            if value not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(raw)
            return configparser.ConfigParser.BOOLEAN_STATES[value]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(
            f"[{section}] {key} = {raw!r} is not a valid {type(default).__name__}"
        )
    return raw.strip()


class Config:
    """
    Run configuration: the defaults above, overridden by a config file.

    Parameters
    ----------
    values
        Nested dict of section -> key -> value overrides.

    Examples
    --------

    >>> cfg = Config()
    >>> cfg.model.r
    8
    >>> cfg.k_range
    (2, 6)
    """

    def __init__(self, values=None):
        self.values = copy.deepcopy(MASKCOUNT)
        for section, keys in (values or {}).items():
            if section not in self.values:
                raise ConfigError(f"Unknown config section [{section}]")
            for key, value in keys.items():
                if key not in self.values[section]:
                    raise ConfigError(f"Unknown config key '{key}' in [{section}]")
                self.values[section][key] = value
        self.validate()

    def __getattr__(self, section):
        if section.startswith("__") or "values" not in self.__dict__:
            raise AttributeError(section)
        if section not in self.values:
            raise AttributeError(f"Config has no section {section}")
        return SimpleNamespace(**self.values[section])

    @classmethod
    def from_file(cls, path):
        if not os.path.exists(path):
            raise ConfigError(f"Config file {path} does not exist")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(path)
        except configparser.Error as e:
            raise ConfigError(f"Cannot read config {path}: {e}")

        values = {}
        for section in parser.sections():
            if section not in MASKCOUNT:
                raise ConfigError(f"Unknown config section [{section}] in {path}")
            values[section] = {}
            for key, raw in parser.items(section):
                if key not in MASKCOUNT[section]:
                    raise ConfigError(
                        f"Unknown config key '{key}' in [{section}] of {path}"
                    )
                values[section][key] = _coerce(
                    section, key, raw, MASKCOUNT[section][key]
                )
        return cls(values)

    def validate(self):
        v = self.values
        checks = [
            (v["canvas"]["height"] >= 64 and v["canvas"]["width"] >= 64, "canvas must be at least 64x64"),
            (v["model"]["r"] >= 1, "model.r must be >= 1"),
            (v["model"]["d"] >= 1, "model.d must be >= 1"),
            (v["model"]["exemplar_size"] >= v["model"]["r"], "model.exemplar_size must be >= model.r"),
            (v["model"]["sigma"] > 0, "model.sigma must be > 0"),
            (2 <= v["pseudo"]["kmin"] <= v["pseudo"]["kmax"], "pseudo.kmin must satisfy 2 <= kmin <= kmax"),
            (0.0 <= v["segmenter"]["tau"] <= 1.0, "segmenter.tau must lie in [0, 1]"),
            (v["train"]["epochs"] >= 1 and v["segmenter"]["epochs"] >= 1, "epochs must be >= 1"),
            (v["pseudo"]["n_init"] >= 1, "pseudo.n_init must be >= 1"),
            (v["train"]["masked_copies"] >= 0, "train.masked_copies must be >= 0"),
            (v["train"]["batch"] >= 1 and v["segmenter"]["batch"] >= 1, "batch must be >= 1"),
            (v["train"]["lr"] >= 0 and v["segmenter"]["lr"] >= 0, "learning rates must be >= 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def with_seed(self, seed):
        values = copy.deepcopy(self.values)
        values["train"]["seed"] = int(seed)
        return Config(values)

    @property
    def seed(self):
        return self.values["train"]["seed"]

    @property
    def canvas(self):
        return self.values["canvas"]["height"], self.values["canvas"]["width"]

    @property
    def k_range(self):
        return self.values["pseudo"]["kmin"], self.values["pseudo"]["kmax"]

    def fingerprint(self):
        """
        Short stable hash of everything that changes results.
        """
        payload = {k: v for k, v in self.values.items() if k not in UNFINGERPRINTED}
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self):
        return copy.deepcopy(self.values)
