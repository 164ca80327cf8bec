import numpy as np
import pytest

from maskcount.errors import ConfigError
from maskcount.settings import Config, rng_for


def write_config(tmp_path, text):
    filename = tmp_path / "run.cfg"
    filename.write_text(text)
    return str(filename)


def test_defaults():
    cfg = Config()
    assert cfg.canvas == (128, 128)
    assert (cfg.model.r, cfg.model.d, cfg.model.exemplar_size, cfg.model.sigma) == (8, 16, 32, 2.0)
    assert cfg.k_range == (2, 6)
    assert cfg.segmenter.tau == 0.5
    assert (cfg.pseudo.n_init, cfg.train.masked_copies, cfg.ablate.retrain) == (10, 1, True)
    assert cfg.seed == 0


def test_file_overrides_and_types(tmp_path):
    cfg = Config.from_file(
        write_config(tmp_path, "[model]\nd = 4\nsigma = 1.5\n[eval]\nrecord_time = yes\n[paths]\ndata_dir = elsewhere\n")
    )
    assert cfg.model.d == 4
    assert cfg.model.sigma == 1.5
    assert cfg.eval.record_time is True
    assert cfg.paths.data_dir == "elsewhere"
    assert cfg.model.r == 8


@pytest.mark.parametrize(
    "text",
    [
        "[model]\ndepth = 3\n",
        "[optimizer]\nlr = 0.1\n",
        "[model]\nd = four\n",
        "[eval]\nrecord_time = sometimes\n",
        "[pseudo]\nkmin = 1\n",
        "[pseudo]\nkmin = 5\nkmax = 4\n",
        "[pseudo]\nn_init = 0\n",
        "[train]\nmasked_copies = -1\n",
        "[segmenter]\ntau = 1.5\n",
        "[canvas]\nheight = 32\n",
        "no section header\n",
    ],
)
def test_strict_parsing(tmp_path, text):
    with pytest.raises(ConfigError) as error:
        Config.from_file(write_config(tmp_path, text))
    assert error.value.exit_code == 2


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        Config.from_file(str(tmp_path / "nope.cfg"))


def test_unknown_override_in_code():
    with pytest.raises(ConfigError):
        Config({"model": {"depth": 2}})


def test_fingerprint():
    base = Config()
    assert base.fingerprint() == Config().fingerprint()
    assert len(base.fingerprint()) == 16
    assert base.fingerprint() == Config({"paths": {"models_dir": "other"}}).fingerprint()
    assert base.fingerprint() != base.with_seed(1).fingerprint()
    assert base.fingerprint() != Config({"pseudo": {"kmax": 5}}).fingerprint()


def test_with_seed_leaves_original_alone():
    base = Config()
    assert base.with_seed(7).seed == 7
    assert base.seed == 0


def test_named_streams():
    a = rng_for(0, "kmeans").uniform(size=4)
    np.testing.assert_array_equal(a, rng_for(0, "kmeans").uniform(size=4))
    assert not np.array_equal(a, rng_for(0, "gen").uniform(size=4))
    assert not np.array_equal(a, rng_for(1, "kmeans").uniform(size=4))
