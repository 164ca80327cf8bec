"""
Model persistence as model.json.

Parameters are stored as flat lists of floats with their shapes. json
writes floats with repr, the shortest string that parses back to the same
double, so a save/load round trip is exact.
"""

import logging
import os

import numpy as np

from maskcount.counter import CounterModel
from maskcount.errors import MissingArtifactError, SceneFormatError
from maskcount.nn import TrainingState
from maskcount.segmenter import SegModel
from maskcount.utils import read_json, write_json

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MODEL_FILE = "model.json"

MODEL_KINDS = {"counter": CounterModel, "segmenter": SegModel}

# The command that writes each kind of model
PRODUCERS = {"counter": "train-base", "segmenter": "train-seg"}


def model_to_dict(model, fingerprint=None):
    return {
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "r": model.r,
        "d": model.d,
        "exemplar_size": model.exemplar_size,
        "fingerprint": fingerprint,
        "params": {
            name: {"shape": list(value.shape), "data": value.ravel().tolist()}
            for name, value in sorted(model.params.items())
        },
        "history": [float(x) for x in model.state.loss_history],
    }


def save_model(model, directory, fingerprint=None):
    """
    Write model.json into directory and return its path.
    """
    filename = os.path.join(directory, MODEL_FILE)
    write_json(filename, model_to_dict(model, fingerprint))
    logger.info("Saved %s model to %s", model.kind, filename)
    return filename


def load_model(directory, kind):
    """
    Load a model written by save_model.

    Parameters
    ----------
    directory
        Folder holding model.json.
    kind
        "counter" or "segmenter"; a file of the other kind is rejected.

    Returns the model and the fingerprint it was trained under.
    """
    filename = os.path.join(directory, MODEL_FILE)
    if not os.path.exists(filename):
        raise MissingArtifactError(filename, PRODUCERS[kind])
    try:
        record = read_json(filename)
    except ValueError as e:
        raise SceneFormatError(filename, "json", getattr(e, "pos", None), str(e))

    try:
        if record["version"] != FORMAT_VERSION:
            raise SceneFormatError(filename, "version", reason=f"expected {FORMAT_VERSION}")
        if record["kind"] != kind:
            raise SceneFormatError(filename, "kind", reason=f"expected {kind}, found {record['kind']}")
        params = {
            name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in record["params"].items()
        }
        model = MODEL_KINDS[kind](
            r=int(record["r"]),
            d=int(record["d"]),
            exemplar_size=int(record.get("exemplar_size", 32)),
            params=params,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SceneFormatError(filename, "params", reason=str(e))

    reference = model.extractor.init(np.random.default_rng(0))
    if kind == "counter":
        reference.update(model.counter.init(np.random.default_rng(0)))
    if set(params) != set(reference):
        raise SceneFormatError(filename, "params", reason="parameter names do not match the architecture")
    for name, value in params.items():
        if value.shape != reference[name].shape:
            raise SceneFormatError(
                filename, f"params.{name}", reason=f"shape {value.shape}, expected {reference[name].shape}"
            )
        if not np.all(np.isfinite(value)):
            raise SceneFormatError(filename, f"params.{name}", reason="non-finite values")

    history = [float(x) for x in record.get("history", [])]
    model.state = TrainingState(epoch=len(history), loss_history=history)
    return model, record.get("fingerprint")
