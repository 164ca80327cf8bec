"""
The on-disk dataset: scene bundles under data_dir/scenes and a manifest.
"""

import functools
import logging
import os
import shutil

from maskcount import settings
from maskcount.errors import ConfigError, MissingArtifactError, SceneFormatError
from maskcount.scene import SHAPE_LIBRARY, generate_single_class_scene, load_scene, save_scene, synthesize_multiclass
from maskcount.utils import parallel_map, progress_bar, read_json, write_json

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SCENES = "scenes"
SPLITS = ("train", "val", "test")
FORMAT_VERSION = 1


def scene_id(split, kind, index):
    prefix = f"{split}-multi" if kind == "multi" else split
    return f"{prefix}-{index:04d}"


def _write_single(canvas, data_dir, job):
    """
    Render and save one single-class scene (runs in a worker).
    """
    sid, class_id, seed = job
    scene = generate_single_class_scene(SHAPE_LIBRARY[class_id], canvas, seed, class_id)
    save_scene(scene, os.path.join(data_dir, SCENES, sid))
    return sid


def generate_dataset(cfg, data_dir):
    """
    Write every split of single-class scenes, the multi-class scenes built
    from them and the manifest.

    All draws come from the "gen" sub-stream in a fixed order (per-scene
    seeds and classes first, rendering after), so the dataset is a pure
    function of the config and seed whatever the worker count.

    Parameters
    ----------
    cfg
        Config; the [data] section gives the number of scenes per split.
    data_dir
        Output directory. Its scenes folder is replaced.
    """
    rng = settings.rng_for(cfg.seed, "gen")
    counts = {split: getattr(cfg.data, split) for split in SPLITS}
    multi_counts = {split: getattr(cfg.data, f"multi_{split}") for split in SPLITS}
    for split in SPLITS:
        if multi_counts[split] and counts[split] < 2:
            raise ConfigError(f"[data] multi_{split} needs at least two {split} scenes to combine")

    scenes_dir = os.path.join(data_dir, SCENES)
    if os.path.exists(scenes_dir):
        shutil.rmtree(scenes_dir)
    os.makedirs(scenes_dir)

    # Classes cycle through a shuffled library so every split has variety
    n_classes = len(SHAPE_LIBRARY)
    entries = []
    jobs = []
    for split in SPLITS:
        order = rng.permutation(n_classes)
        for i in range(counts[split]):
            class_id = int(order[i % n_classes])
            seed = int(rng.integers(0, 2**32))
            sid = scene_id(split, "single", i)
            jobs.append((sid, class_id, seed))
            entries.append(
                {
                    "id": sid,
                    "path": os.path.join(SCENES, sid),
                    "split": split,
                    "kind": "single",
                    "classes": [class_id],
                    "sources": [],
                }
            )

    write = functools.partial(_write_single, cfg.canvas, data_dir)
    parallel_map(write, progress_bar(jobs, desc="gen single"))

    singles = {e["id"]: e for e in entries}
    for split in SPLITS:
        pool = [e["id"] for e in entries if e["split"] == split]
        for i in progress_bar(range(multi_counts[split]), desc=f"gen {split} multi"):
            a_id, b_id = _pick_pair(pool, singles, rng)
            seed = int(rng.integers(0, 2**32))
            a = load_scene(os.path.join(data_dir, singles[a_id]["path"]))
            b = load_scene(os.path.join(data_dir, singles[b_id]["path"]))
            scene = synthesize_multiclass(a, b, seed, align=cfg.model.r)
            sid = scene_id(split, "multi", i)
            save_scene(scene, os.path.join(scenes_dir, sid))
            entries.append(
                {
                    "id": sid,
                    "path": os.path.join(SCENES, sid),
                    "split": split,
                    "kind": "multi",
                    "classes": [a.target_class, b.target_class],
                    "sources": [a_id, b_id],
                }
            )

    manifest = {
        "version": FORMAT_VERSION,
        "fingerprint": cfg.fingerprint(),
        "seed": cfg.seed,
        "scenes": entries,
    }
    write_json(os.path.join(data_dir, MANIFEST), manifest)
    n_multi = sum(e["kind"] == "multi" for e in entries)
    logger.info("Wrote %d single and %d multi-class scenes to %s", len(entries) - n_multi, n_multi, data_dir)
    return manifest


def _pick_pair(pool, singles, rng):
    """
    Two scenes of different classes, drawn uniformly.
    """
    classes = {singles[sid]["classes"][0] for sid in pool}
    if len(classes) < 2:
        raise ConfigError("A split needs scenes of at least two classes to build multi-class scenes")
    while True:
        a, b = rng.choice(len(pool), size=2, replace=False)
        a_id, b_id = pool[int(a)], pool[int(b)]
        if singles[a_id]["classes"] != singles[b_id]["classes"]:
            return a_id, b_id


def load_manifest(data_dir):
    filename = os.path.join(data_dir, MANIFEST)
    if not os.path.exists(filename):
        raise MissingArtifactError(filename, "gen")
    try:
        manifest = read_json(filename)
    except ValueError as e:
        raise SceneFormatError(filename, "json", getattr(e, "pos", None), str(e))
    if manifest.get("version") != FORMAT_VERSION or "scenes" not in manifest:
        raise SceneFormatError(filename, "version", reason="not a dataset manifest")
    return manifest


def load_split(data_dir, split, kind, manifest=None):
    """
    (scene id, Scene) pairs of one split and kind, in manifest order.
    """
    manifest = manifest or load_manifest(data_dir)
    return [
        (entry["id"], load_scene(os.path.join(data_dir, entry["path"])))
        for entry in manifest["scenes"]
        if entry["split"] == split and entry["kind"] == kind
    ]
