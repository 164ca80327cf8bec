"""
Pipeline commands.

Each command reads what earlier commands wrote, writes its own artifact
stamped with the config fingerprint, and returns a small summary dict that
the command line prints.
"""

import collections
import functools
import logging
import os

import numpy as np

from maskcount import dataset, evaluate, imageio, pseudo, settings, store
from maskcount.counter import CounterModel, count, make_exemplars, train_base
from maskcount.errors import ConfigError, MissingArtifactError, NumericError
from maskcount.nn import TrainCfg
from maskcount.scene import load_scene
from maskcount.segmenter import SegModel, masked_density, predict_mask, segment, train_seg
from maskcount.utils import parallel_map, progress_bar, write_json

logger = logging.getLogger(__name__)

PSEUDO_DIR = "pseudo_masks"
DOTBOX_STRATEGIES = [f"dotbox:{mode}" for mode in pseudo.SIZE_MODES]
THRESHOLD_STRATEGIES = [f"threshold:{tau}" for tau in pseudo.THRESHOLDS]
LABEL_STRATEGIES = DOTBOX_STRATEGIES + THRESHOLD_STRATEGIES + ["kmeans"]
# the kmeans-trained segmenter is the one train-seg already made
RETRAIN_STRATEGIES = DOTBOX_STRATEGIES + THRESHOLD_STRATEGIES
ABLATION_ROWS = ["none"] + LABEL_STRATEGIES + ["segmenter"]


class Workspace:
    """
    Where a run reads and writes, resolved from the [paths] section.

    Relative paths are taken from `base` (the working directory by default).
    """

    def __init__(self, cfg, base=None):
        base = base or os.getcwd()
        self.cfg = cfg
        self.data_dir = os.path.join(base, cfg.paths.data_dir)
        self.models_dir = os.path.join(base, cfg.paths.models_dir)
        self.reports_dir = os.path.join(base, cfg.paths.reports_dir)
        self.fingerprint = cfg.fingerprint()

    def model_dir(self, kind):
        return os.path.join(self.models_dir, kind)

    def pseudo_dir(self):
        return os.path.join(self.data_dir, PSEUDO_DIR)

    def pseudo_file(self, sid):
        return os.path.join(self.pseudo_dir(), f"{sid}.json")

    def report_dir(self, command):
        return os.path.join(self.reports_dir, command)


def check_fingerprint(found, ws, what, strict=False, force=False):
    """
    Compare an artifact's fingerprint with the current config.

    A mismatch is an error when strict (unless forced) and a warning
    otherwise.
    """
    if found == ws.fingerprint:
        return True
    message = f"{what} was made under config {found}, this run is {ws.fingerprint}"
    if strict and not force:
        raise ConfigError(f"{message}. Re-run the earlier commands or pass --force to compare anyway.")
    logger.warning(message)
    return False


def train_cfg(cfg):
    return TrainCfg(cfg.train.epochs, cfg.train.lr, cfg.train.batch, cfg.seed, cfg.train.clip)


def seg_train_cfg(cfg):
    return TrainCfg(cfg.segmenter.epochs, cfg.segmenter.lr, cfg.segmenter.batch, cfg.seed, cfg.train.clip)


def load_models(ws, kinds=("counter", "segmenter"), strict=False, force=False):
    models = []
    for kind in kinds:
        model, fingerprint = store.load_model(ws.model_dir(kind), kind)
        check_fingerprint(fingerprint, ws, f"The {kind} model", strict, force)
        models.append(model)
    return models


def load_scenes(ws, split, kind, strict=False, force=False):
    manifest = dataset.load_manifest(ws.data_dir)
    check_fingerprint(manifest.get("fingerprint"), ws, "The dataset", strict, force)
    return dataset.load_split(ws.data_dir, split, kind, manifest)


def load_pseudo_masks(ws, items):
    masks = []
    for sid, _ in items:
        filename = ws.pseudo_file(sid)
        if not os.path.exists(filename):
            raise MissingArtifactError(filename, "pseudo-label")
        masks.append(pseudo.load_result(filename).mask)
    return masks


def write_density(density, filename):
    imageio.write_pgm(density, filename, 0.0, max(float(np.max(density)), 1e-12))


def cmd_gen(cfg, ws):
    manifest = dataset.generate_dataset(cfg, ws.data_dir)
    kinds = collections.Counter(f"{e['split']}/{e['kind']}" for e in manifest["scenes"])
    return {"manifest": os.path.join(ws.data_dir, dataset.MANIFEST), "scenes": dict(sorted(kinds.items()))}


def masked_out_share(counter, scenes):
    """
    Count left over when the whole similarity map is masked, as a share of
    the unmasked count, averaged over scenes.

    Near 1 means the counter ignores the similarity map and no mask can
    change its counts.
    """
    shares = []
    for scene in scenes:
        unmasked = count(evaluate.unmasked_density(counter, scene))
        if unmasked > 0:
            blank = np.zeros((scene.height // counter.r, scene.width // counter.r))
            shares.append(count(evaluate.mask_density(counter, blank, scene)) / unmasked)
    share = float(np.mean(shares)) if shares else 0.0
    if share > 0.5:
        logger.warning("Masking the whole similarity map keeps %.0f%% of the count", 100 * share)
    else:
        logger.info("Masking the whole similarity map keeps %.0f%% of the count", 100 * share)
    return share


def cmd_train_base(cfg, ws):
    """
    Train the counter on the single-class train split.
    """
    scenes = [s for _, s in load_scenes(ws, "train", "single")]
    if not scenes:
        raise ConfigError("[data] train must be at least 1 to train the counter")

    rng = settings.rng_for(cfg.seed, "train-base")
    model = CounterModel(cfg.model.r, cfg.model.d, cfg.model.exemplar_size, rng=rng)
    train_base(model, scenes, train_cfg(cfg), cfg.model.sigma, rng, cfg.train.masked_copies)
    history = model.state.loss_history
    if history[-1] >= history[0]:
        logger.warning("Training loss did not go down (%.4f -> %.4f)", history[0], history[-1])
    path = store.save_model(model, ws.model_dir("counter"), ws.fingerprint)

    summary = {"model": path, "initial_loss": history[0], "final_loss": history[-1]}
    val = load_scenes(ws, "val", "single")
    if val:
        outcomes = evaluate.evaluate_scenes(functools.partial(evaluate.unmasked_density, model), val, model.r)
        summary["val_mae"] = evaluate.aggregate(outcomes, multiclass=False).mae
        logger.info("Single-class validation MAE %.3f", summary["val_mae"])
        summary["masked_out_share"] = masked_out_share(model, [s for _, s in val])
    return summary


def _label_one(counter, k_range, seed, sigma, n_init, ws, dump_images, item):
    """
    K-Means pseudo mask for one scene, written to its file (runs in a worker).
    """
    sid, scene = item
    rng = settings.rng_for(seed, f"kmeans/{sid}")
    result = pseudo.optimal_k_mask(counter, scene, k_range, rng, sigma, n_init)
    pseudo.save_result(result, ws.pseudo_file(sid), ws.fingerprint)
    if dump_images:
        directory = os.path.join(ws.pseudo_dir(), "pgm")
        pseudo.dump_masks(result, directory, sid)
        for k, mask in sorted(result.per_k_mask.items()):
            density = evaluate.mask_density(counter, mask, scene)
            write_density(density, os.path.join(directory, f"{sid}.k{k}.density.pgm"))
    return sid, result.k_star


def cmd_pseudo_label(cfg, ws, dump_images=False):
    """
    Write the optimal-K pseudo mask of every train and val multi-class scene.

    Every written file is read back and its k_star checked against the
    argmin of its own per-k losses.
    """
    (counter,) = load_models(ws, ["counter"])
    items = load_scenes(ws, "train", "multi") + load_scenes(ws, "val", "multi")
    if not items:
        raise ConfigError("No multi-class train or val scenes to label, raise [data] multi_train")

    job = functools.partial(
        _label_one, counter, cfg.k_range, cfg.seed, cfg.model.sigma, cfg.pseudo.n_init, ws, dump_images
    )
    labeled = parallel_map(job, progress_bar(items, desc="pseudo-label"))

    for sid, _ in labeled:
        stored = pseudo.load_result(ws.pseudo_file(sid))
        expected = pseudo.select_k(stored.per_k_loss)
        if stored.k_star != expected:
            raise NumericError(
                "Stored k* is not the argmin of its per-k losses",
                scene=sid,
                k_star=stored.k_star,
                argmin=expected,
            )

    chosen = collections.Counter(k for _, k in labeled)
    histogram = {str(k): chosen[k] for k in sorted(chosen)}
    logger.info("Labeled %d scenes, k* histogram %s", len(labeled), histogram)
    index = {"fingerprint": ws.fingerprint, "k_star": {sid: k for sid, k in labeled}, "histogram": histogram}
    write_json(os.path.join(ws.pseudo_dir(), "index.json"), index)
    return {"masks": ws.pseudo_dir(), "scenes": len(labeled), "k_star_histogram": histogram}


def validation_iou(seg, items, masks, tau):
    preds = [segment(seg, scene, tau) for _, scene in items]
    return evaluate.mean_iou(preds, masks)


def _train_segmenter(cfg, items, masks):
    rng = settings.rng_for(cfg.seed, "train-seg")
    seg = SegModel(cfg.model.r, cfg.model.d, cfg.model.exemplar_size, rng=rng)
    train_seg(seg, [(scene, mask) for (_, scene), mask in zip(items, masks)], seg_train_cfg(cfg), rng)
    return seg


def cmd_train_seg(cfg, ws):
    """
    Train the segmenter on the train pseudo masks and score it on val.
    """
    items = load_scenes(ws, "train", "multi")
    if not items:
        raise ConfigError("[data] multi_train must be at least 1 to train the segmenter")
    seg = _train_segmenter(cfg, items, load_pseudo_masks(ws, items))
    path = store.save_model(seg, ws.model_dir("segmenter"), ws.fingerprint)
    history = seg.state.loss_history
    summary = {"model": path, "initial_loss": history[0], "final_loss": history[-1]}

    val = load_scenes(ws, "val", "multi")
    if val:
        iou = validation_iou(seg, val, load_pseudo_masks(ws, val), cfg.segmenter.tau)
        summary["val_iou"] = iou
        if iou < cfg.eval.iou_min:
            logger.warning("Segmenter validation IoU %.3f is below %.2f", iou, cfg.eval.iou_min)
        else:
            logger.info("Segmenter validation IoU %.3f", iou)
    write_json(os.path.join(ws.report_dir("train-seg"), "validation.json"), {**summary, "fingerprint": ws.fingerprint})
    return summary


def cmd_count(cfg, ws, scene_dir, dump_images=False):
    """
    Count one scene bundle with and without the segmenter mask.
    """
    counter, seg = load_models(ws)
    scene = load_scene(scene_dir)
    tau = cfg.segmenter.tau

    mask = segment(seg, scene, tau)
    density = masked_density(counter, seg, scene, tau, mask)
    result = {
        "scene": scene_dir,
        "count": count(density),
        "unmasked_count": count(evaluate.unmasked_density(counter, scene)),
        "ground_truth": scene.count,
        "mask_coverage": float(mask.mean()),
        "fingerprint": ws.fingerprint,
    }
    if scene.is_multiclass:
        interest, other = evaluate.split_count_by_region(density, scene, counter.r)
        result.update({"interest_count": interest, "non_interest_count": other})

    name = os.path.basename(os.path.normpath(scene_dir))
    out_dir = ws.report_dir("count")
    write_json(os.path.join(out_dir, f"{name}.json"), result)
    if dump_images:
        soft = predict_mask(seg, scene.image, make_exemplars(scene, seg.exemplar_size))
        imageio.write_pgm(soft, os.path.join(out_dir, f"{name}.mask.pgm"), -1.0, 1.0)
        imageio.write_pgm(mask, os.path.join(out_dir, f"{name}.binary.pgm"))
        write_density(density, os.path.join(out_dir, f"{name}.density.pgm"))
    logger.info("%s: count %.2f (unmasked %.2f, ground truth %d)", name, result["count"], result["unmasked_count"], scene.count)
    return result


def exemplar_embeddings(counter, items):
    """
    Pooled counter features of every exemplar, with its class id.
    """
    pairs = []
    for _, scene in items:
        vectors = [counter.pooled(crop) for crop in make_exemplars(scene, counter.exemplar_size)]
        pairs.extend((v, scene.target_class) for v in vectors)
    return pairs


def cmd_eval(cfg, ws, force=False):
    """
    Unmasked and segmenter counting on the single and multi-class test
    splits, plus exemplar feature distances.
    """
    counter, seg = load_models(ws, strict=True, force=force)
    record_time = cfg.eval.record_time
    methods = [
        ("w/o mask", functools.partial(evaluate.unmasked_density, counter)),
        ("segmenter", functools.partial(masked_density, counter, seg, tau=cfg.segmenter.tau)),
    ]

    rows = []
    singles = []
    for suite in ("single", "multi"):
        items = load_scenes(ws, "test", suite, strict=True, force=force)
        if suite == "single":
            singles = items
        if not items:
            logger.warning("No %s-class test scenes, skipping that suite", suite)
            continue
        for method, density in methods:
            outcomes = evaluate.evaluate_scenes(density, items, counter.r, record_time, desc=f"eval {suite}")
            report = evaluate.aggregate(outcomes, multiclass=suite == "multi", fingerprint=ws.fingerprint)
            rows.append(evaluate.report_row(method, report, suite=suite))
            logger.info("%s / %s: MAE %.3f RMSE %.3f", suite, method, report.mae, report.rmse)

    distance = None
    if len({scene.target_class for _, scene in singles}) >= 2:
        stats = evaluate.distance_stats(exemplar_embeddings(counter, singles))
        distance = {"intra": stats.intra, "inter": stats.inter}
        logger.info("Exemplar feature distances: intra %.4f inter %.4f", stats.intra, stats.inter)
    else:
        logger.warning("Fewer than two classes in the single-class test split, no distance statistics")

    directory = ws.report_dir("eval")
    evaluate.write_report(rows, directory, "report", fingerprint=ws.fingerprint, distance=distance, config=cfg.to_dict())
    return {"report": os.path.join(directory, "report.csv"), "rows": rows, "distance": distance}


def _strategy_density(counter, strategy, k_range, seed, sigma, n_init, scene):
    rng = settings.rng_for(seed, f"kmeans/{scene.meta['seed']}")
    result = pseudo.label_scene(strategy, counter, scene, k_range, rng, sigma, n_init)
    return evaluate.mask_density(counter, result.mask, scene)


def _fixed_k_density(counter, k, seed, n_init, scene):
    rng = settings.rng_for(seed, f"kmeans/{scene.meta['seed']}")
    grid, points = pseudo.scene_embeddings(scene, counter.r)
    return evaluate.mask_density(counter, pseudo.kmeans_mask(grid, points, k, rng, n_init), scene)


def _label_for_training(counter, strategy, cfg, items):
    masks = []
    for sid, scene in progress_bar(items, desc=f"label {strategy}"):
        rng = settings.rng_for(cfg.seed, f"kmeans/{sid}")
        result = pseudo.label_scene(strategy, counter, scene, cfg.k_range, rng, cfg.model.sigma, cfg.pseudo.n_init)
        masks.append(result.mask)
    return masks


def ordering_checks(mae):
    """
    Whether the expected error orderings between strategies hold.

    The strategy ranking compares segmenters trained on each strategy's
    masks when those rows are present (`[ablate] retrain`), and the masks
    applied directly otherwise.
    """
    trained = all(f"segmenter[{s}]" in mae for s in DOTBOX_STRATEGIES)
    if trained:
        ours = mae["segmenter"]
        best_dotbox = min(mae[f"segmenter[{s}]"] for s in DOTBOX_STRATEGIES)
    else:
        ours = max(mae["kmeans"], mae["segmenter"])
        best_dotbox = min(mae[s] for s in DOTBOX_STRATEGIES)
    checks = {
        "kmeans_masking_helps": mae["kmeans"] <= 0.7 * mae["none"],
        "segmenter_masking_helps": mae["segmenter"] <= mae["none"],
        "strategy_ranking": ours < best_dotbox < mae["none"],
        "threshold_0.4_beats_0.8": mae["threshold:0.4"] < mae["threshold:0.8"],
    }
    for name, ok in checks.items():
        if ok:
            logger.info("Ordering check %s holds", name)
        else:
            logger.warning("Ordering check %s does not hold", name)
    return checks


def cmd_ablate(cfg, ws, force=False):
    """
    Compare pseudo-label strategies on the multi-class test split.

    Writes ablate.csv (one row per strategy) and ablate_k.csv (K-Means
    masks at every fixed k, next to the segmenter).
    """
    counter, seg = load_models(ws, strict=True, force=force)
    items = load_scenes(ws, "test", "multi", strict=True, force=force)
    if not items:
        raise ConfigError("[data] multi_test must be at least 1 to run the ablation")
    r, tau, seed, sigma = counter.r, cfg.segmenter.tau, cfg.seed, cfg.model.sigma
    record_time = cfg.eval.record_time

    def run(method, density):
        outcomes = evaluate.evaluate_scenes(density, items, r, record_time, desc=f"ablate {method}")
        return evaluate.report_row(method, evaluate.aggregate(outcomes, True, ws.fingerprint))

    rows = []
    for strategy in ABLATION_ROWS:
        if strategy == "none":
            density = functools.partial(evaluate.unmasked_density, counter)
        elif strategy == "segmenter":
            density = functools.partial(masked_density, counter, seg, tau=tau)
        else:
            density = functools.partial(
                _strategy_density, counter, strategy, cfg.k_range, seed, sigma, cfg.pseudo.n_init
            )
        rows.append(run(strategy, density))

    if cfg.ablate.retrain:
        train_items = load_scenes(ws, "train", "multi")
        for strategy in RETRAIN_STRATEGIES:
            masks = _label_for_training(counter, strategy, cfg, train_items)
            trained = _train_segmenter(cfg, train_items, masks)
            rows.append(run(f"segmenter[{strategy}]", functools.partial(masked_density, counter, trained, tau=tau)))

    kmin, kmax = cfg.k_range
    k_rows = [
        run(f"k={k}", functools.partial(_fixed_k_density, counter, k, seed, cfg.pseudo.n_init))
        for k in range(kmin, kmax + 1)
    ]
    k_rows.append(next(row for row in rows if row["method"] == "segmenter"))

    checks = ordering_checks({row["method"]: row["mae"] for row in rows})
    directory = ws.report_dir("ablate")
    evaluate.write_report(rows, directory, "ablate", fingerprint=ws.fingerprint, checks=checks)
    evaluate.write_report(k_rows, directory, "ablate_k", fingerprint=ws.fingerprint)
    return {"report": os.path.join(directory, "ablate.csv"), "rows": rows, "checks": checks}


def timing_checks(times, k_range):
    kmin, kmax = k_range
    kmeans = [times[f"k={k}"] for k in range(kmin, kmax + 1)]
    rising = sum(b >= a for a, b in zip(kmeans, kmeans[1:]))
    checks = {
        "segmenter_faster_than_kmeans": times["segmenter"] < times[f"k={kmin}"],
        "kmeans_time_grows_with_k": rising >= len(kmeans) - 2,
    }
    for name, ok in checks.items():
        if ok:
            logger.info("Timing check %s holds", name)
        else:
            logger.warning("Timing check %s does not hold", name)
    return checks


def cmd_bench_time(cfg, ws):
    """
    Per-scene masking cost of every path on the multi-class test split.
    """
    counter, seg = load_models(ws)
    scenes = [scene for _, scene in load_scenes(ws, "test", "multi")]
    rng = settings.rng_for(cfg.seed, "kmeans")
    table = evaluate.bench_timing(counter, seg, scenes, cfg.k_range, cfg.segmenter.tau, rng, n_init=cfg.pseudo.n_init)
    times = {name: float(value) for name, value in table.iloc[0].items()}
    checks = timing_checks(times, cfg.k_range)

    directory = ws.report_dir("bench-time")
    os.makedirs(directory, exist_ok=True)
    table.to_csv(os.path.join(directory, "timing.csv"), index=False)
    write_json(
        os.path.join(directory, "timing.json"),
        {
            "mean_time_s": times,
            "timed_scenes": len(scenes) - evaluate.WARMUP_SCENES,
            "checks": checks,
            "fingerprint": ws.fingerprint,
        },
    )
    return {"report": os.path.join(directory, "timing.csv"), "mean_time_s": times, "checks": checks}
