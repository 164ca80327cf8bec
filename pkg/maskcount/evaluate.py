"""
Counting metrics, region-aware errors, timing and embedding distances.
"""

import functools
import logging
import math
import os
import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import pandas
from river import metrics, stats
from scipy.spatial.distance import cdist
from sklearn.metrics import jaccard_score

from maskcount.counter import count, make_exemplars, predict_density
from maskcount.pseudo import kmeans_mask, scene_embeddings
from maskcount.segmenter import masked_density
from maskcount.utils import parallel_map, progress_bar, write_json

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["method", "n", "mae", "rmse", "nae", "sre", "mean_time_s", "excluded_nae"]
WARMUP_SCENES = 2


@dataclass
class CountOutcome:
    scene_id: str
    y: float
    yhat: float
    yhat_bar: float = 0.0
    wall_time_s: float = 0.0

    def __post_init__(self):
        if self.y < 0 or self.yhat < 0 or self.yhat_bar < 0:
            raise ValueError(f"Counts of {self.scene_id} must be non-negative")


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    nae: Optional[float]
    sre: Optional[float]
    n: int
    mean_time_s: float
    excluded_nae: int = 0
    fingerprint: Optional[str] = None

    def to_dict(self):
        return asdict(self)


@dataclass
class DistanceStats:
    intra: float
    inter: float


def scene_error(o, multiclass):
    """
    Absolute count error, plus whatever leaked into the non-interest side
    for multi-class scenes.

    >>> scene_error(CountOutcome("s", 10, 8, 3), multiclass=True)
    5.0
    """
    error = abs(o.y - o.yhat)
    if multiclass:
        error += o.yhat_bar
    return float(error)


def aggregate(outcomes, multiclass, fingerprint=None):
    """
    MAE, RMSE, NAE and SRE over a list of outcomes.

    NAE averages error / y and SRE is the root of the mean of error^2 / y;
    scenes with y = 0 are left out of both and counted in excluded_nae.
    When every scene is excluded, nae and sre are None.
    """
    if not outcomes:
        raise ValueError("Cannot aggregate an empty list of outcomes")

    mae_metric = metrics.MAE()
    rmse_metric = metrics.RMSE()
    nae_mean = stats.Mean()
    sre_mean = stats.Mean()
    time_mean = stats.Mean()
    excluded = 0

    for o in outcomes:
        error = scene_error(o, multiclass)
        mae_metric.update(error, 0.0)
        rmse_metric.update(error, 0.0)
        time_mean.update(o.wall_time_s)
        if o.y > 0:
            nae_mean.update(error / o.y)
            sre_mean.update(error**2 / o.y)
        else:
            excluded += 1

    if excluded:
        logger.warning("%d of %d scenes have no objects and are left out of NAE/SRE", excluded, len(outcomes))
    everything_excluded = excluded == len(outcomes)
    return MetricsReport(
        mae=float(mae_metric.get()),
        rmse=float(rmse_metric.get()),
        nae=None if everything_excluded else float(nae_mean.get()),
        sre=None if everything_excluded else math.sqrt(sre_mean.get()),
        n=len(outcomes),
        mean_time_s=float(time_mean.get()),
        excluded_nae=excluded,
        fingerprint=fingerprint,
    )


def split_count_by_region(d, scene, r):
    """
    Density mass on the interest side and on the other side of the seam.

    The seam column is the interest crop width recorded at synthesis time,
    divided by r.
    """
    if scene.interest_region is None:
        raise ValueError("Region split needs a multi-class scene with an interest region")
    d = np.asarray(d, dtype=np.float64)
    seam = int(scene.meta["seam"]) // r
    left = float(d[:, :seam].sum())
    right = float(d[:, seam:].sum())
    if scene.interest_region == "left":
        return left, right
    return right, left


def scene_outcome(method, r, item):
    """
    Evaluate one (scene id, scene) pair with a density-producing method.
    """
    scene_id, scene = item
    start = time.perf_counter()
    density = method(scene)
    elapsed = time.perf_counter() - start
    if scene.is_multiclass:
        yhat, yhat_bar = split_count_by_region(density, scene, r)
    else:
        yhat, yhat_bar = count(density), 0.0
    return CountOutcome(scene_id, float(scene.count), yhat, yhat_bar, elapsed)


def evaluate_scenes(method, scenes, r, record_time=False, desc="eval"):
    """
    Outcomes of a method over (scene id, scene) pairs, in input order.

    Timing is kept only when record_time is set, so reports stay identical
    across runs otherwise.
    """
    if record_time:
        outcomes = [scene_outcome(method, r, item) for item in progress_bar(scenes, desc=desc)]
    else:
        outcomes = parallel_map(functools.partial(scene_outcome, method, r), scenes)
        for o in outcomes:
            o.wall_time_s = 0.0
    return outcomes


def unmasked_density(counter, scene):
    return predict_density(counter, scene.image, make_exemplars(scene, counter.exemplar_size))


def mask_density(counter, mask, scene):
    return predict_density(counter, scene.image, make_exemplars(scene, counter.exemplar_size), mask)


def _timed(func, *args):
    start = time.perf_counter()
    func(*args)
    return time.perf_counter() - start


def _kmeans_path(counter, scene, k, rng, n_init=1):
    grid, points = scene_embeddings(scene, counter.r)
    return mask_density(counter, kmeans_mask(grid, points, k, rng, n_init), scene)


def bench_timing(counter, seg, scenes, k_range, tau, rng, warmup=WARMUP_SCENES, n_init=1):
    """
    Mean wall-clock seconds per scene of every masking path.

    Columns are "w/o mask", one "k=<k>" per K-Means k and "segmenter". Each
    path goes from the raw scene to a density map. The first `warmup`
    scenes are run but not timed. Runs strictly in order on one thread.

    Returns a one-row pandas DataFrame indexed "mean_time_s".
    """
    kmin, kmax = k_range
    if len(scenes) < 10:
        logger.warning("Timing over %d scenes, at least 10 give stable means", len(scenes))
    if len(scenes) <= warmup:
        raise ValueError(f"Need more than {warmup} scenes to time anything")

    paths = [("w/o mask", functools.partial(unmasked_density, counter))]
    for k in range(kmin, kmax + 1):
        paths.append((f"k={k}", functools.partial(_kmeans_path, counter, k=k, rng=rng, n_init=n_init)))
    paths.append(("segmenter", functools.partial(masked_density, counter, seg, tau=tau)))

    rows = []
    for index, scene in enumerate(progress_bar(scenes, desc="bench-time")):
        times = {name: _timed(path, scene) for name, path in paths}
        if index >= warmup:
            rows.append(times)

    table = pandas.DataFrame(rows, columns=[name for name, _ in paths])
    return table.mean().to_frame("mean_time_s").T


def distance_stats(embeddings):
    """
    Intra-class distance (mean distance of an embedding to its class
    center) and inter-class distance (mean over classes of the distance
    to the closest other center).

    Parameters
    ----------
    embeddings
        List of (vector, class id) pairs covering at least two classes.

    >>> distance_stats([((0.0, 0.0), 0), ((2.0, 0.0), 0), ((10.0, 0.0), 1)]).inter
    9.0
    """
    classes = sorted({c for _, c in embeddings})
    if len(classes) < 2:
        raise ValueError(f"Distance statistics need at least two classes, got {len(classes)}")
    vectors = np.array([np.asarray(v, dtype=np.float64) for v, _ in embeddings])
    labels = np.array([c for _, c in embeddings])

    centers = np.array([vectors[labels == c].mean(axis=0) for c in classes])
    own = centers[np.searchsorted(classes, labels)]
    intra = float(np.linalg.norm(vectors - own, axis=1).mean())

    between = cdist(centers, centers)
    np.fill_diagonal(between, np.inf)
    inter = float(between.min(axis=1).mean())
    return DistanceStats(intra, inter)


def mask_iou(pred, target):
    """
    IoU of the ones of two binary masks; two empty masks score 1.
    """
    pred = np.asarray(pred).ravel().astype(int)
    target = np.asarray(target).ravel().astype(int)
    return float(jaccard_score(target, pred, zero_division=1))


def mean_iou(preds, targets):
    if len(preds) != len(targets) or not preds:
        raise ValueError("Need equally many (and at least one) predicted and target masks")
    return float(np.mean([mask_iou(p, t) for p, t in zip(preds, targets)]))


def report_row(method, report, **extra):
    row = {"method": method, **extra}
    row.update({key: getattr(report, key) for key in REPORT_COLUMNS if key != "method"})
    return row


def write_report(rows, directory, name="report", **extra):
    """
    Write <name>.csv (one row per method) and <name>.json (rows plus
    anything in extra, full precision).
    """
    os.makedirs(directory, exist_ok=True)
    table = pandas.DataFrame(rows)
    columns = [c for c in table.columns if c not in REPORT_COLUMNS] + REPORT_COLUMNS
    table = table[[c for c in columns if c in table.columns]]
    csv_file = os.path.join(directory, f"{name}.csv")
    table.to_csv(csv_file, index=False)
    write_json(os.path.join(directory, f"{name}.json"), {"rows": rows, **extra})
    logger.info("Wrote %s", csv_file)
    return table
