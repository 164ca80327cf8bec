import pytest

from maskcount.pipeline import DOTBOX_STRATEGIES, ordering_checks, timing_checks

MAE = {
    "none": 10.0,
    "dotbox:mean": 6.0,
    "dotbox:min": 7.0,
    "dotbox:max": 8.0,
    "threshold:0.2": 9.0,
    "threshold:0.4": 5.0,
    "threshold:0.6": 6.0,
    "threshold:0.8": 8.0,
    "kmeans": 4.0,
    "segmenter": 3.0,
}


def test_direct_masks_rank_below_dotbox():
    checks = ordering_checks(MAE)
    assert checks == {
        "kmeans_masking_helps": True,
        "segmenter_masking_helps": True,
        "strategy_ranking": True,
        "threshold_0.4_beats_0.8": True,
    }


def test_direct_ranking_uses_the_worse_of_kmeans_and_segmenter():
    checks = ordering_checks({**MAE, "kmeans": 6.5})
    assert checks["kmeans_masking_helps"]
    assert not checks["strategy_ranking"]


def test_kmeans_needs_a_clear_margin():
    checks = ordering_checks({**MAE, "kmeans": 7.5})
    assert not checks["kmeans_masking_helps"]
    assert checks["segmenter_masking_helps"]


def test_retrained_rows_take_over_the_ranking():
    retrained = {f"segmenter[{s}]": mae for s, mae in zip(DOTBOX_STRATEGIES, (2.5, 5.0, 5.0))}
    checks = ordering_checks({**MAE, **retrained})
    assert not checks["strategy_ranking"]

    retrained = {f"segmenter[{s}]": mae for s, mae in zip(DOTBOX_STRATEGIES, (3.5, 5.0, 5.0))}
    assert ordering_checks({**MAE, "kmeans": 9.0, **retrained})["strategy_ranking"]


@pytest.mark.parametrize("none, helps", [(3.0, True), (2.9, False)])
def test_segmenter_may_tie_unmasked(none, helps):
    assert ordering_checks({**MAE, "none": none})["segmenter_masking_helps"] is helps


def test_timing_checks():
    times = {"segmenter": 0.01, "k=2": 0.1, "k=3": 0.2, "k=4": 0.15}
    assert timing_checks(times, (2, 4)) == {
        "segmenter_faster_than_kmeans": True,
        "kmeans_time_grows_with_k": True,
    }
    assert not timing_checks({**times, "segmenter": 0.5}, (2, 4))["segmenter_faster_than_kmeans"]
