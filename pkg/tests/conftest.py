import numpy as np
import pytest

from maskcount.counter import CounterModel
from maskcount.scene import DotAnnotation, ExemplarBox, Scene
from maskcount.segmenter import SegModel


def make_scene(
    seed=0,
    size=16,
    dots=((5.0, 6.0), (11.0, 10.0)),
    boxes=((2.0, 3.0, 8.0, 9.0),),
    target=0,
    region=None,
    meta=None,
    other_dots=(),
):
    """
    Small hand-made scene with a random (8-bit) image.
    """
    rng = np.random.default_rng(seed)
    image = np.rint(rng.uniform(0, 1, size=(3, size, size)) * 255.0) / 255.0
    all_dots = [DotAnnotation(x, y, target) for x, y in dots]
    all_dots += [DotAnnotation(x, y, target + 1) for x, y in other_dots]
    exemplars = [ExemplarBox(*box, class_id=target) for box in boxes]
    return Scene(image, all_dots, exemplars, target, region, meta or {"seed": seed})


TARGET_CELLS = [(1, 1), (3, 1), (5, 1), (6, 2)]
DISTRACTOR_CELLS = [(1, 6), (3, 6), (5, 6)]


def two_class_scene():
    """
    32x32 scene on black: cell-sized squares of a target colour on the left
    and of a close distractor colour on the right, one exemplar.
    """
    image = np.zeros((3, 32, 32))
    dots = []
    for cells, colour, class_id in ((TARGET_CELLS, (0.9, 0.1, 0.1), 0), (DISTRACTOR_CELLS, (0.9, 0.35, 0.1), 1)):
        for i, j in cells:
            image[:, 4 * i : 4 * i + 4, 4 * j : 4 * j + 4] = np.array(colour)[:, None, None]
            dots.append(DotAnnotation(4 * j + 2.0, 4 * i + 2.0, class_id))
    return Scene(image, dots, [ExemplarBox(4.0, 4.0, 8.0, 8.0, 0)], 0, "left", {"seed": 0, "seam": 16})


@pytest.fixture
def scene():
    return make_scene()


@pytest.fixture
def tiny_counter():
    return CounterModel(r=4, d=2, exemplar_size=8, rng=np.random.default_rng(0))


@pytest.fixture
def tiny_seg():
    return SegModel(r=4, d=2, exemplar_size=8, rng=np.random.default_rng(1))


def _close(a, b, rtol, atol):
    return abs(a - b) <= atol + rtol * abs(b)


def check_gradients(loss, params, grads, rng, per_array=10, h=1e-4, rtol=1e-4, atol=1e-6):
    """
    Compare analytic gradients with central differences on a sample of
    entries of every parameter array.

    An entry where the loss has a kink inside [-h, h] (a ReLU or argmin
    switching) is accepted when the analytic value matches one of the
    one-sided differences instead. At most a tenth of the entries may be
    such kinks.
    """
    checked = 0
    kinks = 0
    for name in sorted(params):
        value = params[name]
        picks = rng.choice(value.size, size=min(per_array, value.size), replace=False)
        for i in picks:
            old = value.flat[i]
            value.flat[i] = old + h
            up = loss(params)
            value.flat[i] = old - h
            down = loss(params)
            value.flat[i] = old
            mid = loss(params)

            analytic = grads[name].flat[i]
            central = (up - down) / (2 * h)
            checked += 1
            if _close(analytic, central, rtol, atol):
                continue

            forward = (up - mid) / h
            backward = (mid - down) / h
            kink = abs(forward - backward) > 1e-3 * max(1.0, abs(central))
            one_sided = _close(analytic, forward, 1e-2, 1e-4) or _close(analytic, backward, 1e-2, 1e-4)
            assert kink and one_sided, f"{name}[{i}]: analytic {analytic}, central {central}"
            kinks += 1
    assert kinks <= checked // 10


@pytest.fixture
def gradient_check():
    return check_gradients
