from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdgcn.datacube import LabelMap, SplitSpec
from mdgcn.errors import ContractError, EvaluationError, FormatError, PaletteError
from mdgcn.evaluate import (
    decode_ppm,
    default_palette,
    evaluate,
    load_palette,
    metrics_from_confusion,
    predict_nodes,
    predict_pixels,
    render_map,
    save_palette,
)
from mdgcn.superpixel import Segmentation


def exact_metrics(truth, pred, n_classes):
    """Confusion counted pixel by pixel and scalars in exact rationals."""
    conf = [[0] * n_classes for _ in range(n_classes)]
    for t, p in zip(truth, pred):
        conf[t - 1][p - 1] += 1
    total = sum(map(sum, conf))
    rows = [sum(r) for r in conf]
    cols = [sum(conf[i][j] for i in range(n_classes)) for j in range(n_classes)]
    oa = Fraction(sum(conf[k][k] for k in range(n_classes)), total)
    accs = [Fraction(conf[k][k], rows[k]) for k in range(n_classes) if rows[k]]
    aa = sum(accs) / len(accs)
    pe = Fraction(sum(r * c for r, c in zip(rows, cols)), total * total)
    kappa = Fraction(1) if pe == 1 else (oa - pe) / (1 - pe)
    return conf, oa, aa, kappa


def test_predict_nodes_argmax_and_ties():
    assert predict_nodes(np.array([[0.1, 0.7, 0.2]])).tolist() == [2]
    assert predict_nodes(np.array([[0.5, 0.5]])).tolist() == [1]


def test_predict_pixels_inherit_superpixel_label():
    seg = Segmentation(np.array([[0, 0, 1], [2, 2, 1]]))
    probs = np.array([[0.1, 0.7, 0.2], [0.5, 0.5, 0.0], [0.0, 0.1, 0.9]])
    pred = predict_pixels(probs, seg)
    assert pred.tolist() == [[2, 2, 1], [3, 3, 1]]
    for members in seg.member_lists:
        assert len(set(pred.ravel()[members].tolist())) == 1
    with pytest.raises(ContractError):
        predict_pixels(probs[:2], seg)


def test_singleton_superpixel_labels_one_pixel():
    seg = Segmentation(np.array([[0, 1, 1]]))
    pred = predict_pixels(np.array([[0.0, 1.0], [1.0, 0.0]]), seg)
    assert (pred == 2).sum() == 1


@pytest.mark.parametrize(
    "conf,oa,aa,kappa",
    [
        ([[2, 0], [0, 2]], 1.0, 1.0, 1.0),
        ([[1, 1], [1, 1]], 0.5, 0.5, 0.0),
        ([[3, 1], [1, 3]], 0.75, 0.75, 0.5),
        ([[5, 0], [0, 0]], 1.0, 1.0, 1.0),
    ],
)
def test_confusion_examples(conf, oa, aa, kappa):
    r = metrics_from_confusion(np.array(conf))
    assert (r.oa, r.aa) == (oa, aa)
    assert r.kappa == pytest.approx(kappa, abs=1e-15)


def test_aa_skips_classes_without_test_pixels():
    r = metrics_from_confusion(np.array([[3, 1, 0], [0, 0, 0], [0, 2, 2]]))
    assert np.isnan(r.per_class_acc[1])
    assert r.aa == pytest.approx((0.75 + 0.5) / 2)
    assert r.to_dict()["per_class"][1] is None


def test_evaluate_excludes_unlabeled_and_split_pixels():
    truth = LabelMap(np.array([[1, 1, 0], [2, 2, 2]]))
    pred = np.array([[1, 2, 2], [2, 1, 2]])
    split = SplitSpec([(0, 0, 1)], [(1, 1, 2)])
    r = evaluate(pred, truth, exclude=split)
    assert r.confusion.tolist() == [[0, 1], [0, 2]]
    assert r.confusion.sum() == 3
    assert evaluate(pred, truth).confusion.sum() == 5


def test_evaluate_with_no_test_pixels():
    truth = LabelMap(np.array([[1, 0]]))
    with pytest.raises(EvaluationError):
        evaluate(np.array([[1, 1]]), truth, exclude=SplitSpec([(0, 0, 1)], []))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 80), st.integers(0, 2**32 - 1))
def test_metrics_agree_with_exact_arithmetic(n_classes, n, seed):
    rng = np.random.default_rng(seed)
    truth = rng.integers(1, n_classes + 1, size=n)
    pred = np.where(rng.uniform(size=n) < 0.6, truth, rng.integers(1, n_classes + 1, size=n))
    truth[-1] = n_classes  # keep the class count fixed
    r = evaluate(pred.reshape(1, n), LabelMap(truth.reshape(1, n)))
    conf, oa, aa, kappa = exact_metrics(truth.tolist(), pred.tolist(), n_classes)
    assert r.confusion.tolist() == conf
    assert abs(r.oa - float(oa)) <= 1e-12
    assert abs(r.aa - float(aa)) <= 1e-12
    assert abs(r.kappa - float(kappa)) <= 1e-12
    assert -1.0 <= r.kappa <= 1.0
    assert (r.kappa == 1.0) == bool((np.diag(np.diag(r.confusion)) == r.confusion).all())


def test_kappa_zero_for_proportional_rows():
    r = metrics_from_confusion(np.array([[2, 4], [1, 2]]))
    assert r.kappa == pytest.approx(0.0, abs=1e-15)


def test_render_two_pixel_map():
    data = render_map(np.array([[0, 1]]), {0: (0, 0, 0), 1: (255, 0, 0)})
    assert data == b"P6 2 1 255\n\x00\x00\x00\xff\x00\x00"


def test_render_all_zero_map_is_black():
    rgb = decode_ppm(render_map(np.zeros((3, 4), dtype=int)))
    assert rgb.shape == (3, 4, 3) and not rgb.any()


def test_ppm_round_trip():
    rng = np.random.default_rng(0)
    pred = rng.integers(0, 6, size=(7, 5))
    palette = default_palette(5)
    rgb = decode_ppm(render_map(pred, palette))
    expected = np.array([[palette[k] for k in row] for row in pred.tolist()], dtype=np.uint8)
    np.testing.assert_array_equal(rgb, expected)
    assert len(set(palette.values())) == 6


def test_decode_ppm_with_comment():
    rgb = decode_ppm(b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03")
    assert rgb.tolist() == [[[1, 2, 3]]]
    with pytest.raises(FormatError):
        decode_ppm(b"P3 1 1 255\n000")


def test_palette_must_cover_every_label():
    with pytest.raises(PaletteError):
        render_map(np.array([[0, 3]]), {0: (0, 0, 0), 1: (1, 1, 1)})


def test_palette_file(tmp_path):
    p = tmp_path / "pal.csv"
    save_palette(p, {0: (0, 0, 0), 1: (10, 20, 30)})
    assert p.read_text() == "0,0,0,0\n1,10,20,30\n"
    assert load_palette(p) == {0: (0, 0, 0), 1: (10, 20, 30)}
    p.write_text("1,300,0,0\n")
    with pytest.raises(PaletteError):
        load_palette(p)


def test_report_json(tmp_path):
    import json

    r = metrics_from_confusion(np.array([[3, 1], [1, 3]]))
    r.save(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert set(d) == {"confusion", "per_class", "oa", "aa", "kappa"}
    assert d["confusion"] == [[3, 1], [1, 3]]
