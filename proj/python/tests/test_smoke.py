import json
from pathlib import Path

import numpy as np
import pytest

import tsgb

GOLDEN = Path(__file__).resolve().parents[2] / "tests" / "data" / "golden"


@pytest.fixture(scope="module")
def detector():
    return tsgb.load_model(GOLDEN / "detector.nnsm")


@pytest.fixture(scope="module")
def image():
    return tsgb.read_image(GOLDEN / "img_0000.ppm")


def test_model_metadata(detector):
    assert detector.input_shape == (3, 48, 48)
    assert detector.class_count == 3
    assert detector.validate() == []
    assert detector.layers[-1][1] == "Linear"


def test_bytes_round_trip(detector):
    data = detector.to_bytes()
    assert data == (GOLDEN / "detector.nnsm").read_bytes()
    assert tsgb.model_from_bytes(data).to_bytes() == data


def test_forward_matches_cli_sidecar(detector, image):
    side = json.loads((GOLDEN / "img_0000.c1.json").read_text())
    scores = tsgb.forward(detector, image)
    assert scores.shape == (3,)
    assert int(np.argmax(scores)) == side["predicted"]
    np.testing.assert_allclose(scores, side["scores"], rtol=1e-6)


def test_saliency_renders_the_cli_golden(detector, image):
    out = tsgb.saliency(detector, image)
    assert out["target"] == 1
    assert out["map"].shape == (48, 48)
    assert tsgb.render(out["map"]) == (GOLDEN / "img_0000.c1.pgm").read_bytes()
    side = json.loads((GOLDEN / "img_0000.c1.json").read_text())
    assert tsgb.argmax_point(tsgb.truncate(out["map"])) == (side["argmax"]["row"], side["argmax"]["col"])
    box = side["bbox"]
    assert tsgb.bbox(out["map"], 0.5) == (box["x0"], box["y0"], box["x1"], box["y1"])


def test_fast_and_direct_conv_agree(detector, image):
    fast = tsgb.saliency(detector, image, target=0, conv_impl="fast")["map"]
    direct = tsgb.saliency(detector, image, target=0, conv_impl="direct")["map"]
    assert np.abs(fast - direct).max() <= 1e-5 * np.abs(direct).max()


def test_errors_map_to_exceptions(detector, image, tmp_path):
    with pytest.raises(tsgb.IoError):
        tsgb.load_model(tmp_path / "missing.nnsm")
    with pytest.raises(tsgb.ArgumentError):
        tsgb.saliency(detector, image, target=7)
    with pytest.raises(tsgb.ArgumentError):
        tsgb.saliency(detector, image, rule_set="bogus")
    with pytest.raises(tsgb.ShapeError):
        tsgb.forward(detector, np.zeros((3, 8, 8), np.float32))
    assert issubclass(tsgb.DataError, tsgb.Error)


def test_spearman():
    a = [0.1, 0.5, 0.5, 2.0]
    assert tsgb.spearman(a, a) == 1.0
    assert tsgb.spearman(a, [-v for v in a]) == pytest.approx(-1.0)


def test_deletion_beats_random(detector, image):
    m = tsgb.saliency(detector, image)["map"]
    r = tsgb.deletion(detector, image, m, 1)
    assert len(r["probabilities"]) == 21
    assert r["auc"] < tsgb.random_deletion_auc(detector, image, 1, seeds=5)


def test_dataset_reports(tmp_path):
    model = tsgb.synthetic_detector()
    tsgb.make_synthetic_dataset(tmp_path, 6, seed=3)
    lines = tsgb.pointing_game(model, tmp_path, margin=0)
    records, aggregate = lines[:-1], lines[-1]
    assert len(records) == 6
    assert aggregate["aggregate"]["mean"] == 1.0

    same = tsgb.sanity(model, tmp_path, layers=[])
    assert all(r["values"]["rho"] == 1.0 for r in same[:-1])
    stages = tsgb.sanity(model, tmp_path, mode="cascading", seed=1)
    assert sum(1 for r in stages if "aggregate" in r) == 4


def test_image_round_trip(tmp_path, image):
    tsgb.write_image(image, tmp_path / "x.ppm")
    np.testing.assert_array_equal(tsgb.read_image(tmp_path / "x.ppm"), image)
