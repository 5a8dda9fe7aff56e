import numpy as np
import pytest

import piaa

SPEC = """
classes = 4
dim = 12
images = 60
patches_per_image = 10
gap_angle_deg = 25
max_labels_per_image = 2
seed = 3
"""


def test_synth_fit_infer_evaluate():
    data, protos, truth = piaa.synth(SPEC)
    assert data.num_images == 60
    assert data.patches.shape == (600, 12)
    assert data.patches.dtype == np.float32
    assert np.allclose(np.linalg.norm(data.patches, axis=1), 1.0, atol=1e-6)
    assert protos.class_names == ["class0", "class1", "class2", "class3"]

    clf, report = piaa.fit(data, protos, K=64)
    assert clf.num_classes == 4
    assert len(report["purified_sizes"]) == 4
    clf.check_invariants()

    scores = piaa.infer(clf, data, protos)
    fused = scores["s_fused"]
    assert fused.shape == (60, 4)
    lo = np.minimum(scores["s_patch"], scores["s_cls"]) - 1e-12
    hi = np.maximum(scores["s_patch"], scores["s_cls"]) + 1e-12
    assert np.all((fused >= lo) & (fused <= hi))

    result = piaa.evaluate(fused, data.labels, data.image_ids)
    assert result["map"] > 0.9
    text = piaa.infer(None, data, protos, mode="cls_only")
    assert text["s_fused"].shape == (60, 4)


def test_file_round_trip(tmp_path):
    data, protos, _ = piaa.synth(SPEC)
    path = tmp_path / "set.piaa"
    piaa.write_embeddings(data, path)
    back = piaa.read_embeddings(path)
    assert np.array_equal(back.patches, data.patches)
    assert np.array_equal(back.labels, data.labels)
    assert back.image_ids == data.image_ids

    ppath = tmp_path / "protos.piaa"
    piaa.write_prototypes(protos, ppath)
    assert piaa.read_prototypes(ppath).class_names == protos.class_names

    clf, _ = piaa.fit(data, protos, K=32)
    cpath = tmp_path / "k.piac"
    piaa.write_classifier(clf, "{}", cpath)
    again, meta = piaa.read_classifier(cpath)
    assert meta == "{}"
    assert np.array_equal(again.weights, clf.weights)


def test_average_precision_hand_case():
    assert piaa.average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-12)
    assert piaa.average_precision([0.3, 0.2], [0, 0]) is None


def test_ablation_rows():
    data, protos, _ = piaa.synth(SPEC)
    rows = piaa.ablation(data, data, protos, K=64)
    assert [(r["pvcl"], r["paa"]) for r in rows] == [
        (False, False), (False, True), (True, False), (True, True)]


def test_errors_surface_as_piaa_error(tmp_path):
    bad = tmp_path / "bad.piaa"
    bad.write_bytes(b"not a piaa file at all........................")
    with pytest.raises(piaa.PiaaError):
        piaa.read_embeddings(bad)
    with pytest.raises(piaa.PiaaError):
        piaa.synth("colour = red")
    data, protos, _ = piaa.synth(SPEC)
    with pytest.raises(piaa.PiaaError):
        piaa.infer(None, data, protos, mode="full")
