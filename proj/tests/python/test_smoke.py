import json

import numpy as np
import pytest

import forgeloc


def test_version():
    assert forgeloc.__version__ == forgeloc.version()
    assert forgeloc.version().count(".") == 2


def test_make_sample_shapes_and_determinism():
    a = forgeloc.make_sample(7, "splicing", 64)
    b = forgeloc.make_sample(7, "splicing", 64)
    assert a["image"].shape == (3, 64, 64)
    assert a["mask"].shape == (1, 64, 64)
    assert a["image"].dtype == np.float32
    assert np.array_equal(a["image"], b["image"])
    assert set(np.unique(a["mask"])) <= {0.0, 1.0}
    assert 0.02 <= a["mask"].mean() <= 0.40


def test_bad_inputs_raise():
    with pytest.raises(forgeloc.InputError):
        forgeloc.make_sample(0, "copy_move", 48)
    with pytest.raises(ValueError):
        forgeloc.make_sample(0, "smudge", 64)


def test_manifest_json():
    m = json.loads(forgeloc.build_manifest(50, 3, 64, "copy_move"))
    counts = [len(m["splits"][s]) for s in ("train", "val", "test")]
    assert counts == [40, 5, 5]


def test_auc_against_pairwise_count():
    rng = np.random.default_rng(0)
    s = rng.integers(0, 5, 200).astype(np.float32) / 4
    y = (rng.random(200) < 0.3).astype(np.float32)
    pos, neg = s[y == 1], s[y == 0]
    ref = ((pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()) / (
        pos.size * neg.size)
    assert forgeloc.pixel_auc(s, y) == pytest.approx(ref, abs=1e-12)
    assert forgeloc.pixel_auc(s, np.zeros_like(y)) is None


def test_f1_and_losses():
    y = np.array([1, 1, 0, 0], dtype=np.float64)
    p = np.array([1, 0.5, 0.5, 0], dtype=np.float64)
    assert forgeloc.dice_loss(y, p, 0.0) == pytest.approx(0.25, abs=1e-12)
    assert forgeloc.f1_score(y.astype(np.float32), y.astype(np.float32)) == pytest.approx(1.0)
    q = np.full(4, 0.3)
    ref = np.mean(-0.25 * (1 - q) ** 2 * y * np.log(q) - 0.75 * q ** 2 * (1 - y) * np.log(1 - q))
    assert forgeloc.focal_loss(y, q) == pytest.approx(ref, rel=1e-6)


def test_gradcheck_ops_pass():
    rows = forgeloc.gradcheck_ops(0)
    assert rows and all(r["passed"] for r in rows)


def test_train_and_predict(tmp_path):
    data = tmp_path / "data"
    forgeloc.write_dataset(20, 5, 32, "copy_move,splicing", str(data))
    cfg = json.loads(forgeloc.default_config())
    cfg["train"]["epochs"] = 1
    cfg["train"]["input_size"] = 32
    csv = forgeloc.train(json.dumps(cfg), str(data), str(tmp_path / "run"))
    assert csv.splitlines()[0].startswith("epoch,train_loss")
    model = forgeloc.Model(str(tmp_path / "run" / "last.ckpt"))
    assert model.epoch == 1
    img = forgeloc.make_sample(1, "copy_move", 32)["image"]
    prob = model.predict(img)
    assert prob.shape == (1, 32, 32)
    assert np.all((prob >= 0) & (prob <= 1))
    assert np.array_equal(prob, model.predict(img, 2))
