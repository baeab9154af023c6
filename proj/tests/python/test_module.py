import numpy as np
import pytest

import scvm


def test_default_config_round_trips():
    cfg = scvm.default_config()
    assert cfg["train"]["lr_max"] == 1e-4
    assert scvm.normalize_config(cfg) == cfg
    cfg["train"]["bogus"] = 1
    with pytest.raises(ValueError, match="train.bogus"):
        scvm.normalize_config(cfg)


def test_samples_are_deterministic():
    a = scvm.generate_sample(7)
    b = scvm.generate_sample(7)
    assert a["image"].shape == (16, 16, 3)
    assert np.array_equal(a["image"], b["image"])
    assert a["question_tokens"] == b["question_tokens"]
    assert 0 <= a["answer_id"] < 12


def test_forward_at_init_matches_plain_backbone(tiny_config):
    model = scvm.Model(tiny_config)
    s = scvm.generate_sample(3, tiny_config)
    with_mem = model.forward(s["image"], s["question_tokens"], s["answer_id"])
    model.set_ablation(scvm=False)
    plain = model.forward(s["image"], s["question_tokens"], s["answer_id"])
    assert np.array_equal(with_mem["features"], plain["features"])
    assert with_mem["memory"].shape == (8,)
    assert plain["memory"] is None
    assert plain["loss_align"] == 0.0
    assert with_mem["logits"].shape == (12,)
    assert 0.0 <= with_mem["loss_align"] <= 2.0
    total = with_mem["loss_task"] + 0.05 * with_mem["loss_align"]
    assert abs(with_mem["loss_total"] - total) < 1e-6


def test_forward_rejects_wrong_image_shape(tiny_config):
    model = scvm.Model(tiny_config)
    with pytest.raises(ValueError):
        model.forward(np.zeros((5, 5, 3), dtype=np.float32), [0, 1, 2, 3], 0)


def test_inspect_at_init(tiny_config):
    gates = scvm.Model(tiny_config).inspect(1)
    assert [g["layer"] for g in gates] == [1, 2]
    for g in gates:
        assert abs(g["mean_alpha"] - 0.0998) < 1e-3
        assert g["delta_linf"] == 0.0


def test_train_save_load(tmp_path, tiny_config):
    model, metrics = scvm.train(tiny_config, tmp_path / "run")
    assert len(metrics) == 7
    assert metrics[-1]["phase"] == "main"
    path = tmp_path / "model.scvm"
    model.save(path)
    back = scvm.Model.load(path)
    assert back.parameter_hash() == model.parameter_hash()
    assert back.config == model.config
    s = scvm.generate_sample(4, tiny_config)
    a = model.forward(s["image"], s["question_tokens"], s["answer_id"])
    b = back.forward(s["image"], s["question_tokens"], s["answer_id"])
    assert np.array_equal(a["logits"], b["logits"])
    assert model.evaluate(30, 2) == back.evaluate(30, 2)
    w = model.parameter("scvm.layer1.tag.gate.bias")
    assert w.shape == (1,)


def test_missing_checkpoint_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        scvm.Model.load(tmp_path / "none.scvm")


def test_gradcheck_suite_passes():
    results = scvm.gradcheck()
    assert len(results) >= 40
    assert all(r["status"] == "passed" for r in results), [r for r in results if r["status"] != "passed"]
