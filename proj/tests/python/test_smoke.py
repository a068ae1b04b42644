import math

import numpy as np
import pytest

import caeav


def test_softmax_rows_sum_to_one():
    x = np.random.default_rng(0).normal(size=(4, 7))
    p = caeav.softmax(x)
    assert p.shape == (4, 7)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(caeav.softmax(x + 3.0), caeav.softmax(x + 3.0))


def test_topk_mask_ties_break_by_index():
    m = caeav.topk_mask(np.array([[1.0, 3.0, 3.0, 0.0, 3.0]]), 0.4)
    assert m.tolist() == [[0.0, 1.0, 1.0, 0.0, 0.0]]
    assert caeav.topk_count(16, 0.3) == 5
    with pytest.raises(caeav.ConfigError):
        caeav.topk_count(4, 0.0)


def test_closed_form_losses():
    e = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert caeav.loss_infonce_cap(e, e, [0, 1]) == pytest.approx(math.log(2.0), abs=1e-6)
    z = np.random.default_rng(1).normal(size=(3, 5))
    assert caeav.loss_va(z, z) == pytest.approx(0.0, abs=1e-12)
    assert caeav.loss_va(z, -z) == pytest.approx(2.0, abs=1e-12)
    u = np.full((1, 4), 0.25)
    assert caeav.entropy(u)[0] == pytest.approx(math.log(4.0), abs=1e-9)
    assert caeav.loss_entropy(u, u, -1) == pytest.approx(-2 * math.log(4.0), abs=1e-9)
    with pytest.raises(caeav.DimensionError):
        caeav.loss_va(np.ones((2, 3)), np.ones((3, 3)))


def test_schedules_follow_the_presets():
    lrs = caeav.learning_rates(preset="ave")
    assert len(lrs) == 30
    assert lrs[0] == 5e-4
    assert lrs[3] == pytest.approx(3.25e-4, rel=1e-15)
    g = caeav.gamma_schedule(preset="avqa")
    assert g[4] == 0.0 and g[5] == 0.005
    text = caeav.resolve_config(caeav.config(model__rho=0.4))
    assert "model.rho = 0.4" in text
    with pytest.raises(caeav.ConfigError):
        caeav.resolve_config("schema_version = 1\nno.such.key = 1\n")


def test_synthetic_episodes(tmp_path):
    cfg = caeav.config(data__frames=4, data__tokens_visual=6)
    train, test = caeav.make_splits(cfg, 6, 2)
    assert len(train) == 6 and len(test) == 2
    ep = train[0]
    assert ep["visual"].shape == (4, 6, 32)
    for e in train:
        for al, v, a in zip(e["aligned"], e["visual_class"], e["audio_class"]):
            assert al == (v == a)
    path = tmp_path / "ds.bin"
    caeav.export_dataset(cfg, 5, str(path))
    again = caeav.load_dataset(str(path))
    assert len(again) == 5
    np.testing.assert_array_equal(again[0]["visual"], caeav.make_splits(cfg, 5, 1)[0][0]["visual"])


def test_short_training_run_is_deterministic(tmp_path):
    cfg = caeav.config(train__epochs=2, data__n_train=4, data__n_test=2, train__batch_episodes=2,
                       data__frames=3, data__tokens_visual=4, data__tokens_audio=4,
                       data__c_visual=8, data__c_audio=8, data__c_text=8, model__embed_dim=8)
    a = caeav.train(cfg, seed=3, out_dir=str(tmp_path / "a"))
    b = caeav.train(cfg, seed=3, out_dir=str(tmp_path / "b"))
    assert a == b
    assert len(a["history"]) == 2
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    ev = caeav.evaluate_checkpoint(cfg, 3, str(tmp_path / "a" / "checkpoint.bin"))
    assert ev == a["test"]


def test_gradcheck_subset_passes():
    rows = caeav.gradcheck("softmax")
    assert rows and all(r["passed"] for r in rows)
