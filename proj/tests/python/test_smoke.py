import numpy as np
import pytest

import wise_edit as w


def test_ties_hand_example():
    merged = w.ties_merge([[2.0, 0.0, -3.0], [0.0, 4.0, 1.0]])
    assert merged.tolist() == [[2.0, 4.0, -3.0]]


def test_linear_merge_averages():
    merged = w.linear_merge([[2.0, 0.0], [0.0, 4.0]])
    assert merged.tolist() == [[1.0, 2.0]]


def test_margin_loss():
    assert w.margin_loss(25.0, 3.0) == 0.0
    assert w.margin_loss(12.0, 8.0) == 17.0


def test_masks_have_expected_density():
    masks = w.gen_masks(40, 50, 2, 0.2, 7)
    assert len(masks) == 2
    for m in masks:
        assert m.shape == (40, 50)
        assert abs(m.mean() - 0.2) < 0.05
    assert 0.0 <= w.overlap_fraction(masks) <= 1.0


def test_stream_generation():
    s = w.gen_stream(0, 5)
    assert len(s) == 5
    assert all(ex["prompt"] and ex["target"] for ex in s)
    assert s == w.gen_stream(0, 5)


def test_errors_are_typed():
    with pytest.raises(w.ConfigError):
        w.run_experiment({"sed": 1})
    with pytest.raises(w.WiseError):
        w.load_checkpoint("/nonexistent/x.ckpt")


def test_routing_activation_zero_for_identical_memories():
    main = np.eye(3)
    assert w.routing_activation(main, main, np.ones((2, 3))) == 0.0


def test_tiny_experiment(tmp_path):
    cfg = {
        "model": {"d_model": 16, "d_ffn": 32, "n_layers": 2, "n_heads": 2, "edit_layer": 1},
        "pretrain": {"steps": 5},
        "data": {"n_facts": 4, "n_background": 8, "n_heldout": 3, "n_filler": 10, "n_heldout_filler": 4},
        "edit": {"steps_per_edit": 2, "edits_per_shard": 2, "n_prefixes": 2},
        "checkpoints": [4],
        "record_wall_time": False,
        "out_dir": str(tmp_path),
    }
    out = w.run_experiment(cfg)
    assert len(out["reports"]) == 1
    r = out["reports"][0]
    assert r["T"] == 4
    assert 0.0 <= r["rel"] <= 1.0
    assert 0.0 <= r["loc"] <= 1.0
