import math

import pytest

import moel


def test_schedules():
    assert moel.epsilon_oracle(0) == 1.0
    assert abs(moel.epsilon_oracle(10_000) - (0.001 + 0.999 * math.exp(-1))) < 1e-9
    assert moel.lr_schedule(8000, 300, 8000) == pytest.approx(300 ** -0.5 * 8000 ** -0.5, abs=1e-12)
    with pytest.raises(ValueError):
        moel.lr_schedule(0, 300, 8000)


def test_metrics():
    lines = ["oh no , that is sad", "wow that is great"]
    assert moel.corpus_bleu(lines, lines) == 100.0
    assert moel.topk_accuracy([[0.1, 0.9], [0.6, 0.4]], [1, 1], 1) == 0.5
    assert moel.topk_accuracy([[0.1, 0.9], [0.6, 0.4]], [1, 1], 2) == 1.0


def test_corpus_helpers():
    assert moel.emotion_labels(2) == ["afraid", "angry"]
    assert moel.tokenize("Well_comma_ OK") == ["well", ",", "ok"]
    samples = moel.gen_synthetic(4, 25, 7)
    assert len(samples) == 25
    assert samples == moel.gen_synthetic(4, 25, 7)
    first = samples[0]
    assert moel.style_marker(moel.emotion_labels(4)[first["emotion"]]) in first["target"].split()


def test_config_and_params():
    text = moel.normalize_config("model = trs\nn_emotions = 3\nd_model = 16\nhead_dim = 4\nvocab_size = 40\n")
    assert "model = trs" in text
    counts = moel.param_counts(text)
    assert counts["moel"] > counts["multi_trs"] > counts["trs"]
    with pytest.raises(moel.ConfigError):
        moel.normalize_config("not_a_key = 1\n")


def test_train_and_chat(tmp_path):
    data = tmp_path / "synthetic.jsonl"
    assert moel.write_synthetic(str(data), 3, 120, 5) > 0
    config = "\n".join(
        [
            "n_emotions = 3",
            "d_model = 16",
            "head_dim = 8",
            "enc_layers = 1",
            "conv_filters = 16",
            "max_ctx = 40",
            "max_resp = 12",
            "seed = 3",
            "steps = 20",
            "warmup = 10",
            "batch_size = 8",
            f"data = {data}",
            f"out_dir = {tmp_path / 'run'}",
        ]
    )
    result = moel.train(config)
    assert result["steps"] == 20
    assert math.isfinite(result["final_loss"])

    ck = moel.Checkpoint(str(result["last_checkpoint"]))
    assert ck.kind == "moel"
    assert ck.step == 20
    assert ck.emotions == moel.emotion_labels(3)
    turns = ["cue_afraid_1 i was at home today"]
    reply = ck.respond(turns, max_len=6)
    assert isinstance(reply, str)
    assert reply == ck.respond(turns, max_len=6)
    dist = ck.emotion_distribution(turns)
    assert set(dist) == set(ck.emotions)
    assert sum(dist.values()) == pytest.approx(1.0)
    assert ck.force(turns, "angry", max_len=6) == ck.force(turns, 1, max_len=6)
    assert ck.force(turns, [0.0, 1.0, 0.0], max_len=6) == ck.force(turns, 1, max_len=6)
    with pytest.raises(ValueError):
        ck.force(turns, "joyful")
    report = ck.evaluate(str(data), generate=False)
    assert 0.0 <= report["top1"] <= 1.0
    assert report["perplexity"] > 1.0
    with pytest.raises(OSError):
        moel.Checkpoint(str(tmp_path / "missing.ckpt"))
