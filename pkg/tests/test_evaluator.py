import numpy as np
import pytest

from dpiformer import evaluator as E
from dpiformer import model as M
from dpiformer.errors import ClassCountMismatch, EmptyMatrix, LabelOutOfRange, LengthMismatch
from helpers import random_set

CFG = M.ModelConfig.toy(hidden_size=16, num_layers=1, num_heads=2, intermediate_size=32,
                        max_positions=32, seed=2, dropout=0.0)


def brute_force(preds, truth, n_classes, averaging):
    """Pair-counting reference: loops over samples, no confusion matrix."""
    n = len(truth)
    acc = sum(1 for p, t in zip(preds, truth) if p == t) / n
    stats = []
    for k in range(n_classes):
        tp = sum(1 for p, t in zip(preds, truth) if p == k and t == k)
        fp = sum(1 for p, t in zip(preds, truth) if p == k and t != k)
        fn = sum(1 for p, t in zip(preds, truth) if p != k and t == k)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        stats.append((prec, rec, f1, tp + fn))
    if averaging == "binary_positive_class":
        return (acc,) + stats[1][:3]
    weights = [s[3] / n for s in stats] if averaging == "weighted" else [1 / n_classes] * n_classes
    return (acc,) + tuple(sum(w * s[i] for w, s in zip(weights, stats)) for i in range(3))


def test_worked_binary_example():
    truth = [1] * 5 + [0] * 5
    preds = [1, 1, 1, 0, 0] + [1, 0, 0, 0, 0]  # TP=3 FN=2 FP=1 TN=4
    cm = E.confusion(preds, truth, 2)
    assert cm.counts.tolist() == [[4, 1], [2, 3]]
    m = E.metrics_from_confusion(cm, "binary_positive_class")
    assert m.accuracy == pytest.approx(0.7, abs=1e-12)
    assert m.precision == pytest.approx(0.75, abs=1e-12)
    assert m.recall == pytest.approx(0.6, abs=1e-12)
    assert m.f1 == pytest.approx(2 / 3, abs=1e-12)
    assert round(m.f1, 4) == 0.6667


@pytest.mark.parametrize("averaging", E.AVERAGING_MODES)
def test_matches_pair_counting_oracle(averaging):
    rng = np.random.default_rng(11)
    for _ in range(1000):
        k = 2 if averaging == "binary_positive_class" else int(rng.integers(2, 6))
        n = int(rng.integers(1, 40))
        truth = rng.integers(0, k, n)
        preds = np.where(rng.random(n) < 0.5, truth, rng.integers(0, k, n))
        m = E.metrics_from_confusion(E.confusion(preds, truth, k), averaging)
        ref = brute_force(preds.tolist(), truth.tolist(), k, averaging)
        assert np.allclose((m.accuracy, m.precision, m.recall, m.f1), ref, rtol=0, atol=1e-12)


def test_weighted_recall_is_accuracy():
    rng = np.random.default_rng(3)
    for _ in range(200):
        k = int(rng.integers(2, 7))
        truth, preds = rng.integers(0, k, 50), rng.integers(0, k, 50)
        m = E.metrics_from_confusion(E.confusion(preds, truth, k), "weighted")
        assert abs(m.recall - m.accuracy) <= 1e-12


def test_constant_predictors():
    truth = np.array([0, 0, 0, 1, 1])
    m = E.metrics_from_confusion(E.confusion(np.zeros(5, int), truth, 2), "binary_positive_class")
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0) and m.accuracy == 0.6
    m = E.metrics_from_confusion(E.confusion(np.ones(5, int), truth, 2), "binary_positive_class")
    assert m.recall == 1.0 and m.precision == pytest.approx(0.4)


def test_absent_class_counts_as_zero():
    m = E.metrics_from_confusion(E.confusion([0, 1, 1], [0, 1, 1], 3), "macro")
    assert m.per_class[2] == {"precision": 0.0, "recall": 0.0, "f1": 0.0, "support": 0}
    assert m.f1 == pytest.approx(2 / 3)


def test_input_validation():
    with pytest.raises(LengthMismatch):
        E.confusion([0, 1], [0], 2)
    with pytest.raises(LabelOutOfRange):
        E.confusion([0, 2], [0, 1], 2)
    with pytest.raises(EmptyMatrix):
        E.metrics_from_confusion(E.confusion([], [], 2))
    with pytest.raises(ValueError):
        E.metrics_from_confusion(E.confusion([0], [0], 3), "binary_positive_class")


def test_argmax_tie_goes_to_lower_index(monkeypatch):
    data = random_set(4, max_len=16)
    monkeypatch.setattr(E, "predict_logits", lambda *a, **k: np.zeros((4, 2), np.float32))
    assert E.predict(None, CFG, data).tolist() == [0, 0, 0, 0]


def test_batch_size_does_not_change_report():
    params = M.init_parameters(CFG)
    data = random_set(37, seed=5, max_len=32)
    reports = [E.evaluate(params, CFG, data, batch_size=bs)[2] for bs in (1, 7, 64)]
    assert reports[0]["confusion"] == reports[1]["confusion"] == reports[2]["confusion"]
    assert reports[0]["mode"] == "binary" and reports[0]["averaging"] == "binary_positive_class"
    assert reports[0]["n_samples"] == 37


def test_evaluate_rejects_class_mismatch():
    with pytest.raises(ClassCountMismatch):
        E.evaluate(M.init_parameters(CFG), CFG, random_set(6, n_classes=3, max_len=16))


def test_infer_probabilities_and_truncation():
    params = M.init_parameters(CFG)
    rng = np.random.default_rng(0)
    payload = rng.integers(0, 256, 100, dtype=np.uint8).tobytes()
    label, probs = E.infer(params, CFG, payload)
    assert probs.dtype == np.float64 and abs(probs.sum() - 1.0) < 1e-12
    assert label == int(np.argmax(probs))
    label2, probs2 = E.infer(params, CFG, payload[: CFG.max_positions])
    assert label2 == label and np.array_equal(probs, probs2)


def test_infer_agrees_with_batch_path():
    params = M.init_parameters(CFG)
    data = random_set(10, seed=8, max_len=32)
    preds = E.predict(params, CFG, data, batch_size=4)
    for i, payload in enumerate(data.payloads):
        assert E.infer(params, CFG, payload)[0] == preds[i]


def test_format_table():
    m = E.Metrics(0.7, 0.75, 0.6, 2 / 3, "binary_positive_class")
    assert E.format_table(m).splitlines()[1].split() == ["70.00", "75.00", "60.00", "66.67"]
