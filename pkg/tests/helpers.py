import numpy as np

from dpiformer import dataset as D
from dpiformer import model as M
from dpiformer import synthetic
from dpiformer.tokenizer import TokenizedDataset

ACCEPTANCE_LINES = []  # filled by test_acceptance, printed by conftest

OVERFIT_MODEL = M.ModelConfig.toy(hidden_size=32, num_layers=2, num_heads=4, intermediate_size=64,
                                  max_positions=32, seed=1)


def tokenized(records, max_len=64, n_classes=2):
    return TokenizedDataset.from_records(records, max_len, n_classes)


def tiny_set(n=32, seed=0, n_classes=2, max_len=64):
    recs = synthetic.motif_dataset(n, n_classes, seed=seed, min_len=12, max_len=40, visible_len=max_len)
    return tokenized(recs, max_len, n_classes)


def random_set(n, seed=0, max_len=32, n_classes=2):
    rng = np.random.default_rng(seed)
    recs = [D.LabeledRecord(rng.integers(0, 256, int(rng.integers(1, max_len + 1)), dtype=np.uint8).tobytes(),
                            int(i % n_classes)) for i in range(n)]
    return tokenized(recs, max_len, n_classes)


def separability_run(n_classes, seed=0, base_lr=2e-4, epochs=5):
    """Train the toy model on a motif dataset and return (test dataset, predictions)."""
    from dpiformer import trainer as T
    from dpiformer.evaluator import predict
    recs = synthetic.motif_dataset(2000, n_classes, seed=seed, benign_class=(n_classes == 2))
    train, test, val = (tokenized(part, 64, n_classes) for part in D.split(recs, seed))
    mc = M.ModelConfig.toy(num_labels=n_classes, seed=seed)
    tc = T.TrainConfig(base_lr=base_lr, epochs=epochs, batch_size=32, seed=seed)
    result, _ = T.train(mc, tc, train, val)
    return test, predict(result.best_params, mc, test)


FIXTURES = __import__("pathlib").Path(__file__).parent / "fixtures"
TOY_MODEL = {"vocab_size": 258, "hidden_size": 16, "num_layers": 1, "num_heads": 2,
             "intermediate_size": 32, "max_positions": 64, "num_labels": 2, "seed": 3}
TOY_TRAIN = {"base_lr": 1e-3, "epochs": 5, "batch_size": 16, "seed": 3}


def write_configs(tmp, model=None, train=None):
    import json
    mc, tc = tmp / "model.json", tmp / "train.json"
    mc.write_text(json.dumps({**TOY_MODEL, **(model or {})}))
    tc.write_text(json.dumps({**TOY_TRAIN, **(train or {})}))
    return mc, tc


def run_pipeline(tmp, seed=7):
    """extract -> build -> train -> eval through the CLI; returns the output paths."""
    from dpiformer.cli import main
    tmp.mkdir(parents=True, exist_ok=True)
    records, data, ckpt = tmp / "records.csv", tmp / "data", tmp / "ckpt"
    assert main(["extract", "--pcap", str(FIXTURES / "traffic_a.pcap"), str(FIXTURES / "traffic_b.pcap"),
                 "--out", str(records)]) == 0
    assert main(["build", "--records", str(records), "--ground-truth", str(FIXTURES / "ground_truth.csv"),
                 "--mode", "binary", "--seed", str(seed), "--out", str(data)]) == 0
    mc, tc = write_configs(tmp)
    assert main(["train", "--data", str(data), "--model-config", str(mc), "--train-config", str(tc),
                 "--out", str(ckpt)]) == 0
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                 "--report", str(tmp / "report.json")]) == 0
    return {"records": records, "data": data, "ckpt": ckpt, "report": tmp / "report.json"}
