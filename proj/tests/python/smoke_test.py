"""End-to-end smoke of the python bindings: hand-checked metric values, then a
tiny generate/train/evaluate/diagnose loop through temp directories."""

import json
import math
import os
import tempfile

import crocodile as croc

MODEL = json.dumps(
    {
        "variant": "crocodile",
        "embed_tables": 2,
        "embed_dim": 3,
        "expert_dim": 4,
        "expert_hidden": [8],
        "tower_hidden": [6],
        "seed": 11,
    }
)
REFERENCE = json.dumps(
    {
        "variant": "sdem",
        "embed_dim": 3,
        "expert_dim": 4,
        "expert_hidden": [8],
        "tower_hidden": [6],
        "seed": 12,
    }
)
TRAIN = json.dumps({"epochs": 2, "batch_size": 128, "seed": 5})
SPEC = json.dumps(
    {"sizes": [240, 480, 60], "users": 40, "items": 60, "conflict_rate": 0.3, "seed": 7}
)


def check_metrics():
    assert croc.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert croc.auc([0.5, 0.5], [0, 1]) == 0.5  # tie counts half
    assert croc.auc([0.2, 0.9], [1, 1]) is None  # one class only

    g = croc.gauc(
        [0.9, 0.8, 0.2, 0.1, 0.5, 0.5],
        [1, 1, 0, 0, 1, 0],
        [1, 1, 1, 1, 2, 2],
    )
    assert abs(g - 5.0 / 6.0) < 1e-12  # impression-weighted: (4*1 + 2*0.5)/6

    two = [[1.0, 0.0], [-1.0, 0.0]]
    assert croc.covloss([two, two]) == 0.5
    assert croc.covloss([two]) == 0.0  # no cross pair

    eye = [[1.0 if i == j else 0.0 for j in range(4)] for i in range(4)]
    assert abs(croc.information_abundance(eye) - 4.0) < 1e-12
    rank1 = [[float(i + 1), 2.0 * (i + 1)] for i in range(3)]
    assert abs(croc.information_abundance(rank1) - 1.0) < 1e-6


def check_pipeline(root):
    data = os.path.join(root, "data")
    fp = croc.generate_dataset(SPEC, data)
    info = croc.dataset_info(data)
    assert info["size"] == 780
    assert info["num_domains"] == 3
    assert info["domain_counts"] == [240, 480, 60]
    assert info["fingerprint"] == fp != 0

    run = os.path.join(root, "run")
    res = croc.train(data, MODEL, TRAIN, run)
    assert res["steps"] > 0
    assert 0.0 < res["auc"] < 1.0
    assert math.isfinite(res["loss_total"])
    for name in ("metrics.csv", "ia.csv", "checkpoint.bin"):
        assert os.path.exists(os.path.join(run, name)), name

    ckpt = os.path.join(run, "checkpoint.bin")
    ev = croc.evaluate(ckpt, data)
    assert set(ev) == {"0", "1", "2", "overall"}
    assert 0.0 < ev["overall"]["auc"] < 1.0

    ck = croc.checkpoint_info(ckpt)
    assert ck["step"] == res["steps"]
    assert ck["tensors"] > 0
    assert json.loads(ck["model_config"])["variant"] == "crocodile"
    assert ck["dataset_fingerprint"] == fp

    ref = os.path.join(root, "ref")
    croc.train(data, REFERENCE, TRAIN, ref)
    di = croc.diversity_index(ckpt, os.path.join(ref, "checkpoint.bin"), data)
    assert 0.0 <= di["average"] <= 1.0
    assert di["pairs"] >= 1

    # Same configs, fresh directory: training is deterministic.
    rerun = os.path.join(root, "rerun")
    assert croc.train(data, MODEL, TRAIN, rerun) == res

    try:
        croc.dataset_info(os.path.join(root, "nope"))
    except croc.CrocError:
        pass
    else:
        raise AssertionError("missing dataset should raise CrocError")


def main():
    check_metrics()
    with tempfile.TemporaryDirectory() as root:
        check_pipeline(root)
    print("python smoke: ok")


if __name__ == "__main__":
    main()
