"""Smoke test for the retinomics Python bindings.

Build and install first, e.g. ``pip install ./crates/py``, then run
``python python/smoke_test.py``.
"""

import json
import random
import sys
import tempfile

import retinomics_py as rt


def check_features():
    rng = random.Random(0)
    pixels = [rng.randrange(256) for _ in range(16 * 16)]
    f = rt.extract_features(pixels, 16, 16, histogram=True)
    mean = sum(pixels) / len(pixels)
    assert abs(f["mean"] - mean) < 1e-9, f["mean"]
    assert f["minimum"] == min(pixels) and f["maximum"] == max(pixels)
    assert "entropy" in f and "uniformity" in f
    masked = rt.extract_features(pixels, 16, 16, mask=[i % 2 == 0 for i in range(256)])
    assert abs(masked["mean"] - sum(pixels[::2]) / 128) < 1e-9


def check_metrics():
    labels = [True, True, False, False]
    assert rt.auc([0.9, 0.8, 0.1, 0.85], labels) == 0.75
    fpr, tpr = rt.roc_curve([0.9, 0.8, 0.1, 0.85], labels)
    assert fpr[0] == 0.0 and tpr[-1] == 1.0
    d = rt.delong([3, 4, 1, 2], [2, 4, 1, 3], labels)
    assert d["auc_a"] == 1.0 and d["auc_b"] == 0.75
    assert abs(d["z"] - 0.7071) < 1e-4 and abs(d["p"] - 0.4795) < 1e-3
    try:
        rt.auc([0.1, 0.2], [True, True])
    except rt.RetinomicsError:
        pass
    else:
        raise AssertionError("single-class AUC should raise")


def check_models():
    rng = random.Random(1)
    x = [[rng.gauss(0, 1) for _ in range(4)] for _ in range(80)]
    y = [row[0] + 0.3 * rng.gauss(0, 1) > 0 for row in x]
    for kind in ["LR", "LDA", "SVC-linear", "SVC-rbf", "RF"]:
        m = rt.Model.train(kind, x, y, seed=3)
        assert m.kind == kind
        scores = m.score(x)
        assert rt.auc(scores, y) > 0.8, kind
        phi, base = m.shap(x[0], x[:10])
        assert abs(base + sum(phi) - m.score([x[0]])[0]) < 1e-6, kind
    spec = json.dumps({"kind": "LR", "lambda": 0.5, "tol": 1e-6, "max_iter": 100, "class_weight": False})
    assert json.loads(rt.Model.train("LR", x, y, spec_json=spec).to_json())["spec"]["lambda"] == 0.5


def check_cohort_and_cv():
    cohort = rt.Cohort.synthetic(1)
    assert len(cohort) == 597 and len(cohort.patient_ids()) == 359
    counts = cohort.class_counts()
    assert [counts[k][0] for k in ["Moderate", "High", "VeryHigh"]] == [36, 141, 182], counts
    config = json.dumps({"k": 3, "m": 2, "selection": False, "shap": {"enabled": False}})
    r = rt.run_nested_cv(cohort, "2", "R+D", "LR", modalities=["OCT"], config_json=config, seed=5)
    assert len(r.fold_aucs) == 3 and 0.5 < r.mean_auc <= 1.0, r
    # task 2 leaves out the Moderate eyes
    assert len(r.pooled) == len(cohort) - counts["Moderate"][1]
    with tempfile.TemporaryDirectory() as d:
        cohort.write_csv(d)
        again = rt.Cohort.load(f"{d}/features.csv", f"{d}/clinical.csv")
        assert len(again) == len(cohort)
        assert rt.run_cli(["synth", "--out", f"{d}/s", "--seed", "2"]) == 0
        assert rt.run_cli(["run", "--jobs", "0"]) == 1


def main():
    for check in [check_features, check_metrics, check_models, check_cohort_and_cv]:
        check()
        print(f"ok {check.__name__}")
    print("python smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
