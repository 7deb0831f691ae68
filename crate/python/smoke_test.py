"""Exercises the Python bindings end to end on small synthetic data.

Run after installing the extension, e.g. with
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/mcunlearn-*.whl
"""

import math
import pathlib
import random
import tempfile

import mcunlearn as m

ROOT = pathlib.Path(__file__).resolve().parent.parent


def toy_data(n, seed):
    rng = random.Random(seed)
    xs, ys = [], []
    for _ in range(n):
        x = [rng.uniform(-2, 2), rng.uniform(-2, 2)]
        p = 1 / (1 + math.exp(-(1.5 * x[0] - x[1])))
        xs.append(x)
        ys.append(1.0 if rng.random() < p else 0.0)
    return m.Dataset(xs, ys)


def main():
    assert math.isclose(m.acceptance_ratio(-2.0, 0.0, 0.5), math.exp(-1.0))

    spec = m.ModelSpec("logistic", "identity", prior_variance=3.0)
    data = toy_data(300, 0)
    assert len(data) == 300 and spec.param_dim(data.feature_dim) == 3

    theta = m.train_map(spec, data)
    acc = m.evaluate_accuracy(spec, theta, data)
    assert 0.6 < acc <= 1.0, acc

    cands = m.sample_posterior(spec, data, num_samples=2000, alpha=0.5,
                               proposal="laplace", proposal_step=0.8, seed=3)
    assert len(cands) == 2000 and cands.alpha == 0.5

    erase = list(range(40))
    remaining, erased = data.partition(erase)
    res = m.unlearn(cands, erased)
    assert abs(sum(res.weights) - 1.0) < 1e-12
    assert 0 < res.ess <= len(cands)
    for g, h, th in zip(res.g_values[:50], cands.h_values()[:50], cands.candidates()[:50]):
        assert math.isclose(g, spec.log_joint(th, remaining), rel_tol=1e-9)

    retrained = m.retrain(spec, data, erase)
    approx = m.influence_unlearn(spec, theta, data, erase)
    assert len(retrained) == len(approx) == 3

    with tempfile.TemporaryDirectory() as tmp:
        path = pathlib.Path(tmp) / "c.mcuc"
        cands.save(str(path))
        back = m.CandidateSet.load(str(path))
        assert back.h_values() == cands.h_values()
        assert back.candidates() == cands.candidates()

    report = m.subset_influence(cands, [("head", erased), ("tail", data.subset(list(range(260, 300))))],
                                toy_data(500, 1))
    assert [r[0] for r in report] and len(report) == 2

    csv = ROOT / "data" / "phishing_standin.csv"
    phish = m.Dataset.from_csv(str(csv), "phishing")
    assert len(phish) == 2000 and phish.feature_dim == 5

    try:
        m.Dataset.from_csv(str(csv), "no_such_column")
    except m.DataError:
        pass
    else:
        raise AssertionError("missing column should raise DataError")
    try:
        m.ModelSpec("linear")
    except m.UsageError:
        pass
    else:
        raise AssertionError("linear model without noise variance should raise UsageError")

    print("smoke test passed: accuracy %.3f, ess %.1f of %d" % (acc, res.ess, len(cands)))


if __name__ == "__main__":
    main()
