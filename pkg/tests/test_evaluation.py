import math

import numpy as np
import pytest

from xbarmap.data import Dataset, synthetic_blobs
from xbarmap.device import DeviceModel
from xbarmap.errors import GroupingError, InvalidInputError
from xbarmap.evaluation import (
    VariationSummary,
    compare_schemes,
    evaluate,
    run_scores,
    variation_monte_carlo,
    variation_records,
)
from xbarmap.layers import SignedLayer, SoftmaxOutput
from xbarmap.metrics import MetricsRecord, RunContext
from xbarmap.network import Network, TrainConfig, dense, initialize_model, mlp, softmax, train


def constant_model(n_features, n_classes, winner):
    # non-negative inputs, so only the winner row can produce a positive logit
    w = np.zeros((n_classes, n_features))
    w[winner, :] = 1.0
    return Network([dense(n_features, n_classes, "baseline"), softmax()],
                   [SignedLayer(w), SoftmaxOutput()], DeviceModel())


@pytest.fixture(scope="module")
def blobs():
    return (synthetic_blobs(2, 16, 100, 6.0, seed=0),
            synthetic_blobs(2, 16, 50, 6.0, seed=1, split="test"))


@pytest.fixture(scope="module")
def trained(blobs):
    model = initialize_model(mlp([16, 8, 2]), "acm", DeviceModel(bits=3), seed=0)
    return train(model, blobs[0], TrainConfig(epochs=3)).model


class TestEvaluate:
    def test_constant_prediction(self):
        labels = np.repeat(np.arange(10), 5)
        ds = Dataset(np.full((50, 3), 0.5), labels, 10)
        assert evaluate(constant_model(3, 10, 4), ds) == pytest.approx(0.1)

    def test_single_correct_item(self):
        ds = Dataset(np.array([[1.0, 0.0]]), np.array([1]), 2)
        assert evaluate(constant_model(2, 2, 1), ds) == 1.0

    def test_empty(self):
        ds = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
        with pytest.raises(InvalidInputError):
            evaluate(constant_model(2, 2, 0), ds)

    def test_matches_per_example_loop(self, trained, blobs):
        test = blobs[1]
        correct = sum(int(np.argmax(trained.forward(test.images[i:i + 1])[0]) == test.labels[i])
                      for i in range(len(test)))
        assert evaluate(trained, test) == correct / len(test)


class TestVariationMonteCarlo:
    def test_zero_sigma(self, trained, blobs):
        clean = evaluate(trained, blobs[1])
        summary = variation_monte_carlo(trained, blobs[1], DeviceModel(bits=3), n_samples=4)
        assert summary.accuracies == (clean,) * 4
        assert summary.std_accuracy == 0.0

    def test_default_sample_count(self, trained, blobs):
        noisy = DeviceModel(bits=3, variation_sigma=0.1)
        assert variation_monte_carlo(trained, blobs[1], noisy).n_samples == 25

    def test_same_seed_same_summary(self, trained, blobs):
        noisy = DeviceModel(bits=3, variation_sigma=0.2)
        a = variation_monte_carlo(trained, blobs[1], noisy, 5, seed=3)
        b = variation_monte_carlo(trained, blobs[1], noisy, 5, seed=3)
        assert a == b

    def test_samples_reproducible_alone(self, trained, blobs):
        noisy = DeviceModel(bits=3, variation_sigma=0.3)
        full = variation_monte_carlo(trained, blobs[1], noisy, 4, seed=10)
        third = variation_monte_carlo(trained, blobs[1], noisy, 1, seed=12)
        assert third.accuracies[0] == full.accuracies[2]

    def test_model_restored(self, trained, blobs):
        before = [w.copy() for w in trained.effective_weights()]
        variation_monte_carlo(trained, blobs[1], DeviceModel(bits=3, variation_sigma=0.5), 3)
        for a, b in zip(before, trained.effective_weights()):
            assert a.tobytes() == b.tobytes()

    def test_rejects_zero_samples(self, trained, blobs):
        with pytest.raises(InvalidInputError):
            variation_monte_carlo(trained, blobs[1], n_samples=0)

    def test_baseline_unaffected(self, blobs):
        model = initialize_model(mlp([16, 2]), "baseline", seed=0)
        s = variation_monte_carlo(model, blobs[1], DeviceModel(variation_sigma=0.5), 3)
        assert s.std_accuracy == 0.0

    def test_larger_sigma_more_spread(self, blobs):
        spreads = {0.02: [], 0.3: []}
        for seed in range(10):
            model = initialize_model(mlp([16, 8, 2]), "de", DeviceModel(bits=4), seed=seed)
            model = train(model, blobs[0], TrainConfig(epochs=1, seed=seed)).model
            for sigma in spreads:
                s = variation_monte_carlo(model, blobs[1], DeviceModel(bits=4, variation_sigma=sigma),
                                          8, seed)
                spreads[sigma].append(s.std_accuracy)
        assert np.mean(spreads[0.3]) >= np.mean(spreads[0.02]) - 0.005


class TestVariationSummary:
    def test_statistics_recomputable(self):
        acc = (0.5, 0.75, 0.6, 0.9)
        s = VariationSummary(acc, 0.1)
        assert abs(s.mean_accuracy - np.mean(acc)) <= 1e-12
        assert abs(s.std_accuracy - np.std(acc)) <= 1e-12
        d = s.to_dict()
        assert d["accuracies"] == list(acc) and d["n_samples"] == 4

    def test_records(self):
        ctx = RunContext("acm", 3, 0.0, 0.0, 1)
        recs = variation_records(VariationSummary((0.5, 0.6), 0.15), ctx)
        assert [r.index for r in recs] == [0, 1]
        assert all(r.phase == "variation" and r.context.sigma == 0.15 for r in recs)
        assert math.isnan(recs[0].train_loss)


def final_record(scheme, acc, seed=0, bits=3, index=5):
    return MetricsRecord(RunContext(scheme, bits, 0.0, 0.0, seed), index, 0.1, 0.9, acc)


class TestCompareSchemes:
    def test_identical(self):
        recs = [final_record(s, 0.8) for s in ("de", "acm", "bc")]
        report = compare_schemes(recs, slack=0.0)
        assert report.ok
        assert all(v == 0 for v in report.cells[0].differences.values())

    def test_hand_built(self):
        recs = [final_record("de", 0.9), final_record("acm", 0.85), final_record("bc", 0.7)]
        cell = compare_schemes(recs).cells[0]
        assert cell.ordering_ok
        assert cell.differences["de-acm"] == pytest.approx(0.05)
        assert cell.differences["acm-bc"] == pytest.approx(0.15)

    def test_violation_listed(self):
        recs = [final_record("de", 0.7, bits=b) for b in (2, 3)]
        recs += [final_record("bc", 0.9, bits=b) for b in (2, 3)]
        recs.append(final_record("acm", 0.8, bits=2))
        recs.append(final_record("acm", 0.8, bits=3))
        report = compare_schemes(recs, slack=0.05)
        assert not report.ok
        assert [c.bits for c in report.failing_cells()] == [2, 3]
        assert "de < acm" in report.failing_cells()[0].violations[0]

    def test_slack_absorbs_small_violation(self):
        recs = [final_record("de", 0.80), final_record("acm", 0.805)]
        assert not compare_schemes(recs).ok
        assert compare_schemes(recs, slack=0.01).ok

    def test_averages_over_seeds_using_last_epoch(self):
        recs = [final_record("acm", 0.1, seed=0, index=1), final_record("acm", 0.8, seed=0),
                final_record("acm", 0.6, seed=1), final_record("bc", 0.5)]
        cell = compare_schemes(recs).cells[0]
        assert cell.mean_accuracy["acm"] == pytest.approx(0.7)
        assert cell.n_runs == {"acm": 2, "bc": 1}

    def test_single_scheme_is_grouping_error(self):
        with pytest.raises(GroupingError):
            compare_schemes([final_record("acm", 0.8), final_record("acm", 0.7, seed=1)])

    def test_unmatched_cell_is_grouping_error(self):
        recs = [final_record("acm", 0.8), final_record("bc", 0.7), final_record("de", 0.9, bits=4)]
        with pytest.raises(GroupingError, match="bits=4"):
            compare_schemes(recs)

    def test_variation_summaries(self):
        pairs = [(RunContext(s, 3, 0.0, 0.0, 0), VariationSummary((a, a), 0.15))
                 for s, a in (("de", 0.6), ("acm", 0.65), ("bc", 0.4))]
        report = compare_schemes(pairs)
        cell = report.cells[0]
        assert cell.phase == "variation" and cell.sigma == 0.15
        assert cell.violations == ["de < acm by 0.0500"]

    def test_run_scores_rejects_other_types(self):
        with pytest.raises(InvalidInputError):
            run_scores([{"scheme": "acm"}])
