"""Inference evaluation, device-variation Monte Carlo and scheme comparison."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .device import DeviceModel
from .errors import GroupingError, InvalidInputError
from .metrics import MetricsRecord, RunContext
from .network import Network, rng_stream

DEFAULT_SAMPLES = 25
EXPECTED_ORDER = ("de", "acm", "bc")


def evaluate(model: Network, dataset: Dataset) -> float:
    """Fraction of items whose argmax prediction matches the label."""
    if len(dataset) == 0:
        raise InvalidInputError("cannot evaluate on an empty dataset")
    return float(np.mean(model.predict(dataset.images) == dataset.labels))


@dataclass(frozen=True)
class VariationSummary:
    accuracies: tuple[float, ...]
    sigma: float = 0.0

    @property
    def n_samples(self) -> int:
        return len(self.accuracies)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.accuracies))

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "n_samples": self.n_samples,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "accuracies": list(self.accuracies),
        }


def variation_monte_carlo(
    model: Network,
    dataset: Dataset,
    device: DeviceModel | None = None,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> VariationSummary:
    """Accuracy under freshly sampled conductance variation, ``n_samples`` times.

    Sample ``i`` draws from the ``variation`` stream of ``seed + i`` so any
    single sample can be reproduced alone. ``model`` is not modified.
    """
    device = device or model.device
    if n_samples < 1:
        raise InvalidInputError(f"n_samples must be >= 1, got {n_samples}")
    accuracies = []
    for i in range(n_samples):
        noisy = model.perturbed(device, rng_stream(seed + i, "variation"))
        accuracies.append(evaluate(noisy, dataset))
    return VariationSummary(tuple(accuracies), device.variation_sigma)


def variation_records(summary: VariationSummary, context: RunContext) -> list[MetricsRecord]:
    ctx = replace(context, sigma=summary.sigma)
    return [
        MetricsRecord(ctx, i, math.nan, math.nan, acc, phase="variation")
        for i, acc in enumerate(summary.accuracies)
    ]


@dataclass
class CellReport:
    phase: str
    bits: int | None
    nonlinearity: float
    sigma: float
    mean_accuracy: dict[str, float]
    n_runs: dict[str, int]
    differences: dict[str, float]
    ordering_ok: bool
    violations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "bits": self.bits,
            "nonlinearity": self.nonlinearity,
            "sigma": self.sigma,
            "mean_accuracy": self.mean_accuracy,
            "n_runs": self.n_runs,
            "differences": self.differences,
            "ordering_ok": self.ordering_ok,
            "violations": self.violations,
        }


@dataclass
class OrderingReport:
    slack: float
    cells: list[CellReport]

    @property
    def ok(self) -> bool:
        return all(cell.ordering_ok for cell in self.cells)

    def failing_cells(self) -> list[CellReport]:
        return [cell for cell in self.cells if not cell.ordering_ok]

    def to_dict(self) -> dict:
        return {"slack": self.slack, "ok": self.ok, "cells": [c.to_dict() for c in self.cells]}


def run_scores(records) -> dict[tuple, float]:
    """Reduce records to one accuracy per run.

    A training run scores its last epoch's test accuracy; a variation run
    scores the mean over its samples.
    """
    runs: dict[tuple, list[MetricsRecord]] = defaultdict(list)
    for rec in records:
        if isinstance(rec, MetricsRecord):
            runs[(rec.phase, rec.context)].append(rec)
        else:
            raise InvalidInputError(f"expected MetricsRecord, got {type(rec).__name__}")
    scores = {}
    for (phase, context), recs in runs.items():
        if phase == "train":
            scores[(phase, context)] = max(recs, key=lambda r: r.index).test_accuracy
        else:
            scores[(phase, context)] = float(np.mean([r.test_accuracy for r in recs]))
    return scores


def compare_schemes(records, slack: float = 0.0) -> OrderingReport:
    """Per (phase, bits, nonlinearity, sigma) cell, average accuracy by scheme
    across seeds and check ``acc(DE) >= acc(ACM) >= acc(BC)`` within ``slack``.

    ``records`` may mix ``MetricsRecord`` items with
    ``(RunContext, VariationSummary)`` pairs.
    """
    flat = []
    for item in records:
        if isinstance(item, tuple) and len(item) == 2 and isinstance(item[1], VariationSummary):
            flat.extend(variation_records(item[1], item[0]))
        else:
            flat.append(item)
    scores = run_scores(flat)
    cells: dict[tuple, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for (phase, context), score in scores.items():
        cells[(phase,) + context.cell()][context.scheme].append(score)

    if len({scheme for by_scheme in cells.values() for scheme in by_scheme}) < 2:
        raise GroupingError("comparison needs at least two schemes")
    reports = []
    for key in sorted(cells, key=_cell_sort_key):
        by_scheme = cells[key]
        if len(by_scheme) < 2:
            raise GroupingError(
                f"cell phase={key[0]} bits={key[1]} nonlinearity={key[2]} sigma={key[3]} "
                f"has only scheme {sorted(by_scheme)}"
            )
        means = {s: float(np.mean(v)) for s, v in sorted(by_scheme.items())}
        ranked = [s for s in EXPECTED_ORDER if s in means]
        diffs, violations = {}, []
        for hi, lo in zip(ranked[:-1], ranked[1:]):
            diff = means[hi] - means[lo]
            diffs[f"{hi}-{lo}"] = diff
            if diff < -slack:
                violations.append(f"{hi} < {lo} by {-diff:.4f}")
        if len(ranked) == 3:
            diffs["de-bc"] = means["de"] - means["bc"]
        reports.append(CellReport(
            phase=key[0], bits=key[1], nonlinearity=key[2], sigma=key[3],
            mean_accuracy=means,
            n_runs={s: len(v) for s, v in sorted(by_scheme.items())},
            differences=diffs,
            ordering_ok=not violations,
            violations=violations,
        ))
    return OrderingReport(slack, reports)


def _cell_sort_key(key):
    phase, bits, nu, sigma = key
    return (phase, -1 if bits is None else bits, nu, sigma)
