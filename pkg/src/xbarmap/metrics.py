"""Metric records and their CSV / JSON-lines serialization."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import InvalidInputError

CSV_HEADER = (
    "scheme", "bits", "nonlinearity", "sigma", "seed",
    "epoch_or_sample", "train_loss", "train_acc", "test_acc",
)
FULL_PRECISION = "fp32"


@dataclass(frozen=True)
class RunContext:
    scheme: str
    bits: int | None
    nonlinearity: float
    sigma: float
    seed: int

    def cell(self) -> tuple:
        """Grouping key shared by runs that differ only in scheme and seed."""
        return (self.bits, self.nonlinearity, self.sigma)


@dataclass(frozen=True)
class MetricsRecord:
    """One training epoch (``phase="train"``) or one variation sample (``"variation"``).

    Variation samples carry NaN for the training fields.
    """

    context: RunContext
    index: int
    train_loss: float
    train_accuracy: float
    test_accuracy: float
    phase: str = field(default="train")

    def __post_init__(self):
        for name in ("train_accuracy", "test_accuracy"):
            value = getattr(self, name)
            if not math.isnan(value) and not 0.0 <= value <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {value}")
        if self.phase not in ("train", "variation"):
            raise InvalidInputError(f"unknown phase {self.phase!r}")

    def to_row(self) -> list[str]:
        c = self.context
        return [
            c.scheme,
            FULL_PRECISION if c.bits is None else str(c.bits),
            _fmt(c.nonlinearity),
            _fmt(c.sigma),
            str(c.seed),
            str(self.index),
            _fmt(self.train_loss),
            _fmt(self.train_accuracy),
            _fmt(self.test_accuracy),
        ]

    def to_json(self) -> dict:
        d = asdict(self.context)
        d.update(
            epoch_or_sample=self.index,
            phase=self.phase,
            train_loss=_json_float(self.train_loss),
            train_acc=_json_float(self.train_accuracy),
            test_acc=_json_float(self.test_accuracy),
        )
        return d


def _fmt(value: float) -> str:
    return "" if math.isnan(value) else repr(float(value))


def _json_float(value: float):
    return None if math.isnan(value) else float(value)


def _parse_float(text: str) -> float:
    return math.nan if text in ("", None) else float(text)


def write_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(rec.to_row())


def write_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def read_csv(path) -> list[MetricsRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise InvalidInputError(f"{path}: unexpected metrics header {header}")
        for row in reader:
            if not row:
                continue
            scheme, bits, nu, sigma, seed, index, loss, tr_acc, te_acc = row
            context = RunContext(
                scheme=scheme,
                bits=None if bits == FULL_PRECISION else int(bits),
                nonlinearity=float(nu),
                sigma=float(sigma),
                seed=int(seed),
            )
            train_loss = _parse_float(loss)
            records.append(MetricsRecord(
                context, int(index), train_loss, _parse_float(tr_acc), _parse_float(te_acc),
                phase="variation" if loss == "" and tr_acc == "" else "train",
            ))
    return records


def read_jsonl(path) -> list[MetricsRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        context = RunContext(d["scheme"], d["bits"], float(d["nonlinearity"]),
                             float(d["sigma"]), int(d["seed"]))
        nan = lambda v: math.nan if v is None else float(v)  # noqa: E731
        records.append(MetricsRecord(context, int(d["epoch_or_sample"]), nan(d["train_loss"]),
                                     nan(d["train_acc"]), nan(d["test_acc"]), d["phase"]))
    return records
