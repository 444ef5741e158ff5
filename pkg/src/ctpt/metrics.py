"""Multiclass F1 metrics over predicted vs gold label sequences.

Two scores are supported: micro-averaged F1 with the neutral category
excluded from the true-positive/false-positive/false-negative pools, and
support-weighted macro F1. Zero denominators contribute 0 by convention.
"""

from __future__ import annotations

from .errors import ArgumentError

METRIC_NAMES = ("micro_f1_excl_neutral", "weighted_macro_f1")


def confusion_counts(gold: list[str], pred: list[str], labels: tuple[str, ...]) -> dict:
    """Per-label true positives, false positives, false negatives."""
    if len(gold) != len(pred):
        raise ArgumentError(f"gold/pred length mismatch: {len(gold)} vs {len(pred)}")
    counts = {label: {"tp": 0, "fp": 0, "fn": 0, "support": 0} for label in labels}
    for g, p in zip(gold, pred):
        counts[g]["support"] += 1
        if g == p:
            counts[g]["tp"] += 1
        else:
            counts[p]["fp"] += 1
            counts[g]["fn"] += 1
    return counts


def _f1(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def per_label_scores(gold, pred, labels) -> dict:
    counts = confusion_counts(gold, pred, labels)
    out = {}
    for label, c in counts.items():
        precision = c["tp"] / (c["tp"] + c["fp"]) if c["tp"] + c["fp"] else 0.0
        recall = c["tp"] / (c["tp"] + c["fn"]) if c["tp"] + c["fn"] else 0.0
        out[label] = {
            "precision": precision,
            "recall": recall,
            "f1": _f1(c["tp"], c["fp"], c["fn"]),
            "support": c["support"],
        }
    return out


def micro_f1(gold, pred, labels, exclude: tuple[str, ...] = ()) -> float:
    counts = confusion_counts(gold, pred, labels)
    tp = sum(c["tp"] for label, c in counts.items() if label not in exclude)
    fp = sum(c["fp"] for label, c in counts.items() if label not in exclude)
    fn = sum(c["fn"] for label, c in counts.items() if label not in exclude)
    return _f1(tp, fp, fn)


def weighted_macro_f1(gold, pred, labels) -> float:
    counts = confusion_counts(gold, pred, labels)
    total = sum(c["support"] for c in counts.values())
    if total == 0:
        return 0.0
    return sum(
        c["support"] / total * _f1(c["tp"], c["fp"], c["fn"]) for c in counts.values()
    )


def compute_metric(name: str, gold, pred, labels, neutral_label: str | None = None) -> float:
    if name == "micro_f1_excl_neutral":
        exclude = (neutral_label,) if neutral_label else ()
        return micro_f1(gold, pred, labels, exclude=exclude)
    if name == "weighted_macro_f1":
        return weighted_macro_f1(gold, pred, labels)
    raise ArgumentError(f"unknown metric {name!r}; expected one of {METRIC_NAMES}")
