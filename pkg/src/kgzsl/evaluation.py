"""Fold-based strict accuracy metrics.

A prediction is strictly correct only when its label set equals the
gold set exactly.  Micro accuracy pools every mention across folds;
macro averages the per-fold accuracies, weighting folds equally no
matter their size.
"""

import json
from dataclasses import dataclass

from .errors import ContractError, ParseError


@dataclass(frozen=True)
class Fold:
    train: tuple
    dev: tuple
    test: tuple

    def __post_init__(self):
        train, dev, test = set(self.train), set(self.dev), set(self.test)
        if train & dev or train & test or dev & test:
            raise ContractError("fold class splits must be pairwise disjoint")
        if not self.test:
            raise ContractError("fold has no test classes")


@dataclass(frozen=True)
class FoldSpec:
    folds: tuple

    def __post_init__(self):
        if not self.folds:
            raise ContractError("fold spec needs at least one fold")

    def to_jsonable(self):
        return {
            "folds": [
                {"train": list(f.train), "dev": list(f.dev), "test": list(f.test)}
                for f in self.folds
            ]
        }

    @classmethod
    def from_jsonable(cls, obj):
        try:
            folds = tuple(
                Fold(tuple(f["train"]), tuple(f.get("dev", ())), tuple(f["test"]))
                for f in obj["folds"]
            )
            return cls(folds)
        except (KeyError, TypeError, ContractError) as exc:
            # a bad fold in a file is a data problem, not a caller bug
            raise ParseError(f"malformed fold spec: {exc}") from exc

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_jsonable(json.load(fh))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_jsonable(), fh, sort_keys=True, separators=(",", ":"))


def strict_match(predicted, gold):
    """Exact set equality between predicted and gold labels."""
    return set(predicted) == set(gold)


@dataclass(frozen=True)
class FoldResult:
    n: int
    correct: int

    @property
    def accuracy(self):
        return self.correct / self.n


@dataclass(frozen=True)
class EvalResult:
    per_fold: tuple
    micro: float
    macro: float

    def to_jsonable(self):
        return {
            "per_fold": [
                {"n": f.n, "correct": f.correct, "acc": round(f.accuracy, 4)}
                for f in self.per_fold
            ],
            "micro": round(self.micro, 4),
            "macro": round(self.macro, 4),
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_jsonable(), fh, sort_keys=True, separators=(",", ":"))


def fold_metrics(fold_predictions):
    """Micro and macro strict accuracy over per-fold prediction pairs.

    Args:
        fold_predictions: one list per fold of (predicted, gold) label
            collections.  Every fold must be non-empty.
    """
    if not fold_predictions:
        raise ContractError("no folds to evaluate")
    per_fold = []
    for i, pairs in enumerate(fold_predictions):
        if not pairs:
            raise ContractError(f"fold {i} has no predictions")
        correct = sum(1 for pred, gold in pairs if strict_match(pred, gold))
        per_fold.append(FoldResult(n=len(pairs), correct=correct))
    total = sum(f.n for f in per_fold)
    hits = sum(f.correct for f in per_fold)
    micro = hits / total
    macro = sum(f.accuracy for f in per_fold) / len(per_fold)
    return EvalResult(per_fold=tuple(per_fold), micro=micro, macro=macro)


def topk_hit(ranked, gold, k):
    """Whether the gold class appears in the first k ranked candidates."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    return gold in list(ranked)[:k]


def per_class_topk_accuracy(pairs, k):
    """Mean over classes of the within-class top-k hit rate.

    Args:
        pairs: (ranked candidates, gold class) tuples.
    """
    if not pairs:
        raise ContractError("no predictions")
    by_class = {}
    for ranked, gold in pairs:
        by_class.setdefault(gold, []).append(topk_hit(ranked, gold, k))
    rates = [sum(hits) / len(hits) for _, hits in sorted(by_class.items())]
    return sum(rates) / len(rates)
