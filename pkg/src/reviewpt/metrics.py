"""Bit-exact task evaluation: span EM/F1, chunk F1, accuracy and Macro-F1.

The span scorer restates the customary extractive-QA evaluation exactly:
lowercase, strip ASCII punctuation, drop standalone articles, collapse
whitespace; F1 is the harmonic mean of multiset token overlap, maximized
over gold answers.  Non-ASCII punctuation is deliberately NOT stripped.
"""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field

_PUNCT = set(string.punctuation)
_ARTICLES = re.compile(r"\b(a|an|the)\b")


@dataclass
class EvalReport:
    task: str
    primary_metric: str
    metrics: dict[str, float]
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def primary_value(self) -> float:
        return self.metrics[self.primary_metric]

    def to_json(self) -> str:
        rounded = {k: round(v, 2) for k, v in self.metrics.items()}
        return json.dumps(rounded, sort_keys=True)


def normalize_answer(s: str) -> str:
    """Lowercase, remove punctuation, remove articles, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def _f1_single(pred: str, gold: str) -> float:
    pred_tokens = normalize_answer(pred).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    common = Counter(pred_tokens) & Counter(gold_tokens)
    num_same = sum(common.values())
    if num_same == 0:
        return 0.0
    precision = num_same / len(pred_tokens)
    recall = num_same / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def em_f1(pred: str, golds: list[str]) -> tuple[int, float]:
    """Max-over-golds exact match (0/1) and token-overlap F1 in [0, 1]."""
    if not golds:
        raise ValueError("empty golds")
    norm_pred = normalize_answer(pred)
    em = max(int(norm_pred == normalize_answer(g)) for g in golds)
    f1 = max(_f1_single(pred, g) for g in golds)
    return em, f1


def squad_eval(predictions: dict[str, str], gold: list[tuple[str, list[str]]]) -> EvalReport:
    """Corpus EM/F1 (0-100); a missing prediction scores 0 and counts as skipped."""
    total = 0
    skipped = 0
    em_sum = 0.0
    f1_sum = 0.0
    for qid, golds in gold:
        total += 1
        if qid not in predictions:
            skipped += 1
            continue
        em, f1 = em_f1(predictions[qid], golds)
        em_sum += em
        f1_sum += f1
    if total == 0:
        return EvalReport("rrc", "f1", {"exact_match": 0.0, "f1": 0.0}, {"total": 0, "skipped": 0})
    return EvalReport(
        task="rrc",
        primary_metric="f1",
        metrics={"exact_match": 100.0 * em_sum / total, "f1": 100.0 * f1_sum / total},
        counts={"total": total, "skipped": skipped},
    )


def chunk_f1(
    pred_chunks: list[list[tuple[int, int]]],
    gold_chunks: list[list[tuple[int, int]]],
) -> tuple[float, float, float]:
    """Exact-boundary chunk precision/recall/F1 in [0, 1] over sentences."""
    if len(pred_chunks) != len(gold_chunks):
        raise ValueError(f"sentence count mismatch: {len(pred_chunks)} vs {len(gold_chunks)}")
    n_pred = n_gold = n_correct = 0
    for pred, gold in zip(pred_chunks, gold_chunks):
        gold_set = set(gold)
        n_pred += len(pred)
        n_gold += len(gold)
        n_correct += sum(1 for c in pred if c in gold_set)
    p = n_correct / n_pred if n_pred else 0.0
    r = n_correct / n_gold if n_gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def acc_macro_f1(preds: list[str], golds: list[str], classes=("positive", "negative", "neutral")) -> tuple[float, float]:
    """Accuracy and unweighted macro F1 (both 0-100) over the fixed 3 classes.

    A class absent from both predictions and golds still contributes F1 = 0,
    keeping the denominator stable at 3.
    """
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} vs {len(golds)}")
    if not golds:
        raise ValueError("no examples")
    for x in list(preds) + list(golds):
        if x not in classes:
            raise ValueError(f"unknown class {x!r}")
    acc = 100.0 * sum(p == g for p, g in zip(preds, golds)) / len(golds)
    f1s = []
    for c in classes:
        tp = sum(1 for p, g in zip(preds, golds) if p == c and g == c)
        fp = sum(1 for p, g in zip(preds, golds) if p == c and g != c)
        fn = sum(1 for p, g in zip(preds, golds) if p != c and g == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return acc, 100.0 * sum(f1s) / len(classes)


def asc_report(preds: list[str], golds: list[str]) -> EvalReport:
    acc, mf1 = acc_macro_f1(preds, golds)
    return EvalReport(
        task="asc",
        primary_metric="macro_f1",
        metrics={"acc": acc, "macro_f1": mf1},
        counts={"total": len(golds)},
    )


def ae_report(pred_chunks, gold_chunks) -> EvalReport:
    p, r, f1 = chunk_f1(pred_chunks, gold_chunks)
    return EvalReport(
        task="ae",
        primary_metric="f1",
        metrics={"p": 100.0 * p, "r": 100.0 * r, "f1": 100.0 * f1},
        counts={"sentences": len(gold_chunks)},
    )
