"""Decode head outputs into task answers.

Span decoding follows the greedy two-stage rule: pick the start over
document positions only, then the end at or after the start.  Special and
pad positions are never eligible, so the answer is always a contiguous
substring of the original document text, recovered through character
offsets rather than detokenization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .data import POLARITIES
from .tokenizer import PackedInput


@dataclass
class SpanPrediction:
    start: int
    end: int
    text: str
    score: float


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def decode_span(l1, l2, packed: PackedInput) -> SpanPrediction:
    """Greedy start-then-end decoding constrained to the document side."""
    l1 = _as_array(l1)
    l2 = _as_array(l2)
    lo, hi = packed.doc_start, packed.end_index  # valid positions are [lo, hi)
    if hi <= lo:
        raise ValueError("empty document")
    s = lo + int(np.argmax(l1[lo:hi]))
    e = s + int(np.argmax(l2[s:hi]))
    text = ""
    if packed.doc_offsets is not None and packed.doc_text is not None:
        cs = packed.doc_offsets[s - lo][0]
        ce = packed.doc_offsets[e - lo][1]
        text = packed.doc_text[cs:ce]
    return SpanPrediction(start=s, end=e, text=text, score=float(l1[s] * l2[e]))


def decode_bio(l3, packed: PackedInput, word_map: list[int] | None = None) -> list[tuple[int, int]]:
    """Word-level aspect chunks from per-position B/I/O distributions.

    ``l3`` is [3, |x|].  Each word takes the argmax label of its FIRST
    subword token; a chunk is one B followed by zero or more Is, and a
    stray leading I opens a new chunk.
    """
    l3 = _as_array(l3)
    if word_map is None:
        word_map = []
        seen: set[int] = set()
        for t_idx, w_idx in enumerate(packed.doc_words or []):
            if w_idx not in seen:
                seen.add(w_idx)
                word_map.append(packed.doc_start + t_idx)
    labels = ["BIO"[int(np.argmax(l3[:, pos]))] for pos in word_map]
    chunks: list[tuple[int, int]] = []
    start = None
    for i, lab in enumerate(labels):
        if lab == "B":
            if start is not None:
                chunks.append((start, i - 1))
            start = i
        elif lab == "I":
            if start is None:
                start = i
        else:
            if start is not None:
                chunks.append((start, i - 1))
                start = None
    if start is not None:
        chunks.append((start, len(labels) - 1))
    return chunks


def predict_polarity(l4) -> str:
    """Argmax polarity; exact ties resolve in fixed label order."""
    l4 = _as_array(l4)
    return POLARITIES[int(np.argmax(l4))]
