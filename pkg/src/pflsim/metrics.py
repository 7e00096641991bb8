"""Answer-string utility metrics: exact-match accuracy and ANLS.

ANLS scores a predicted answer against the closest gold answer by
``1 - levenshtein / max(len)``, zeroing anything with a normalized distance
of ``tau = 0.5`` or worse, so near-miss string extractions are rewarded
smoothly while unrelated answers score nothing.  Strings are lowercased and
whitespace-trimmed before comparison (configurable).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert / delete / substitute)."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalized_levenshtein(a: str, b: str) -> float:
    """Edit distance divided by the longer length; 0 for two empty strings."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return levenshtein(a, b) / longest


def normalize_answer(s: str) -> str:
    return s.strip().lower()


def anls(pred: str, golds: Sequence[str], tau: float = 0.5, normalize: bool = True) -> float:
    """Best per-gold similarity ``1 - NL``, zeroed when ``NL >= tau``."""
    if not golds:
        raise ValueError("anls needs at least one gold answer")
    if normalize:
        pred = normalize_answer(pred)
        golds = [normalize_answer(g) for g in golds]
    best = 0.0
    for gold in golds:
        nl = normalized_levenshtein(pred, gold)
        score = 0.0 if nl >= tau else 1.0 - nl
        best = max(best, score)
    return best


@dataclass(frozen=True)
class EvalResult:
    """Dataset-level utility: exact-match accuracy and mean ANLS over n answers."""

    accuracy: float
    anls: float
    n: int


def evaluate_answers(
    predictions: Sequence[str],
    golds: Sequence[Sequence[str]],
    tau: float = 0.5,
    normalize: bool = True,
) -> EvalResult:
    """Accuracy and mean ANLS of predictions against per-question gold lists."""
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds must have the same length")
    if not predictions:
        return EvalResult(accuracy=0.0, anls=0.0, n=0)
    hits = 0
    total_anls = 0.0
    for pred, gold_list in zip(predictions, golds):
        total_anls += anls(pred, gold_list, tau=tau, normalize=normalize)
        p = normalize_answer(pred) if normalize else pred
        g = [normalize_answer(g) for g in gold_list] if normalize else list(gold_list)
        hits += p in g
    n = len(predictions)
    return EvalResult(accuracy=hits / n, anls=total_anls / n, n=n)
