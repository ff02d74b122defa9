"""Scoring and ranking of generated lines.

Two interchangeable rankers: a likelihood scorer (length-normalized decoder
log-probability) and a trainable binary quality classifier whose
pre-threshold output is the score.  Both are pure: same lines in, same
scores out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.linear_model import LogisticRegression
from sklearn.utils.validation import check_is_fitted

from .corpus import UNK, LyricLine, Vocabulary, build_vocab, tokenize

RANKER_KINDS = ("likelihood", "classifier")


@dataclass(frozen=True)
class RankedLine:
    text: str
    score: float
    rank: int


def _line_text(line) -> str:
    if isinstance(line, LyricLine):
        return line.source_text
    return str(line)


def top_k(
    lines,
    scores,
    k: int,
    sample_from_top: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[RankedLine]:
    """The k best lines, score-descending, ties broken by input order.

    Exact duplicate texts are collapsed (first occurrence wins) before
    selection.  sample_from_top=m draws the k winners uniformly from the
    top m instead of taking the head, to trade rank fidelity for variety.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    lines = list(lines)
    scores = np.asarray(scores, dtype=np.float64)
    if len(lines) != scores.shape[0]:
        raise ValueError("one score per line required")
    seen = set()
    unique = []
    for i, line in enumerate(lines):
        text = _line_text(line)
        if text not in seen:
            seen.add(text)
            unique.append((text, float(scores[i])))
    order = sorted(range(len(unique)), key=lambda i: (-unique[i][1], i))
    if sample_from_top is not None:
        pool = order[: max(sample_from_top, k)]
        rng = rng or np.random.default_rng()
        picked = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
        order = [pool[i] for i in sorted(picked)]
    chosen = order[:k]
    chosen.sort(key=lambda i: (-unique[i][1], i))
    return [
        RankedLine(text=unique[i][0], score=unique[i][1], rank=r + 1)
        for r, i in enumerate(chosen)
    ]


def score_lines(ranker, lines) -> np.ndarray:
    """One finite score per line from any ranker object."""
    lines = list(lines)
    if not lines:
        raise ValueError("no lines to score")
    scores = np.asarray(ranker.score_lines(lines), dtype=np.float64)
    if not np.isfinite(scores).all():
        raise ValueError("ranker produced non-finite scores")
    return scores


class LikelihoodRanker:
    """Scores lines by decoder log-probability under fixed conditioning.

    The conditioning latents are pinned at construction (posterior means in
    the service) so every candidate is judged against the same context.
    """

    def __init__(self, text_model, z_t, z_s):
        self.text_model = text_model
        self.z_t = np.asarray(z_t, dtype=np.float64)
        self.z_s = np.asarray(z_s, dtype=np.float64)

    def score_lines(self, lines) -> np.ndarray:
        lines = [
            l if isinstance(l, LyricLine) else LyricLine.from_text(str(l), self.text_model.vocab_)
            for l in lines
        ]
        return self.text_model.line_log_likelihood(lines, self.z_t, self.z_s)


class QualityClassifier(BaseEstimator):
    """Binary quality classifier over bag-of-words features.

    score_lines returns the pre-threshold decision function for the
    positive (high-quality) class.
    """

    def __init__(self, min_count=1, C=1.0, max_iter=1000, seed=0):
        self.min_count = min_count
        self.C = C
        self.max_iter = max_iter
        self.seed = seed

    def _features(self, texts, vocab: Vocabulary) -> np.ndarray:
        X = np.zeros((len(texts), len(vocab)), dtype=np.float64)
        for i, text in enumerate(texts):
            for tok in tokenize(text):
                X[i, vocab.token_to_id.get(tok, UNK)] += 1.0
        return X

    def fit(self, texts, labels):
        texts = [_line_text(t) for t in texts]
        labels = np.asarray(labels, dtype=np.int64)
        if set(np.unique(labels)) - {0, 1}:
            raise ValueError("labels must be 0 or 1")
        self.vocab_ = build_vocab(texts, min_count=self.min_count)
        X = self._features(texts, self.vocab_)
        self.clf_ = LogisticRegression(
            C=self.C, max_iter=self.max_iter, random_state=self.seed
        ).fit(X, labels)
        return self

    def predict(self, texts) -> np.ndarray:
        check_is_fitted(self, "clf_")
        return self.clf_.predict(self._features([_line_text(t) for t in texts], self.vocab_))

    def score_lines(self, lines) -> np.ndarray:
        check_is_fitted(self, "clf_")
        texts = [_line_text(l) for l in lines]
        return self.clf_.decision_function(self._features(texts, self.vocab_))

    def save(self, prefix) -> None:
        check_is_fitted(self, "clf_")
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        np.savez(
            prefix.with_suffix(".npz"),
            coef=self.clf_.coef_,
            intercept=self.clf_.intercept_,
            classes=self.clf_.classes_,
        )
        manifest = {
            "estimator": "QualityClassifier",
            "params": self.get_params(),
            "vocab": self.vocab_.to_dict(),
        }
        prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, prefix) -> "QualityClassifier":
        prefix = Path(prefix)
        manifest = json.loads(prefix.with_suffix(".json").read_text())
        est = cls(**manifest["params"])
        est.vocab_ = Vocabulary.from_dict(manifest["vocab"])
        blob = np.load(prefix.with_suffix(".npz"))
        clf = LogisticRegression(C=est.C, max_iter=est.max_iter, random_state=est.seed)
        clf.coef_ = blob["coef"]
        clf.intercept_ = blob["intercept"]
        clf.classes_ = blob["classes"]
        est.clf_ = clf
        return est


def load_labeled_lines(path):
    """Parse a "label<TAB>text" training file into (texts, labels)."""
    texts, labels = [], []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        if "\t" not in raw:
            raise ValueError(f"{path}:{lineno}: expected 'label<TAB>text'")
        label, text = raw.split("\t", 1)
        if label not in ("0", "1"):
            raise ValueError(f"{path}:{lineno}: label must be 0 or 1")
        texts.append(text)
        labels.append(int(label))
    return texts, np.asarray(labels, dtype=np.int64)
