"""Multinomial Naive Bayes for binary tweet sentiment.

Training counts term frequencies over the joint vocabulary ``V`` and applies
additive smoothing::

    log P(c)   = ln(docs_c / docs_total)
    log P(t|c) = ln((count(t, c) + alpha) / (sum_t' count(t', c) + alpha * |V|))

Prediction sums the log-likelihoods of in-vocabulary tokens onto the class
log-prior; equal scores resolve to Positive.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .text import TokenPipeline

log = logging.getLogger("tweetpipe.classifier")

MODEL_FORMAT = "tweetpipe-naive-bayes/1"


class ClassifierError(ValueError):
    pass

class EmptyClass(ClassifierError):
    pass

class DegenerateVocabulary(ClassifierError):
    pass

class EmptyTestSet(ClassifierError):
    pass

class InvalidSmoothing(ClassifierError):
    pass

class ModelFormatError(ClassifierError):
    pass


class Sentiment(Enum):
    POSITIVE = 1
    NEGATIVE = 0

    @property
    def label(self) -> str:
        return "pos" if self is Sentiment.POSITIVE else "neg"

    @classmethod
    def from_label(cls, label: str) -> "Sentiment":
        l = label.strip().lower()
        if l == "pos":
            return cls.POSITIVE
        if l == "neg":
            return cls.NEGATIVE
        raise ValueError(f"unknown sentiment label: {label!r}")


# Row order of every per-class table; argmax ties resolve to the first row.
CLASSES: tuple[Sentiment, Sentiment] = (Sentiment.POSITIVE, Sentiment.NEGATIVE)


@dataclass(frozen=True)
class LabeledDoc:
    text: str
    label: Sentiment


@dataclass(frozen=True, eq=False)
class NaiveBayesModel:
    vocabulary: dict[str, int]
    class_log_prior: np.ndarray          # shape (2,)
    token_log_likelihood: np.ndarray     # shape (2, |V|)
    alpha: float
    class_doc_counts: tuple[int, int]

    def log_prior(self, c: Sentiment) -> float:
        return float(self.class_log_prior[CLASSES.index(c)])

    def log_likelihood(self, token: str, c: Sentiment) -> float:
        return float(self.token_log_likelihood[CLASSES.index(c), self.vocabulary[token]])

    def tokens(self) -> list[str]:
        return sorted(self.vocabulary, key=self.vocabulary.__getitem__)

    def top_tokens(self, c: Sentiment, n: int = 10) -> list[tuple[str, float]]:
        row = self.token_log_likelihood[CLASSES.index(c)]
        order = np.argsort(-row, kind="stable")[:n]
        toks = self.tokens()
        return [(toks[i], float(row[i])) for i in order]


def check_invariants(model: NaiveBayesModel, tol: float = 1e-9) -> None:
    """Raise ModelFormatError unless the model's distributions are normalized and finite."""
    if model.alpha <= 0:
        raise ModelFormatError(f"alpha must be > 0, got {model.alpha}")
    v = len(model.vocabulary)
    if model.token_log_likelihood.shape != (len(CLASSES), v):
        raise ModelFormatError(f"likelihood table shape {model.token_log_likelihood.shape} != (2, {v})")
    if not np.all(np.isfinite(model.token_log_likelihood)) or not np.all(np.isfinite(model.class_log_prior)):
        raise ModelFormatError("non-finite log value in model")
    prior_sum = float(np.exp(model.class_log_prior).sum())
    if abs(prior_sum - 1.0) > 1e-12:
        raise ModelFormatError(f"class priors sum to {prior_sum!r}")
    for i, c in enumerate(CLASSES):
        s = float(np.exp(model.token_log_likelihood[i]).sum())
        if abs(s - 1.0) > tol:
            raise ModelFormatError(f"likelihoods of {c.label} sum to {s!r}")


def train(corpus: Sequence[LabeledDoc], alpha: float = 1.0, pipeline: TokenPipeline | None = None) -> NaiveBayesModel:
    if not alpha > 0:
        raise InvalidSmoothing(f"alpha must be > 0, got {alpha}")
    pipeline = pipeline or TokenPipeline()

    doc_counts = [0, 0]
    term_counts: list[Counter[str]] = [Counter(), Counter()]
    for doc in corpus:
        ci = CLASSES.index(doc.label)
        doc_counts[ci] += 1
        term_counts[ci].update(pipeline.tokenize(doc.text))

    for ci, c in enumerate(CLASSES):
        if doc_counts[ci] == 0:
            raise EmptyClass(f"no training documents labeled {c.label}")

    vocab_tokens = sorted(set(term_counts[0]) | set(term_counts[1]))
    if not vocab_tokens:
        raise DegenerateVocabulary("vocabulary is empty after preprocessing")
    vocabulary = {t: i for i, t in enumerate(vocab_tokens)}

    counts = np.zeros((len(CLASSES), len(vocab_tokens)), dtype=np.float64)
    for ci in range(len(CLASSES)):
        for tok, n in term_counts[ci].items():
            counts[ci, vocabulary[tok]] = n

    total_docs = sum(doc_counts)
    class_log_prior = np.log(np.array(doc_counts, dtype=np.float64) / total_docs)
    denom = counts.sum(axis=1, keepdims=True) + alpha * len(vocab_tokens)
    token_log_likelihood = np.log(counts + alpha) - np.log(denom)

    model = NaiveBayesModel(
        vocabulary=vocabulary,
        class_log_prior=class_log_prior,
        token_log_likelihood=token_log_likelihood,
        alpha=float(alpha),
        class_doc_counts=(doc_counts[0], doc_counts[1]),
    )
    log.info("Trained model: %d docs, |V|=%d, alpha=%s", total_docs, len(vocab_tokens), alpha)
    return model


def scores(model: NaiveBayesModel, tokens: Iterable[str]) -> np.ndarray:
    bag = Counter(t for t in tokens if t in model.vocabulary)
    out = model.class_log_prior.copy()
    if bag:
        idx = np.fromiter((model.vocabulary[t] for t in bag), dtype=np.int64, count=len(bag))
        n = np.fromiter(bag.values(), dtype=np.float64, count=len(bag))
        out = out + model.token_log_likelihood[:, idx] @ n
    return out


def predict(model: NaiveBayesModel, tokens: Iterable[str]) -> tuple[Sentiment, dict[Sentiment, float]]:
    s = scores(model, tokens)
    best = int(np.argmax(s))
    return CLASSES[best], {c: float(s[i]) for i, c in enumerate(CLASSES)}


def classify(model: NaiveBayesModel, text: str, pipeline: TokenPipeline | None = None) -> Sentiment:
    return predict(model, (pipeline or TokenPipeline()).tokenize(text))[0]


def evaluate(model: NaiveBayesModel, test: Sequence[LabeledDoc], pipeline: TokenPipeline | None = None) -> float:
    if not test:
        raise EmptyTestSet("test set is empty")
    pipeline = pipeline or TokenPipeline()
    correct = sum(1 for d in test if classify(model, d.text, pipeline) is d.label)
    return correct / len(test)


# ----------------------------
# Persistence
# ----------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps_model(model: NaiveBayesModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "alpha": _fmt(model.alpha),
        "classes": [c.label for c in CLASSES],
        "class_doc_counts": list(model.class_doc_counts),
        "class_log_prior": [_fmt(x) for x in model.class_log_prior],
        "vocabulary": model.tokens(),
        "token_log_likelihood": [[_fmt(x) for x in row] for row in model.token_log_likelihood],
    }
    return json.dumps(doc, indent=1, ensure_ascii=False) + "\n"


def save_model(model: NaiveBayesModel, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_model(model), encoding="utf-8")
    tmp.replace(path)


def loads_model(text: str) -> NaiveBayesModel:
    try:
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"unsupported model format: {doc.get('format')!r}")
        if doc["classes"] != [c.label for c in CLASSES]:
            raise ModelFormatError(f"unexpected class order: {doc['classes']}")
        vocab = list(doc["vocabulary"])
        model = NaiveBayesModel(
            vocabulary={t: i for i, t in enumerate(vocab)},
            class_log_prior=np.array([float(x) for x in doc["class_log_prior"]], dtype=np.float64),
            token_log_likelihood=np.array(
                [[float(x) for x in row] for row in doc["token_log_likelihood"]], dtype=np.float64
            ).reshape(len(CLASSES), len(vocab)),
            alpha=float(doc["alpha"]),
            class_doc_counts=(int(doc["class_doc_counts"][0]), int(doc["class_doc_counts"][1])),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file: {e}") from e
    check_invariants(model)
    return model


def load_model(path: Path) -> NaiveBayesModel:
    return loads_model(path.read_text(encoding="utf-8"))
